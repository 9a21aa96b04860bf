"""Command-line runner for Faces experiments.

A spec file is either JSON or ``key = value`` lines::

    nodes = 8
    ranks_per_node = 8
    dims = 64,1,1
    loops = 10,100,100
    variant = both
    cost.progress_poll_cost = 500

Flags override the file.  The human table goes to stdout; ``--report``
writes the machine-readable JSON-lines report.  Exit status is 0 on
success, 1 if any run failed its correctness check, 2 for a bad spec.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import faces
from .errors import CorrectnessFailure, SpecError
from .sim import CostModel, parse_key_values

DEFAULT_LOOPS = (10, 100, 100)
DEFAULT_REPEATS = 5
VARIANT_CHOICES = {"baseline": ("baseline",), "st": ("st",), "both": ("baseline", "st")}
TICKS_PER_SECOND = 1_000_000_000


@dataclass(frozen=True)
class ExperimentSpec:
    dims: tuple[int, int, int] = (2, 1, 1)
    nodes: int = 2
    ranks_per_node: int = 1
    n: int = 16
    loops: tuple[int, int, int] = DEFAULT_LOOPS
    repeats: int = DEFAULT_REPEATS
    variants: tuple[str, ...] = ("baseline", "st")
    seed: int = 0
    trace: bool = False
    kernel_jitter: float = 0.02
    st_recv: bool = False
    cost: tuple[tuple[str, int | float], ...] = field(default=())

    def cost_model(self) -> CostModel:
        return CostModel().with_overrides(**dict(self.cost))

    def faces_config(self, variant: str) -> faces.FacesConfig:
        outer, middle, inner = self.loops
        return faces.FacesConfig(
            dims=self.dims, n=self.n, outer_loops=outer, middle_loops=middle,
            inner_loops=inner, variant=variant, nodes=self.nodes,
            ranks_per_node=self.ranks_per_node, cost=self.cost_model(),
            repeats=self.repeats, seed=self.seed, kernel_jitter=self.kernel_jitter,
            st_recv=self.st_recv, trace=self.trace)

    def to_text(self) -> str:
        variant = next(k for k, v in VARIANT_CHOICES.items() if v == self.variants)
        lines = [
            f"dims = {_csv(self.dims)}",
            f"nodes = {self.nodes}",
            f"ranks_per_node = {self.ranks_per_node}",
            f"n = {self.n}",
            f"loops = {_csv(self.loops)}",
            f"repeats = {self.repeats}",
            f"variant = {variant}",
            f"seed = {self.seed}",
            f"trace = {str(self.trace).lower()}",
            f"kernel_jitter = {self.kernel_jitter!r}",
            f"st_recv = {str(self.st_recv).lower()}",
        ]
        lines += [f"cost.{k} = {v!r}" for k, v in self.cost]
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        return self.to_text()


def _csv(values) -> str:
    return ",".join(str(v) for v in values)


# -- parsing ------------------------------------------------------------------

SPEC_KEYS = ("dims", "nodes", "ranks_per_node", "n", "loops", "repeats", "variant",
             "seed", "trace", "kernel_jitter", "st_recv")


def _flatten_json(obj: dict) -> dict[str, str]:
    out = {}
    for key, value in obj.items():
        if key == "cost" and isinstance(value, dict):
            for k, v in value.items():
                out[f"cost.{k}"] = str(v)
        elif isinstance(value, (list, tuple)):
            out[key] = _csv(value)
        elif isinstance(value, bool):
            out[key] = str(value).lower()
        else:
            out[key] = str(value)
    return out


def read_spec_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SpecError({"spec": f"cannot read {path}: {e.strerror}"}) from None
    try:
        if path.suffix == ".json":
            obj = json.loads(text)
            if not isinstance(obj, dict):
                raise ValueError("top level must be an object")
            return _flatten_json(obj)
        return parse_key_values(text)
    except ValueError as e:
        raise SpecError({"spec": f"{path}: {e}"}) from None


def parse_spec_text(text: str) -> ExperimentSpec:
    try:
        raw = parse_key_values(text)
    except ValueError as e:
        raise SpecError({"spec": str(e)}) from None
    return build_spec(raw)


def build_spec(raw: dict[str, str]) -> ExperimentSpec:
    """Validate string-valued settings; every problem is reported at once."""
    problems: dict[str, str] = {}
    values: dict = {}

    def ints(key, count, minimum=1):
        text = raw[key]
        try:
            parts = tuple(int(p) for p in text.split(","))
        except ValueError:
            problems[key] = f"expected {count} comma-separated integers, got {text!r}"
            return None
        if len(parts) != count:
            problems[key] = f"expected {count} values, got {len(parts)}"
            return None
        if any(p < minimum for p in parts):
            problems[key] = f"values must be >= {minimum}, got {text!r}"
            return None
        return parts

    def boolean(key):
        text = raw[key].lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        problems[key] = f"expected true or false, got {raw[key]!r}"
        return None

    cost_raw = {k[5:]: v for k, v in raw.items() if k.startswith("cost.")}
    for key in raw:
        if not key.startswith("cost.") and key not in SPEC_KEYS:
            problems[key] = "unknown setting"

    for key, count, minimum in (("dims", 3, 1), ("loops", 3, 1)):
        if key in raw:
            values[key] = ints(key, count, minimum)
    for key, minimum in (("nodes", 1), ("ranks_per_node", 1), ("n", 2), ("repeats", 1),
                         ("seed", 0)):
        if key in raw:
            v = ints(key, 1, minimum)
            values[key] = v[0] if v else None
    for key in ("trace", "st_recv"):
        if key in raw:
            values[key] = boolean(key)
    if "variant" in raw:
        if raw["variant"] in VARIANT_CHOICES:
            values["variants"] = VARIANT_CHOICES[raw["variant"]]
        else:
            problems["variant"] = f"must be one of {', '.join(VARIANT_CHOICES)}"
    if "kernel_jitter" in raw:
        try:
            j = float(raw["kernel_jitter"])
            if not 0 <= j < 1:
                raise ValueError
            values["kernel_jitter"] = j
        except ValueError:
            problems["kernel_jitter"] = f"must be a number in [0, 1), got {raw['kernel_jitter']!r}"

    cost: tuple = ()
    known = set(CostModel.keys())
    for key in sorted(set(cost_raw) - known):
        problems[f"cost.{key}"] = "unknown cost model key"
    good = {k: v for k, v in cost_raw.items() if k in known}
    for key in sorted(good):
        try:
            CostModel().with_overrides(**{key: good[key]})
        except ValueError as e:
            problems[f"cost.{key}"] = str(e)
    if not any(p.startswith("cost.") for p in problems):
        model = CostModel().with_overrides(**good)
        cost = tuple((k, getattr(model, k)) for k in sorted(good))

    dims = values.get("dims") or ExperimentSpec.dims
    rpn = values.get("ranks_per_node") or 1
    size = dims[0] * dims[1] * dims[2]
    shape_ok = not {"dims", "ranks_per_node", "nodes"} & set(problems)
    if values.get("nodes") is None and shape_ok:
        if size % rpn:
            problems["nodes"] = f"not given and {size} ranks do not divide by ranks_per_node={rpn}"
        values["nodes"] = size // rpn
    elif shape_ok:
        if values["nodes"] * rpn != size:
            problems["nodes"] = (f"nodes x ranks_per_node = {values['nodes'] * rpn} "
                                 f"but dims hold {size} ranks")

    if problems:
        raise SpecError(problems)
    values = {k: v for k, v in values.items() if v is not None}
    return ExperimentSpec(cost=cost, **values)


def parse_spec(path=None, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    """Spec from an optional file, with ``overrides`` (string values) on top."""
    raw = read_spec_file(path) if path is not None else {}
    raw.update(overrides or {})
    return build_spec(raw)


# -- running and reporting ----------------------------------------------------

@dataclass
class VariantResult:
    variant: str
    times: list[int]
    correct: bool
    error: str = ""
    traces: list = field(default_factory=list)


def run_variant(spec: ExperimentSpec, variant: str) -> VariantResult:
    cfg = spec.faces_config(variant)
    times, traces = [], []
    for repeat in range(spec.repeats):
        try:
            t, world, _ = faces.run_once(cfg, repeat)
        except CorrectnessFailure as e:
            return VariantResult(variant, times, False, f"repeat {repeat}: {e}", traces)
        times.append(t)
        if spec.trace:
            traces.append(world.sim.trace)
    return VariantResult(variant, times, True, "", traces)


def _seconds(ticks: float) -> str:
    return f"{ticks / TICKS_PER_SECOND:.9f}"


def report_records(spec: ExperimentSpec, results: list[VariantResult]) -> list[dict]:
    n = spec.n
    records = [{
        "record": "config",
        "dims": list(spec.dims), "nodes": spec.nodes, "ranks_per_node": spec.ranks_per_node,
        "n": n, "loops": list(spec.loops), "repeats": spec.repeats, "seed": spec.seed,
        "kernel_jitter": spec.kernel_jitter, "st_recv": spec.st_recv,
        "element_bytes": faces.INT64,
        "message_bytes": {"face": n * n * faces.INT64, "edge": n * faces.INT64,
                          "corner": faces.INT64},
        "cost": spec.cost_model().as_dict(),
    }]
    for res in results:
        for repeat, t in enumerate(res.times):
            records.append({"record": "run", "variant": res.variant, "repeat": repeat,
                            "time_ticks": t})
        summary = {"record": "summary", "variant": res.variant, "correct": res.correct,
                   "repeats_completed": len(res.times)}
        if res.times:
            summary.update(min_s=_seconds(min(res.times)),
                           avg_s=_seconds(sum(res.times) / len(res.times)),
                           max_s=_seconds(max(res.times)))
        if res.error:
            summary["error"] = res.error
        records.append(summary)
    return records


def format_report(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def format_table(spec: ExperimentSpec, results: list[VariantResult]) -> str:
    cfg = (f"dims={_csv(spec.dims)} nodes={spec.nodes} ranks_per_node={spec.ranks_per_node} "
           f"n={spec.n} loops={_csv(spec.loops)} repeats={spec.repeats} seed={spec.seed}")
    sizes = (f"message bytes: face={spec.n * spec.n * faces.INT64} "
             f"edge={spec.n * faces.INT64} corner={faces.INT64}")
    head = f"{'variant':<10}{'min_s':>14}{'avg_s':>14}{'max_s':>14}  correct"
    rows = []
    for res in results:
        if res.times:
            cols = (_seconds(min(res.times)), _seconds(sum(res.times) / len(res.times)),
                    _seconds(max(res.times)))
        else:
            cols = ("-", "-", "-")
        rows.append(f"{res.variant:<10}{cols[0]:>14}{cols[1]:>14}{cols[2]:>14}  "
                    f"{'yes' if res.correct else 'NO'}")
    return "\n".join([cfg, sizes, head, *rows]) + "\n"


def emit_trace(records, path) -> None:
    """Write one tab-separated ``time actor action details`` line per record."""
    with open(path, "w") as f:
        for r in records:
            f.write(r.line() + "\n")


def trace_paths(path, spec: ExperimentSpec) -> dict[tuple[str, int], Path]:
    """One file per (variant, repeat); a single run writes to ``path`` itself."""
    path = Path(path)
    runs = [(v, r) for v in spec.variants for r in range(spec.repeats)]
    if len(runs) == 1:
        return {runs[0]: path}
    return {(v, r): path.with_name(f"{path.stem}.{v}.{r}{path.suffix}") for v, r in runs}


def run_experiment(spec: ExperimentSpec, report_path=None, trace_path=None, out=None) -> int:
    out = out or sys.stdout
    if spec.trace and trace_path is None:
        trace_path = "trace.tsv"
    results = [run_variant(spec, v) for v in spec.variants]
    records = report_records(spec, results)
    if report_path is not None:
        Path(report_path).write_text(format_report(records))
    if spec.trace:
        paths = trace_paths(trace_path, spec)
        for res in results:
            for repeat, trace in enumerate(res.traces):
                emit_trace(trace, paths[(res.variant, repeat)])
    out.write(format_table(spec, results))
    failed = [r for r in results if not r.correct]
    for r in failed:
        print(f"correctness failure in {r.variant}: {r.error}", file=sys.stderr)
    return 1 if failed else 0


# -- entry point --------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamtrig",
                                description="Run the Faces halo-exchange benchmark in simulation.")
    p.add_argument("--spec", help="spec file (.json or key = value lines)")
    p.add_argument("--variant", choices=sorted(VARIANT_CHOICES))
    p.add_argument("--dims", help="rank grid X,Y,Z")
    p.add_argument("--nodes", help="number of nodes")
    p.add_argument("--ranks-per-node", help="ranks per node")
    p.add_argument("--n", help="block edge length")
    p.add_argument("--loops", help="outer,middle,inner loop counts")
    p.add_argument("--repeats", help="seeded repetitions per variant")
    p.add_argument("--seed")
    p.add_argument("--trace", metavar="PATH", help="write event traces (one file per run)")
    p.add_argument("--report", metavar="PATH", help="write the JSON-lines report here")
    p.add_argument("--cost", action="append", default=[], metavar="KEY=VALUE",
                   help="cost model override, repeatable")
    p.add_argument("--print-spec", action="store_true",
                   help="print the validated spec and exit")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    overrides: dict[str, str] = {}
    for key in ("variant", "dims", "nodes", "n", "loops", "repeats", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.ranks_per_node is not None:
        overrides["ranks_per_node"] = args.ranks_per_node
    if args.trace is not None:
        overrides["trace"] = "true"
    bad = {}
    for item in args.cost:
        key, sep, value = item.partition("=")
        if not sep:
            bad[f"cost.{item}"] = "expected KEY=VALUE"
        else:
            overrides[f"cost.{key.strip()}"] = value.strip()
    try:
        if bad:
            raise SpecError(bad)
        spec = parse_spec(args.spec, overrides)
    except SpecError as e:
        for key, msg in e.problems.items():
            print(f"spec error: {key}: {msg}", file=sys.stderr)
        return 2
    if args.print_spec:
        sys.stdout.write(spec.to_text())
        return 0
    return run_experiment(spec, args.report, args.trace)


if __name__ == "__main__":
    sys.exit(main())
