"""Command-line harness: ``prophet-match {selectability, ratio, validate}``.

Exit codes: 0 pass, 1 failed guarantee or acceptance check, 2 usage or schema
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

from . import acceptance
from .core import (
    ArrivalKind,
    BatchStructure,
    CertificationError,
    Instance,
    ProphetMatchError,
    format_fraction,
    loads_instance,
)
from .estimation import Process, exact_expectation, mc_expectation, selectability_report, simulate_trials
from .instances import by_name
from .ocrs import OcrsConstant, constant
from .oracles import ex_ante_opt
from .prophet import (
    dynamic_pricing,
    edge_ocrs_ex_ante,
    greedy_online,
    optimal_online,
    prophet_generic_family,
    prophet_via_fractional_ocrs,
    prophet_via_ocrs,
)
from .sampling import exact_offline

ALGOS = ("vertex-ocrs", "frac-vertex-ocrs", "edge-ocrs", "greedy", "pricing", "optimal-online")
OCRS_ALGOS = ("vertex-ocrs", "frac-vertex-ocrs", "edge-ocrs")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Serialization


def encode(value):
    if isinstance(value, Fraction):
        return format_fraction(value)
    if isinstance(value, dict):
        return {str(k): encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [encode(v) for v in items]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if hasattr(value, "item"):
        return value.item()
    return value


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    if report.get("selectability"):
        rows = report["selectability"]
        keys = list(rows[0])
        writer.writerow(keys)
        for r in rows:
            writer.writerow([json.dumps(r[k]) if isinstance(r[k], (list, dict)) else r[k] for k in keys])
    else:
        writer.writerow(["key", "value"])
        for k, v in report.items():
            if k == "config":
                for ck, cv in v.items():
                    writer.writerow([f"config.{ck}", cv])
            elif isinstance(v, dict):
                for sk, sv in v.items():
                    writer.writerow([f"{k}.{sk}", json.dumps(sv) if isinstance(sv, (list, dict)) else sv])
            else:
                writer.writerow([k, json.dumps(v) if isinstance(v, (list, dict)) else v])
    return buf.getvalue()


def emit(report: dict, args) -> None:
    data = encode(report)
    text = report_csv(data) if args.format == "csv" else json.dumps(data, indent=2) + "\n"
    if args.out:
        write_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Configuration


def load_instance(ref: str, eps) -> Instance:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read instance file {ref}: {exc}") from None
        return loads_instance(text)
    return by_name(ref, eps)


def to_vertex_arrival(inst: Instance) -> Instance:
    """Edge-arrival instance with independent weights re-batched by vertex, vertices in index order."""
    if inst.arrival.kind is ArrivalKind.VERTEX:
        return inst
    if inst.edge_distributions is None or not inst.is_matching:
        raise UsageError("this algorithm needs vertex arrival and the instance cannot be re-batched")
    return inst.reordered(BatchStructure.vertex(range(inst.graph.vertex_count)))


def to_edge_arrival(inst: Instance) -> Instance:
    """Vertex-arrival instance with independent weights split into singleton batches in arrival order."""
    if inst.arrival.kind is ArrivalKind.EDGE:
        return inst
    if inst.edge_distributions is None or not inst.is_matching:
        raise UsageError("this algorithm needs edge arrival and the instance cannot be re-batched")
    order = [e for b in inst.batches for e in b]
    return inst.reordered(BatchStructure.edge(order))


def check_config(args) -> None:
    if args.mode == "mc":
        if args.n is None or args.seed is None:
            raise UsageError("--mode mc requires --n and --seed")
        if args.n < 2:
            raise UsageError("--n must be at least 2")
    elif args.n is not None or args.seed is not None:
        raise UsageError("--mode exact does not take --n or --seed")


def build_process(inst: Instance, algo: str, c: OcrsConstant, benchmark: str | None) -> tuple[Process, Instance]:
    if algo == "vertex-ocrs":
        inst = to_vertex_arrival(inst)
        return prophet_via_ocrs(inst, "vertex_half"), inst
    if algo == "frac-vertex-ocrs":
        inst = to_vertex_arrival(inst)
        return prophet_via_fractional_ocrs(inst), inst
    if algo == "edge-ocrs":
        inst = to_edge_arrival(inst)
        if benchmark == "ex-ante":
            return edge_ocrs_ex_ante(inst, c), inst
        return prophet_via_ocrs(inst, "edge", c), inst
    if algo == "greedy":
        return (greedy_online(inst) if inst.is_matching else prophet_generic_family(inst)), inst
    if algo == "pricing":
        inst = to_vertex_arrival(inst)
        return dynamic_pricing(inst), inst
    if algo == "optimal-online":
        return optimal_online(inst), inst
    raise UsageError(f"unknown algorithm {algo!r}")


def declared_constant(algo: str, c: OcrsConstant) -> Fraction | None:
    if algo in ("vertex-ocrs", "frac-vertex-ocrs"):
        return Fraction(1, 2)
    if algo == "edge-ocrs":
        return c.value
    return None


def config_echo(args) -> dict:
    keys = ("command", "instance", "algo", "c", "benchmark", "mode", "n", "seed", "eps", "format")
    return {k: getattr(args, k, None) for k in keys if getattr(args, k, None) is not None}


# ---------------------------------------------------------------------------
# Commands


def mc_selectability(process: Process, n: int, seed: int) -> list[dict]:
    counts: dict[tuple[int, int], int] = {}
    hits: dict[tuple[int, int, int], int] = {}
    for start in range(0, n, 8192):
        tr = simulate_trials(process, seed, start, min(8192, n - start))
        for t in range(tr.keys.shape[1]):
            for key, chosen in zip(tr.keys[:, t].tolist(), tr.chosen[:, t].tolist()):
                counts[(t, key)] = counts.get((t, key), 0) + 1
                while chosen:
                    low = chosen & -chosen
                    e = low.bit_length() - 1
                    chosen ^= low
                    hits[(t, key, e)] = hits.get((t, key, e), 0) + 1
    entries = []
    for (t, key), cnt in sorted(counts.items()):
        obs = process.observation(t, key)
        if process.observer.fractional:
            members = [(e, s) for e, s in zip(process.instance.batches[t], obs) if s]
        else:
            members = [(e, Fraction(1)) for e in sorted(obs)]
        for e, s in members:
            p = hits.get((t, key, e), 0) / cnt
            se = math.sqrt(p * (1 - p) / cnt)
            entries.append({"batch": t, "realization": [str(v) for v in obs] if process.observer.fractional else sorted(obs),
                            "element": e, "samples": cnt, "probability": p, "ratio": p / float(s),
                            "ci_halfwidth": 1.96 * se / float(s)})
    return entries


def cmd_selectability(args) -> int:
    check_config(args)
    if args.algo not in OCRS_ALGOS + ("greedy",):
        raise UsageError(f"selectability is defined for {', '.join(OCRS_ALGOS)} and the batched greedy selector")
    t0 = time.perf_counter()
    c = constant(args.c)
    inst = load_instance(args.instance, args.eps)
    if args.algo == "greedy" and inst.is_matching:
        raise UsageError("selectability with --algo greedy needs a non-matching (explicit family) instance")
    proc, inst = build_process(inst, args.algo, c, args.benchmark)
    declared = declared_constant(args.algo, c)
    diagnostics: dict = {}
    table = getattr(proc.policy, "table", None)
    if table is not None and table.diagnostics:
        diagnostics["alpha_clamps"] = table.diagnostics
    if args.mode == "exact":
        rep = selectability_report(proc)
        entries = rep.entries
        minimum = rep.minimum
        passed = declared is None or (minimum is None or minimum >= declared)
        extra = {"marginal_ratios": rep.marginal_ratios, "omitted": rep.omitted,
                 "min_marginal_ratio": rep.min_marginal_ratio}
    else:
        entries = mc_selectability(proc, args.n, args.seed)
        minimum = min((e["ratio"] for e in entries), default=None)
        worst = min((e["ratio"] + 5 * e["ci_halfwidth"] / 1.96 for e in entries), default=math.inf)
        passed = declared is None or worst >= float(declared)
        extra = {}
        diagnostics["max_ci_halfwidth"] = max((e["ci_halfwidth"] for e in entries), default=0.0)
    report = {
        "command": "selectability",
        "config": config_echo(args),
        "instance_name": inst.name,
        "declared_c": declared,
        "achieved_selectability": minimum,
        "passed": passed,
        "selectability": entries,
        **extra,
        "diagnostics": diagnostics,
        "wall_time": time.perf_counter() - t0,
    }
    emit(report, args)
    return 0 if passed else 1


def benchmark_value(inst: Instance, benchmark: str):
    if benchmark in ("opt", "fopt"):
        return exact_offline(inst, benchmark)["value"]
    if benchmark == "ex-ante":
        return ex_ante_opt(inst.graph, inst.marginals()).objective
    raise UsageError(f"unknown benchmark {benchmark!r}")


def cmd_ratio(args) -> int:
    check_config(args)
    t0 = time.perf_counter()
    c = constant(args.c)
    benchmark = args.benchmark or "opt"
    inst = load_instance(args.instance, args.eps)
    proc, inst = build_process(inst, args.algo, c, benchmark)
    bench = benchmark_value(inst, benchmark)
    diagnostics: dict = {}
    table = getattr(proc.policy, "table", None)
    if table is not None and table.diagnostics:
        diagnostics["alpha_clamps"] = table.diagnostics
    if args.mode == "exact":
        value = exact_expectation(proc).value
        ratio = value / bench if bench else None
        slack = 0
    else:
        est = mc_expectation(proc, args.n, args.seed)
        value = est.value
        ratio = value / float(bench) if bench else None
        slack = 5 * est.std / math.sqrt(est.sample_count) / float(bench) if bench else 0.0
        diagnostics.update({"ci_halfwidth": est.ci_halfwidth, "std": est.std, "samples": est.sample_count})
    guarantee = None
    if args.algo == "vertex-ocrs" and benchmark == "opt":
        guarantee = Fraction(1, 2)
    elif args.algo == "frac-vertex-ocrs" and benchmark in ("opt", "fopt"):
        guarantee = Fraction(1, 2)
    elif args.algo == "edge-ocrs" and benchmark in ("opt", "ex-ante"):
        guarantee = c.value
    passed = guarantee is None or ratio is None or ratio + slack >= guarantee
    report = {
        "command": "ratio",
        "config": config_echo(args),
        "instance_name": inst.name,
        "benchmarks": {benchmark: bench},
        "algorithm": proc.label,
        "algorithm_value": value,
        "ratio": ratio,
        "ratio_float": float(ratio) if ratio is not None else None,
        "guarantee": guarantee,
        "passed": passed,
        "diagnostics": diagnostics,
        "wall_time": time.perf_counter() - t0,
    }
    emit(report, args)
    return 0 if passed else 1


def cmd_validate(args) -> int:
    try:
        ids = acceptance.select(args.only)
    except KeyError as exc:
        raise UsageError(f"unknown check group {exc.args[0]!r}; choose from "
                         f"{', '.join(sorted(acceptance.GROUPS))} or 1-12") from None
    ctx = acceptance.Context()
    if args.corrupt_constant:
        ctx.improved = OcrsConstant(Fraction(2, 5), "corrupted")
    results = acceptance.run_checks(ids, ctx)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {failed}" if failed else ""))
    if args.out:
        rows = [{"criterion": r.number, "title": r.title, "passed": r.passed, "detail": r.detail,
                 "seconds": r.seconds} for r in results]
        write_atomic(Path(args.out), json.dumps({"command": "validate", "results": rows}, indent=2) + "\n")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def _eps(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prophet-match", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--instance", required=True, help="built-in name (fig1a, fig1b, bad-ocrs, random:SEED) or JSON file")
        p.add_argument("--algo", required=True, choices=ALGOS)
        p.add_argument("--c", default="improved", choices=("warmup", "independent", "improved"))
        p.add_argument("--benchmark", choices=("opt", "fopt", "ex-ante"))
        p.add_argument("--mode", default="exact", choices=("exact", "mc"))
        p.add_argument("--n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--eps", type=_eps)
        p.add_argument("--out")
        p.add_argument("--format", default="json", choices=("json", "csv"))

    common(sub.add_parser("selectability", help="conditional selection probabilities of an OCRS"))
    common(sub.add_parser("ratio", help="expected value of an online algorithm against a benchmark"))
    v = sub.add_parser("validate", help="run the acceptance checks")
    v.add_argument("--only", action="append", help="check number or group; repeatable")
    v.add_argument("--out")
    v.add_argument("--corrupt-constant", action="store_true", help="negative control: replace the solved constant with 2/5")
    return parser


COMMANDS = {"selectability": cmd_selectability, "ratio": cmd_ratio, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CertificationError as exc:
        print(f"prophet-match: certification failed: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ProphetMatchError) as exc:
        print(f"prophet-match: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
