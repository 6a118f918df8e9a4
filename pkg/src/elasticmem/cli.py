"""Command-line entry point.

Reports always go to files; diagnostics go to stderr. Exit status is 0 only
when the command completed without error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import footprint as fp
from .config import ConfigError, ExperimentConfig, TraceError, config_to_dict, ingest_trace, parse_config
from .sim import Mode, SimulationError, goodput_search, resolve_slos, run

log = logging.getLogger("elasticmem")

DEFAULT_CONTEXTS = (2048, 8192, 32768, 131072, 200000)


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "trace", None):
        cfg.workload = ingest_trace(args.trace)
    if getattr(args, "seed", None) is not None:
        cfg.seed = cfg.workload.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = Mode(args.mode)
    if getattr(args, "out", None):
        cfg.output = args.out
    return cfg


def _out_path(cfg: ExperimentConfig, default: str) -> Path:
    path = Path(cfg.output or default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _effective(cfg: ExperimentConfig) -> dict:
    """Config block embedded in reports; the output location is left out so that
    identical experiments produce identical bytes wherever they are written."""
    doc = config_to_dict(cfg)
    doc.pop("output")
    return doc


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _parse_floats(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _parse_ints(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return values


# -- subcommands ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_path(cfg, "report.json")
    rep = run(cfg.sim_config(), cfg.mode, record_plans=args.plans)
    doc = rep.to_dict()
    doc["config"] = _effective(cfg)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _sidecar(out, ".series.csv").write_text(rep.series_csv())
    if args.plans:
        with open(_sidecar(out, ".plans.jsonl"), "w") as fh:
            for entry in rep.plans:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    log.info("wrote %s (%d requests, %d iterations)", out, rep.n_requests, rep.iterations)
    return 0


def cmd_sweep_rate(args) -> int:
    cfg = _load(args)
    if cfg.workload.offline or cfg.workload.records:
        raise ConfigError(["workload: sweep-rate needs a Poisson workload"])
    out = _out_path(cfg, "sweep.json")
    sim_cfg = cfg.sim_config()
    slos = resolve_slos(sim_cfg)
    modes = [Mode.STATIC, Mode.ELASTIC] if args.mode is None else [cfg.mode]
    results = {m.value: goodput_search(sim_cfg, sorted(args.rates), m, slos, workers=args.workers) for m in modes}
    doc = {
        "slo": {"ttft": slos[0], "tpot": slos[1]},
        "rates": sorted(args.rates),
        "modes": {k: {"goodput": r.goodput, "found": r.found,
                      "attainment": {str(rate): a for rate, a in r.attainment.items()}}
                  for k, r in results.items()},
        "config": _effective(cfg),
    }
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with open(_sidecar(out, ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate"] + list(results))
        for rate in sorted(args.rates):
            w.writerow([rate] + [results[k].attainment[rate] for k in results])
    log.info("wrote %s", out)
    return 0


def cmd_footprint(args) -> int:
    cfg = _load(args)
    out = _out_path(cfg, "footprint.csv")
    rows = []
    for n in args.contexts:
        try:
            c = fp.composition_report(cfg.model, cfg.device, n, args.concurrency)
        except fp.ModelDoesNotFit as e:
            log.warning("context %d: %s", n, e)
            continue
        rows.append((n, args.concurrency, c.weights, c.activation, c.kv))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["context", "concurrency", "weights_share", "activation_share", "kv_share"])
        for n, b, *shares in rows:
            w.writerow([n, b] + [f"{s:.6f}" for s in shares])
    log.info("wrote %s", out)
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_path(cfg, "compare.json")
    sim_cfg = cfg.sim_config()
    slos = resolve_slos(sim_cfg)
    reps = {m: run(sim_cfg, m, slos=slos) for m in (Mode.STATIC, Mode.ELASTIC)}
    metrics = {
        "throughput_tokens_per_s": lambda r: r.throughput,
        "decode_throughput_tokens_per_s": lambda r: r.decode_throughput,
        "max_decode_batch": lambda r: r.max_decode_batch,
        "mean_ttft_s": lambda r: r.mean_ttft,
    }
    table = {}
    for name, get in metrics.items():
        s, e = get(reps[Mode.STATIC]), get(reps[Mode.ELASTIC])
        table[name] = {"static": s, "elastic": e, "ratio": (e / s) if s else None}
    att = {m.value: r.slo_attainment for m, r in reps.items()}
    doc = {"metrics": table, "slo_attainment": att, "config": _effective(cfg),
           "reports": {m.value: r.to_dict() for m, r in reps.items()}}
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with open(_sidecar(out, ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "static", "elastic", "ratio"])
        for name, row in table.items():
            w.writerow([name, row["static"], row["elastic"], row["ratio"]])
    log.info("wrote %s", out)
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elasticmem", description="Elastic KV/activation memory simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True, workload=True):
        sp.add_argument("--config", help="YAML or JSON experiment config")
        sp.add_argument("--out", help="output path (overrides the config's output)")
        if mode:
            sp.add_argument("--mode", choices=[m.value for m in Mode])
        if workload:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--trace", help="JSON-lines request trace; replaces the config workload")

    s = sub.add_parser("simulate", help="run one workload and write a JSON report")
    common(s)
    s.add_argument("--plans", action="store_true", help="also write per-iteration plans as JSON lines")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep-rate", help="SLO attainment over a rate grid and the resulting goodput")
    common(s)
    s.add_argument("--rates", type=_parse_floats, required=True, help="comma-separated arrival rates (req/s)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep_rate)

    s = sub.add_parser("footprint", help="memory composition by context length")
    common(s, mode=False, workload=False)
    s.add_argument("--contexts", type=_parse_ints, default=list(DEFAULT_CONTEXTS))
    s.add_argument("--concurrency", type=int, default=1)
    s.set_defaults(func=cmd_footprint)

    s = sub.add_parser("compare", help="run static and elastic on the same workload")
    common(s, mode=False)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
    except (TraceError, SimulationError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
