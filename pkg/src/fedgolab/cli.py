"""fedgo-lab command line: run experiments, verify the theory suites, plot metric curves."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import modelio, plotting, suites
from .fedloop import run_experiment
from .ganforge import DomainError, MlpGenerator
from .numerics import ConfigurationError, InvalidTargetError
from .synthdata import InfeasiblePartitionError
from .weighting import UndefinedWeightError, WeightingMethod

log = logging.getLogger("fedgolab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4

METRIC_HEADER = ("seed", "round", "server_acc", "ensemble_acc", "ensemble_loss", "distill_kl", "wall_ms")
SUMMARY_FIELDS = ("server_acc", "ensemble_acc", "ensemble_loss", "distill_kl")


class InvariantViolation(RuntimeError):
    pass


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("FEDGOLAB_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigurationError(f"FEDGOLAB_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigurationError("thread count must be at least 1")
    return value


def _metric_line(seed: int, m) -> str:
    vals = (m.server_test_accuracy, m.ensemble_test_accuracy, m.ensemble_test_loss, m.distill_kl, m.wall_ms)
    return ",".join([str(seed), str(m.round)] + [repr(float(v)) for v in vals]) + "\n"


def _mean_sd(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def _save_models(result, seed: int, model_dir: Path) -> None:
    modelio.save(result.server, model_dir / f"seed{seed}_server.model")
    for k, m in sorted(result.client_models.items()):
        modelio.save(m, model_dir / f"seed{seed}_client{k}.model")
    for k, d in enumerate(result.discriminators or []):
        modelio.save(d, model_dir / f"seed{seed}_disc{k}.model")
    if isinstance(result.generator, MlpGenerator):
        modelio.save(result.generator, model_dir / f"seed{seed}_generator.model")


def execute(spec: cfgmod.RunSpec, out: Path, threads: int = 1) -> dict:
    """Run every seed of ``spec`` into ``out``; returns the summary dict."""
    out.mkdir(parents=True, exist_ok=True)
    model_dir = out / "models"
    model_dir.mkdir(exist_ok=True)
    (out / "config.json").write_text(cfgmod.dumps(spec), encoding="utf-8")
    finals = []
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(METRIC_HEADER) + "\n")
        fh.flush()
        for seed in spec.seeds:
            def on_round(m, seed=seed):
                fh.write(_metric_line(seed, m))
                fh.flush()

            result = run_experiment(spec.federation, seed, threads=threads, on_round=on_round)
            last = result.metrics[-1]
            finals.append({
                "seed": seed,
                "server_acc": last.server_test_accuracy,
                "ensemble_acc": last.ensemble_test_accuracy,
                "ensemble_loss": last.ensemble_test_loss,
                "distill_kl": last.distill_kl,
            })
            log.info("seed %d: server %.4f ensemble %.4f", seed, last.server_test_accuracy,
                     last.ensemble_test_accuracy)
            _save_models(result, seed, model_dir)
    summary = {"scenario": spec.federation.scenario, "weighting": str(spec.federation.weighting),
               "seeds": list(spec.seeds), "per_seed": finals, "mean": {}, "sd": {}}
    for f in SUMMARY_FIELDS:
        summary["mean"][f], summary["sd"][f] = _mean_sd([r[f] for r in finals])
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def _apply_overrides(spec: cfgmod.RunSpec, args) -> cfgmod.RunSpec:
    if getattr(args, "weighting", None):
        spec.federation.weighting = WeightingMethod.parse(args.weighting, spec.federation.weighting.tau)
    if args.seed is not None:
        spec.seeds = [args.seed]
    return spec


def _out_dir(args, spec: cfgmod.RunSpec) -> Path:
    if args.out:
        return Path(args.out)
    if spec.out:
        return Path(spec.out)
    return Path("runs") / f"{spec.federation.scenario}-{spec.federation.weighting}"


def cmd_run(args) -> int:
    path = args.config or args.config_path
    if not path:
        raise ConfigurationError("run needs a config file (--config PATH)")
    try:
        spec = cfgmod.load(path)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    spec = _apply_overrides(spec, args)
    summary = execute(spec, _out_dir(args, spec), resolve_threads(args.threads))
    print(json.dumps(summary["mean"], sort_keys=True))
    return EXIT_OK


def cmd_toy(args) -> int:
    spec = _apply_overrides(cfgmod.from_dict(cfgmod.packaged("toy")), args)
    summary = execute(spec, _out_dir(args, spec), resolve_threads(args.threads))
    print(json.dumps(summary["mean"], sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(suites.SUITES) if not args.suite or "all" in args.suite else args.suite
    for n in names:
        if n not in suites.SUITES:
            raise ConfigurationError(f"unknown suite {n!r}; expected one of {suites.SUITES} or 'all'")
    out = Path(args.out or "verify")
    out.mkdir(parents=True, exist_ok=True)
    failed = []
    seed = args.seed if args.seed is not None else 0
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for n in names:
            rows = suites.run_suite(n, seed=seed)
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
            bad = [r["name"] for r in rows if r["asserted"] and not r["holds"]]
            failed.extend(f"{n}/{b}" for b in bad)
            print(f"{n}: {len(rows) - len(bad)}/{len(rows)} hold")
    if failed:
        raise InvariantViolation("violated: " + ", ".join(failed[:10]))
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in args.inputs:
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    plotting.plot(args.inputs, args.out, args.metric, args.per_seed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgo-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads (default: $FEDGOLAB_THREADS or 1)")

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config_path", nargs="?", help="config file (same as --config)")
    run.add_argument("--config")
    run.add_argument("--weighting", help="override the configured weighting method")
    common(run)
    run.set_defaults(func=cmd_run)

    toy = sub.add_parser("toy", help="run the packaged four-Gaussian toy experiment")
    toy.add_argument("--weighting", help="uniform, variance, entropy, domain_aware or fedgo")
    common(toy)
    toy.set_defaults(func=cmd_toy)

    ver = sub.add_parser("verify", help="run theory check suites and write reports.jsonl")
    ver.add_argument("--suite", action="append", help=f"one of {', '.join(suites.SUITES)} or all (repeatable)")
    ver.add_argument("--seed", type=int)
    ver.add_argument("--out", help="output directory (default: verify)")
    ver.set_defaults(func=cmd_verify)

    plot = sub.add_parser("plot", help="draw metric curves from metrics.csv files")
    plot.add_argument("inputs", nargs="+")
    plot.add_argument("--out", required=True, help="SVG path")
    plot.add_argument("--metric", default="server_acc", choices=plotting.METRICS)
    plot.add_argument("--per-seed", action="store_true", help="one curve per seed instead of the seed mean")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InfeasiblePartitionError) as exc:
        print(f"fedgo-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fedgo-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvariantViolation, InvalidTargetError, UndefinedWeightError, DomainError) as exc:
        print(f"fedgo-lab: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
