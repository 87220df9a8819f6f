"""Command-line entry point: ``layered-ggm {generate,fit,experiment,tune}``."""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import simgen
from .errors import BadConfig, LayeredGGMError
from .experiment import ExperimentConfig, emit_report, fit_dataset, run_experiment, simulate
from .multilayer import decompose
from .screening import screen
from .tuning import default_grid, grid_search, write_bic_table
from .twolayer import UpdateMode, write_trace_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
THREADS_ENV = "LAYERED_GGM_THREADS"


def resolve_threads(flag):
    """``--threads`` if given, else ``$LAYERED_GGM_THREADS``, else 1."""
    if flag is not None:
        value = flag
    else:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw == "":
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise BadConfig(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise BadConfig("thread count must be at least 1")
    return value


def _load_config(args):
    cfg = ExperimentConfig.load(args.config)
    updates = {"threads": resolve_threads(args.threads)}
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.out is not None:
        updates["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        updates["base_seed"] = args.seed
    return replace(cfg, penalties=replace(cfg.penalties), **updates)


def _dataset(cfg, args):
    if getattr(args, "data", None):
        return simgen.load_dataset(args.data)
    return simulate(cfg.recipe, cfg.base_seed)[1]


def cmd_generate(cfg, args):
    truth, data = simulate(cfg.recipe, cfg.base_seed)
    out = Path(cfg.output_dir)
    simgen.export_truth(truth, out / "truth", cfg.recipe, cfg.base_seed)
    simgen.export_dataset(data, out / "data", cfg.recipe)
    print(f"wrote ground truth and data for seed {cfg.base_seed} to {out}")


def cmd_fit(cfg, args):
    data = _dataset(cfg, args)
    est = fit_dataset(cfg, data, cfg.base_seed)
    out = Path(cfg.output_dir)
    est.export(out)
    stages = sorted(est.per_stage.items()) if hasattr(est, "per_stage") else [(1, est)]
    for t, st in stages:
        suffix = "" if len(stages) == 1 else f"_stage{t}"
        write_trace_csv(out / f"trace{suffix}.csv", st)
        if st.bic_table:
            write_bic_table(out / f"bic_table{suffix}.csv", st.bic_table)
    print(f"wrote estimate to {out}")


def cmd_experiment(cfg, args):
    result = run_experiment(cfg)
    paths = emit_report(result)
    summary = json.loads(paths["summary.json"].read_text())["summary"]
    for block, stats in summary.items():
        print(f"{block:10s} " + " ".join(f"{k}={stats[k]['mean']:.3f}" for k in ("sen", "spe", "mcc", "rel_fnorm")))
    print(f"wrote report to {cfg.output_dir}")


def cmd_tune(cfg, args):
    data = _dataset(cfg, args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    selected = {}
    for st in decompose(data)[:-1]:
        x, y = st.design, st.response
        n, p1 = x.shape
        grid = cfg.grid or default_grid(n, p1, y.shape[1])
        supports = screen(x, y, cfg.screening_alpha, cfg.threads)
        result = grid_search(x, y, supports, grid, cfg.penalties, cfg.threads, keep_best=False)
        suffix = "" if len(data.layers) == 2 else f"_stage{st.target}"
        write_bic_table(out / f"bic_table{suffix}.csv", result.table)
        selected[str(st.target)] = {"lambda": result.lambda_star, "rho": result.rho_star}
        print(f"stage {st.target}: lambda*={result.lambda_star:.6g} rho*={result.rho_star:.6g}")
    (out / "selected.json").write_text(json.dumps(selected, indent=2, sort_keys=True) + "\n")


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "experiment": cmd_experiment, "tune": cmd_tune}


def build_parser():
    parser = argparse.ArgumentParser(prog="layered-ggm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "draw a ground truth and a dataset",
        "fit": "fit one dataset",
        "experiment": "run a replicated simulation study",
        "tune": "BIC grid search only",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--threads", type=int, default=None, help=f"worker count (fallback: ${THREADS_ENV})")
        p.add_argument("--mode", choices=[m.value for m in UpdateMode], default=None)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        if name in ("fit", "tune"):
            p.add_argument("--data", type=Path, default=None, help="dataset directory written by 'generate'")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LayeredGGMError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
