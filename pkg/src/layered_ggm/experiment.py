"""Replicated simulation studies: configuration, execution and report files."""
import csv
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, evalkit, simgen
from .errors import BadConfig, ExperimentFailed, LayeredGGMError
from .multilayer import fit_multilayer
from .tuning import TABLE_FIELDS, TuningGrid
from .twolayer import PenaltyConfig, StabilityConfig, UpdateMode, fit_two_layer

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRICS = ("sen", "spe", "mcc", "rel_fnorm")
METRIC_FIELDS = ("replication", "seed", "block", *METRICS, "tp", "fp", "tn", "fn")
TRACE_FIELDS = ("stage", "iteration", "objective", "card_B", "card_Theta")
SD_CONVENTION = "sample standard deviation (n - 1 divisor)"
_TOP_KEYS = {
    "schema_version", "recipe", "replications", "base_seed", "penalties", "grid", "screening_alpha",
    "mode", "n_boot", "output_dir", "threads",
}


@dataclass
class ExperimentConfig:
    recipe: simgen.ModelRecipe
    replications: int = 10
    base_seed: int = 0
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    grid: TuningGrid = None
    screening_alpha: float = 0.1
    mode: UpdateMode = UpdateMode.EXACT2BLOCK
    n_boot: int = 20
    output_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        self.mode = UpdateMode.parse(self.mode)
        self.penalties.mode = self.mode
        if int(self.replications) < 1:
            raise BadConfig("replications must be at least 1")
        if int(self.threads) < 1:
            raise BadConfig("threads must be at least 1")
        if int(self.n_boot) < 1:
            raise BadConfig("n_boot must be at least 1")
        if not 0 <= self.screening_alpha <= 1:
            raise BadConfig("screening_alpha must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise BadConfig("config must be a mapping")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise BadConfig(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        if "recipe" not in doc:
            raise BadConfig("config needs a recipe section")
        kwargs = {k: v for k, v in doc.items() if k not in ("schema_version", "recipe", "penalties", "grid")}
        try:
            recipe = simgen.ModelRecipe(**doc["recipe"])
            penalties = PenaltyConfig(**(doc.get("penalties") or {}))
            grid = TuningGrid(**doc["grid"]) if doc.get("grid") else None
            return cls(recipe=recipe, penalties=penalties, grid=grid, **kwargs)
        except TypeError as exc:
            raise BadConfig(str(exc)) from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise BadConfig(f"config {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        pen = {f.name: getattr(self.penalties, f.name) for f in fields(PenaltyConfig) if f.name != "mode"}
        return {
            "schema_version": SCHEMA_VERSION,
            "recipe": {**self.recipe.to_dict(), "dims": list(self.recipe.dims)},
            "replications": int(self.replications),
            "base_seed": int(self.base_seed),
            "penalties": pen,
            "grid": None if self.grid is None else {"lambdas": list(self.grid.lambdas), "rhos": list(self.grid.rhos)},
            "screening_alpha": self.screening_alpha,
            "mode": self.mode.value,
            "n_boot": int(self.n_boot),
            "output_dir": str(self.output_dir),
            "threads": int(self.threads),
        }

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


@dataclass
class Replication:
    replication: int
    seed: int
    rows: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    bic_table: list = field(default_factory=list)
    error: str = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replications: list

    @property
    def rows(self):
        return [row for rep in self.replications for row in rep.rows]

    @property
    def failures(self):
        return [rep for rep in self.replications if rep.error is not None]


def simulate(recipe, seed):
    """Ground truth from stream ``[seed, 0]`` and data from ``[seed, 1]``."""
    truth = simgen.build_truth(recipe, [seed, 0])
    data = simgen.gen_dataset(truth, recipe.n, [seed, 1], npn=recipe.npn)
    data.seed = int(seed)
    return truth, data


def fit_dataset(config, data, seed):
    """Fit a two-layer or multi-layer dataset with the settings of ``config``."""
    stability = StabilityConfig(n_boot=int(config.n_boot), seed=[int(seed), 2])
    if len(data.layers) == 2:
        return fit_two_layer(data.layers[0], data.layers[1], config.penalties, config.screening_alpha,
                             tuning=config.grid, stability=stability)
    return fit_multilayer(data, config.penalties, config.screening_alpha, stability=stability, tuning=config.grid)


def _stages(est):
    if hasattr(est, "per_stage"):
        return sorted(est.per_stage.items())
    return [(1, est)]


def _blocks(est, truth):
    if hasattr(est, "per_stage"):
        out = [(f"B_{s}_{t}", est.coeff_hat[(s, t)], truth.coeff[(s, t)], False) for s, t in sorted(est.coeff_hat)]
        out += [(f"Theta_{m}", est.precision_hat[m], truth.precisions[m], True) for m in sorted(est.precision_hat)]
        return out
    return [("B", est.b_hat, truth.coeff[(0, 1)], False), ("Theta", est.theta_hat, truth.precisions[1], True)]


def run_replication(config, r):
    seed = int(config.base_seed) + r
    rep = Replication(r, seed)
    try:
        truth, data = simulate(config.recipe, seed)
        est = fit_dataset(config, data, seed)
    except (LayeredGGMError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
        log.warning("replication %d (seed %d) failed: %s", r, seed, rep.error)
        return rep
    for block, estimate, target, off in _blocks(est, truth):
        m = evalkit.support_metrics(estimate, target, off_diagonal_only=off)
        rep.rows.append({"replication": r, "seed": seed, "block": block, **m.as_dict()})
    for stage, st in _stages(est):
        for k, (obj, (cb, ct)) in enumerate(zip(st.objective_trace, st.card_trace)):
            rep.trace.append({"stage": stage, "iteration": k, "objective": obj, "card_B": cb, "card_Theta": ct})
        for row in st.bic_table or ():
            rep.bic_table.append({"stage": stage, **row})
    return rep


def run_experiment(config, threads=None):
    """Run every replication (``seed = base_seed + r``) and collect metrics.

    Replications run in a process pool when ``threads > 1``; results are
    gathered in replication order, so the output does not depend on
    ``threads``.  Raises :class:`ExperimentFailed` when at least half of the
    replications fail.
    """
    threads = int(config.threads if threads is None else threads)
    reps = range(int(config.replications))
    if threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_replication, [config] * len(reps), reps))
    else:
        results = [run_replication(config, r) for r in reps]
    failed = sum(rep.error is not None for rep in results)
    if 2 * failed >= len(results):
        first = next(rep.error for rep in results if rep.error)
        raise ExperimentFailed(f"{failed} of {len(results)} replications failed; first error: {first}")
    return ExperimentResult(config, results)


def summarize(rows):
    """Mean and sample sd (``ddof=1``; ``None`` with one row) of each metric per block."""
    out = {}
    for block in dict.fromkeys(row["block"] for row in rows):
        sel = [row for row in rows if row["block"] == block]
        stats = {"count": len(sel)}
        for key in METRICS:
            vals = np.array([row[key] for row in sel], dtype=float)
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else None
            stats[key] = {"mean": float(np.mean(vals)), "sd": sd}
        out[block] = stats
    return out


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, UpdateMode):
        return value.value
    return value


def emit_report(result, out_dir=None):
    """Write ``metrics.csv``, ``summary.json``, ``trace.csv`` and (if tuning ran) ``bic_table.csv``.

    Traces and BIC tables come from the first successful replication.  All
    files are written to a scratch directory first and moved into place at
    the end, so an error leaves no partial report behind.
    """
    rows = result.rows
    if not rows:
        raise ExperimentFailed("no metrics to report")
    out_dir = Path(result.config.output_dir if out_dir is None else out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    first = next(rep for rep in result.replications if rep.error is None)
    summary = {
        "summary": summarize(rows),
        "metadata": {
            "package_version": __version__,
            "config": result.config.to_dict(),
            "replications_completed": len(result.replications) - len(result.failures),
            "failures": [{"replication": f.replication, "seed": f.seed, "error": f.error} for f in result.failures],
            "trace_replication": first.replication,
            "sd_convention": SD_CONVENTION,
        },
    }
    files = {
        "metrics.csv": lambda p: _write_csv(p, METRIC_FIELDS, rows),
        "trace.csv": lambda p: _write_csv(p, TRACE_FIELDS, first.trace),
        "summary.json": lambda p: p.write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n"),
    }
    if first.bic_table:
        files["bic_table.csv"] = lambda p: _write_csv(p, ("stage", *TABLE_FIELDS), first.bic_table)
    try:
        with tempfile.TemporaryDirectory(dir=out_dir, prefix=".report-") as tmp:
            for name, write in files.items():
                write(Path(tmp) / name)
            for name in files:
                os.replace(Path(tmp) / name, out_dir / name)
    except OSError as exc:
        raise OSError(f"writing report to {out_dir} failed: {exc}") from exc
    return {name: out_dir / name for name in files}
