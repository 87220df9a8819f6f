"""Synthetic layered Gaussian models: ground truths, datasets, nonparanormal noise.

Layers are indexed from 0.  ``coeff[(s, t)]`` is the ``p_s x p_t`` matrix of
directed effects from layer ``s`` to layer ``t`` (column ``j`` holds the
parents of node ``j`` of layer ``t``); ``precisions[m]`` is the precision of
layer 0 itself for ``m == 0`` and of the layer-``m`` errors otherwise.
"""
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from . import numkit
from .errors import BadConfig

log = logging.getLogger(__name__)

FAMILIES = ("two_layer_a", "two_layer_b", "three_layer")
THREE_LAYER_SIGNAL = {"A": 1.0, "B": 1.5, "C": 2.0}


@dataclass
class GroundTruth:
    layer_dims: list
    coeff: dict
    precisions: dict

    @property
    def n_layers(self):
        return len(self.layer_dims)

    def covariance(self, m):
        return numkit.inv_spd(self.precisions[m])

    def check(self):
        for m, p in enumerate(self.layer_dims):
            if self.precisions[m].shape != (p, p):
                raise BadConfig(f"precision of layer {m} has shape {self.precisions[m].shape}")
            numkit.cholesky_lower(self.precisions[m])
        for (s, t), b in self.coeff.items():
            if not s < t:
                raise BadConfig(f"coefficient block {(s, t)} is not forward")
            if b.shape != (self.layer_dims[s], self.layer_dims[t]):
                raise BadConfig(f"coefficient block {(s, t)} has shape {b.shape}")
        return self


@dataclass
class LayeredDataset:
    layers: list
    n: int
    seed: object = None
    centered: bool = True

    @property
    def layer_dims(self):
        return [x.shape[1] for x in self.layers]


@dataclass
class ModelRecipe:
    """Everything needed to build a synthetic truth and draw data from it.

    ``dims`` is ``(p1, p2)`` for the two-layer families and ``(p1, p2, p3)``
    for ``three_layer``.  Probabilities left as ``None`` take the family
    defaults (``5/p`` for sparse blocks, ``30/p1`` for Model B's ``B``).
    """

    family: str
    dims: tuple
    n: int
    signal_strength: float = 1.0
    coeff_prob: float = None
    precision_prob: float = None
    cond_number: float = None
    layer1_cov: str = "identity"
    npn: str = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.family not in FAMILIES:
            raise BadConfig(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        want = 3 if self.family == "three_layer" else 2
        if len(self.dims) != want:
            raise BadConfig(f"family {self.family} needs {want} layer dimensions, got {self.dims}")
        if self.signal_strength <= 0:
            raise BadConfig("signal_strength must be positive")
        for name in ("coeff_prob", "precision_prob"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise BadConfig(f"{name}={value} is not a probability")
        if self.layer1_cov not in ("identity", "generated"):
            raise BadConfig(f"layer1_cov must be 'identity' or 'generated', got {self.layer1_cov!r}")
        if self.npn not in (None, "truncated", "shrunken"):
            raise BadConfig(f"npn must be None, 'truncated' or 'shrunken', got {self.npn!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def three_layer(cls, model, dims=(50, 50, 50), n=200, **kwargs):
        """Three-layer Models A/B/C, which differ only in the signal strength into layer 3."""
        return cls("three_layer", dims, n, signal_strength=THREE_LAYER_SIGNAL[model], **kwargs)


def _signed_uniform(rng, size, low, high):
    mag = rng.uniform(low, high, size=size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def gen_sparse_coeff(p_s, p_t, prob, magnitude_low=0.5, magnitude_high=1.0, scale=1.0, seed=None):
    """Sparse ``p_s x p_t`` matrix; entries nonzero w.p. ``prob``.

    Nonzeros are ``scale * Unif[(-high, -low) U (low, high)]``.
    """
    if not 0.0 <= prob <= 1.0:
        raise BadConfig(f"prob={prob} is not a probability")
    if not 0.0 < magnitude_low < magnitude_high:
        raise BadConfig("need 0 < magnitude_low < magnitude_high")
    rng = numkit.as_rng(seed)
    mask = rng.random((p_s, p_t)) < prob
    values = _signed_uniform(rng, (p_s, p_t), magnitude_low, magnitude_high)
    return np.where(mask, scale * values, 0.0)


def gen_precision(p, edge_prob, cond_number, magnitude_low=0.5, magnitude_high=1.0, seed=None):
    """Sparse SPD matrix with identical diagonal and a target condition number.

    The off-diagonal part ``A`` is drawn symmetric with ``Unif[(-high,-low) U
    (low,high)]`` entries; the common diagonal ``d`` solves
    ``(lmax(A) + d) / (lmin(A) + d) = cond_number``.  With no off-diagonal
    entries the identity is returned (achieved condition number 1).
    """
    if not cond_number > 1:
        raise BadConfig(f"cond_number must exceed 1, got {cond_number}")
    if not 0.0 <= edge_prob <= 1.0:
        raise BadConfig(f"edge_prob={edge_prob} is not a probability")
    rng = numkit.as_rng(seed)
    upper = np.triu(rng.random((p, p)) < edge_prob, k=1)
    values = _signed_uniform(rng, (p, p), magnitude_low, magnitude_high)
    a = np.where(upper, values, 0.0)
    a = a + a.T
    if not np.any(a):
        log.warning("precision draw has no edges; returning identity (condition number 1)")
        return np.eye(p)
    lmin, lmax = numkit.eig_extremes(a)
    diag = (lmax - cond_number * lmin) / (cond_number - 1.0)
    if diag <= -lmin:
        raise BadConfig("cannot reach the requested condition number")
    return a + diag * np.eye(p)


def condition_number(theta):
    lmin, lmax = numkit.eig_extremes(theta)
    return lmax / lmin


def _layer_precision(p, prob, cond, rng):
    # a single node has no edges to draw and no conditioning to target
    if p == 1:
        return np.eye(1)
    return gen_precision(p, min(1.0, prob), cond, seed=rng)


def build_truth(recipe, seed):
    """Draw the ground truth described by ``recipe``."""
    rng = numkit.as_rng(seed)
    dims = recipe.dims
    p1 = dims[0]
    if recipe.layer1_cov == "generated":
        theta1 = _layer_precision(p1, 5.0 / p1, p1, rng)
    else:
        theta1 = np.eye(p1)

    if recipe.family in ("two_layer_a", "two_layer_b"):
        p2 = dims[1]
        default_b = (5.0 if recipe.family == "two_layer_a" else 30.0) / p1
        prob_b = min(1.0, default_b if recipe.coeff_prob is None else recipe.coeff_prob)
        prob_t = 5.0 / p2 if recipe.precision_prob is None else recipe.precision_prob
        cond = p2 if recipe.cond_number is None else recipe.cond_number
        b = gen_sparse_coeff(p1, p2, prob_b, seed=rng)
        theta2 = _layer_precision(p2, prob_t, cond, rng)
        return GroundTruth([p1, p2], {(0, 1): b}, {0: theta1, 1: theta2}).check()

    p2, p3 = dims[1], dims[2]
    prob_xy = min(1.0, 5.0 / p1 if recipe.coeff_prob is None else recipe.coeff_prob)
    prob_z = min(1.0, 5.0 / (p1 + p2) if recipe.coeff_prob is None else recipe.coeff_prob)
    b_xy = gen_sparse_coeff(p1, p2, prob_xy, seed=rng)
    b_xz = gen_sparse_coeff(p1, p3, prob_z, scale=recipe.signal_strength, seed=rng)
    b_yz = gen_sparse_coeff(p2, p3, prob_z, scale=recipe.signal_strength, seed=rng)
    prob_y = 5.0 / p2 if recipe.precision_prob is None else recipe.precision_prob
    prob_zz = 5.0 / p3 if recipe.precision_prob is None else recipe.precision_prob
    theta_y = _layer_precision(p2, prob_y, p2 if recipe.cond_number is None else recipe.cond_number, rng)
    theta_z = _layer_precision(p3, prob_zz, p3 if recipe.cond_number is None else recipe.cond_number, rng)
    return GroundTruth(
        [p1, p2, p3],
        {(0, 1): b_xy, (0, 2): b_xz, (1, 2): b_yz},
        {0: theta1, 1: theta_y, 2: theta_z},
    ).check()


def npn_delta(n):
    """Truncation level ``1 / (4 n^{1/4} sqrt(pi log n))`` of the truncated ECDF."""
    return 1.0 / (4.0 * n**0.25 * np.sqrt(np.pi * np.log(n)))


def npn_transform(data, kind="shrunken"):
    """Columnwise rank -> ECDF -> normal quantile, rescaled to unit variance.

    ``kind="shrunken"`` uses ``rank / (n + 1)``; ``kind="truncated"`` clamps
    ``rank / n`` to ``[delta_n, 1 - delta_n]`` (see :func:`npn_delta`).
    Variances use the ``1/n`` convention of :func:`numkit.sample_covariance`.
    """
    data = np.asarray(data, dtype=float)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[:, None]
    n = data.shape[0]
    if n < 2:
        raise BadConfig("npn_transform needs at least two observations")
    ranks = stats.rankdata(data, axis=0)
    if kind == "shrunken":
        u = ranks / (n + 1.0)
    elif kind == "truncated":
        delta = npn_delta(n)
        u = np.clip(ranks / n, delta, 1.0 - delta)
    else:
        raise BadConfig(f"unknown npn kind {kind!r}")
    z = stats.norm.ppf(u)
    z = z - z.mean(axis=0)
    sd = z.std(axis=0)
    sd[sd == 0] = 1.0
    out = z / sd
    return out[:, 0] if squeeze else out


def gen_dataset(truth, n, seed, npn=None, npn_layer=1):
    """Draw ``n`` observations of every layer of ``truth`` and center them.

    Layer 0 is ``N(0, inv(precisions[0]))``; layer ``t`` is
    ``sum_s X^s @ coeff[(s, t)] + E^t`` with ``E^t ~ N(0, inv(precisions[t]))``.
    When ``npn`` is set, the errors of layer ``npn_layer`` are passed through
    :func:`npn_transform` and then rescaled to their original column scale.
    """
    rng = numkit.as_rng(seed)
    layers = []
    for t, p in enumerate(truth.layer_dims):
        noise = numkit.mvn_sample(truth.covariance(t), n, rng)
        if npn is not None and t == npn_layer:
            noise = npn_transform(noise, npn) * noise.std(axis=0)
        x = noise
        for s in range(t):
            b = truth.coeff.get((s, t))
            if b is not None:
                x = x + layers[s] @ b
        layers.append(x)
    layers = [numkit.center_columns(x) for x in layers]
    seed_repr = seed if isinstance(seed, (int, np.integer)) else None
    return LayeredDataset(layers, int(n), seed_repr, True)


def export_truth(truth, out_dir, recipe=None, seed=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for (s, t), b in sorted(truth.coeff.items()):
        name = f"B_{s}_{t}.csv"
        numkit.write_matrix_csv(out_dir / name, b)
        files[f"B_{s}_{t}"] = name
    for m, theta in sorted(truth.precisions.items()):
        name = f"Theta_{m}.csv"
        numkit.write_matrix_csv(out_dir / name, theta)
        files[f"Theta_{m}"] = name
    manifest = {
        "kind": "ground_truth",
        "layer_dims": list(truth.layer_dims),
        "seed": seed,
        "family": None if recipe is None else recipe.family,
        "recipe": None if recipe is None else recipe.to_dict(),
        "files": files,
    }
    (out_dir / "truth.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_truth(out_dir):
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "truth.json").read_text())
    coeff, precisions = {}, {}
    for key, name in manifest["files"].items():
        parts = key.split("_")
        mat = numkit.read_matrix_csv(out_dir / name)
        if parts[0] == "B":
            coeff[(int(parts[1]), int(parts[2]))] = mat
        else:
            precisions[int(parts[1])] = mat
    return GroundTruth(manifest["layer_dims"], coeff, precisions)


def export_dataset(dataset, out_dir, recipe=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for m, x in enumerate(dataset.layers):
        name = f"layer_{m}.csv"
        numkit.write_matrix_csv(out_dir / name, x)
        files.append(name)
    manifest = {
        "kind": "dataset",
        "layer_dims": dataset.layer_dims,
        "n": dataset.n,
        "seed": dataset.seed,
        "centered": dataset.centered,
        "family": None if recipe is None else recipe.family,
        "files": files,
    }
    (out_dir / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_dataset(out_dir):
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "dataset.json").read_text())
    layers = [numkit.read_matrix_csv(out_dir / name) for name in manifest["files"]]
    return LayeredDataset(layers, manifest["n"], manifest.get("seed"), manifest.get("centered", True))
