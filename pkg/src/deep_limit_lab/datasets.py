"""Synthetic datasets: starlike and concentric annuli plus regression oracles.

Classification sets are sampled area-uniformly from their regions by
rejection in a bounding disk, with exact 50/50 class balance.  Regression
oracles provide data with a known optimal risk for the rate studies.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import WeightVector, flow_final

__all__ = [
    "LabeledDataset",
    "StarlikeSpec",
    "gen_starlike",
    "gen_concentric",
    "gen_regression_oracle",
    "starlike_class",
    "concentric_class",
]


@dataclass(frozen=True)
class LabeledDataset:
    """Finite empirical sample of (x, y) pairs.

    `targets` holds vectors for regression or a single +-1 label column for
    classification (`kind` records which).  `meta` carries generator
    provenance (spec, seed, sample moments).
    """

    inputs: np.ndarray
    targets: np.ndarray
    kind: str = "regression"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.inputs, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.targets, dtype=float))
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("inputs and targets must be matching 2-d arrays")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def labels(self) -> np.ndarray:
        if self.kind != "classification":
            raise ValueError("labels are only defined for classification sets")
        return self.targets[:, 0]

    def save_csv(self, path) -> None:
        """CSV with header x_0..x_{d-1}, then y_0.. or an integer label column."""
        path = Path(path)
        d = self.dim
        if self.kind == "classification":
            header = [f"x_{i}" for i in range(d)] + ["label"]
        else:
            header = [f"x_{i}" for i in range(d)] + [
                f"y_{i}" for i in range(self.targets.shape[1])
            ]
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for xi, yi in zip(self.inputs, self.targets):
                row = [f"{v:.17g}" for v in xi]
                if self.kind == "classification":
                    row.append(str(int(yi[0])))
                else:
                    row.extend(f"{v:.17g}" for v in yi)
                wr.writerow(row)
        manifest = {"kind": self.kind, "n": len(self), "dim": d}
        manifest.update({k: v for k, v in self.meta.items() if _jsonable(v)})
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )

    @classmethod
    def load_csv(cls, path) -> "LabeledDataset":
        path = Path(path)
        with path.open() as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = [[float(v) for v in row] for row in rd]
        arr = np.asarray(rows, dtype=float)
        d = sum(1 for h in header if h.startswith("x_"))
        kind = "classification" if header[-1] == "label" else "regression"
        return cls(arr[:, :d], arr[:, d:], kind=kind)


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _moments(x: np.ndarray) -> dict:
    r = np.linalg.norm(x, axis=1)
    return {f"radial_moment_{k}": float(np.mean(r**k)) for k in (1, 2, 3, 4)}


# ---------------------------------------------------------------------------
# starlike annuli
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StarlikeSpec:
    """Five-lobed annuli: class regions scale the curve rho(t) = 2 + cos(5 t)."""

    r1: float = 1.0
    r2: float = 1.5
    r3: float = 3.0
    n_samples: int = 1000
    seed: int = 0
    augment_dims: int = 0

    def __post_init__(self):
        if not (0 < self.r1 < self.r2 < self.r3):
            raise ValueError("need 0 < r1 < r2 < r3")
        if self.n_samples < 2 or self.n_samples % 2:
            raise ValueError("n_samples must be even and >= 2 for exact balance")
        if self.augment_dims < 0:
            raise ValueError("augment_dims must be >= 0")


def _cos5theta(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    # cos(5t) via the degree-5 Chebyshev polynomial in c = cos(t) = x0 / r,
    # independent of any atan2 path
    c = np.where(r > 0, x[:, 0] / np.maximum(r, 1e-300), 1.0)
    return 16 * c**5 - 20 * c**3 + 5 * c


def starlike_class(x: np.ndarray, spec: StarlikeSpec) -> np.ndarray:
    """Region membership: -1 inner star, +1 outer band, 0 in neither."""
    x = np.atleast_2d(np.asarray(x, dtype=float))[:, :2]
    r = np.linalg.norm(x, axis=1)
    shape = 2.0 + _cos5theta(x, r)
    out = np.zeros(len(x))
    out[r <= spec.r1 * shape] = -1.0
    band = (spec.r2 * shape <= r) & (r <= spec.r3 * shape)
    out[band] = 1.0
    return out


def _rejection_sample(rng, want: int, accept, bound_radius: float, budget: int = 4000):
    got = []
    n_have = 0
    for _ in range(budget):
        batch = max(4 * (want - n_have), 256)
        pts = rng.uniform(-bound_radius, bound_radius, size=(batch, 2))
        inside = np.linalg.norm(pts, axis=1) <= bound_radius
        pts = pts[inside]
        keep = pts[accept(pts)]
        got.append(keep)
        n_have += len(keep)
        if n_have >= want:
            return np.concatenate(got)[:want]
    raise RuntimeError("rejection sampling budget exceeded; spec looks pathological")


def gen_starlike(spec: StarlikeSpec) -> LabeledDataset:
    """Area-uniform sample of the starlike regions, 50/50 balance.

    augment_dims extra zero coordinates are appended, lifting the set into a
    space where a one-to-one flow can separate the classes.
    """
    rng = np.random.Generator(
        np.random.Philox(key=np.array([spec.seed, 0x57a], dtype=np.uint64))
    )
    half = spec.n_samples // 2
    bound = 3.0 * spec.r3
    inner = _rejection_sample(rng, half, lambda p: starlike_class(p, spec) == -1.0, bound)
    outer = _rejection_sample(rng, half, lambda p: starlike_class(p, spec) == 1.0, bound)
    x = np.concatenate([inner, outer])
    y = np.concatenate([-np.ones(half), np.ones(half)])
    if spec.augment_dims:
        x = np.hstack([x, np.zeros((len(x), spec.augment_dims))])
    perm = rng.permutation(len(x))
    meta = {
        "generator": "starlike",
        "r1": spec.r1,
        "r2": spec.r2,
        "r3": spec.r3,
        "seed": spec.seed,
        "augment_dims": spec.augment_dims,
        "sampling": "area-uniform rejection in disk of radius 3*r3",
    }
    meta.update(_moments(x))
    return LabeledDataset(x[perm], y[perm], kind="classification", meta=meta)


# ---------------------------------------------------------------------------
# concentric annuli
# ---------------------------------------------------------------------------

def concentric_class(x: np.ndarray, r1: float, r2: float, r3: float) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    out = np.zeros(len(x))
    out[r <= r1] = -1.0
    out[(r2 <= r) & (r <= r3)] = 1.0
    return out


def gen_concentric(
    r1: float, r2: float, r3: float, n: int, d: int = 2, seed: int = 0
) -> LabeledDataset:
    """Uniform ball B_{r1} (class -1) against the annulus r2 <= |x| <= r3 (+1)."""
    if not (0 < r1 < r2 < r3):
        raise ValueError("need 0 < r1 < r2 < r3")
    if n < 2 or n % 2:
        raise ValueError("n must be even and >= 2 for exact balance")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xc0c], dtype=np.uint64)))
    half = n // 2
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = rng.random(n)
    radii = np.empty(n)
    radii[:half] = r1 * u[:half] ** (1.0 / d)
    radii[half:] = (r2**d + (r3**d - r2**d) * u[half:]) ** (1.0 / d)
    x = dirs * radii[:, None]
    y = np.concatenate([-np.ones(half), np.ones(half)])
    meta = {"generator": "concentric", "r1": r1, "r2": r2, "r3": r3, "seed": seed}
    meta.update(_moments(x))
    return LabeledDataset(x, y, kind="classification", meta=meta)


# ---------------------------------------------------------------------------
# regression oracles
# ---------------------------------------------------------------------------

def gen_regression_oracle(kind: str, n: int, seed: int = 0) -> LabeledDataset:
    """Small regression sets with a known risk optimum.

    `self-consistent`: targets are the continuous flow of the inputs under a
    hidden weight draw theta_star (stored in meta), so the unpenalized risk
    at theta_star is zero.  `gaussian-linear`: y = x, so the zero field is
    optimal.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x0a7], dtype=np.uint64)))
    d, mh = 2, 4
    x = rng.standard_normal((n, d))
    if kind == "gaussian-linear":
        y = x.copy()
        meta = {"generator": "gaussian-linear", "seed": seed}
    elif kind == "self-consistent":
        m = 2 * d * mh + d + mh
        theta_star = 0.5 * rng.standard_normal(m) / np.sqrt(m)
        w = WeightVector.from_flat(theta_star, d, mh)
        y, _ = flow_final(w, x, None, activation="tanh", oracle_steps=2**12)
        meta = {
            "generator": "self-consistent",
            "seed": seed,
            "theta_star": theta_star.tolist(),
            "dim": d,
            "hidden": mh,
            "activation": "tanh",
            "oracle_steps": 2**12,
        }
    else:
        raise ValueError("kind must be 'self-consistent' or 'gaussian-linear'")
    meta.update(_moments(x))
    return LabeledDataset(x, y, kind="regression", meta=meta)
