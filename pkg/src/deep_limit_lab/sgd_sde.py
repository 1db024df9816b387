"""Coupled Euler-Maruyama simulation of continuous stochastic gradient descent.

Two processes

    d theta     = -grad V(theta) dt     + Sigma dW
    d theta_N   = -grad V_N(theta_N) dt + Sigma dW      (same W, same theta_0)

are driven by one Philox noise stream per (seed, path), so the only
difference between them is the drift gap, which the Monte Carlo estimators
resolve far below the marginal noise level (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .toy import ScalarToyModel

__all__ = [
    "NoiseModel",
    "InitDistribution",
    "SDEPath",
    "euler_maruyama",
    "gaussian_increments",
    "coupled_run",
    "mc_statistics",
    "MCTable",
]


def _path_generator(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair; streams never overlap."""
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseModel:
    """Constant diffusion matrix (default sqrt(2) * I) and the base seed."""

    sigma: np.ndarray
    seed: int = 0

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if s.shape[0] != s.shape[1]:
            raise ValueError("sigma must be square")
        if np.any(s != 0.0) and np.linalg.matrix_rank(s) < s.shape[0]:
            raise ValueError("sigma must be zero or full rank")
        s = np.ascontiguousarray(s)
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def default(cls, m: int, seed: int = 0) -> "NoiseModel":
        return cls(np.sqrt(2.0) * np.eye(m), seed)

    @classmethod
    def zero(cls, m: int, seed: int = 0) -> "NoiseModel":
        return cls(np.zeros((m, m)), seed)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class InitDistribution:
    """Compactly supported weight initialization law."""

    kind: str = "uniform_ball"
    radius: float = 1.0
    center: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform_ball", "uniform_box"):
            raise ValueError("kind must be uniform_ball or uniform_box")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def sample(self, m: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        center = np.broadcast_to(np.asarray(self.center, dtype=float), (m,))
        if self.kind == "uniform_box":
            pts = rng.uniform(-self.radius, self.radius, size=(size, m))
        else:
            v = rng.standard_normal((size, m))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            r = self.radius * rng.random(size) ** (1.0 / m)
            pts = v * r[:, None]
        return pts + center


@dataclass(frozen=True)
class SDEPath:
    """One Euler-Maruyama realization on a uniform grid over [0, T]."""

    times: np.ndarray
    theta: np.ndarray  # (n_steps + 1, m)
    seed: int

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        th = np.ascontiguousarray(np.asarray(self.theta, dtype=float))
        t.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "theta", th)

    @property
    def final(self) -> np.ndarray:
        return self.theta[-1]


def gaussian_increments(seed: int, stream: int, n_steps: int, m: int) -> np.ndarray:
    """The (n_steps, m) standard normal block a given (seed, stream) consumes."""
    return _path_generator(seed, stream).standard_normal((n_steps, m))


def euler_maruyama(
    drift,
    noise: NoiseModel,
    theta0: np.ndarray,
    T: float,
    h: float,
    seed: int,
    stream: int = 0,
    increments: np.ndarray | None = None,
) -> SDEPath:
    """theta_{k+1} = theta_k - h * drift(theta_k) + sqrt(h) * Sigma * xi_k.

    `drift` maps an m-vector to an m-vector.  Supplying `increments`
    reuses a noise block (this is how coupled pairs share their W).
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    m = theta0.shape[0]
    n_steps = int(round(T / h))
    if n_steps < 1 or h > T + 1e-15:
        raise ValueError("need h <= T with at least one step")
    if increments is None:
        increments = gaussian_increments(seed, stream, n_steps, m)
    root_h = np.sqrt(h)
    out = np.empty((n_steps + 1, m))
    out[0] = theta0
    th = theta0.copy()
    for k in range(n_steps):
        th = th - h * np.asarray(drift(th), dtype=float) + root_h * (noise.sigma @ increments[k])
        if not np.all(np.isfinite(th)):
            raise OverflowError(f"non-finite weights at step {k + 1}")
        out[k + 1] = th
    times = np.linspace(0.0, n_steps * h, n_steps + 1)
    return SDEPath(times, out, seed)


def coupled_run(
    drift_cont,
    drift_disc,
    noise: NoiseModel,
    init: InitDistribution,
    T: float,
    h: float,
    seed: int,
    stream: int = 0,
):
    """Run both drifts from one theta_0 with identical Gaussian increments.

    Returns (path_cont, path_disc, sup_t |theta - theta_N| over the grid).
    """
    m = noise.dim
    n_steps = int(round(T / h))
    inc = gaussian_increments(seed, stream, n_steps, m)
    init_rng = np.random.Generator(
        np.random.Philox(key=np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)).jumped(1)
    )
    theta0 = init.sample(m, init_rng)[0]
    pc = euler_maruyama(drift_cont, noise, theta0, T, h, seed, stream, increments=inc)
    pd = euler_maruyama(drift_disc, noise, theta0, T, h, seed, stream, increments=inc)
    sup = float(np.max(np.linalg.norm(pc.theta - pd.theta, axis=1)))
    return pc, pd, sup


# ---------------------------------------------------------------------------
# Monte Carlo study over a depth sweep (scalar toy model)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCTable:
    """Long-format rows (n, statistic, estimate, stderr) plus slope fits."""

    rows: tuple  # of (n_label, statistic, estimate, stderr)
    n_values: tuple
    slopes: dict

    def by_statistic(self, name: str):
        return [(n, e, s) for (n, stat, e, s) in self.rows if stat == name]


def _vector_sde_sweep(drift_values, theta_grid, theta0, increments, sigma, h):
    """All seeds at once: one scalar SDE per row of `increments`.

    drift_values is the tabulated drift on theta_grid; linear interpolation
    with flat extension beyond the table (the quadratic penalty keeps paths
    far inside in practice).
    """
    n_seeds, n_steps = increments.shape
    th = theta0.copy()
    sup_ref = None
    root_h = np.sqrt(h)
    path = np.empty((n_steps + 1, n_seeds))
    path[0] = th
    for k in range(n_steps):
        dr = np.interp(th, theta_grid, drift_values)
        th = th + h * dr + root_h * sigma * increments[:, k]
        path[k + 1] = th
    return path


def terminal_risk_estimate(
    toy: ScalarToyModel,
    n_seeds: int,
    T: float = 1.0,
    h: float = 1.0 / 2048,
    seed: int = 0,
    n_steps: int | None = None,
    sigma: float = np.sqrt(2.0),
    init: InitDistribution | None = None,
    table_half_width: float = 8.0,
    table_points: int = 8193,
):
    """Monte Carlo (mean, stderr) of the risk at time T under the toy SGD flow.

    This is the sample counterpart of integrating the risk against the
    solved parameter density, which is how the two solvers cross-check.
    """
    if init is None:
        init = InitDistribution("uniform_ball", radius=0.5)
    grid = np.linspace(-table_half_width, table_half_width, table_points)
    v, drift = toy.drift_table(grid, n_steps)
    n_t = int(round(T / h))
    inc = np.stack([gaussian_increments(seed, k, n_t, 1)[:, 0] for k in range(n_seeds)])
    theta0 = np.concatenate(
        [
            init.sample(
                1,
                np.random.Generator(
                    np.random.Philox(
                        key=np.array([np.uint64(seed), np.uint64(k)], dtype=np.uint64)
                    ).jumped(1)
                ),
            )[0]
            for k in range(n_seeds)
        ]
    )
    path = _vector_sde_sweep(drift, grid, theta0, inc, sigma, h)
    values = np.interp(path[-1], grid, v)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_seeds))


def mc_statistics(
    toy: ScalarToyModel,
    n_list,
    n_seeds: int,
    T: float = 1.0,
    h: float = 1.0 / 2048,
    seed: int = 0,
    sigma: float = np.sqrt(2.0),
    init: InitDistribution | None = None,
    poly_tests=((1.0, 0.0), (1.0, 0.0, 0.0)),
    table_half_width: float = 8.0,
    table_points: int = 8193,
) -> MCTable:
    """Coupled depth sweep on the scalar toy model with common random numbers.

    Per depth N the estimators are
      mean_gap : | E[theta_T - theta_T^N] |
      risk_gap : | E[V(theta_T) - V_N(theta_T^N)] |
      sup_sq   : E[ sup_t |theta - theta^N|^2 ]
      weak_k   : | E[phi_k(theta_T) - phi_k(theta_T^N)] | for polynomial phi_k
    with Monte Carlo standard errors, plus log-log slope fits over N.

    Drifts are tabulated once per depth on a dense grid and interpolated
    inside the time loop; the interpolation error is orders of magnitude
    below the drift gaps the sweep measures.
    """
    from .rates import fit_slope

    if n_seeds < 2:
        raise ValueError("need at least two seeds")
    if init is None:
        init = InitDistribution("uniform_ball", radius=0.5)

    grid = np.linspace(-table_half_width, table_half_width, table_points)
    v_cont, drift_cont = toy.drift_table(grid, None)

    n_steps = int(round(T / h))
    inc = np.stack(
        [gaussian_increments(seed, k, n_steps, 1)[:, 0] for k in range(n_seeds)]
    )
    theta0 = np.concatenate(
        [
            init.sample(
                1,
                np.random.Generator(
                    np.random.Philox(
                        key=np.array([np.uint64(seed), np.uint64(k)], dtype=np.uint64)
                    ).jumped(1)
                ),
            )[0]
            for k in range(n_seeds)
        ]
    )

    path_c = _vector_sde_sweep(drift_cont, grid, theta0, inc, sigma, h)
    thT_c = path_c[-1]
    risk_c = np.interp(thT_c, grid, v_cont)

    rows = []
    root_n = np.sqrt(n_seeds)
    gap_by_stat: dict = {}
    for n in sorted(int(n) for n in n_list):
        v_n, drift_n = toy.drift_table(grid, n)
        path_d = _vector_sde_sweep(drift_n, grid, theta0, inc, sigma, h)
        thT_d = path_d[-1]
        diff = thT_c - thT_d
        sup = np.max(np.abs(path_c - path_d), axis=0)
        risk_d = np.interp(thT_d, grid, v_n)

        stats = {
            "mean_gap": diff,
            "risk_gap": risk_c - risk_d,
            "sup_sq": sup**2,
        }
        for j, coeffs in enumerate(poly_tests):
            stats[f"weak_poly_{j}"] = np.polyval(coeffs, thT_c) - np.polyval(coeffs, thT_d)
        for name, samples in stats.items():
            est = float(np.mean(samples))
            se = float(np.std(samples, ddof=1) / root_n)
            if name != "sup_sq":
                est = abs(est)
            rows.append((n, name, est, se))
            gap_by_stat.setdefault(name, []).append((n, est))

    slopes = {}
    for name, pairs in gap_by_stat.items():
        try:
            slopes[name] = fit_slope(pairs).as_tuple()
        except ValueError:
            slopes[name] = None
    return MCTable(tuple(rows), tuple(sorted(int(n) for n in n_list)), slopes)
