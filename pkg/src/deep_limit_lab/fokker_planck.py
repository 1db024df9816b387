"""Conservative finite-volume solver for d p/dt = div(grad p + p grad V).

Cell fluxes use exponential fitting: across the face between cells i and
i+1 with w = V_{i+1} - V_i,

    G = ( B(-w) p_{i+1} - B(w) p_i ) / delta,     B(w) = w / (e^w - 1),

which makes the discrete Gibbs state e^{-V} stationary to machine precision
(the flux vanishes identically on it).  Time stepping is implicit Euler, so
the update matrix I - dt A is an M-matrix: positivity holds for any dt, and
the column sums of A vanish by construction, so mass is conserved to solver
roundoff.  No-flux boundaries close the truncated box [-L, L]^m, m in {1, 2}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .toy import ScalarToyModel

__all__ = [
    "Grid",
    "PotentialField",
    "DensityField",
    "BoundaryMassWarning",
    "FitRejectedError",
    "ChangCooperSolver",
    "fp_solve",
    "stationary_density",
    "relaxation_rate",
    "RelaxationFit",
    "tail_mass",
    "weighted_tail_mass",
    "density_gap_study",
    "DensityGapTable",
    "toy_potential_field",
    "growth_envelope_probe",
    "ou_squared_norm_rate",
]


class BoundaryMassWarning(UserWarning):
    """Tail mass is piling up against the truncated boundary."""


class FitRejectedError(RuntimeError):
    """The decay-rate fit fell below the required goodness of fit."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on [-L, L]^dim with an even cell count."""

    dim: int = 1
    half_width: float = 8.0
    cells: int = 512

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.cells < 4 or self.cells % 2:
            raise ValueError("cells must be even and >= 4")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def delta(self) -> float:
        return 2.0 * self.half_width / self.cells

    @property
    def n_cells(self) -> int:
        return self.cells**self.dim

    def axis_centers(self) -> np.ndarray:
        return -self.half_width + self.delta * (np.arange(self.cells) + 0.5)

    def centers(self) -> np.ndarray:
        """(n_cells, dim) cell-center coordinates, C order for dim = 2."""
        ax = self.axis_centers()
        if self.dim == 1:
            return ax[:, None]
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_volume(self) -> float:
        return self.delta**self.dim


@dataclass(frozen=True)
class PotentialField:
    """V (and grad V) at cell centers; provenance records where V came from."""

    grid: Grid
    values: np.ndarray
    grad: np.ndarray | None = None
    provenance: str = "analytic"

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.grid.n_cells,):
            raise ValueError("values must be flat over the grid cells")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.grad is not None:
            g = np.ascontiguousarray(np.asarray(self.grad, dtype=float))
            g.setflags(write=False)
            object.__setattr__(self, "grad", g)

    @classmethod
    def from_callable(cls, grid: Grid, fn, provenance: str = "analytic") -> "PotentialField":
        pts = grid.centers()
        vals = np.asarray([fn(p) for p in pts], dtype=float) if grid.dim == 2 else np.asarray(
            fn(pts[:, 0]), dtype=float
        )
        return cls(grid, vals.reshape(-1), provenance=provenance)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative cell masses summing to one."""

    grid: Grid
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.masses, dtype=float))
        if m.shape != (self.grid.n_cells,):
            raise ValueError("masses must be flat over the grid cells")
        if np.any(m < -1e-14):
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1 within 1e-12")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @classmethod
    def from_weights(cls, grid: Grid, weights: np.ndarray, time: float = 0.0) -> "DensityField":
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must carry positive total mass")
        return cls(grid, w / total, time)

    @classmethod
    def gaussian(cls, grid: Grid, center=0.0, std: float = 0.1, time: float = 0.0) -> "DensityField":
        pts = grid.centers()
        c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
        d2 = np.sum((pts - c) ** 2, axis=1)
        return cls.from_weights(grid, np.exp(-0.5 * d2 / std**2), time)

    @classmethod
    def uniform_interval(cls, grid: Grid, lo: float, hi: float, time: float = 0.0) -> "DensityField":
        if grid.dim != 1:
            raise ValueError("uniform_interval is a 1-d builder")
        ax = grid.axis_centers()
        w = ((ax >= lo) & (ax <= hi)).astype(float)
        return cls.from_weights(grid, w, time)

    def densities(self) -> np.ndarray:
        return self.masses / self.grid.cell_volume()


def _bernoulli(w: np.ndarray) -> np.ndarray:
    """B(w) = w / (e^w - 1), the exponential-fitting face coefficient."""
    w = np.asarray(w, dtype=float)
    small = np.abs(w) < 1e-12
    safe = np.where(small, 1.0, w)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(small, 1.0 - w / 2.0, safe / np.expm1(safe))
    # w >> 1 overflows expm1 to inf; the limit of B is 0 there
    return np.where(np.isfinite(out), out, 0.0)


def _assemble_generator(potential: PotentialField) -> sp.csc_matrix:
    """Sparse A with dm/dt = A m: per-face conservative exponential fluxes."""
    grid = potential.grid
    n = grid.cells
    delta = grid.delta
    inv_d2 = 1.0 / delta**2
    v = potential.values
    rows, cols, vals = [], [], []

    def add_faces(idx_lo: np.ndarray, idx_hi: np.ndarray):
        w = v[idx_hi] - v[idx_lo]
        b_minus = _bernoulli(w) * inv_d2          # multiplies p_lo in the flux
        b_plus = _bernoulli(-w) * inv_d2          # multiplies p_hi
        # flux G enters d p_lo/dt with +, d p_hi/dt with -
        rows.extend([idx_lo, idx_lo, idx_hi, idx_hi])
        cols.extend([idx_hi, idx_lo, idx_hi, idx_lo])
        vals.extend([b_plus, -b_minus, -b_plus, b_minus])

    if grid.dim == 1:
        i = np.arange(n - 1)
        add_faces(i, i + 1)
    else:
        cell = np.arange(n * n).reshape(n, n)
        add_faces(cell[:-1, :].ravel(), cell[1:, :].ravel())
        add_faces(cell[:, :-1].ravel(), cell[:, 1:].ravel())

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_cells)).tocsc()


class ChangCooperSolver:
    """Implicit-Euler stepper with a single factorization per (V, dt)."""

    def __init__(self, potential: PotentialField, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.potential = potential
        self.grid = potential.grid
        self.dt = dt
        self.generator = _assemble_generator(potential)
        m = sp.identity(self.grid.n_cells, format="csc") - dt * self.generator
        try:
            self._lu = splu(m)
        except RuntimeError as exc:
            raise RuntimeError(f"factorization failed: {exc}") from exc

    def step(self, masses: np.ndarray, n_steps: int = 1) -> np.ndarray:
        out = np.asarray(masses, dtype=float)
        for _ in range(n_steps):
            out = self._lu.solve(out)
        return out

    def boundary_mass(self, masses: np.ndarray) -> float:
        """Mass in the outer two cell layers (the truncation monitor)."""
        n = self.grid.cells
        if self.grid.dim == 1:
            return float(masses[:2].sum() + masses[-2:].sum())
        m2 = masses.reshape(n, n)
        ring = np.ones((n, n), dtype=bool)
        ring[2:-2, 2:-2] = False
        return float(m2[ring].sum())


def fp_solve(
    potential: PotentialField,
    p0: DensityField,
    T: float,
    dt: float,
    record_times=None,
):
    """Evolve p0 to time T; optionally return snapshots at recorded times.

    Warns (BoundaryMassWarning) if more than 1e-8 of the mass reaches the two
    outermost cell layers, which means the truncated box is too small.
    """
    n_steps = int(round(T / dt))
    if n_steps < 1:
        raise ValueError("need at least one step")
    solver = ChangCooperSolver(potential, dt)
    masses = p0.masses.copy()
    snapshots = []
    record = sorted(set(int(round(t / dt)) for t in (record_times or []) if t <= T + 1e-12))
    for k in range(1, n_steps + 1):
        masses = solver.step(masses)
        if record and k == record[0]:
            snapshots.append(DensityField(potential.grid, masses / masses.sum(), time=k * dt))
            record.pop(0)
    if solver.boundary_mass(masses) > 1e-8:
        warnings.warn(
            "tail mass at the outer cell layers exceeds 1e-8; enlarge the box",
            BoundaryMassWarning,
        )
    final = DensityField(potential.grid, masses / masses.sum(), time=n_steps * dt)
    if record_times is None:
        return final
    return final, snapshots


def stationary_density(potential: PotentialField) -> DensityField:
    """Normalized Gibbs cell masses proportional to e^{-V} (max-shifted)."""
    v = potential.values
    w = np.exp(-(v - v.min()))
    return DensityField.from_weights(potential.grid, w)


# ---------------------------------------------------------------------------
# relaxation to the Gibbs state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxationFit:
    rate: float
    r2: float
    status: str  # "fitted" or "converged"
    times: tuple
    sq_norms: tuple


def relaxation_rate(
    potential: PotentialField,
    p0: DensityField,
    T: float,
    dt: float = 1.0 / 512,
    n_records: int = 64,
) -> RelaxationFit:
    """Fit || p_t / p_inf - 1 ||^2 in L^2(p_inf) to e^{-c t} over [T/2, T].

    Raises FitRejectedError when the least-squares fit has R^2 < 0.95.  If the
    initial state already coincides with the Gibbs state the status is
    "converged" and no rate is fitted.
    """
    pinf = stationary_density(potential).masses
    good = pinf > 1e-300

    def sq_norm(masses):
        ratio = masses[good] / pinf[good]
        return float(np.sum((ratio - 1.0) ** 2 * pinf[good]))

    if sq_norm(p0.masses) < 1e-12:
        return RelaxationFit(float("nan"), 1.0, "converged", (), ())

    solver = ChangCooperSolver(potential, dt)
    n_steps = int(round(T / dt))
    stride = max(1, n_steps // n_records)
    masses = p0.masses.copy()
    times, norms = [], []
    for k in range(1, n_steps + 1):
        masses = solver.step(masses)
        if k % stride == 0:
            times.append(k * dt)
            norms.append(sq_norm(masses))
    times = np.asarray(times)
    norms = np.asarray(norms)
    window = times >= T / 2.0
    t_fit, n_fit = times[window], norms[window]
    if np.any(n_fit <= 0):
        return RelaxationFit(float("inf"), 1.0, "converged", tuple(times), tuple(norms))
    slope, intercept = np.polyfit(t_fit, np.log(n_fit), 1)
    pred = slope * t_fit + intercept
    ss_res = float(np.sum((np.log(n_fit) - pred) ** 2))
    ss_tot = float(np.sum((np.log(n_fit) - np.log(n_fit).mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < 0.95:
        raise FitRejectedError(f"exponential fit rejected: R^2 = {r2:.4f} < 0.95")
    return RelaxationFit(float(-slope), float(r2), "fitted", tuple(times), tuple(norms))


def ou_squared_norm_rate(curvature: float) -> float:
    """Decay rate of the squared Gibbs-weighted norm for V = a * theta^2.

    The linear drift -V' = -2a theta has spectral gap 2a, and the squared
    norm of the first mode decays at twice the gap.
    """
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    return 4.0 * curvature


# ---------------------------------------------------------------------------
# tail masses and the Gaussian-decay probes
# ---------------------------------------------------------------------------

def _radii(grid: Grid) -> np.ndarray:
    return np.linalg.norm(grid.centers(), axis=1)


def tail_mass(p: DensityField, inner_radius: float, outer_radius: float) -> float:
    """Plain mass of p in the annulus inner <= |theta| <= outer."""
    if not (0 <= inner_radius < outer_radius):
        raise ValueError("need 0 <= inner < outer")
    if outer_radius > p.grid.half_width * np.sqrt(p.grid.dim) + p.grid.delta:
        raise ValueError("annulus reaches beyond the truncated grid")
    r = _radii(p.grid)
    sel = (r >= inner_radius) & (r <= outer_radius)
    return float(p.masses[sel].sum())


def weighted_tail_mass(
    p: DensityField,
    potential: PotentialField,
    inner_radius: float,
    outer_radius: float,
    kind: str = "p2eV",
) -> float:
    """Weighted annulus integrals: p^2 e^V (squared-density) or p e^{V/4}."""
    r = _radii(p.grid)
    sel = (r >= inner_radius) & (r <= outer_radius)
    vol = p.grid.cell_volume()
    dens = p.densities()[sel]
    v = potential.values[sel]
    if kind == "p2eV":
        return float(np.sum(dens**2 * np.exp(v)) * vol)
    if kind == "quarter":
        return float(np.sum(dens * np.exp(v / 4.0)) * vol)
    raise ValueError("kind must be 'p2eV' or 'quarter'")


def growth_envelope_probe(
    potential: PotentialField,
    p0: DensityField,
    T: float,
    dt: float,
    ramp_widths,
    alpha: float = 1.0,
    ramp_start: float = 0.0,
) -> list:
    """Growth of int p^2 e^{2 a psi} e^V for linear ramps psi of several widths.

    For each width the implied constant c in the bound
        W(t) <= exp(c a^2 |psi'|_inf^2 t) W(0)
    is returned; a diffusion-dominated mechanism keeps it stable across widths.
    """
    grid = potential.grid
    if grid.dim != 1:
        raise ValueError("the ramp probe is a 1-d diagnostic")
    x = grid.axis_centers()
    vol = grid.cell_volume()
    pT = fp_solve(potential, p0, T, dt)
    out = []
    for width in ramp_widths:
        psi = np.clip((x - ramp_start) / width, 0.0, 1.0)
        weight = np.exp(2.0 * alpha * psi + potential.values)
        w0 = float(np.sum(p0.densities() ** 2 * weight) * vol)
        wt = float(np.sum(pT.densities() ** 2 * weight) * vol)
        grad_sq = (1.0 / width) ** 2
        implied_c = np.log(wt / w0) / (alpha**2 * grad_sq * T)
        out.append((float(width), float(implied_c), wt / w0))
    return out


# ---------------------------------------------------------------------------
# depth sweep of the density gap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityGapTable:
    """Weighted L1 gaps between the depth-N and continuous-flow densities."""

    n_values: tuple
    gap_quarter_v: tuple      # int e^{V/4} |p - p_N|
    gap_quarter_penalty: tuple  # int e^{gamma H / 4} |p - p_N|
    gap_ball: tuple           # same as gap_quarter_v restricted to |theta| <= ball_radius
    ball_radius: float
    slope: float
    r2: float

    def rows(self):
        return list(
            zip(self.n_values, self.gap_quarter_v, self.gap_quarter_penalty, self.gap_ball)
        )


def toy_potential_field(
    toy: ScalarToyModel, grid: Grid, n_steps: int | None
) -> PotentialField:
    """Risk of the scalar toy model evaluated on the grid as a potential."""
    if grid.dim != 1:
        raise ValueError("toy potentials live on 1-d grids")
    theta = grid.axis_centers()
    v, dv = toy.potential(theta, n_steps)
    tag = "risk-derived:continuous" if n_steps is None else f"risk-derived:N={n_steps}"
    return PotentialField(grid, v, grad=dv, provenance=tag)


def density_gap_study(
    n_list,
    toy: ScalarToyModel,
    grid: Grid,
    p0: DensityField,
    T: float = 1.0,
    dt: float = 1.0 / 1024,
    ball_radius: float | None = None,
) -> DensityGapTable:
    """Evolve p under V and under each V_N from the same p0; weighted L1 gaps.

    The headline weight is e^{V/4}; the penalty-weighted variant uses
    e^{gamma H / 4} with the toy model's own penalty, and the ball column
    restricts the integral to |theta| <= ball_radius.
    """
    from .rates import fit_slope
    from .risk import penalty_profile

    n_list = sorted(int(n) for n in n_list)
    theta = grid.axis_centers()
    vol = grid.cell_volume()
    pot_c = toy_potential_field(toy, grid, None)
    p_c = fp_solve(pot_c, p0, T, dt)
    h_vals, _ = penalty_profile(np.abs(theta), toy.regularizer)
    w_quarter_v = np.exp(pot_c.values / 4.0)
    w_quarter_h = np.exp(toy.gamma * h_vals / 4.0)
    if ball_radius is None:
        ball_radius = grid.half_width / 2.0
    in_ball = np.abs(theta) <= ball_radius

    g_v, g_h, g_b = [], [], []
    for n in n_list:
        pot_n = toy_potential_field(toy, grid, n)
        p_n = fp_solve(pot_n, p0, T, dt)
        diff = np.abs(p_c.densities() - p_n.densities())
        g_v.append(float(np.sum(diff * w_quarter_v) * vol))
        g_h.append(float(np.sum(diff * w_quarter_h) * vol))
        g_b.append(float(np.sum((diff * w_quarter_v)[in_ball]) * vol))
    fit = fit_slope(list(zip(n_list, g_v)))
    return DensityGapTable(
        tuple(n_list), tuple(g_v), tuple(g_h), tuple(g_b),
        float(ball_radius), fit.slope, fit.r2,
    )
