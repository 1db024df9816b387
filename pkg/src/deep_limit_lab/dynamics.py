"""Two-layer parametric vector fields and their depth-N residual flows.

The field is

    f(x) = K1 @ sigma(K2 @ x + b2) + b1,        K1: (d, m_h), K2: (m_h, d),

iterated as the shared-weight residual update x_{i+1} = x_i + f(x_i) / N over
N steps of size 1/N (the depth-N network on [0, 1]), or integrated by a
fixed-step classical RK4 solver that stands in for the exact continuous-depth
flow.  Forward sensitivity recursions propagate the exact parameter gradient
of either flow:

    discrete    S_{i+1} = S_i + (d_x f(x_i) S_i + d_theta f(x_i)) / N,  S_0 = 0
    continuous  dS/dt   = d_x f(x) S + d_theta f(x),                    S(0) = 0

Everything here is deterministic and side-effect free; trajectory containers
are frozen and their arrays are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VectorFieldSpec",
    "WeightVector",
    "DiscreteTrajectory",
    "ContinuousTrajectory",
    "TrajectoryOverflowError",
    "eval_field",
    "jacobians",
    "euler_forward",
    "ode_solve",
    "discrepancy_study",
    "grad_discrepancy_study",
    "DiscrepancyTable",
]

_SMOOTH_ACTIVATIONS = ("tanh", "swish")
_ACTIVATIONS = ("tanh", "swish", "relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "swish":
        return z * _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_prime(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        # subgradient convention sigma'(0) = 0
        return (z > 0.0).astype(float)
    if name == "swish":
        s = _sigmoid(z)
        return s * (1.0 + z * (1.0 - s))
    raise ValueError(f"unknown activation {name!r}")


class TrajectoryOverflowError(RuntimeError):
    """A flow state became non-finite; `step` is the first bad step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class VectorFieldSpec:
    """Architecture of the field: activation name and dimensions (d, m_h)."""

    activation: str = "tanh"
    dim: int = 1
    hidden: int = 1

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.dim < 1 or self.hidden < 1:
            raise ValueError("dim and hidden must be positive")

    @property
    def n_params(self) -> int:
        return 2 * self.dim * self.hidden + self.dim + self.hidden

    @property
    def first_order_only(self) -> bool:
        """relu has no second derivative; keep it out of curvature studies."""
        return self.activation not in _SMOOTH_ACTIVATIONS


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightVector:
    """Parameters (K1, K2, b1, b2) with a flat view ordered [k1, k2, b1, b2]."""

    k1: np.ndarray
    k2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        k1 = _freeze(self.k1)
        k2 = _freeze(self.k2)
        b1 = _freeze(self.b1)
        b2 = _freeze(self.b2)
        d, mh = k1.shape
        if k2.shape != (mh, d) or b1.shape != (d,) or b2.shape != (mh,):
            raise ValueError("inconsistent parameter shapes")
        for a in (k1, k2, b1, b2):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)

    @property
    def dim(self) -> int:
        return self.k1.shape[0]

    @property
    def hidden(self) -> int:
        return self.k1.shape[1]

    @property
    def n_params(self) -> int:
        return 2 * self.dim * self.hidden + self.dim + self.hidden

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.k1.ravel(), self.k2.ravel(), self.b1, self.b2]
        )

    @classmethod
    def from_flat(cls, flat: np.ndarray, dim: int, hidden: int) -> "WeightVector":
        flat = np.asarray(flat, dtype=float)
        m = 2 * dim * hidden + dim + hidden
        if flat.shape != (m,):
            raise ValueError(f"flat vector must have length {m}")
        a = dim * hidden
        k1 = flat[:a].reshape(dim, hidden)
        k2 = flat[a : 2 * a].reshape(hidden, dim)
        b1 = flat[2 * a : 2 * a + dim]
        b2 = flat[2 * a + dim :]
        return cls(k1, k2, b1, b2)

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "WeightVector":
        return cls(
            np.zeros((dim, hidden)),
            np.zeros((hidden, dim)),
            np.zeros(dim),
            np.zeros(hidden),
        )

    @classmethod
    def scalar(cls, k1: float, k2: float = 1.0, b1: float = 0.0, b2: float = 0.0) -> "WeightVector":
        """Convenience d = m_h = 1 weights, used throughout the scalar studies."""
        return cls(np.array([[k1]]), np.array([[k2]]), np.array([b1]), np.array([b2]))


@dataclass(frozen=True)
class DiscreteTrajectory:
    """States x_0 .. x_N of the depth-N Euler flow, with optional sensitivities."""

    n_steps: int
    states: np.ndarray  # (N + 1, d)
    sensitivities: np.ndarray | None = None  # (N + 1, d, m)

    def __post_init__(self):
        object.__setattr__(self, "states", _freeze(self.states))
        if self.sensitivities is not None:
            object.__setattr__(self, "sensitivities", _freeze(self.sensitivities))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_sensitivity(self) -> np.ndarray:
        if self.sensitivities is None:
            raise ValueError("trajectory was computed without sensitivities")
        return self.sensitivities[-1]


@dataclass(frozen=True)
class ContinuousTrajectory:
    """Reference RK4 solution on a uniform grid over [0, 1]."""

    time_grid: np.ndarray
    states: np.ndarray
    oracle_steps: int
    sensitivities: np.ndarray | None = None

    def __post_init__(self):
        tg = _freeze(self.time_grid)
        if tg[0] != 0.0 or tg[-1] != 1.0 or np.any(np.diff(tg) <= 0):
            raise ValueError("time grid must increase strictly from 0 to 1")
        object.__setattr__(self, "time_grid", tg)
        object.__setattr__(self, "states", _freeze(self.states))
        if self.sensitivities is not None:
            object.__setattr__(self, "sensitivities", _freeze(self.sensitivities))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_sensitivity(self) -> np.ndarray:
        if self.sensitivities is None:
            raise ValueError("trajectory was computed without sensitivities")
        return self.sensitivities[-1]


# ---------------------------------------------------------------------------
# field evaluation and exact Jacobians
# ---------------------------------------------------------------------------

def _check_x(w: WeightVector, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.dim:
        raise ValueError(f"x has dimension {x.shape[-1]}, field expects {w.dim}")
    return x


def eval_field(w: WeightVector, x, activation: str = "tanh") -> np.ndarray:
    """f(x) = K1 sigma(K2 x + b2) + b1.  Accepts a single point or a batch."""
    x = _check_x(w, x)
    z = x @ w.k2.T + w.b2
    return _act(activation, z) @ w.k1.T + w.b1


def _batch_jacobians(w: WeightVector, x: np.ndarray, activation: str):
    """Exact (d_x f, d_theta f) for a batch x of shape (b, d).

    Returns dxf with shape (b, d, d) and dtf with shape (b, d, m) where the
    parameter axis follows the flat ordering [k1, k2, b1, b2].
    """
    b, d = x.shape
    mh = w.hidden
    z = x @ w.k2.T + w.b2  # (b, mh)
    a = _act(activation, z)
    s1 = _act_prime(activation, z)  # (b, mh)

    dxf = np.einsum("ip,bp,pk->bik", w.k1, s1, w.k2)

    m = w.n_params
    dtf = np.empty((b, d, m))
    blk = d * mh
    # k1 block: df_i / dK1[p, q] = delta_{ip} a_q
    dk1 = np.zeros((b, d, d, mh))
    idx = np.arange(d)
    dk1[:, idx, idx, :] = a[:, None, :]
    dtf[:, :, :blk] = dk1.reshape(b, d, blk)
    # k2 block: df_i / dK2[p, q] = K1[i, p] s1_p x_q
    dk2 = np.einsum("ip,bp,bq->bipq", w.k1, s1, x)
    dtf[:, :, blk : 2 * blk] = dk2.reshape(b, d, blk)
    # b1 block: identity
    dtf[:, :, 2 * blk : 2 * blk + d] = np.eye(d)[None]
    # b2 block: df_i / db2[p] = K1[i, p] s1_p
    dtf[:, :, 2 * blk + d :] = w.k1[None] * s1[:, None, :]
    return dxf, dtf


def jacobians(w: WeightVector, x, activation: str = "tanh"):
    """Exact Jacobians (d_x f, d_theta f) at a single point x."""
    x = _check_x(w, x)
    dxf, dtf = _batch_jacobians(w, x[None, :], activation)
    return dxf[0], dtf[0]


# ---------------------------------------------------------------------------
# flows: batched Euler / RK4 cores
# ---------------------------------------------------------------------------

def _euler_flow(
    w: WeightVector,
    x0: np.ndarray,
    n_steps: int,
    activation: str,
    with_sensitivity: bool,
    keep_path: bool,
):
    """Depth-N residual flow on a batch x0 of shape (b, d)."""
    b, d = x0.shape
    m = w.n_params
    h = 1.0 / n_steps
    x = x0.copy()
    s = np.zeros((b, d, m)) if with_sensitivity else None
    xs = [x0.copy()] if keep_path else None
    ss = [np.zeros((b, d, m))] if (keep_path and with_sensitivity) else None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            if with_sensitivity:
                dxf, dtf = _batch_jacobians(w, x, activation)
                s = s + h * (np.einsum("bij,bjm->bim", dxf, s) + dtf)
            x = x + h * eval_field(w, x, activation)
            if not np.all(np.isfinite(x)):
                raise TrajectoryOverflowError(i + 1)
            if keep_path:
                xs.append(x.copy())
                if with_sensitivity:
                    ss.append(s.copy())
    if keep_path:
        return np.array(xs), (np.array(ss) if with_sensitivity else None)
    return x, s


def euler_forward(
    w: WeightVector,
    x0,
    n_steps: int,
    with_sensitivity: bool = False,
    activation: str = "tanh",
) -> DiscreteTrajectory:
    """Run the depth-N flow from a single initial point, keeping every state."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = _check_x(w, np.atleast_1d(np.asarray(x0, dtype=float)))
    xs, ss = _euler_flow(w, x0[None, :], n_steps, activation, with_sensitivity, True)
    states = xs[:, 0, :]
    sens = ss[:, 0, :, :] if ss is not None else None
    return DiscreteTrajectory(n_steps=n_steps, states=states, sensitivities=sens)


def _rk4_rhs(w, x, s, activation, with_sensitivity):
    fx = eval_field(w, x, activation)
    if not with_sensitivity:
        return fx, None
    dxf, dtf = _batch_jacobians(w, x, activation)
    return fx, np.einsum("bij,bjm->bim", dxf, s) + dtf


def _rk4_flow(
    w: WeightVector,
    x0: np.ndarray,
    n_steps: int,
    activation: str,
    with_sensitivity: bool,
    keep_path: bool,
    check_every: int = 64,
):
    """Classical fixed-step RK4 on the (state, sensitivity) system, batched."""
    b, d = x0.shape
    m = w.n_params
    h = 1.0 / n_steps
    x = x0.copy()
    s = np.zeros((b, d, m)) if with_sensitivity else None
    xs = [x0.copy()] if keep_path else None
    ss = [np.zeros((b, d, m))] if (keep_path and with_sensitivity) else None
    for i in range(n_steps):
        k1x, k1s = _rk4_rhs(w, x, s, activation, with_sensitivity)
        if with_sensitivity:
            k2x, k2s = _rk4_rhs(w, x + 0.5 * h * k1x, s + 0.5 * h * k1s, activation, True)
            k3x, k3s = _rk4_rhs(w, x + 0.5 * h * k2x, s + 0.5 * h * k2s, activation, True)
            k4x, k4s = _rk4_rhs(w, x + h * k3x, s + h * k3s, activation, True)
            s = s + (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        else:
            k2x, _ = _rk4_rhs(w, x + 0.5 * h * k1x, None, activation, False)
            k3x, _ = _rk4_rhs(w, x + 0.5 * h * k2x, None, activation, False)
            k4x, _ = _rk4_rhs(w, x + h * k3x, None, activation, False)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        if (i % check_every == 0 or i == n_steps - 1) and not np.all(np.isfinite(x)):
            raise TrajectoryOverflowError(i + 1)
        if keep_path:
            xs.append(x.copy())
            if with_sensitivity:
                ss.append(s.copy())
    if keep_path:
        return np.array(xs), (np.array(ss) if with_sensitivity else None)
    return x, s


def _rk4_scalar_states(w: WeightVector, x0: float, n_steps: int, activation: str):
    """Fast float loop for d = m_h = 1 trajectory-only reference runs.

    Same formulas as `_rk4_flow`; plain floats cut the per-step numpy
    dispatch overhead, which dominates for six-figure step counts.
    """
    k1 = float(w.k1[0, 0])
    k2 = float(w.k2[0, 0])
    b1 = float(w.b1[0])
    b2 = float(w.b2[0])
    if activation == "tanh":
        sig = math.tanh
    elif activation == "relu":
        sig = lambda z: z if z > 0.0 else 0.0
    else:
        sig = lambda z: z / (1.0 + math.exp(-z)) if z >= 0 else z * math.exp(z) / (1.0 + math.exp(z))

    def f(x):
        return k1 * sig(k2 * x + b2) + b1

    h = 1.0 / n_steps
    x = float(x0)
    out = [x]
    for i in range(n_steps):
        a = f(x)
        b = f(x + 0.5 * h * a)
        c = f(x + 0.5 * h * b)
        e = f(x + h * c)
        x = x + (h / 6.0) * (a + 2.0 * b + 2.0 * c + e)
        if not math.isfinite(x):
            raise TrajectoryOverflowError(i + 1)
        out.append(x)
    return np.asarray(out)[:, None]


def _rk4_scalar_final_sens(w: WeightVector, x0: float, n_steps: int, activation: str):
    """Float-loop endpoint of the scalar flow and its 4-parameter sensitivity."""
    k1 = float(w.k1[0, 0])
    k2 = float(w.k2[0, 0])
    b2 = float(w.b2[0])
    b1 = float(w.b1[0])
    if activation == "tanh":
        sig = math.tanh
        sigp = lambda z: 1.0 - math.tanh(z) ** 2
    elif activation == "relu":
        sig = lambda z: z if z > 0.0 else 0.0
        sigp = lambda z: 1.0 if z > 0.0 else 0.0
    else:
        raise ValueError("scalar fast path supports tanh and relu")

    def rhs(x, s):
        z = k2 * x + b2
        a = sig(z)
        sp = sigp(z)
        dxf = k1 * sp * k2
        f = k1 * a + b1
        return f, (
            dxf * s[0] + a,
            dxf * s[1] + k1 * sp * x,
            dxf * s[2] + 1.0,
            dxf * s[3] + k1 * sp,
        )

    h = 1.0 / n_steps
    x = float(x0)
    s = (0.0, 0.0, 0.0, 0.0)
    for i in range(n_steps):
        ax, as_ = rhs(x, s)
        bx, bs = rhs(x + 0.5 * h * ax, tuple(s[j] + 0.5 * h * as_[j] for j in range(4)))
        cx, cs = rhs(x + 0.5 * h * bx, tuple(s[j] + 0.5 * h * bs[j] for j in range(4)))
        ex, es = rhs(x + h * cx, tuple(s[j] + h * cs[j] for j in range(4)))
        x = x + (h / 6.0) * (ax + 2.0 * bx + 2.0 * cx + ex)
        s = tuple(s[j] + (h / 6.0) * (as_[j] + 2.0 * bs[j] + 2.0 * cs[j] + es[j]) for j in range(4))
        if not math.isfinite(x):
            raise TrajectoryOverflowError(i + 1)
    return x, np.asarray(s)[None, None, :]


def ode_solve(
    w: WeightVector,
    x0,
    oracle_steps: int = 2**14,
    with_sensitivity: bool = False,
    activation: str = "tanh",
) -> ContinuousTrajectory:
    """Reference continuous-depth solution by fixed-step RK4 over [0, 1].

    The O(h^4) solver error is negligible against the O(1/N) quantities the
    studies measure, provided callers keep oracle_steps >= max(2^14, 64 N)
    for every N this solution is compared with.
    """
    if oracle_steps < 1:
        raise ValueError("oracle_steps must be >= 1")
    x0 = _check_x(w, np.atleast_1d(np.asarray(x0, dtype=float)))
    tg = np.linspace(0.0, 1.0, oracle_steps + 1)
    if w.dim == 1 and w.hidden == 1 and not with_sensitivity:
        states = _rk4_scalar_states(w, float(x0[0]), oracle_steps, activation)
        return ContinuousTrajectory(tg, states, oracle_steps)
    xs, ss = _rk4_flow(w, x0[None, :], oracle_steps, activation, with_sensitivity, True)
    states = xs[:, 0, :]
    sens = ss[:, 0, :, :] if ss is not None else None
    return ContinuousTrajectory(tg, states, oracle_steps, sensitivities=sens)


def flow_final(
    w: WeightVector,
    x0_batch: np.ndarray,
    n_steps: int | None,
    with_sensitivity: bool = False,
    activation: str = "tanh",
    oracle_steps: int = 2**14,
):
    """Final state (and sensitivity) of the depth-N or continuous flow on a batch.

    n_steps = None selects the RK4 reference; nothing but the endpoint is kept,
    which is what the risk evaluations need.
    """
    x0_batch = np.asarray(x0_batch, dtype=float)
    if n_steps is None:
        return _rk4_flow(w, x0_batch, oracle_steps, activation, with_sensitivity, False)
    return _euler_flow(w, x0_batch, n_steps, activation, with_sensitivity, False)


# ---------------------------------------------------------------------------
# discrepancy studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscrepancyTable:
    """Per-N gaps against the reference flow plus the fitted log-log slope."""

    n_values: tuple
    gaps: tuple
    slope: float | None
    intercept: float | None
    r2: float | None
    envelope_c: float | None = None
    envelope_ok: bool | None = None

    def rows(self):
        return list(zip(self.n_values, self.gaps))


def _fit_or_none(rows):
    from .rates import envelope_constant, envelope_holds, fit_slope

    vals = [v for _, v in rows]
    if len(rows) >= 3 and all(v > 0 for v in vals):
        fit = fit_slope(rows)
        c = envelope_constant(rows)
        return fit.slope, fit.intercept, fit.r2, c, envelope_holds(rows, c)
    return None, None, None, None, None


def _shared_oracle_steps(n_list) -> int | None:
    floor = max(2**14, 64 * max(n_list))
    l = 1
    for n in n_list:
        l = l * n // math.gcd(l, n)
        if l > 4 * floor:
            return None
    return ((floor + l - 1) // l) * l


def discrepancy_study(
    w: WeightVector,
    x0,
    n_list,
    activation: str = "tanh",
) -> DiscrepancyTable:
    """sup_i || x(i/N) - x_i^(N) || for each N, against the RK4 reference."""
    n_list = sorted(int(n) for n in n_list)
    if any(n < 1 for n in n_list):
        raise ValueError("every N must be >= 1")
    shared = _shared_oracle_steps(n_list)
    ref_states = None
    if shared is not None:
        ref_states = ode_solve(w, x0, shared, activation=activation).states
    gaps = []
    for n in n_list:
        if ref_states is None:
            steps = n * max(64, -(-(2**14) // n))
            ref = ode_solve(w, x0, steps, activation=activation).states
            stride = steps // n
        else:
            ref = ref_states
            stride = shared // n
        disc = euler_forward(w, x0, n, activation=activation).states
        diff = ref[::stride] - disc
        gaps.append(float(np.max(np.linalg.norm(diff, axis=1))))
    slope, intercept, r2, c, ok = _fit_or_none(list(zip(n_list, gaps)))
    return DiscrepancyTable(tuple(n_list), tuple(gaps), slope, intercept, r2, c, ok)


def grad_discrepancy_study(
    w: WeightVector,
    x0,
    n_list,
    activation: str = "tanh",
) -> DiscrepancyTable:
    """|| grad_theta x(1) - grad_theta x_N^(N) || for each N (Frobenius norm)."""
    n_list = sorted(int(n) for n in n_list)
    if any(n < 1 for n in n_list):
        raise ValueError("every N must be >= 1")
    steps = max(2**14, 64 * max(n_list))
    x0 = _check_x(w, np.atleast_1d(np.asarray(x0, dtype=float)))
    if w.dim == 1 and w.hidden == 1 and activation in ("tanh", "relu"):
        _, s_ref = _rk4_scalar_final_sens(w, float(x0[0]), steps, activation)
    else:
        _, s_ref = _rk4_flow(w, x0[None, :], steps, activation, True, False)
    gaps = []
    for n in n_list:
        _, s_n = _euler_flow(w, x0[None, :], n, activation, True, False)
        gaps.append(float(np.linalg.norm(s_ref[0] - s_n[0])))
    slope, intercept, r2, c, ok = _fit_or_none(list(zip(n_list, gaps)))
    return DiscrepancyTable(tuple(n_list), tuple(gaps), slope, intercept, r2, c, ok)
