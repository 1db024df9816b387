"""Empirical probes of the Lipschitz/growth envelope of the field family.

The two-layer field with unit-Lipschitz activations satisfies, inside a
sampling radius, the four envelope inequalities

    ||f_t(x)  - f_t'(x) ||  <= max(g(|t|), g(|t'|)) |t - t'| |x|
    ||f_t(x)  - f_t(x') ||  <= g(|t|) |x - x'|
    ||Dt f(x) - Dt f(x')||  <= g(|t|) max(|x|, |x'|) |x - x'|
    ||Dx f(x) - Dx f(x')||  <= g(|t|) |x - x'|

with g(s) = s + 1, and a two-block composition lands in the envelope 2 g^3.
The probe draws random (theta, theta', x, x') tuples and reports, per family,
the worst observed ratio of left side to right side.  Families 1 and 3 have a
right side that vanishes as x -> 0 while parts of the left side do not (bias
terms in family 1; the outer-weight gradient block, whose entries are
sigma(K2 x + b2), in family 3), so the pointwise guarantee covers families 2
and 4, plus family 1 for bias-free samples.  All four are measured and
reported either way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VectorFieldSpec, WeightVector, eval_field, jacobians, euler_forward

__all__ = [
    "RegularityReport",
    "TwoBlockField",
    "regularity_probe",
    "flow_bound_probe",
    "envelope_g",
]


def envelope_g(s):
    """The prototype growth envelope g(s) = s + 1."""
    return np.asarray(s, dtype=float) + 1.0


@dataclass(frozen=True)
class RegularityReport:
    """Worst observed LHS / (envelope * structure factor) ratio per family.

    A value <= 1 in `theta_lipschitz`, `x_lipschitz`, `grad_theta_lipschitz`
    or `grad_x_lipschitz` means every sample stayed inside the claimed
    envelope.  `guaranteed` names the families that must satisfy this for the
    sampled architecture.
    """

    sample_count: int
    radius: float
    envelope_label: str
    theta_lipschitz: float
    x_lipschitz: float
    grad_theta_lipschitz: float
    grad_x_lipschitz: float
    guaranteed: tuple

    def guaranteed_max(self) -> float:
        return max(getattr(self, name) for name in self.guaranteed)


@dataclass(frozen=True)
class TwoBlockField:
    """Composition F(x) = f2(f1(x)) of two fields with equal state dimension."""

    w1: WeightVector
    w2: WeightVector
    activation: str = "tanh"

    def __post_init__(self):
        if self.w1.dim != self.w2.dim:
            raise ValueError("blocks must share the state dimension")

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.flat, self.w2.flat])

    def eval(self, x):
        y = eval_field(self.w1, x, self.activation)
        return eval_field(self.w2, y, self.activation)

    def jacobians(self, x):
        y = eval_field(self.w1, x, self.activation)
        dx1, dt1 = jacobians(self.w1, x, self.activation)
        dx2, dt2 = jacobians(self.w2, y, self.activation)
        dx = dx2 @ dx1
        dt = np.concatenate([dx2 @ dt1, dt2], axis=1)
        return dx, dt


def _ball(rng, n, dim, radius):
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return v * r[:, None]


def _sample_weights(rng, spec, radius, include_bias):
    m = spec.n_params
    flat = _ball(rng, 1, m, radius)[0]
    w = WeightVector.from_flat(flat, spec.dim, spec.hidden)
    if include_bias:
        return w
    return WeightVector(w.k1, w.k2, np.zeros(spec.dim), np.zeros(spec.hidden))


def regularity_probe(
    spec: VectorFieldSpec,
    sample_count: int = 1000,
    radius: float = 1.0,
    seed: int = 0,
    include_bias: bool = True,
    two_block: bool = False,
) -> RegularityReport:
    """Sample (theta, theta', x, x') tuples and report worst envelope ratios.

    For the single prototype the bound is g(s) = s + 1; for a two-block
    composition it is 2 g(s)^3.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x5e9], dtype=np.uint64)))

    worst = np.zeros(4)
    tiny = 1e-300
    for _ in range(sample_count):
        wa = _sample_weights(rng, spec, radius, include_bias)
        wb = _sample_weights(rng, spec, radius, include_bias)
        x, xp = _ball(rng, 2, spec.dim, radius)
        if two_block:
            wa2 = _sample_weights(rng, spec, radius, include_bias)
            wb2 = _sample_weights(rng, spec, radius, include_bias)
            fa = TwoBlockField(wa, wa2, spec.activation)
            fb = TwoBlockField(wb, wb2, spec.activation)
            ta = np.linalg.norm(fa.flat)
            tb = np.linalg.norm(fb.flat)
            ga, gb = 2.0 * envelope_g(ta) ** 3, 2.0 * envelope_g(tb) ** 3
            f_ax, f_bx = fa.eval(x), fb.eval(x)
            f_axp = fa.eval(xp)
            dxa, dta = fa.jacobians(x)
            dxap, dtap = fa.jacobians(xp)
            dtheta = np.linalg.norm(fa.flat - fb.flat)
        else:
            ta = np.linalg.norm(wa.flat)
            tb = np.linalg.norm(wb.flat)
            ga, gb = envelope_g(ta), envelope_g(tb)
            act = spec.activation
            f_ax = eval_field(wa, x, act)
            f_bx = eval_field(wb, x, act)
            f_axp = eval_field(wa, xp, act)
            dxa, dta = jacobians(wa, x, act)
            dxap, dtap = jacobians(wa, xp, act)
            dtheta = np.linalg.norm(wa.flat - wb.flat)

        nx, nxp = np.linalg.norm(x), np.linalg.norm(xp)
        dx_pts = np.linalg.norm(x - xp)
        g_max = max(ga, gb)

        r1 = np.linalg.norm(f_ax - f_bx) / (g_max * dtheta * nx + tiny)
        r2 = np.linalg.norm(f_ax - f_axp) / (ga * dx_pts + tiny)
        r3 = np.linalg.norm(dta - dtap) / (ga * max(nx, nxp) * dx_pts + tiny)
        r4 = np.linalg.norm(dxa - dxap) / (ga * dx_pts + tiny)
        worst = np.maximum(worst, [r1, r2, r3, r4])

    guaranteed = ("x_lipschitz", "grad_x_lipschitz")
    if not include_bias:
        guaranteed = ("theta_lipschitz", "x_lipschitz", "grad_x_lipschitz")
    return RegularityReport(
        sample_count=sample_count,
        radius=radius,
        envelope_label="2*(s+1)^3" if two_block else "s+1",
        theta_lipschitz=float(worst[0]),
        x_lipschitz=float(worst[1]),
        grad_theta_lipschitz=float(worst[2]),
        grad_x_lipschitz=float(worst[3]),
        guaranteed=guaranteed,
    )


def flow_bound_probe(
    spec: VectorFieldSpec,
    sample_count: int = 200,
    radius: float = 1.0,
    n_steps: int = 32,
    seed: int = 1,
) -> float:
    """Worst ratio max_i ||x_i|| / (e^{2 g(|theta|)} ||x0||) over random draws.

    A value <= 1 confirms the exponential a-priori envelope on the discrete
    flow.  Initial points are kept away from the origin so the ratio is
    well defined.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xb0b], dtype=np.uint64)))
    worst = 0.0
    for _ in range(sample_count):
        w = _sample_weights(rng, spec, radius, include_bias=True)
        x0 = _ball(rng, 1, spec.dim, radius)[0]
        nx0 = np.linalg.norm(x0)
        if nx0 < 0.25:
            x0 = x0 * (0.25 / (nx0 + 1e-300))
            nx0 = 0.25
        traj = euler_forward(w, x0, n_steps, activation=spec.activation)
        peak = float(np.max(np.linalg.norm(traj.states, axis=1)))
        bound = np.exp(2.0 * envelope_g(np.linalg.norm(w.flat))) * nx0
        worst = max(worst, peak / bound)
    return worst
