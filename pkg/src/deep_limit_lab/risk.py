"""Truncated, penalized empirical risks and their exact gradients.

The data term evaluates the flow at the radially clamped weights T(theta):
identity inside radius cap, constant radius 2*cap outside, blended by a
quintic that is C2 at both ends.  The penalty H(theta) vanishes inside rho0
and equals lam * |theta|^2 beyond 2*rho0.  Gradients are exact: forward
sensitivities through the flow, chained with the clamp Jacobian, plus the
penalty gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .dynamics import WeightVector, flow_final

__all__ = [
    "TruncationSpec",
    "RegularizerSpec",
    "RiskConfig",
    "trunc",
    "regularizer",
    "risk",
    "grad_risk",
    "risk_gap_study",
    "confinement_probe",
    "radial_clamp",
    "penalty_profile",
]


@dataclass(frozen=True)
class TruncationSpec:
    lambda_cap: float = 5.0

    def __post_init__(self):
        if self.lambda_cap <= 0:
            raise ValueError("lambda_cap must be positive")


@dataclass(frozen=True)
class RegularizerSpec:
    gamma: float = 0.001
    lam: float = 1.0
    rho0: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 1 or self.rho0 <= 0:
            raise ValueError("need gamma >= 0, lam >= 1, rho0 > 0")


@dataclass(frozen=True)
class RiskConfig:
    """Loss kind, clamp, penalty, and depth (an int N or None = continuous)."""

    truncation: TruncationSpec = field(default_factory=TruncationSpec)
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    n_steps: int | None = None
    loss: str = "squared"
    activation: str = "tanh"
    oracle_steps: int = 2**14

    def __post_init__(self):
        if self.loss not in ("squared", "logistic"):
            raise ValueError("loss must be 'squared' or 'logistic'")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be >= 1 or None for continuous")

    def with_depth(self, n_steps: int | None) -> "RiskConfig":
        return RiskConfig(
            self.truncation, self.regularizer, n_steps, self.loss,
            self.activation, self.oracle_steps,
        )


# ---------------------------------------------------------------------------
# radial profiles (shared by the vector ops and the scalar toy model)
# ---------------------------------------------------------------------------

def _quintic_ramp(u):
    """q with q(0)=0, q'(0)=1, q''(0)=0 and q(1)=1, q'(1)=q''(1)=0, monotone."""
    u = np.clip(u, 0.0, 1.0)
    return u + 4 * u**3 - 7 * u**4 + 3 * u**5, 1 + 12 * u**2 - 28 * u**3 + 15 * u**4


def _smoothstep(u):
    """Classic quintic smoothstep: 0 -> 1 with zero slope and curvature at ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u**2), 30 * u**2 * (1 - u) ** 2


def radial_clamp(r, cap: float):
    """rho(r) and rho'(r): identity below cap, constant 2*cap above 2*cap."""
    r = np.asarray(r, dtype=float)
    u = (r - cap) / cap
    q, qp = _quintic_ramp(u)
    rho = np.where(r <= cap, r, np.where(r >= 2 * cap, 2 * cap, cap * (1 + q)))
    drho = np.where(r <= cap, 1.0, np.where(r >= 2 * cap, 0.0, qp))
    return rho, drho


def penalty_profile(r, spec: RegularizerSpec):
    """H and dH/dr along the radius: 0 inside rho0, lam * r^2 beyond 2*rho0."""
    r = np.asarray(r, dtype=float)
    u = (r - spec.rho0) / spec.rho0
    s, sp = _smoothstep(u)
    h = spec.lam * r**2 * s
    dh = spec.lam * (2 * r * s + r**2 * sp / spec.rho0)
    return h, dh


def trunc(theta, spec: TruncationSpec):
    """Clamped weights and the exact m x m Jacobian of the clamp.

    Accepts a flat vector or a WeightVector; returns the same kind plus the
    Jacobian.  At theta = 0 the map is the identity.
    """
    is_wv = isinstance(theta, WeightVector)
    flat = theta.flat if is_wv else np.asarray(theta, dtype=float)
    m = flat.shape[0]
    r = float(np.linalg.norm(flat))
    if r <= spec.lambda_cap:
        out = flat.copy()
        jac = np.eye(m)
    else:
        rho, drho = radial_clamp(r, spec.lambda_cap)
        rho, drho = float(rho), float(drho)
        u = flat / r
        out = rho * u
        jac = (rho / r) * (np.eye(m) - np.outer(u, u)) + drho * np.outer(u, u)
    if is_wv:
        return WeightVector.from_flat(out, theta.dim, theta.hidden), jac
    return out, jac


def regularizer(theta, spec: RegularizerSpec):
    """H(theta) and its exact gradient (without the gamma factor)."""
    flat = theta.flat if isinstance(theta, WeightVector) else np.asarray(theta, dtype=float)
    r = float(np.linalg.norm(flat))
    if r == 0.0:
        return 0.0, np.zeros_like(flat)
    h, dh = penalty_profile(r, spec)
    return float(h), float(dh) / r * flat


# ---------------------------------------------------------------------------
# risk and exact gradient
# ---------------------------------------------------------------------------

def _data_term(w_t: WeightVector, data: LabeledDataset, cfg: RiskConfig, with_sens: bool):
    xT, s = flow_final(
        w_t, data.inputs, cfg.n_steps,
        with_sensitivity=with_sens,
        activation=cfg.activation,
        oracle_steps=cfg.oracle_steps,
    )
    if cfg.loss == "squared":
        res = data.targets - xT
        value = float(np.mean(np.sum(res * res, axis=1)))
        if not with_sens:
            return value, None
        grad = -2.0 * np.einsum("bdm,bd->m", s, res) / len(data)
        return value, grad
    # logistic: score is the first flow coordinate, labels are +-1
    y = data.targets[:, 0]
    score = xT[:, 0]
    value = float(np.mean(np.logaddexp(0.0, -y * score)))
    if not with_sens:
        return value, None
    dscore = -y * _sigmoid_stable(-y * score)
    grad = np.einsum("b,bm->m", dscore, s[:, 0, :]) / len(data)
    return value, grad


def _sigmoid_stable(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def risk(w: WeightVector, data: LabeledDataset, cfg: RiskConfig) -> float:
    """Mean loss of the flow at the clamped weights, plus gamma * H(theta)."""
    w_t, _ = trunc(w, cfg.truncation)
    value, _ = _data_term(w_t, data, cfg, with_sens=False)
    h, _ = regularizer(w, cfg.regularizer)
    return value + cfg.regularizer.gamma * h


def grad_risk(w: WeightVector, data: LabeledDataset, cfg: RiskConfig) -> np.ndarray:
    """Exact gradient: clamp Jacobian (chain rule) on the data term, plus gamma grad H."""
    w_t, jac = trunc(w, cfg.truncation)
    _, g_data = _data_term(w_t, data, cfg, with_sens=True)
    _, g_h = regularizer(w, cfg.regularizer)
    return jac.T @ g_data + cfg.regularizer.gamma * g_h


@dataclass(frozen=True)
class RiskGapTable:
    """Depth sweep of |risk_N - risk_cont| and the gradient gap, with slopes."""

    n_values: tuple
    value_gaps: tuple
    grad_gaps: tuple
    value_slope: float
    value_r2: float
    grad_slope: float
    grad_r2: float

    def rows(self):
        return list(zip(self.n_values, self.value_gaps, self.grad_gaps))


def risk_gap_study(
    w: WeightVector, data: LabeledDataset, cfg: RiskConfig, n_list
) -> RiskGapTable:
    """Measure the depth-N to continuous risk and gradient gaps over n_list."""
    from .rates import fit_slope

    n_list = sorted(int(n) for n in n_list)
    oracle_steps = max(cfg.oracle_steps, 64 * max(n_list))
    cont_cfg = RiskConfig(
        cfg.truncation, cfg.regularizer, None, cfg.loss, cfg.activation, oracle_steps
    )
    r_cont = risk(w, data, cont_cfg)
    g_cont = grad_risk(w, data, cont_cfg)
    v_gaps, g_gaps = [], []
    for n in n_list:
        cfg_n = cont_cfg.with_depth(n)
        v_gaps.append(abs(risk(w, data, cfg_n) - r_cont))
        g_gaps.append(float(np.linalg.norm(grad_risk(w, data, cfg_n) - g_cont)))
    v_fit = fit_slope(list(zip(n_list, v_gaps)))
    g_fit = fit_slope(list(zip(n_list, g_gaps)))
    return RiskGapTable(
        tuple(n_list), tuple(v_gaps), tuple(g_gaps),
        v_fit.slope, v_fit.r2, g_fit.slope, g_fit.r2,
    )


# ---------------------------------------------------------------------------
# confinement probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfinementReport:
    radii: tuple
    max_ratio_per_radius: tuple
    overall_max: float
    tail_max: float  # worst ratio over radii beyond 2 * cap

    def bounded(self) -> bool:
        return self.tail_max <= self.overall_max


def confinement_probe(
    w_template: WeightVector,
    data: LabeledDataset,
    cfg: RiskConfig,
    radii=None,
    samples_per_radius: int = 64,
    seed: int = 0,
) -> ConfinementReport:
    """Empirical -grad(risk) . theta / (1 + |theta|^2) on spheres of growing radius.

    For the process never to explode this ratio must stay bounded above as the
    radius grows; beyond 2 * cap the data term is exactly radial-null and only
    the penalty drift remains.
    """
    cap = cfg.truncation.lambda_cap
    if radii is None:
        radii = np.geomspace(0.5 * cap, 10.0 * cap, 10)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xcf], dtype=np.uint64)))
    m = w_template.n_params
    per_radius = []
    for r in radii:
        worst = -np.inf
        for _ in range(samples_per_radius):
            u = rng.standard_normal(m)
            u /= np.linalg.norm(u)
            flat = r * u
            w = WeightVector.from_flat(flat, w_template.dim, w_template.hidden)
            g = grad_risk(w, data, cfg)
            ratio = float(-g @ flat / (1.0 + r * r))
            worst = max(worst, ratio)
        per_radius.append(worst)
    per_radius = np.asarray(per_radius)
    tail = per_radius[np.asarray(radii) >= 2.0 * cap]
    return ConfinementReport(
        tuple(float(r) for r in radii),
        tuple(float(v) for v in per_radius),
        float(per_radius.max()),
        float(tail.max()) if len(tail) else float("-inf"),
    )
