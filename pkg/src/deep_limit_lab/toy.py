"""One-parameter risk instance for the density and coupling studies.

The flow is dx/dt = theta * sigma(x) with a single trainable scalar theta
(a d = m_h = 1 field with the inner weight pinned to 1 and biases to 0), so
the truncated penalized risk

    V(theta)     = mean_j (y_j - x(1; T(theta), x_j))^2 + gamma * H(theta)
    V_N(theta)   = same with the depth-N Euler flow

is a potential on the real line.  Both V and its exact derivative are
evaluated on whole theta grids at once, which is what the grid solver and
the drift tabulation need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .risk import RegularizerSpec, TruncationSpec, penalty_profile, radial_clamp

__all__ = ["ScalarToyModel", "default_toy_model"]


@dataclass(frozen=True)
class ScalarToyModel:
    data_x: np.ndarray
    data_y: np.ndarray
    activation: str = "tanh"
    cap: float = 2.0
    gamma: float = 0.5
    lam: float = 1.0
    rho0: float = 1.0
    oracle_steps: int = 1024

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.data_x, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.data_y, dtype=float))
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("data_x and data_y must be matching 1-d arrays")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "data_x", x)
        object.__setattr__(self, "data_y", y)

    @property
    def truncation(self) -> TruncationSpec:
        return TruncationSpec(self.cap)

    @property
    def regularizer(self) -> RegularizerSpec:
        return RegularizerSpec(self.gamma, self.lam, self.rho0)

    def _sigma(self, x):
        if self.activation == "tanh":
            return np.tanh(x)
        if self.activation == "relu":
            return np.maximum(x, 0.0)
        raise ValueError("toy model supports tanh or relu")

    def _sigma_prime(self, x):
        if self.activation == "tanh":
            t = np.tanh(x)
            return 1.0 - t * t
        return (x > 0.0).astype(float)

    def _flow(self, theta: np.ndarray, n_steps: int | None):
        """Endpoint x(1) and sensitivity dx(1)/dtheta on the grid theta.

        Returns arrays of shape (len(theta), n_data); Euler for integer depth,
        RK4 at oracle_steps for the continuous limit.
        """
        th = theta[:, None]
        x = np.broadcast_to(self.data_x, (len(theta), len(self.data_x))).copy()
        s = np.zeros_like(x)

        def rhs(xc, sc):
            return th * self._sigma(xc), th * self._sigma_prime(xc) * sc + self._sigma(xc)

        if n_steps is None:
            h = 1.0 / self.oracle_steps
            for _ in range(self.oracle_steps):
                k1x, k1s = rhs(x, s)
                k2x, k2s = rhs(x + 0.5 * h * k1x, s + 0.5 * h * k1s)
                k3x, k3s = rhs(x + 0.5 * h * k2x, s + 0.5 * h * k2s)
                k4x, k4s = rhs(x + h * k3x, s + h * k3s)
                x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
                s = s + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
        else:
            h = 1.0 / n_steps
            for _ in range(n_steps):
                fx, fs = rhs(x, s)
                x = x + h * fx
                s = s + h * fs
        return x, s

    def potential(self, theta_grid, n_steps: int | None):
        """V (or V_N) and its exact derivative on a grid of scalar weights."""
        theta_grid = np.asarray(theta_grid, dtype=float)
        r = np.abs(theta_grid)
        rho, drho = radial_clamp(r, self.cap)
        th_t = np.sign(theta_grid) * rho
        th_t = np.where(theta_grid == 0.0, 0.0, th_t)
        x1, s1 = self._flow(th_t, n_steps)
        res = self.data_y - x1
        v_data = np.mean(res * res, axis=1)
        dv_data = np.mean(-2.0 * res * s1, axis=1) * drho
        h, dh = penalty_profile(r, self.regularizer)
        sgn = np.where(theta_grid >= 0.0, 1.0, -1.0)
        v = v_data + self.gamma * h
        dv = dv_data + self.gamma * dh * sgn
        return v, dv

    def risk_scalar(self, theta: float, n_steps: int | None) -> float:
        v, _ = self.potential(np.array([theta]), n_steps)
        return float(v[0])

    def drift_table(self, theta_grid, n_steps: int | None):
        """Tabulated SGD drift -V'(theta) on the grid (for interpolation)."""
        v, dv = self.potential(theta_grid, n_steps)
        return v, -dv


def default_toy_model(
    n_data: int = 32,
    theta_star: float = 0.6,
    seed: int = 7,
    cap: float = 2.0,
    gamma: float = 0.5,
    lam: float = 1.0,
    rho0: float = 1.0,
) -> ScalarToyModel:
    """Self-consistent scalar dataset: targets are the continuous flow at theta_star.

    The data term then has a zero-residual minimum at theta_star, giving a
    smooth single-well confining potential once the quadratic penalty is added.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x70f], dtype=np.uint64)))
    x = rng.uniform(0.5, 1.5, size=n_data)
    probe = ScalarToyModel(x, np.zeros_like(x), cap=cap, gamma=gamma, lam=lam, rho0=rho0)
    y, _ = probe._flow(np.array([theta_star]), None)
    return ScalarToyModel(x, y[0], cap=cap, gamma=gamma, lam=lam, rho0=rho0)
