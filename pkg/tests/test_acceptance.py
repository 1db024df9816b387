"""Acceptance suite: one test per headline claim, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  Each test re-derives its expected values from independent
closed forms or statistical oracles before asserting.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import erf

from deep_limit_lab.config import load_config
from deep_limit_lab.datasets import gen_regression_oracle
from deep_limit_lab.dynamics import (
    WeightVector,
    discrepancy_study,
    euler_forward,
)
from deep_limit_lab.fokker_planck import (
    ChangCooperSolver,
    DensityField,
    Grid,
    PotentialField,
    density_gap_study,
    fp_solve,
    ou_squared_norm_rate,
    relaxation_rate,
    tail_mass,
    toy_potential_field,
)
from deep_limit_lab.risk import RegularizerSpec, RiskConfig, TruncationSpec, risk_gap_study
from deep_limit_lab.sgd_sde import mc_statistics, terminal_risk_estimate
from deep_limit_lab.studies import run_study
from deep_limit_lab.toy import default_toy_model

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def announce(num, name, detail):
    print(f"\nACCEPTANCE {num:02d} {name}: PASS ({detail})")


def normal_cell_masses(grid, std):
    edges = np.linspace(-grid.half_width, grid.half_width, grid.cells + 1)
    cell = 0.5 * (erf(edges[1:] / (np.sqrt(2) * std)) - erf(edges[:-1] / (np.sqrt(2) * std)))
    return cell / cell.sum()


def test_01_trajectory_rate():
    t0 = time.time()
    w = WeightVector.scalar(1.0)
    tab = discrepancy_study(w, [1.0], [2**k for k in range(2, 11)], activation="relu")
    elapsed = time.time() - t0
    closed_form = math.e - (1.0 + 0.25) ** 4
    assert abs(tab.gaps[0] - closed_form) <= 1e-12
    assert abs(tab.slope - (-1.0)) <= 0.1
    assert elapsed < 1.0
    announce(1, "trajectory rate", f"gap(4) off by {abs(tab.gaps[0]-closed_form):.1e}, "
             f"slope {tab.slope:.3f}, {elapsed:.2f}s")


def test_02_gradient_exactness():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        m = 2 * 2 * 4 + 2 + 4
        w = WeightVector.from_flat(0.6 * rng.standard_normal(m) / np.sqrt(m), 2, 4)
        x0 = rng.standard_normal(2)
        s = euler_forward(w, x0, 24, with_sensitivity=True, activation="tanh").final_sensitivity
        h = 1e-5
        fd = np.empty((2, m))
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            wp = WeightVector.from_flat(w.flat + e, 2, 4)
            wm = WeightVector.from_flat(w.flat - e, 2, 4)
            fd[:, j] = (
                euler_forward(wp, x0, 24, activation="tanh").final_state
                - euler_forward(wm, x0, 24, activation="tanh").final_state
            ) / (2 * h)
        worst = max(worst, np.linalg.norm(s - fd) / np.linalg.norm(fd))
    elapsed = time.time() - t0
    assert worst <= 1e-5
    assert elapsed < 10.0
    announce(2, "gradient exactness", f"worst rel err {worst:.2e} over 20 draws, {elapsed:.1f}s")


def test_03_risk_and_gradient_gap_rate():
    t0 = time.time()
    rng = np.random.default_rng(11)
    data = gen_regression_oracle("gaussian-linear", 200, seed=4)
    cfg = RiskConfig(TruncationSpec(5.0), RegularizerSpec(0.001, 1.0, 1.0), activation="tanh")
    m = 2 * 2 * 4 + 2 + 4
    w = WeightVector.from_flat(0.7 * rng.standard_normal(m) / np.sqrt(m), 2, 4)
    tab = risk_gap_study(w, data, cfg, [2**k for k in range(2, 10)])
    elapsed = time.time() - t0
    assert abs(tab.value_slope - (-1.0)) <= 0.15
    assert abs(tab.grad_slope - (-1.0)) <= 0.15
    assert elapsed < 120.0
    announce(3, "risk/gradient gap rate",
             f"value slope {tab.value_slope:.3f}, grad slope {tab.grad_slope:.3f}, {elapsed:.0f}s")


def test_04_coupled_sde_depth_sweep():
    t0 = time.time()
    toy = default_toy_model()
    tab = mc_statistics(toy, [2, 4, 8, 16, 32, 64], n_seeds=200, T=1.0, h=1.0 / 2048, seed=42)
    elapsed = time.time() - t0
    sup_rows = tab.by_statistic("sup_sq")
    for (n1, e1, s1), (n2, e2, s2) in zip(sup_rows, sup_rows[1:]):
        assert e2 <= e1 + 2.0 * math.hypot(s1, s2)
    mean_slope = tab.slopes["mean_gap"][0]
    assert mean_slope <= -0.8
    assert elapsed < 600.0
    announce(4, "coupled SDE sweep",
             f"mean-gap slope {mean_slope:.3f}, sup-sq non-increasing, {elapsed:.0f}s")


def test_05_fokker_planck_basics():
    t0 = time.time()
    grid = Grid(1, 8.0, 1024)
    x = grid.axis_centers()
    pot = PotentialField(grid, 0.5 * x**2)
    solver = ChangCooperSolver(pot, dt=1.0 / 1024)
    p0 = DensityField.gaussian(grid, 0.7, 0.3)
    masses = p0.masses
    drift = 0.0
    for _ in range(8):
        new = solver.step(masses)
        drift = max(drift, abs(new.sum() - masses.sum()))
        masses = new
    assert drift <= 1e-12

    p_gibbs = fp_solve(pot, p0, T=12.0, dt=1.0 / 256)
    gibbs_err = np.abs(p_gibbs.masses - normal_cell_masses(grid, 1.0)).sum()
    assert gibbs_err <= 1e-3

    pot0 = PotentialField(grid, np.zeros(grid.n_cells))
    s0, t = 0.05, 0.25
    p0h = DensityField.from_weights(grid, normal_cell_masses(grid, s0))
    ph = fp_solve(pot0, p0h, T=t, dt=1.0 / 4096)
    heat_err = np.abs(ph.masses - normal_cell_masses(grid, math.sqrt(s0**2 + 2 * t))).sum()
    assert heat_err <= 1e-3
    elapsed = time.time() - t0
    assert elapsed < 60.0
    announce(5, "finite-volume basics",
             f"mass drift {drift:.1e}, Gibbs L1 {gibbs_err:.1e}, heat L1 {heat_err:.1e}, {elapsed:.0f}s")


def test_06_density_gap_rate():
    t0 = time.time()
    toy = default_toy_model()
    grid = Grid(1, 8.0, 512)
    p0 = DensityField.uniform_interval(grid, -0.5, 0.5)
    tab = density_gap_study([2, 4, 8, 16, 32, 64], toy, grid, p0, T=1.0, dt=1.0 / 1024)
    elapsed = time.time() - t0
    assert abs(tab.slope - (-1.0)) <= 0.2
    assert elapsed < 600.0
    announce(6, "density gap rate", f"slope {tab.slope:.3f} (r2 {tab.r2:.4f}), {elapsed:.0f}s")


def test_07_gaussian_tails():
    t0 = time.time()
    grid = Grid(1, 8.0, 1024)
    pot = PotentialField(grid, np.zeros(grid.n_cells))
    p0 = DensityField.from_weights(grid, normal_cell_masses(grid, 0.05))
    pT = fp_solve(pot, p0, T=0.25, dt=1.0 / 2048)
    ds = np.array([1.5, 2.25, 3.0])
    logm = np.log([tail_mass(pT, d, d + 0.5) for d in ds])
    slope, intercept = np.polyfit(ds**2, logm, 1)
    pred = slope * ds**2 + intercept
    r2 = 1.0 - np.sum((logm - pred) ** 2) / np.sum((logm - logm.mean()) ** 2)
    elapsed = time.time() - t0
    assert slope < 0
    assert r2 >= 0.98
    assert elapsed < 60.0
    announce(7, "Gaussian tails", f"log-mass slope {slope:.3f} in d^2, R2 {r2:.4f}, {elapsed:.0f}s")


def test_08_exponential_relaxation():
    t0 = time.time()
    grid = Grid(1, 8.0, 512)
    x = grid.axis_centers()
    pot = PotentialField(grid, 0.5 * x**2)
    fit = relaxation_rate(pot, DensityField.gaussian(grid, 0.7, 0.35), T=3.0, dt=1.0 / 512)
    oracle = ou_squared_norm_rate(0.5)
    elapsed = time.time() - t0
    assert fit.rate > 0
    assert fit.r2 >= 0.95
    assert abs(fit.rate - oracle) / oracle <= 0.10
    assert elapsed < 60.0
    announce(8, "exponential relaxation",
             f"rate {fit.rate:.4f} vs oracle {oracle:.1f}, R2 {fit.r2:.5f}, {elapsed:.0f}s")


def test_09_fp_versus_monte_carlo():
    toy = default_toy_model()
    grid = Grid(1, 8.0, 512)
    pot = toy_potential_field(toy, grid, None)
    p0 = DensityField.uniform_interval(grid, -0.5, 0.5)
    pT = fp_solve(pot, p0, T=1.0, dt=1.0 / 1024)
    quadrature = float(np.sum(pot.values * pT.masses))
    mc_mean, mc_se = terminal_risk_estimate(toy, n_seeds=400, T=1.0, h=1.0 / 2048, seed=77)
    assert abs(quadrature - mc_mean) <= 3.0 * mc_se
    announce(9, "solver cross-validation",
             f"quadrature {quadrature:.4f} vs MC {mc_mean:.4f} +- {mc_se:.4f}")


def test_10_annuli_depth_experiments(tmp_path):
    t0 = time.time()
    summaries = {}
    for name in ("annuli", "annuli_augmented"):
        cfg = load_config(CONFIG_DIR / f"{name}.cfg")
        out = tmp_path / name
        run_study(cfg, out)
        rows = (out / "annuli_summary.csv").read_text().strip().splitlines()[1:]
        parsed = [r.split(",") for r in rows]
        summaries[name] = {
            "n": [int(r[0]) for r in parsed],
            "mean": [float(r[1]) for r in parsed],
            "std": [float(r[2]) for r in parsed],
            "ok": [int(r[4]) for r in parsed],
        }
    elapsed = time.time() - t0

    plain = summaries["annuli"]
    assert all(k > 0 for k in plain["ok"])
    folds = plain["ok"][0]
    sems = [s / math.sqrt(folds) for s in plain["std"]]
    # non-decreasing within fold spread, growth beyond spread overall
    for i in range(len(plain["n"]) - 1):
        tol = max(plain["std"][i], plain["std"][i + 1])
        assert plain["mean"][i + 1] >= plain["mean"][i] - tol
    assert plain["mean"][-1] - plain["mean"][0] > 2.0 * (sems[0] + sems[-1])

    aug = summaries["annuli_augmented"]
    assert all(k > 0 for k in aug["ok"])
    deep = [m for n, m in zip(aug["n"], aug["mean"]) if n >= 2]
    deep_std = [s for n, s in zip(aug["n"], aug["std"]) if n >= 2]
    center = sum(deep) / len(deep)
    assert max(abs(m - center) for m in deep) <= max(deep_std)

    assert elapsed < 1800.0
    announce(10, "annuli depth experiments",
             f"plain CE {plain['mean'][0]:.3f}->{plain['mean'][-1]:.3f} rising, "
             f"augmented flat within spread, {elapsed:.0f}s")


def test_11_out_of_scope_image_benchmark():
    # the image-classification benchmark from the source experiments needs
    # GPU-scale training and is out of scope by design; nothing here
    # depends on it
    announce(11, "image benchmark out of scope", "documented, no criterion depends on it")
