"""Study drivers behind the CLI subcommands.

Each driver reads a parsed StudyConfig, runs the corresponding sweep, and
writes CSV results plus a manifest into the output directory.  The report
driver aggregates manifests, re-emits every referenced CSV as a
gnuplot-compatible .dat file, and renders the figures.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .annuli import AnnuliTrainConfig, depth_sweep
from .config import RunManifest, StudyConfig, UsageError, write_atomic
from .datasets import StarlikeSpec, gen_starlike
from .dynamics import WeightVector, discrepancy_study, grad_discrepancy_study
from .fokker_planck import (
    DensityField,
    Grid,
    density_gap_study,
    fp_solve,
    relaxation_rate,
    toy_potential_field,
)
from .sgd_sde import mc_statistics
from .toy import ScalarToyModel, default_toy_model

__all__ = [
    "run_study",
    "run_trajectory_study",
    "run_sde_couple",
    "run_fp_study",
    "run_annuli_train",
    "run_report",
]

_FMT = "%.12g"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_format_cell(v) for v in row])
    write_atomic(path, buf.getvalue())


def _format_cell(v):
    if isinstance(v, float):
        return _FMT % v
    return str(v)


def _field_from_config(cfg: StudyConfig):
    preset = cfg.get("field", "preset", str, "scalar-linear")
    if preset == "zero":
        dim = cfg.get("field", "dim", int, 2)
        hidden = cfg.get("field", "hidden", int, 2)
        return WeightVector.zeros(dim, hidden), cfg.get("field", "activation", str, "tanh"), [1.0] * dim
    if preset == "scalar-linear":
        return WeightVector.scalar(1.0), "relu", [1.0]
    if preset == "scalar-decay":
        return WeightVector.scalar(-1.0), "relu", [1.0]
    if preset == "random":
        dim = cfg.get("field", "dim", int, 2)
        hidden = cfg.get("field", "hidden", int, 4)
        scale = cfg.get("field", "theta_scale", float, 0.7)
        seed = cfg.get("field", "seed", int, 0)
        activation = cfg.get("field", "activation", str, "tanh")
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xf1e1d], dtype=np.uint64)))
        m = 2 * dim * hidden + dim + hidden
        w = WeightVector.from_flat(scale * rng.standard_normal(m) / np.sqrt(m), dim, hidden)
        x0 = rng.standard_normal(dim).tolist()
        return w, activation, x0
    raise UsageError(f"unknown field preset {preset!r}")


def run_trajectory_study(cfg: StudyConfig, out_dir: Path) -> RunManifest:
    w, activation, x0 = _field_from_config(cfg)
    n_list = cfg.get_int_list("sweep", "n_values", "4 8 16 32 64 128 256 512 1024")
    tab = discrepancy_study(w, x0, n_list, activation=activation)
    gtab = grad_discrepancy_study(w, x0, n_list, activation=activation)

    man = RunManifest("trajectory", cfg.sha256)
    gaps_path = out_dir / "trajectory_gaps.csv"
    _write_csv(
        gaps_path,
        ["n", "traj_gap", "grad_gap"],
        [(n, t, g) for n, t, g in zip(tab.n_values, tab.gaps, gtab.gaps)],
    )
    man.add(gaps_path)

    def slope_row(name, t):
        if t.slope is None:
            return (name, "exact", "", "", "", "")
        return (name, t.slope, t.intercept, t.r2, t.envelope_c, t.envelope_ok)

    slopes_path = out_dir / "trajectory_slopes.csv"
    _write_csv(
        slopes_path,
        ["study", "slope", "intercept", "r2", "envelope_c", "envelope_ok"],
        [slope_row("trajectory", tab), slope_row("gradient", gtab)],
    )
    man.add(slopes_path)
    man.params = {"activation": activation, "n_values": list(tab.n_values)}
    return man


def _toy_from_config(cfg: StudyConfig) -> ScalarToyModel:
    return default_toy_model(
        n_data=cfg.get("toy", "n_data", int, 32),
        theta_star=cfg.get("toy", "theta_star", float, 0.6),
        seed=cfg.get("toy", "data_seed", int, 7),
        cap=cfg.get("toy", "cap", float, 2.0),
        gamma=cfg.get("toy", "gamma", float, 0.5),
        lam=cfg.get("toy", "lam", float, 1.0),
        rho0=cfg.get("toy", "rho0", float, 1.0),
    )


def run_sde_couple(cfg: StudyConfig, out_dir: Path, seeds_override=None) -> RunManifest:
    toy = _toy_from_config(cfg)
    n_list = cfg.get_int_list("sweep", "n_values", "2 4 8 16 32 64")
    n_seeds = seeds_override or cfg.get("sde", "seeds", int, 200)
    T = cfg.get("sde", "t", float, 1.0)
    h = cfg.get("sde", "h", float, 1.0 / 2048)
    seed0 = cfg.get("sde", "seed0", int, 100)
    tab = mc_statistics(toy, n_list, n_seeds, T=T, h=h, seed=seed0)

    man = RunManifest("sde-couple", cfg.sha256)
    stats_path = out_dir / "sde_stats.csv"
    _write_csv(stats_path, ["n", "statistic", "estimate", "stderr"], tab.rows)
    man.add(stats_path)
    slopes_path = out_dir / "sde_slopes.csv"
    _write_csv(
        slopes_path,
        ["statistic", "slope", "intercept", "r2"],
        [
            (name, *fit)
            for name, fit in sorted(tab.slopes.items())
            if fit is not None
        ],
    )
    man.add(slopes_path)
    man.params = {"n_seeds": n_seeds, "t": T, "h": h, "seed0": seed0}
    return man


def run_fp_study(cfg: StudyConfig, out_dir: Path) -> RunManifest:
    toy = _toy_from_config(cfg)
    grid = Grid(
        1,
        cfg.get("grid", "half_width", float, 8.0),
        cfg.get("grid", "cells", int, 512),
    )
    T = cfg.get("fp", "t", float, 1.0)
    dt = cfg.get("fp", "dt", float, 1.0 / 1024)
    init_r = cfg.get("fp", "init_radius", float, 0.5)
    n_list = cfg.get_int_list("sweep", "n_values", "2 4 8 16 32 64")
    p0 = DensityField.uniform_interval(grid, -init_r, init_r)

    tab = density_gap_study(n_list, toy, grid, p0, T=T, dt=dt)
    man = RunManifest("fp", cfg.sha256)

    gap_path = out_dir / "fp_gap.csv"
    _write_csv(
        gap_path,
        ["n", "gap_quarter_v", "gap_quarter_penalty", "gap_ball"],
        tab.rows(),
    )
    man.add(gap_path)
    slopes_path = out_dir / "fp_slopes.csv"
    _write_csv(
        slopes_path,
        ["study", "slope", "r2"],
        [("density_gap_quarter_v", tab.slope, tab.r2)],
    )
    man.add(slopes_path)

    # density snapshots: continuous and the largest N, as (coordinate, mass)
    theta = grid.axis_centers()
    pot_c = toy_potential_field(toy, grid, None)
    p_c = fp_solve(pot_c, p0, T, dt)
    pot_n = toy_potential_field(toy, grid, max(n_list))
    p_n = fp_solve(pot_n, p0, T, dt)
    for name, dens in (("continuous", p_c), (f"n{max(n_list)}", p_n)):
        snap = out_dir / f"fp_density_{name}.csv"
        _write_csv(snap, ["theta", "mass"], list(zip(theta, dens.masses)))
        man.add(snap)

    fit = relaxation_rate(pot_c, DensityField.gaussian(grid, 0.7, 0.35), T=3.0, dt=1.0 / 512)
    relax_path = out_dir / "fp_relaxation.csv"
    _write_csv(
        relax_path,
        ["time", "sq_norm"],
        list(zip(fit.times, fit.sq_norms)),
    )
    man.add(relax_path)

    man.params = {
        "grid": {"dim": 1, "half_width": grid.half_width, "cells": grid.cells},
        "dt": dt,
        "t": T,
        "potential_provenance": pot_c.provenance,
        "relaxation_rate": fit.rate,
        "relaxation_r2": fit.r2,
        "ball_radius": tab.ball_radius,
    }
    return man


def run_annuli_train(cfg: StudyConfig, out_dir: Path) -> RunManifest:
    spec = StarlikeSpec(
        r1=cfg.get("dataset", "r1", float, 1.0),
        r2=cfg.get("dataset", "r2", float, 1.5),
        r3=cfg.get("dataset", "r3", float, 3.0),
        n_samples=cfg.get("dataset", "n_samples", int, 2000),
        seed=cfg.get("dataset", "seed", int, 5),
        augment_dims=cfg.get("dataset", "augment_dims", int, 0),
    )
    data = gen_starlike(spec)
    train_cfg = AnnuliTrainConfig(
        hidden=cfg.get("train", "hidden", int, 16),
        folds=cfg.get("train", "folds", int, 5),
        iters=cfg.get("train", "iters", int, 300),
        lr=cfg.get("train", "lr", float, 0.2),
        momentum=cfg.get("train", "momentum", float, 0.9),
        gamma=cfg.get("train", "gamma", float, 0.001),
        lam=cfg.get("train", "lam", float, 1.0),
        rho0=cfg.get("train", "rho0", float, 1.0),
        seed=cfg.get("train", "seed", int, 11),
    )
    n_list = cfg.get_int_list("sweep", "n_values", "1 2 5 10 20")
    res = depth_sweep(data, n_list, train_cfg)

    man = RunManifest("annuli", cfg.sha256)
    data_path = out_dir / "annuli_dataset.csv"
    data.save_csv(data_path)
    man.add(data_path)
    man.add(data_path.with_suffix(".csv.json"))

    cv_path = out_dir / "annuli_cv.csv"
    rows = []
    for n, folds in zip(res.n_values, res.folds):
        for fr in folds:
            rows.append(
                (
                    n,
                    fr.fold,
                    fr.status,
                    fr.train_cross_entropy,
                    fr.val_cross_entropy,
                    fr.val_squared,
                    fr.val_accuracy,
                )
            )
    _write_csv(
        cv_path,
        ["n", "fold", "status", "train_ce", "val_ce", "val_squared", "val_accuracy"],
        rows,
    )
    man.add(cv_path)

    sum_path = out_dir / "annuli_summary.csv"
    _write_csv(
        sum_path,
        ["n", "mean_val_ce", "std_val_ce", "mean_accuracy", "folds_ok"],
        res.summary(),
    )
    man.add(sum_path)
    man.params = {
        "augment_dims": spec.augment_dims,
        "n_samples": spec.n_samples,
        "folds": train_cfg.folds,
        "iters": train_cfg.iters,
    }
    return man


def run_study(cfg: StudyConfig, out_dir, seeds_override=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    driver = {
        "trajectory": run_trajectory_study,
        "sde-couple": run_sde_couple,
        "fp": run_fp_study,
        "annuli": run_annuli_train,
    }[cfg.kind]
    if cfg.kind == "sde-couple":
        man = driver(cfg, out_dir, seeds_override)
    else:
        man = driver(cfg, out_dir)
    return man.write(out_dir)


# ---------------------------------------------------------------------------
# report: aggregate manifests, emit .dat files and figures
# ---------------------------------------------------------------------------

def _csv_rows(path: Path):
    with path.open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, list(rd)


def _to_dat(src: Path, dst: Path) -> None:
    header, rows = _csv_rows(src)
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append(" ".join(v if v != "" else "nan" for v in row))
    write_atomic(dst, "\n".join(lines) + "\n")


def _report_figures(kind: str, dir_path: Path, prefix: str, report_dir: Path):
    from .plotting import cv_risk_figure, loglog_gap_figure

    made = []
    if kind == "trajectory":
        header, rows = _csv_rows(dir_path / "trajectory_gaps.csv")
        ns = [float(r[0]) for r in rows]
        series = {}
        for j, label in ((1, "trajectory"), (2, "gradient")):
            vals = [float(r[j]) for r in rows]
            slope = _fit_or_none(ns, vals)
            series[label] = (ns, vals, slope)
        made.append(
            loglog_gap_figure(
                report_dir / f"{prefix}_gaps.png", series,
                "Euler flow vs continuous limit", ylabel="sup gap",
            )
        )
    elif kind == "sde-couple":
        header, rows = _csv_rows(dir_path / "sde_stats.csv")
        series = {}
        for stat in ("mean_gap", "risk_gap", "sup_sq"):
            pts = [(float(r[0]), float(r[2])) for r in rows if r[1] == stat]
            if pts:
                ns, vals = zip(*pts)
                series[stat] = (ns, vals, _fit_or_none(ns, vals))
        made.append(
            loglog_gap_figure(
                report_dir / f"{prefix}_stats.png", series,
                "Coupled SGD pair: depth sweep", ylabel="estimate",
            )
        )
    elif kind == "fp":
        header, rows = _csv_rows(dir_path / "fp_gap.csv")
        ns = [float(r[0]) for r in rows]
        vals = [float(r[1]) for r in rows]
        series = {"weighted L1 gap": (ns, vals, _fit_or_none(ns, vals))}
        made.append(
            loglog_gap_figure(
                report_dir / f"{prefix}_gap.png", series,
                "Parameter-density gap vs depth", ylabel="int e^{V/4} |p - p_N|",
            )
        )
    elif kind == "annuli":
        header, rows = _csv_rows(dir_path / "annuli_summary.csv")
        ns = [float(r[0]) for r in rows]
        means = [float(r[1]) for r in rows]
        stds = [float(r[2]) for r in rows]
        made.append(
            cv_risk_figure(
                report_dir / f"{prefix}_cv.png", ns, means, stds,
                "Cross-validated risk vs depth",
            )
        )
    return made


def _fit_or_none(ns, vals):
    from .rates import fit_slope

    try:
        return fit_slope(list(zip(ns, vals))).slope
    except ValueError:
        return None


def _headline(kind: str, dir_path: Path) -> str:
    try:
        if kind == "trajectory":
            _, rows = _csv_rows(dir_path / "trajectory_slopes.csv")
            return ";".join(f"{r[0]}_slope={r[1]}" for r in rows)
        if kind == "sde-couple":
            _, rows = _csv_rows(dir_path / "sde_slopes.csv")
            return ";".join(f"{r[0]}_slope={float(r[1]):.3f}" for r in rows)
        if kind == "fp":
            _, rows = _csv_rows(dir_path / "fp_slopes.csv")
            return ";".join(f"{r[0]}_slope={float(r[1]):.3f}" for r in rows)
        if kind == "annuli":
            _, rows = _csv_rows(dir_path / "annuli_summary.csv")
            return ";".join(f"N{r[0]}_ce={float(r[1]):.4f}" for r in rows)
    except (OSError, ValueError):
        return ""
    return ""


def run_report(root_dir) -> Path:
    """Aggregate every manifest under root_dir into summary + .dat + figures."""
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifests = sorted(p for p in root.rglob("manifest.json"))
    report = RunManifest("report", "aggregate")
    summary_rows = []
    for man_path in manifests:
        info = json.loads(man_path.read_text())
        dir_path = man_path.parent
        prefix = dir_path.name if dir_path != root else "root"
        kind = info.get("study_kind", "?")
        summary_rows.append(
            (
                str(dir_path.relative_to(root)),
                kind,
                info.get("tool_version", ""),
                info.get("created_utc", ""),
                len(info.get("outputs", [])),
                _headline(kind, dir_path),
            )
        )
        for out_name in info.get("outputs", []):
            src = dir_path / out_name
            if src.suffix == ".csv" and src.is_file():
                dst = root / f"{prefix}_{src.stem}.dat"
                _to_dat(src, dst)
                report.add(dst)
        try:
            for fig in _report_figures(kind, dir_path, prefix, root):
                report.add(fig)
        except (OSError, StopIteration):
            pass

    summary_path = root / "summary.csv"
    _write_csv(
        summary_path,
        ["directory", "study_kind", "tool_version", "created_utc", "n_outputs", "headline"],
        summary_rows,
    )
    report.add(summary_path)
    report_man = root / "report_manifest.json"
    payload = {
        "study_kind": "report",
        "tool_version": report.tool_version,
        "outputs": sorted(report.outputs),
        "n_studies": len(summary_rows),
    }
    write_atomic(report_man, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return summary_path
