"""Experiment drivers: error-decay curves, interior audit, order/accuracy sweep, parity."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bloch, estimate, harness, plots, resolve, spline
from .dictionary import build_compressed, compress, generate_dictionary, simulate_params
from .pgrid import ParameterGrid, paper_axes

WINDOWS = {"T1": (0.0, 3000.0), "T2": (0.0, 700.0), "B1": (0.5, 1.5)}


@dataclass
class Setup:
    """Shared simulation settings for every experiment."""

    M: int = 200
    n_spins: int = 64
    seed: int = 0
    workers: int = 1
    L: int = 30
    box: ParameterGrid = field(default_factory=paper_axes)
    schedule_path: str | None = None

    def schedule(self) -> bloch.AcquisitionSchedule:
        if self.schedule_path:
            return bloch.read_schedule_csv(self.schedule_path)
        return bloch.jiang_style_schedule(self.M)

    def ensemble(self) -> bloch.SpinEnsemble:
        return bloch.make_ensemble(self.n_spins)

    def simulator(self):
        sched, ens, box, workers = self.schedule(), self.ensemble(), self.box, self.workers
        return lambda theta: simulate_params(box, theta, sched, ens, workers)


def _g(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _g(v) for v in r])


def _out(out_dir) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def resolution(setup: Setup, config: resolve.ResolutionConfig) -> resolve.ResolutionReport:
    return resolve.estimate_grid_resolution(setup.box, config, setup.simulator())


def write_resolution(report: resolve.ResolutionReport, out_dir, stem="resolution") -> None:
    out = _out(out_dir)
    rows = []
    for (axis, n), c in sorted(report.curves.items()):
        for j, (K, e) in enumerate(zip(c.counts, c.errors), start=1):
            rows.append((axis, n, j, int(K), e))
    write_csv(out / f"{stem}_curves.csv", ["axis", "n", "j", "K_j", "max_error"], rows)
    sel = [(axis, n, c.selected, c.floor) for (axis, n), c in sorted(report.curves.items())]
    write_csv(out / f"{stem}_selected.csv", ["axis", "n", "selected_K", "error_floor"], sel)
    for axis in report.axes:
        curves = []
        for n in report.config.orders:
            c = report.curve(axis, n)
            lab = f"n={n}: K={c.selected if c.reached else 'not reached'}"
            curves.append((lab, c.counts, c.errors))
        plots.svg_curves(curves, out / f"{stem}_{axis}.svg", title=f"edge error along {axis}",
                         xlabel="number of atoms K", ylabel="max midpoint error",
                         hlines=[("target", report.config.target)])


def fig1(setup: Setup, config: resolve.ResolutionConfig, out_dir) -> resolve.ResolutionReport:
    """Edge interpolation error against node count, per axis and order."""
    report = resolution(setup, config)
    write_resolution(report, out_dir, "fig1")
    return report


def sparse_model(setup: Setup, counts, order: int = 2, L: int | None = None):
    """Generate the dictionary on ``counts`` nodes and prefilter it.

    Returns ``(dictionary, model)``; with ``L`` the model lives in the
    compressed space and carries the basis.
    """
    grid = setup.box.with_counts(counts)
    d = generate_dictionary(grid, setup.schedule(), setup.ensemble(), setup.workers)
    if L:
        d = compress(d, L)
    model = spline.prefilter_coefficients(d.atoms, grid, order)
    model.basis = d.basis
    return d, model


def fig2(setup: Setup, config: resolve.ResolutionConfig, out_dir, samples: int = 1000,
         report: resolve.ResolutionReport | None = None) -> dict:
    """Interior audit of the dense (n=0) and sparse (n=2) dictionaries.

    The dense lattice is never materialized: its nearest-node interpolant is
    simulated on demand.
    """
    out = _out(out_dir)
    if report is None:
        report = resolution(setup, config)
    sim = setup.simulator()
    results = {}
    for n in (0, 2):
        counts = report.selected_counts(n)
        if counts is None:
            results[n] = None
            continue
        grid = setup.box.with_counts(counts)
        if n == 0:
            approx = resolve.nearest_node_approx(grid, sim)
        else:
            _, model = sparse_model(setup, counts, n)
            approx = model.evaluate
        res = resolve.interior_error_audit(approx, grid, sim, samples, config.alpha, setup.seed)
        results[n] = res
    rows = []
    for n, res in results.items():
        if res is None:
            continue
        for i in range(res.errors.size):
            rows.append((n, i, *res.params[i], res.errors[i]))
    write_csv(out / "fig2_samples.csv", ["n", "sample", "T1", "T2", "B1", "error"], rows)
    summ = []
    for n, res in results.items():
        counts = report.selected_counts(n)
        if res is None:
            summ.append((n, "NA", "NA", "NA", "NA", "NA"))
        else:
            summ.append((n, "x".join(map(str, counts)), res.rms, res.max, res.max / config.alpha,
                         res.exceed_fraction))
    write_csv(out / "fig2_summary.csv", ["n", "K", "rms", "max", "max_over_alpha",
                                         "exceed_fraction"], summ)
    curves = [(f"n={n}", np.arange(1, r.errors.size + 1), np.sort(r.errors))
              for n, r in results.items() if r is not None]
    plots.svg_curves(curves, out / "fig2_errors.svg", title="interior interpolation error",
                     xlabel="sample rank", ylabel="E_int", logx=False,
                     hlines=[("alpha", config.alpha)])
    return results


def supp_d(setup: Setup, out_dir, alphas=(5e-3, 5e-4, 5e-5), orders=(0, 1, 2, 3), J: int = 10,
           snr: float = 30.0, max_atoms: int = 200_000) -> dict:
    """Selected node counts over (n, alpha) and phantom maps where affordable."""
    out = _out(out_dir)
    config = resolve.ResolutionConfig(alpha=min(alphas), J=J, orders=tuple(orders))
    report = resolution(setup, config)
    write_resolution(report, out, "suppD")
    phantom = harness.synth_phantom("circles")
    sched, ens = setup.schedule(), setup.ensemble()
    clean = harness.phantom_signals(phantom, setup.box, sched, ens, setup.workers)
    noise = harness.NoiseModel(harness.sigma_for_snr(clean, snr), setup.seed)
    noisy = harness.add_noise(clean, noise)
    table = []
    results = {}
    for alpha in alphas:
        target = alpha / config.safety_factor
        for n in orders:
            ks = [resolve.select_count(report.curve(a, n).counts, report.curve(a, n).errors,
                                       target, config.interpolation) for a in setup.box.names]
            total = None if None in ks else int(np.prod(ks))
            row = [alpha, n] + ks + [total]
            t1 = t2 = None
            if total is not None and total <= max_atoms:
                if n == 0:
                    grid = setup.box.with_counts(ks)
                    d = compress(generate_dictionary(grid, sched, ens, setup.workers), setup.L)
                    res = harness.run_map(phantom, d, "match", signals=noisy,
                                          workers=setup.workers)
                else:
                    _, model = sparse_model(setup, ks, n, setup.L)
                    res = harness.run_map(phantom, model, "fit", signals=noisy,
                                          workers=setup.workers)
                t1 = float(np.median(res.report_t1.rmse_percent))
                t2 = float(np.median(res.report_t2.rmse_percent))
                tag = f"n{n}_a{alpha:g}"
                for p, name in enumerate(("T1", "T2")):
                    plots.emit_map(harness.to_image(res.estimates[:, p], phantom),
                                   out / f"suppD_{tag}_{name}.pgm", WINDOWS[name])
                results[(alpha, n)] = res
            table.append(row + [t1, t2])
    names = list(setup.box.names)
    write_csv(out / "suppD_table.csv", ["alpha", "n"] + [f"K_{a}" for a in names]
              + ["total", "median_rmse_T1_pct", "median_rmse_T2_pct"], table)
    return {"report": report, "table": table, "maps": results}


@dataclass
class ParityConfig:
    alpha: float = 0.07
    safety_factor: float = 2.0
    J: int = 10
    snr: float = 30.0
    voxels_per_roi: int = 500
    order: int = 2


def parity(setup: Setup, cfg: ParityConfig, out_dir) -> dict:
    """Dense-dictionary matching against sparse-dictionary fitting on a noisy phantom.

    Both dictionaries are sized for the same target error; CSV outputs are
    deterministic, wall times go to ``parity_timing.json``.
    """
    out = _out(out_dir)
    timing = {}
    rcfg = resolve.ResolutionConfig(alpha=cfg.alpha, J=cfg.J, orders=(0, cfg.order),
                                    safety_factor=cfg.safety_factor)
    t0 = time.perf_counter()
    report = resolution(setup, rcfg)
    timing["resolution"] = time.perf_counter() - t0
    write_resolution(report, out, "parity")
    dense_k = report.selected_counts(0)
    sparse_k = report.selected_counts(cfg.order)
    if dense_k is None or sparse_k is None:
        raise RuntimeError(f"target not reached within J={cfg.J}: {report.not_reached()}")
    sched, ens = setup.schedule(), setup.ensemble()

    t0 = time.perf_counter()
    dense = build_compressed(setup.box.with_counts(dense_k), sched, ens, setup.L, setup.workers)
    timing["dense_build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    _, model = sparse_model(setup, sparse_k, cfg.order, setup.L)
    timing["sparse_build"] = time.perf_counter() - t0

    phantom = harness.synth_phantom("rows", voxels_per_roi=cfg.voxels_per_roi)
    clean = harness.phantom_signals(phantom, setup.box, sched, ens, setup.workers)
    noise = harness.NoiseModel(harness.sigma_for_snr(clean, cfg.snr), setup.seed)
    noisy = harness.add_noise(clean, noise)
    res_m = harness.run_map(phantom, dense, "match", signals=noisy, workers=setup.workers)
    res_f = harness.run_map(phantom, model, "fit", signals=noisy, workers=setup.workers)
    timing["match"] = res_m.timings["estimate"]
    timing["fit"] = res_f.timings["estimate"]

    rows = []
    for i, roi in enumerate(res_m.report_t1.labels):
        rows.append((roi, res_m.report_t1.calibrated[i], res_m.report_t2.calibrated[i],
                     res_m.report_t1.rmse_percent[i], res_f.report_t1.rmse_percent[i],
                     res_m.report_t2.rmse_percent[i], res_f.report_t2.rmse_percent[i]))
    write_csv(out / "parity_roi.csv", ["roi", "T1_cal", "T2_cal", "T1_rmse_match_pct",
                                       "T1_rmse_fit_pct", "T2_rmse_match_pct",
                                       "T2_rmse_fit_pct"], rows)
    med = {
        "T1_match": float(np.median(res_m.report_t1.rmse_percent)),
        "T1_fit": float(np.median(res_f.report_t1.rmse_percent)),
        "T2_match": float(np.median(res_m.report_t2.rmse_percent)),
        "T2_fit": float(np.median(res_f.report_t2.rmse_percent)),
    }
    summary = [("dense_K", "x".join(map(str, dense_k))), ("sparse_K", "x".join(map(str, sparse_k))),
               ("dense_atoms", str(int(np.prod(dense_k)))),
               ("sparse_atoms", str(int(np.prod(sparse_k)))), ("sigma", _g(noise.sigma))]
    summary += [(f"median_{k}_pct", _g(v)) for k, v in med.items()]
    summary += [("T1_ratio", _g(med["T1_fit"] / med["T1_match"])),
                ("T2_ratio", _g(med["T2_fit"] / med["T2_match"]))]
    write_csv(out / "parity_summary.csv", ["key", "value"], summary)
    labels = phantom.labels[phantom.foreground]
    vox = []
    for i in range(labels.size):
        vox.append((i, labels[i], *res_m.estimates[i, :3], *res_f.estimates[i, :3],
                    abs(res_f.rho[i]), float(np.angle(res_f.rho[i])), res_f.residual[i],
                    res_f.iterations[i], int(res_f.converged[i])))
    write_csv(out / "parity_voxels.csv",
              ["voxel", "roi", "T1_match", "T2_match", "B1_match", "T1_fit", "T2_fit", "B1_fit",
               "abs_rho_fit", "arg_rho_fit", "residual_fit", "iters_fit", "converged_fit"], vox)
    (out / "parity_timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return {"match": res_m, "fit": res_f, "medians": med, "dense_K": dense_k,
            "sparse_K": sparse_k, "timing": timing, "dense": dense, "model": model,
            "config": asdict(cfg)}
