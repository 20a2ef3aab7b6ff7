"""Command-line entry point: ``dictfit <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bloch, dictionary, estimate, experiments, fileio, harness, plots, resolve, spline
from .pgrid import ParameterGrid, paper_axes, parse_axis_line, read_grid_config

log = logging.getLogger("dictfit")


def _schedule(args) -> bloch.AcquisitionSchedule:
    if args.schedule:
        return bloch.read_schedule_csv(args.schedule, inversion_time=args.ti, echo_time=args.te,
                                       train_delay=args.td)
    s = bloch.jiang_style_schedule(args.M)
    return bloch.AcquisitionSchedule(s.flip_angles, s.repetition_times, args.ti, args.te, args.td)


def _ensemble(args) -> bloch.SpinEnsemble:
    return bloch.make_ensemble(args.spins)


def _grid(args) -> ParameterGrid:
    if getattr(args, "grid", None):
        return read_grid_config(args.grid)
    if getattr(args, "axis", None):
        return ParameterGrid([parse_axis_line("axis " + a) for a in args.axis])
    return paper_axes()


def _setup(args) -> experiments.Setup:
    return experiments.Setup(M=args.M, n_spins=args.spins, seed=args.seed, workers=args.threads,
                             L=args.L, box=_grid(args), schedule_path=args.schedule)


def _add_sim(p):
    p.add_argument("--schedule", help="CSV with header flip_deg,tr_ms (default: built-in train)")
    p.add_argument("--M", type=int, default=200, help="length of the built-in train")
    p.add_argument("--ti", type=float, default=bloch.DEFAULT_TI, help="inversion time [ms]")
    p.add_argument("--te", type=float, default=bloch.DEFAULT_TE, help="echo time [ms]")
    p.add_argument("--td", type=float, default=bloch.DEFAULT_TD, help="post-train delay [ms]")
    p.add_argument("--spins", type=int, default=bloch.DEFAULT_SPINS, help="isochromats")


def _add_grid(p):
    p.add_argument("--grid", help="grid config file with 'axis NAME log|linear MIN MAX K' lines")
    p.add_argument("--axis", action="append",
                   help="axis declaration 'NAME log|linear MIN MAX K' (repeatable)")


def cmd_gen_schedule(args):
    s = bloch.jiang_style_schedule(args.n)
    bloch.write_schedule_csv(s, args.out)


def cmd_build_dict(args):
    grid = _grid(args)
    d = dictionary.generate_dictionary(grid, _schedule(args), _ensemble(args), args.threads)
    if args.L:
        d = dictionary.compress(d, args.L)
    fileio.save_dictionary(d, args.out)
    log.info("wrote %d atoms to %s", grid.size, args.out)


def cmd_compress(args):
    d = fileio.load_dictionary(args.input)
    c = dictionary.compress(d, args.L or dictionary.DEFAULT_L)
    fileio.save_dictionary(c, args.out)
    print(f"energy_fraction,{c.basis.energy_fraction:.12g}")


def cmd_estimate_resolution(args):
    orders = tuple(int(o) for o in args.orders.split(","))
    cfg = resolve.ResolutionConfig(alpha=args.alpha, J=args.J, orders=orders,
                                   safety_factor=args.safety, interpolation=args.interp)
    report = experiments.resolution(_setup(args), cfg)
    experiments.write_resolution(report, args.out_dir, "resolution")
    for n in orders:
        ks = [report.curve(a, n).selected for a in report.axes]
        total = report.total_atoms(n)
        print(f"n={n}: K={ks} total={total if total is not None else 'not reached'}")


def cmd_audit(args):
    d = fileio.load_dictionary(args.dict)
    if d.compressed:
        raise SystemExit("audit needs an uncompressed dictionary")
    setup = _setup(args)
    setup.box = d.grid
    sim = setup.simulator()
    model = spline.prefilter_coefficients(d.atoms.astype(np.complex128), d.grid, args.order)
    res = resolve.interior_error_audit(model.evaluate, d.grid, sim, args.samples, args.alpha,
                                       args.seed)
    rows = [(i, *res.params[i], res.errors[i]) for i in range(res.errors.size)]
    experiments.write_csv(args.out, ["sample"] + list(d.grid.names) + ["error"], rows)
    print(f"rms,{res.rms:.6g}\nmax,{res.max:.6g}\nexceed_fraction,{res.exceed_fraction:.6g}")


def cmd_phantom(args):
    ph = harness.synth_phantom(args.layout, size=args.size, voxels_per_roi=args.voxels_per_roi)
    sched, ens = _schedule(args), _ensemble(args)
    sig = harness.phantom_signals(ph, paper_axes(), sched, ens, args.threads)
    if args.snr > 0:
        sig = harness.add_noise(sig, harness.NoiseModel(harness.sigma_for_snr(sig, args.snr),
                                                        args.seed))
    fileio.save_signals(sig, args.out)
    rows_, cols_ = np.nonzero(ph.foreground)
    fg = ph.foreground
    truth = [(i, r, c, ph.labels[r, c], ph.T1[r, c], ph.T2[r, c], ph.B1[r, c],
              abs(ph.rho[r, c]), float(np.angle(ph.rho[r, c])))
             for i, (r, c) in enumerate(zip(rows_, cols_))]
    experiments.write_csv(args.truth, ["voxel", "row", "col", "roi", "T1", "T2", "B1",
                                       "abs_rho", "arg_rho"], truth)
    print(f"{int(fg.sum())} voxels, canvas {ph.shape[0]}x{ph.shape[1]}")


def _write_estimates(path, names, theta, rho, resid, iters, conv):
    header = ["voxel"] + list(names) + ["abs_rho", "arg_rho", "residual", "iters", "converged"]
    rows = [(i, *theta[i], abs(rho[i]), float(np.angle(rho[i])), resid[i], int(iters[i]),
             int(conv[i])) for i in range(theta.shape[0])]
    experiments.write_csv(path, header, rows)


def _maps(args, names, theta):
    if not args.truth or not args.maps_prefix:
        return
    with open(args.truth) as fh:
        rows = list(csv.DictReader(fh))
    r = np.array([int(x["row"]) for x in rows])
    c = np.array([int(x["col"]) for x in rows])
    shape = (r.max() + 1, c.max() + 1)
    for p, name in enumerate(names):
        img = np.zeros(shape)
        img[r, c] = theta[:, p]
        window = experiments.WINDOWS.get(name, (float(theta[:, p].min()),
                                                float(theta[:, p].max()) + 1e-12))
        plots.emit_map(img, f"{args.maps_prefix}_{name}.pgm", window)


def cmd_match(args):
    d = fileio.load_dictionary(args.dict)
    sig = fileio.load_signals(args.signals)
    if d.compressed and sig.shape[1] != d.basis.L:
        sig = dictionary.project_signal(sig, d.basis)
    idx, rho, _, zero = estimate.match_many(sig, d, args.threads)
    theta = d.grid.grid_to_param(d.grid.unflat_index(idx).astype(np.float64))
    n = idx.size
    _write_estimates(args.out, d.grid.names, theta, rho, np.full(n, np.nan), np.zeros(n, int),
                     ~zero)
    _maps(args, d.grid.names, theta)


def cmd_fit(args):
    if args.coef:
        model = fileio.load_coefficients(args.coef)
    else:
        d = fileio.load_dictionary(args.dict)
        model = spline.prefilter_coefficients(d.atoms.astype(np.complex128), d.grid, args.order)
        model.basis = d.basis
        if args.save_coef:
            fileio.save_coefficients(model, args.save_coef, signal_length=d.signal_length,
                                     schedule_hash=d.metadata.get("schedule_hash"))
    sig = fileio.load_signals(args.signals).astype(np.complex128)
    if model.basis is not None and sig.shape[1] != model.basis.L:
        sig = dictionary.project_signal(sig, model.basis)
    opts = estimate.FitOptions(abs_decrease_tol=args.tol, max_iterations=args.max_iter,
                               multistart=args.multistart)
    est = estimate.fit_batch(sig, model, opts, args.threads)
    theta = np.array([e.theta_hat for e in est])
    _write_estimates(args.out, model.grid.names, theta, np.array([e.rho_hat for e in est]),
                     np.array([e.residual_norm for e in est]),
                     np.array([e.iterations for e in est]), np.array([e.converged for e in est]))
    _maps(args, model.grid.names, theta)


def cmd_experiment(args):
    setup = _setup(args)
    out = Path(args.out_dir)
    if args.name == "fig1":
        cfg = resolve.ResolutionConfig(alpha=args.alpha, J=args.J, safety_factor=args.safety)
        experiments.fig1(setup, cfg, out)
    elif args.name == "fig2":
        cfg = resolve.ResolutionConfig(alpha=args.alpha, J=args.J, orders=(0, 2),
                                       safety_factor=args.safety)
        res = experiments.fig2(setup, cfg, out, samples=args.samples)
        for n, r in res.items():
            if r is None:
                print(f"n={n}: target not reached within J={args.J}")
            else:
                print(f"n={n}: rms={r.rms:.3g} max/alpha={r.max / args.alpha:.3g} "
                      f"exceed={r.exceed_fraction:.3f}")
    elif args.name == "suppD":
        experiments.supp_d(setup, out, J=args.J)
    elif args.name == "parity":
        cfg = experiments.ParityConfig(alpha=args.alpha, safety_factor=args.safety, J=args.J,
                                       snr=args.snr, voxels_per_roi=args.voxels_per_roi,
                                       order=args.order)
        res = experiments.parity(setup, cfg, out)
        for k, v in res["medians"].items():
            print(f"median RMSE {k}: {v:.3f}%")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dictfit", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--alpha", type=float, default=None,
                   help="target interpolation error (default 5e-4; parity experiment 0.07)")
    p.add_argument("--order", type=int, default=2, help="B-spline order")
    p.add_argument("--L", type=int, default=0, help="SVD rank (0 keeps full length)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("gen-schedule", help="write the built-in flip-angle/TR train")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_schedule)

    s = sub.add_parser("build-dict", help="simulate a dictionary on a grid")
    _add_sim(s)
    _add_grid(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_dict)

    s = sub.add_parser("compress", help="truncated-SVD compression of a dictionary file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("estimate-resolution", help="size the grid from edge errors")
    _add_sim(s)
    _add_grid(s)
    s.add_argument("--J", type=int, default=10)
    s.add_argument("--orders", default="0,1,2,3")
    s.add_argument("--safety", type=float, default=2.0)
    s.add_argument("--interp", choices=("loglog", "linear"), default="loglog")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_estimate_resolution)

    s = sub.add_parser("audit", help="interior interpolation error of a dictionary")
    _add_sim(s)
    s.add_argument("--dict", required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("phantom", help="simulate phantom voxel signals")
    _add_sim(s)
    s.add_argument("--layout", choices=("circles", "rows", "empty"), default="circles")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--voxels-per-roi", type=int, default=500)
    s.add_argument("--snr", type=float, default=0.0, help="0 disables noise")
    s.add_argument("--out", required=True, help="signal file (QDFS)")
    s.add_argument("--truth", required=True, help="per-voxel ground truth CSV")
    s.set_defaults(func=cmd_phantom)

    for name, func in (("match", cmd_match), ("fit", cmd_fit)):
        s = sub.add_parser(name, help=f"{name} voxel signals")
        s.add_argument("--dict", required=name == "match")
        s.add_argument("--signals", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--truth", help="phantom truth CSV, enables map output")
        s.add_argument("--maps-prefix")
        if name == "fit":
            s.add_argument("--coef", help="load a QDFC coefficient cache instead of --dict")
            s.add_argument("--save-coef", help="write the prefiltered coefficients")
            s.add_argument("--tol", type=float, default=1e-5)
            s.add_argument("--max-iter", type=int, default=100)
            s.add_argument("--multistart", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("experiment", help="run a packaged experiment")
    s.add_argument("name", choices=("fig1", "fig2", "suppD", "parity"))
    _add_sim(s)
    s.add_argument("--J", type=int, default=10)
    s.add_argument("--safety", type=float, default=2.0)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--snr", type=float, default=30.0)
    s.add_argument("--voxels-per-roi", type=int, default=500)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_experiment, spins=64)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.cmd == "experiment" and args.L == 0:
        args.L = dictionary.DEFAULT_L
    if args.alpha is None:
        parity = args.cmd == "experiment" and args.name == "parity"
        args.alpha = experiments.ParityConfig.alpha if parity else 5e-4
    # one BLAS thread everywhere keeps results independent of --threads
    with threadpool_limits(1):
        args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
