"""Command-line front door.

Subcommands mirror the library modules: ``meanfield`` (equilibrium data,
stability, contraction), ``canonical`` (constrained partition tables and
sweeps), ``minimize`` (the constrained minimizers), ``contours`` (labels
and contour extraction from a stored configuration), ``simulate`` (Monte
Carlo chains), and ``verify`` (the acceptance suite).  Every run writes
delimited data plus a JSON report with the full parameter echo, renders a
figure next to the data unless ``--no-plot``, and quarantines wall-clock
metadata to a sidecar so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar(outdir, argv):
    _write_json(
        Path(outdir) / "run_meta.json",
        {"argv": argv, "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S")},
    )


def _args_dict(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _outdir(args):
    out = args.out or os.environ.get("KACLAYER_OUT", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config_file(path):
    """Flat key = value lines; '#' comments; values parsed as JSON when
    possible, else kept as strings."""
    overrides = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"config line without '=': {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            overrides[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key.replace("-", "_")] = value
    return overrides


def _apply_config(args, parser):
    if getattr(args, "config", None):
        overrides = _load_config_file(args.config)
        defaults = {
            action.dest: action.default
            for action in parser._actions
            if action.dest != "help"
        }
        for key, value in overrides.items():
            if key not in defaults:
                raise SystemExit(f"unknown config key {key!r}")
            # flags given explicitly on the command line win
            if getattr(args, key) == defaults[key]:
                setattr(args, key, value)
    return args


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_meanfield(args):
    from . import meanfield, plots

    out = _outdir(args)
    eps_list = [float(v) for v in args.eps.split(",")]
    rows = []
    reports = []
    for eps in eps_list:
        rep = meanfield.solve_magnetization(eps, eps_max=args.eps_max)
        cd = meanfield.contraction_data(
            eps, c0=args.c0, grid_step=args.grid_step, m_eps=rep.m_eps,
            eps_max=args.eps_max,
        )
        record = rep.to_dict()
        record.update({"r": cd.r, "R": cd.R.tolist(), "c0": cd.c0,
                       "grid_step": cd.grid_step})
        if args.zeta:
            gap = meanfield.stability_gap(eps, args.zeta, eps_max=args.eps_max)
            record["stability_gap"] = gap.gap
            record["gap_over_zeta_sq"] = gap.gap_over_zeta_sq
        reports.append(record)
        rows.append([eps, rep.m_eps, rep.f_eq, rep.min_eigenvalue, cd.r])
    _write_json(out / "meanfield.json", {"reports": reports})
    _write_csv(out / "meanfield.csv",
               ["eps", "m_eps", "f_eq", "min_eigenvalue", "r"], rows)
    if args.plot:
        sweep = [{"eps": r[0], "m_eps": r[1]} for r in rows]
        if len(sweep) > 1:
            plots.plot_magnetization_sweep(sweep, out / "meanfield.png")
        else:
            rep = meanfield.solve_magnetization(eps_list[0], eps_max=args.eps_max)
            plots.plot_free_energy(rep, out / "meanfield.png")
    _sidecar(out, sys.argv[1:])
    print(f"wrote {out / 'meanfield.json'}")
    return 0


def cmd_canonical(args):
    from . import canonical, plots

    out = _outdir(args)
    n_list = [int(v) for v in args.n.split(",")]
    if args.local_limit:
        rows = canonical.local_limit_sweep(
            n_list, args.m1, args.m2, args.h1, args.h2, args.eps
        )
        _write_csv(
            out / "local_limit.csv",
            ["n", "prob", "prob_n", "prob_n32"],
            [[r["n"], r["prob"], r["prob_n"], r["prob_n32"]] for r in rows],
        )
        _write_json(out / "local_limit.json", {
            "params": {"m1": args.m1, "m2": args.m2, "h1": args.h1,
                       "h2": args.h2, "eps": args.eps},
            "rows": rows,
        })
        if args.plot:
            plots.plot_local_limit(rows, out / "local_limit.png")
        print(f"wrote {out / 'local_limit.csv'}")
        return 0
    report = canonical.ensemble_gap_sweep(n_list, args.m1, args.m2, args.eps)
    table = canonical.csv_rows(report)
    _write_csv(out / "sandwich.csv", table[0], table[1:])
    _write_json(out / "sandwich.json", report)
    if args.plot:
        plots.plot_sandwich(report["rows"], out / "sandwich.png")
    _sidecar(out, sys.argv[1:])
    print(f"wrote {out / 'sandwich.csv'}")
    return 0


def cmd_minimize(args):
    from . import functional, lattice, meanfield, plots
    from .regions import BoundaryField, Region, collar_boundary

    out = _outdir(args)
    rep_eq = meanfield.solve_magnetization(args.eps, eps_max=args.eps_max)
    m_eps = rep_eq.m_eps
    rng = np.random.default_rng(args.seed)

    if args.problem == "g-eps":
        problem = functional.PairProblem(
            args.lambda_i, args.lambda_ip, args.a_i, args.a_ip
        )
        contraction = meanfield.contraction_data(
            args.eps, m_eps=m_eps, eps_max=args.eps_max
        )
        sol = functional.minimize_pair(problem, args.eps, m_eps, contraction)
        payload = {
            "params": _args_dict(args) | {"m_eps": m_eps},
            "m_i": sol.m_i,
            "m_ip": sol.m_ip,
            "case": sol.case,
            "C": sol.C.tolist(),
            "deviation_bound": sol.deviation_bound.tolist(),
            "bound_ok": sol.bound_ok,
        }
        _write_json(out / "pair_minimizer.json", payload)
        print(f"wrote {out / 'pair_minimizer.json'}")
        _sidecar(out, sys.argv[1:])
        return 0

    kernel = lattice.build_kernel(args.gamma)
    params = lattice.ScaleParams(gamma=args.gamma, alpha=args.alpha,
                                 zeta_value=args.zeta)
    if args.boundary_file:
        boundary = BoundaryField.from_dict(
            json.loads(Path(args.boundary_file).read_text())
        )
    else:
        boundary = None

    if args.problem == "multicanonical":
        region = Region.two_layer_interval(0, params.ell_minus)
        if boundary is None:
            boundary = collar_boundary(
                region, kernel.reach,
                fn=lambda x, r: float(rng.uniform(m_eps - params.zeta,
                                                  m_eps + params.zeta)),
            )
        rep = functional.multicanonical_minimize(
            region, boundary, kernel, args.eps, (args.u1, args.u2)
        )
        payload = {
            "params": _args_dict(args),
            "constraint_residual": rep.constraint_residual,
            "max_deviation": rep.max_deviation,
            "max_dlambda": rep.max_dlambda,
            "objective": rep.objective,
            "profile": rep.profile.to_dict(),
        }
        _write_json(out / "multicanonical.json", payload)
        _write_csv(
            out / "multicanonical.csv",
            ["x", "row", "m"],
            list(zip(rep.profile.region.xs.tolist(),
                     rep.profile.region.rows.tolist(),
                     rep.profile.values.tolist())),
        )
        if args.plot:
            plots.plot_profile(rep.profile, out / "multicanonical.png", m_eps=args.u1)
        print(f"wrote {out / 'multicanonical.json'}")
        _sidecar(out, sys.argv[1:])
        return 0

    # strip
    rects = [(k, j) for k in range(args.rect_cols) for j in range(args.rect_rows)]
    region = Region.from_rectangles(rects, params.ell_plus, params.block_rows)
    if boundary is None:
        blocks = params.ell_minus
        boundary = collar_boundary(
            region, kernel.reach,
            fn=lambda x, r: m_eps + params.zeta * (1 if (x // blocks) % 2 == 0 else -1),
        )
    contraction = meanfield.contraction_data(args.eps, m_eps=m_eps,
                                             eps_max=args.eps_max)
    rep = functional.minimize_strip(
        region, boundary, kernel, args.eps, m_eps, params.zeta,
        contraction=contraction,
    )
    depth_table = {}
    for d, dev in zip(rep.depths.tolist(), np.abs(rep.profile.values - m_eps)):
        depth_table.setdefault(int(d), 0.0)
        depth_table[int(d)] = max(depth_table[int(d)], float(dev))
    payload = {
        "params": _args_dict(args),
        "m_eps": m_eps,
        "sweeps": rep.sweeps,
        "residual": rep.residual,
        "max_deviation": rep.max_deviation,
        "decay_ok": rep.decay_ok,
        "r": rep.r_used,
        "objective": rep.objective,
        "max_deviation_by_depth": depth_table,
    }
    _write_json(out / "strip.json", payload)
    _write_csv(
        out / "strip.csv",
        ["x", "row", "m", "depth"],
        list(zip(rep.profile.region.xs.tolist(),
                 rep.profile.region.rows.tolist(),
                 rep.profile.values.tolist(),
                 rep.depths.tolist())),
    )
    if args.plot:
        plots.plot_profile(rep.profile, out / "strip.png", m_eps=m_eps)
    print(f"wrote {out / 'strip.json'}")
    _sidecar(out, sys.argv[1:])
    return 0


def cmd_contours(args):
    from . import lattice, meanfield, plots

    out = _outdir(args)
    config = lattice.SpinConfig.from_bytes(Path(args.spins).read_bytes())
    params = lattice.ScaleParams(gamma=args.gamma, alpha=args.alpha,
                                 zeta_value=args.zeta)
    m_eps = meanfield.solve_magnetization(args.eps, eps_max=args.eps_max).m_eps
    labels = lattice.compute_labels(config, params, m_eps)
    contours = lattice.extract_contours(labels)
    payload = {
        "params": _args_dict(args),
        "m_eps": m_eps,
        "n_contours": len(contours),
        "contours": [c.to_dict() for c in contours],
    }
    _write_json(out / "contours.json", payload)
    _write_csv(
        out / "contours.csv",
        ["contour", "sp_size", "sign", "n_interiors"],
        [[i, c.size, c.sign, len(c.interiors)] for i, c in enumerate(contours)],
    )
    if args.plot:
        plots.plot_theta_map(labels, contours, out / "contours.png")
    _sidecar(out, sys.argv[1:])
    print(f"wrote {out / 'contours.json'}")
    return 0


def cmd_simulate(args):
    from . import lattice, mc, meanfield, plots

    out = _outdir(args)
    params = mc.PRESETS[args.preset] if args.preset else lattice.ScaleParams(
        gamma=args.gamma, alpha=args.alpha, a=args.a
    )
    kernel = lattice.build_kernel(params.gamma)
    m_eps = None
    if args.eps > 0 and args.track_labels:
        m_eps = meanfield.solve_magnetization(args.eps, eps_max=args.eps_max).m_eps
    streams = []
    names = []
    summaries = {}
    for nx in [int(v) for v in args.boxes.split(",")]:
        cfg = mc.ChainConfig(
            rect_cols=nx, rect_rows=args.rect_rows, params=params, eps=args.eps,
            boundary=args.boundary, seed=args.seed, sweeps=args.sweeps,
            burn_in=args.burn_in, sample_every=args.sample_every,
            dynamics=args.dynamics, m_eps=m_eps, track_labels=args.track_labels,
        )
        obs, sampler = mc.run_chain(cfg, kernel=kernel, return_sampler=True)
        tag = f"box{nx}"
        _write_csv(
            out / f"chain_{tag}.csv",
            ["sweep", "mean_spin", "block_mag", "n_contours", "max_contour"],
            obs.stream,
        )
        summaries[tag] = obs.to_dict()
        _write_json(out / f"checkpoint_{tag}.json",
                    sampler.checkpoint(sweep_index=args.sweeps))
        streams.append(obs.stream)
        names.append(tag)
    _write_json(out / "simulate.json", {
        "params": _args_dict(args),
        "summaries": summaries,
    })
    if args.plot:
        plots.plot_chain_traces(streams, out / "simulate.png", labels=names)
    _sidecar(out, sys.argv[1:])
    print(f"wrote {out / 'simulate.json'}")
    return 0


def cmd_verify(args):
    from . import acceptance

    selected = None
    if args.criteria:
        selected = [int(v) for v in args.criteria.split(",")]
    results = acceptance.run_all(selected=selected)
    failures = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} criterion {res.cid:2d}: {res.title} "
              f"({res.runtime:.1f}s)")
        if not res.passed:
            failures += 1
            print(f"     details: {res.details}")
    if args.out:
        out = _outdir(args)
        _write_json(out / "verify.json", {
            "results": [
                {"cid": r.cid, "title": r.title, "passed": r.passed,
                 "runtime": r.runtime, "details": r.details}
                for r in results
            ]
        })
    return 1 if failures else 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="kaclayer",
        description="Two-layer Kac-coupled Ising toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def common(p):
        p.add_argument("--out", default=None, help="output directory "
                       "(default: $KACLAYER_OUT or cwd)")
        p.add_argument("--config", default=None,
                       help="flat key = value config file; flags override")
        p.add_argument("--plot", dest="plot", action="store_true", default=True,
                       help="render figures next to the data (default)")
        p.add_argument("--no-plot", dest="plot", action="store_false")
        p.add_argument("--eps-max", type=float, default=1.0,
                       help="cap for the validated small-coupling regime")

    p = subparsers["meanfield"] = sub.add_parser(
        "meanfield", help="equilibrium magnetization, Hessians, "
        "stability gap, contraction data")
    common(p)
    p.add_argument("--eps", default="0.05", help="coupling or comma list")
    p.add_argument("--zeta", type=float, default=None,
                   help="also compute the stability gap outside U_zeta")
    p.add_argument("--c0", type=float, default=None)
    p.add_argument("--grid-step", type=float, default=None)
    p.set_defaults(func=cmd_meanfield)

    p = subparsers["canonical"] = sub.add_parser(
        "canonical", help="constrained partition tables, "
        "sandwich and local-limit sweeps")
    common(p)
    p.add_argument("--n", default="8,16,32,64,128,256,512")
    p.add_argument("--m1", type=float, default=0.0)
    p.add_argument("--m2", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--local-limit", action="store_true")
    p.add_argument("--h1", type=float, default=0.0)
    p.add_argument("--h2", type=float, default=0.0)
    p.set_defaults(func=cmd_canonical)

    p = subparsers["minimize"] = sub.add_parser(
        "minimize", help="constrained minimizers")
    common(p)
    p.add_argument("--problem", choices=["multicanonical", "strip", "g-eps"],
                   required=True)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=2.0**-6)
    p.add_argument("--alpha", type=float, default=1 / 3)
    p.add_argument("--zeta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--u1", type=float, default=None)
    p.add_argument("--u2", type=float, default=None)
    p.add_argument("--rect-cols", type=int, default=3)
    p.add_argument("--rect-rows", type=int, default=2)
    p.add_argument("--boundary-file", default=None,
                   help="JSON boundary field {row: {x: [...], m: [...]}}")
    p.add_argument("--lambda-i", type=float, default=0.0)
    p.add_argument("--lambda-ip", type=float, default=0.0)
    p.add_argument("--a-i", type=float, default=0.0)
    p.add_argument("--a-ip", type=float, default=0.0)
    p.set_defaults(func=cmd_minimize)

    p = subparsers["contours"] = sub.add_parser(
        "contours", help="labels and contours of a stored spin configuration")
    common(p)
    p.add_argument("--spins", required=True, help="bit-packed SpinConfig file")
    p.add_argument("--gamma", type=float, default=2.0**-6)
    p.add_argument("--alpha", type=float, default=1 / 3)
    p.add_argument("--zeta", type=float, default=0.1)
    p.add_argument("--eps", type=float, default=0.05)
    p.set_defaults(func=cmd_contours)

    p = subparsers["simulate"] = sub.add_parser(
        "simulate", help="Monte Carlo chains")
    common(p)
    p.add_argument("--preset", choices=["coarse", "fine"], default=None)
    p.add_argument("--gamma", type=float, default=2.0**-6)
    p.add_argument("--alpha", type=float, default=1 / 3)
    p.add_argument("--a", type=float, default=1 / 12)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--boxes", default="1", help="comma list of rectangle columns")
    p.add_argument("--rect-rows", type=int, default=1)
    p.add_argument("--boundary", choices=["plus", "minus"], default="plus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweeps", type=int, default=500)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--sample-every", type=int, default=1)
    p.add_argument("--dynamics", choices=["glauber", "metropolis"],
                   default="glauber")
    p.add_argument("--track-labels", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = subparsers["verify"] = sub.add_parser(
        "verify", help="run the acceptance suite")
    p.add_argument("--criteria", default=None,
                   help="comma list of criterion numbers (default: all)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    return parser, subparsers


def main(argv=None):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "config"):
        args = _apply_config(args, subparsers[args.command])
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
