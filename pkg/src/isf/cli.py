"""Command line front end: generate, fit, expand, backbone, reconstruct, leaves, report."""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from isf import analysis, data, expand, fit, geometry
from isf.foliation import Foliation, load_foliations, save_foliations
from isf.polyalg import DimensionError, PolyMap
from isf.spectral import MAP, VECTOR_FIELD, SpectralError

# reference initial condition of the reconstruction experiment
DEFAULT_X0 = (1.1088e-4, 1.9023e-5, -0.0739, -0.0126)

NUMERICAL_ERRORS = (
    ArithmeticError,
    np.linalg.LinAlgError,
    SpectralError,
    fit.OptimizationError,
    fit.RankError,
    expand.PairingError,
)


class UsageError(Exception):
    pass


def _fmt(v):
    return format(float(v), ".17g")


def _load_model(args):
    if getattr(args, "model_file", None):
        return PolyMap.from_json(Path(args.model_file).read_text())
    if args.model == "shaw-pierre":
        return data.shaw_pierre_field(args.c, args.k0, args.kappa)
    raise UsageError(f"unknown model {args.model!r}")


def _add_model_args(p, required=False):
    p.add_argument("--model", default="shaw-pierre", choices=["shaw-pierre"])
    p.add_argument("--model-file", help="PolyMap JSON file overriding --model")
    p.add_argument("--c", type=float, default=0.003)
    p.add_argument("--k0", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=0.5)


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ISF_THREADS")
    return int(env) if env else None


def _manifest(out_path, record):
    folder = Path(out_path).resolve().parent if out_path else Path.cwd()
    folder.mkdir(parents=True, exist_ok=True)
    with open(folder / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(record, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o)}")


# ---------------------------------------------------------------- subcommands

def cmd_generate(args):
    G = _load_model(args)
    ds = data.generate_dataset(G, args.traj, args.points, args.dt, args.cube, args.seed,
                               None if args.scaling == "none" else args.scaling, args.h_int)
    data.write_dataset(args.out, ds)
    X, _ = ds.pairs()
    return {"outputs": [args.out], "seed": args.seed, "states": ds.n_states, "pairs": len(X),
            "max_norm": float(max(np.linalg.norm(t, axis=1).max() for t in ds.trajectories))}


def _table_row(label, train, test):
    cells = []
    for res in (train, test):
        for v in res:
            cells.append("-" if v is None else f"{v:.4e}")
    return f"{label} & " + " & ".join(cells)


def _table_header(nmodes):
    cols = [f"training E{j + 1}" for j in range(nmodes)] + [f"testing E{j + 1}" for j in range(nmodes)]
    return " & " + " & ".join(cols)


def cmd_fit(args):
    train = data.read_dataset(args.data, T=args.dt)
    test = data.read_dataset(args.test, T=args.dt) if args.test else None
    beta = "auto" if args.beta == "auto" else float(args.beta)
    fols, train_res, test_res = [], [], []
    for mode in args.modes:
        base = fit.FitConfig(alpha=args.order, sigma=args.sigma, beta=beta, N_r=args.nr, N_theta=args.ntheta,
                             r_max=args.rmax, penalty=args.penalty, max_iter=args.max_iter, gtol=args.gtol,
                             init_scale=args.init_scale, seed=args.seed)
        spec, cfg = fit.init_from_linear_fit(train, mode, base)
        f = fit.fit_isf(train, cfg, spec)
        f.meta["mode"] = mode
        train_res.append(f.meta["training_residual"])
        if test is not None:
            f.meta["testing_residual"] = fit.residual_metric(f, test)
        test_res.append(f.meta.get("testing_residual"))
        fols.append(f)
    label = f"DATA O({args.order}) sigma={args.sigma:g}"
    print(_table_header(len(fols)))
    print(_table_row(label, train_res, test_res))
    save_foliations(args.out, fols, {"residuals": {"label": label, "training": train_res, "testing": test_res}})
    return {"outputs": [args.out], "inputs": [args.data] + ([args.test] if args.test else []), "seed": args.seed,
            "residuals": {"label": label, "training": train_res, "testing": test_res},
            "status": [f.meta["status"] for f in fols]}


def cmd_expand(args):
    G = _load_model(args)
    kind = MAP if args.kind == "map" else VECTOR_FIELD
    fols = [expand.expand(G, m, args.order, kind=kind, tol=args.tol, policy=args.policy, T=args.dt)
            for m in args.modes]
    for m, f in zip(args.modes, fols):
        f.meta["mode"] = m
    save_foliations(args.out, fols)
    return {"outputs": [args.out]}


def _pick(fols, index):
    if not 0 <= index < len(fols):
        raise UsageError(f"foliation index {index} out of range (file holds {len(fols)})")
    return fols[index]


def cmd_backbone(args):
    fols, _ = load_foliations(args.foliation)
    f = _pick(fols, args.index)
    r = np.linspace(0.0, args.rmax, args.grid)
    if args.kind == "ssm":
        geom = geometry.composite_submersion(fols)
    elif args.kind == "isf":
        geom = geometry.leaf_chart(f.U, method=args.method)
    else:
        geom = None
    curve = analysis.backbone_curves(f, geom, r, j=args.index, N_theta=args.ntheta, T=args.dt)
    curve.to_csv(args.out)
    return {"outputs": [args.out], "inputs": [args.foliation], "rows": len(curve),
            "invalid": int((~curve.valid).sum())}


def cmd_reconstruct(args):
    fols, _ = load_foliations(args.foliation)
    if any(f.kind != "map" for f in fols):
        raise UsageError("reconstruction needs discrete-time (fitted) foliations")
    atlas = geometry.composite_submersion(fols)
    G = _load_model(args)
    x0 = np.array(args.x0, dtype=float)
    if len(x0) != G.n:
        raise UsageError(f"--x0 needs {G.n} values")
    T = args.dt if args.dt is not None else fols[0].T
    if args.model_kind == "vector_field":
        traj = data.integrate_sample(G, x0, T, args.steps, args.h_int)
    else:
        traj = [x0]
        for _ in range(args.steps):
            traj.append(G(traj[-1]))
        traj = np.array(traj)
    fw, bw = analysis.reconstruction_errors(atlas, traj, inverse=args.inverse)
    analysis.write_errors_csv(args.out, fw, bw)
    return {"outputs": [args.out], "inputs": [args.foliation], "condition": atlas.cond,
            "err_fw_max": float(np.nanmax(fw)), "err_bw_max": float(np.nanmax(bw))}


def cmd_leaves(args):
    fols, _ = load_foliations(args.foliation)
    f = _pick(fols, args.index)
    chart = geometry.leaf_chart(f.U, method=args.method)
    zs = np.linspace(-args.zmax, args.zmax, args.grid)
    ys = np.linspace(-args.ymax, args.ymax, args.grid)
    nu = f.nu
    m = f.n - nu
    Z, Y = [], []
    for a in zs:
        for b in ys:
            z = np.zeros(nu)
            z[0] = a
            y = np.zeros(m)
            if m:
                y[0] = b
            Z.append(z)
            Y.append(y)
    Z, Y = np.array(Z), np.array(Y)
    W, ok = geometry.leaf_eval_flags(chart, Z, Y)
    names = [f"z_{i + 1}" for i in range(nu)] + [f"y_{i + 1}" for i in range(m)]
    geometry.write_points_csv(args.out, np.hstack([Z, Y]), W, ok, names)
    return {"outputs": [args.out], "inputs": [args.foliation], "points": len(W), "failed": int((~ok).sum())}


def cmd_report(args):
    rows = []
    for path in args.manifests:
        p = Path(path)
        files = sorted(p.rglob("manifest.jsonl")) if p.is_dir() else [p]
        for fpath in files:
            for line in fpath.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("subcommand") == "fit" and rec.get("residuals"):
                    rows.append(rec["residuals"])
    nmodes = max((len(r["training"]) for r in rows), default=0)
    lines = [_table_header(nmodes)] + [_table_row(r["label"], r["training"], r["testing"]) for r in rows]
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return {"outputs": [args.out] if args.out else [], "runs": len(rows)}


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="isf", description=__doc__)
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (fallback: ISF_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a trajectory dataset")
    _add_model_args(g)
    g.add_argument("--traj", type=int, default=100)
    g.add_argument("--points", type=int, default=16)
    g.add_argument("--dt", type=float, default=0.8)
    g.add_argument("--cube", type=float, default=0.4)
    g.add_argument("--scaling", choices=["square", "inverse", "none"], default="square")
    g.add_argument("--h-int", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit two-dimensional foliations to a dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--test")
    f.add_argument("--dt", type=float, default=None, help="sampling period (default: dataset sidecar)")
    f.add_argument("--order", type=int, default=3)
    f.add_argument("--sigma", type=float, default=2.0)
    f.add_argument("--beta", default="auto")
    f.add_argument("--modes", type=int, nargs="+", default=[0, 1])
    f.add_argument("--penalty", choices=[fit.RESONANT_MESH, fit.LINEAR_NORM], default=fit.RESONANT_MESH)
    f.add_argument("--nr", type=int, default=10)
    f.add_argument("--ntheta", type=int, default=24)
    f.add_argument("--rmax", type=float, default=None)
    f.add_argument("--max-iter", type=int, default=20000)
    f.add_argument("--gtol", type=float, default=1e-8)
    f.add_argument("--init-scale", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("expand", help="series expansion of foliations of a polynomial model")
    _add_model_args(e)
    e.add_argument("--kind", choices=["vector_field", "map"], default="vector_field")
    e.add_argument("--order", type=int, default=5)
    e.add_argument("--modes", type=int, nargs="+", default=[0, 1])
    e.add_argument("--tol", type=float, default=0.1)
    e.add_argument("--policy", choices=["near", "never", "always"], default="near")
    e.add_argument("--dt", type=float, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_expand)

    b = sub.add_parser("backbone", help="backbone and damping curves")
    b.add_argument("--foliation", required=True)
    b.add_argument("--index", type=int, default=0)
    b.add_argument("--rmax", type=float, default=0.2)
    b.add_argument("--grid", type=int, default=50)
    b.add_argument("--kind", choices=["isf", "ssm", "plain"], default="isf")
    b.add_argument("--method", choices=["poly_iteration", "pointwise_newton"], default="poly_iteration")
    b.add_argument("--ntheta", type=int, default=360)
    b.add_argument("--dt", type=float, default=None)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_backbone)

    r = sub.add_parser("reconstruct", help="forward prediction and reconstruction errors")
    r.add_argument("--foliation", required=True)
    _add_model_args(r)
    r.add_argument("--model-kind", choices=["vector_field", "map"], default="vector_field")
    r.add_argument("--x0", type=float, nargs="+", default=list(DEFAULT_X0))
    r.add_argument("--steps", type=int, default=32)
    r.add_argument("--dt", type=float, default=None)
    r.add_argument("--h-int", type=float, default=None)
    r.add_argument("--inverse", choices=["iterative", "newton"], default="iterative")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    lv = sub.add_parser("leaves", help="sample leaves as a point cloud")
    lv.add_argument("--foliation", required=True)
    lv.add_argument("--index", type=int, default=0)
    lv.add_argument("--zmax", type=float, default=0.05)
    lv.add_argument("--ymax", type=float, default=0.05)
    lv.add_argument("--grid", type=int, default=10)
    lv.add_argument("--method", choices=["poly_iteration", "pointwise_newton"], default="poly_iteration")
    lv.add_argument("--out", required=True)
    lv.set_defaults(func=cmd_leaves)

    rp = sub.add_parser("report", help="residual table across fit runs")
    rp.add_argument("manifests", nargs="+", help="manifest.jsonl files or folders holding them")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads = _threads(args)
    start = time.time()
    try:
        if getattr(args, "out", None):
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with _thread_limit(threads):
            info = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"isf: error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"isf: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, DimensionError, KeyError) as exc:
        print(f"isf: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    config = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"subcommand": args.command, "config": config, "threads": threads,
              "wall_time": time.time() - start, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), **info}
    out = getattr(args, "out", None)
    _manifest(out, record)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
