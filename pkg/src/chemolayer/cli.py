"""Command-line entry point: ``chemolayer <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import defaultdict, deque
from pathlib import Path

import numpy as np

from . import experiment as ex
from .composer import assemble, compute_remainders, layer_histories
from .grid import SolverError
from .io import dump_field, load_field, load_grid, save_grid, write_csv, write_json
from .layers import PROFILES, LayerCoefficients, LayerState, step_layers
from .norms import ConormalWeight, FieldHistory, NormSpec, write_norm_rows, y_inf_norm, y_norm, z_norm
from .outer import BoundaryTraces, OuterState, extract_traces, step_outer

OUTER_FIELDS = ("n", "c", "omega", "u1", "u2")
TRACE_HEADER = ["t", "x"] + list(BoundaryTraces.FIELDS)


def _config(path) -> ex.ExperimentConfig:
    return ex.ExperimentConfig.from_json(path) if path else ex.ExperimentConfig()


def _dump_state(out: Path, st, tag: str):
    g = st.grid
    for k in OUTER_FIELDS:
        dump_field(out / f"{k}_{tag}.bin", getattr(st, k), g.Lx, g.Ymax, st.time, k)


def _dump_now(cfg, k) -> bool:
    return k == cfg.steps or (cfg.cadence > 0 and k % cfg.cadence == 0)


def _trace_rows(tr: BoundaryTraces, x: np.ndarray):
    cols = [getattr(tr, f) for f in BoundaryTraces.FIELDS]
    return [[repr(tr.time), repr(float(x[i]))] + [repr(float(c[i])) for c in cols]
            for i in range(x.size)]


def cmd_outer(args):
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.grid()
    save_grid(out / "grid.json", g)
    st = OuterState.from_arrays(g, *cfg.initial(g))
    rows = _trace_rows(extract_traces(st), g.x_nodes)
    _dump_state(out, st, "0000000")
    for k in range(1, cfg.steps + 1):
        st = step_outer(st, cfg.dt)
        rows += _trace_rows(extract_traces(st), g.x_nodes)
        if _dump_now(cfg, k):
            _dump_state(out, st, f"{k:07d}")
    _dump_state(out, st, "final")
    write_csv(out / "traces.csv", TRACE_HEADER, rows)
    print(f"outer: t={st.time:.4g}, mass={st.mass():.12g} -> {out}")


def _read_traces(path, Lx) -> list[BoundaryTraces]:
    by_t = defaultdict(list)
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        for r in rd:
            by_t[float(r["t"])].append(r)
    out = []
    for t in sorted(by_t):
        rs = sorted(by_t[t], key=lambda r: float(r["x"]))
        vals = {f: np.array([float(r[f]) for r in rs]) for f in BoundaryTraces.FIELDS}
        out.append(BoundaryTraces(t, Lx, **vals))
    return out


def _dump_layers(out: Path, ls: LayerState, tag: str):
    lg = ls.lgrid
    for k in PROFILES:
        dump_field(out / f"{k}_{tag}.bin", getattr(ls, k), ls.Lx, lg.Zmax, ls.time, k)


def cmd_layers(args):
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g, lg = cfg.grid(), cfg.layer_grid()
    save_grid(out / "grid.json", g, lg)
    if args.traces == "live":
        st = OuterState.from_arrays(g, *cfg.initial(g))

        def traces():
            nonlocal st
            for _ in range(cfg.steps):
                st = step_outer(st, cfg.dt)
                yield extract_traces(st)
        stream = traces()
    else:
        recorded = _read_traces(args.traces, g.Lx)[1:]  # first row is t = 0
        if recorded and abs(recorded[0].time - cfg.dt) > 1e-9:
            raise SystemExit("trace CSV spacing does not match dt")
        stream = iter(recorded[:cfg.steps])
    ls = LayerState.zeros(g.Nx, lg, g.Lx)
    ring = deque([ls], maxlen=3)
    fF = []
    x = g.x_nodes
    for k, tr in enumerate(stream, start=1):
        ls = step_layers(ls, LayerCoefficients.from_traces(tr, lg), cfg.dt)
        ring.append(ls)
        fF += [[repr(ls.time), repr(float(x[i])), repr(float(ls.f[i])), repr(float(ls.F[i]))]
               for i in range(x.size)]
        if _dump_now(cfg, k):
            _dump_layers(out, ls, f"{k:07d}")
    for i, snap in enumerate(ring):
        _dump_layers(out, snap, f"ring{i}")
    write_csv(out / "fF.csv", ["t", "x", "f", "F"], fF)
    print(f"layers: t={ls.time:.4g}, max |profile|={ls.max_abs():.3e} -> {out}")


def cmd_viscous(args):
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.grid()
    save_grid(out / "grid.json", g)

    def observe(k, vs):
        if _dump_now(cfg, k):
            _dump_state(out, vs, f"{k:07d}")

    _, vs = ex.run_viscous(cfg, g, args.epsilon, observer=observe)
    _dump_state(out, vs, "final")
    print(f"viscous: eps={args.epsilon}, t={vs.time:.4g}, mass={vs.mass():.12g} -> {out}")


def _load_outer(d: Path) -> OuterState:
    g, _ = load_grid(d / "grid.json")
    hdr, n = load_field(d / "n_final.bin")
    c = load_field(d / "c_final.bin")[1]
    w = load_field(d / "omega_final.bin")[1]
    return OuterState.from_arrays(g, n, c, w, hdr["time"])


def _load_layer_ring(d: Path) -> list[LayerState]:
    _, lg = load_grid(d / "grid.json")
    ring = []
    for i in range(3):
        if not (d / f"u1b1_ring{i}.bin").exists():
            continue
        vals, hdr = {}, None
        for k in PROFILES:
            hdr, vals[k] = load_field(d / f"{k}_ring{i}.bin")
        nx = vals["u1b1"].shape[0]
        ls = LayerState(lg, hdr["Lx"], **vals, f=np.zeros(nx), F=np.zeros(nx), time=hdr["time"])
        ring.append(ls)
    if not ring:
        raise SystemExit(f"no layer ring dumps in {d}")
    return ring


def cmd_compose(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outer = _load_outer(Path(args.outer))
    ring = _load_layer_ring(Path(args.layers))
    match = [ls for ls in ring if abs(ls.time - outer.time) <= 1e-9 * max(1.0, outer.time)]
    if not match:
        raise SystemExit(f"no layer snapshot at the outer time {outer.time}")
    layers = match[0]
    # slip datum from the stored u2b2 profile
    layers.f = layers.u2b2[:, 0].copy()
    g = outer.grid
    save_grid(out / "grid.json", g)
    ap = assemble(outer, layers, args.epsilon, g)
    for name in ("na", "ca", "u1a", "u2a"):
        fld = getattr(ap, name)
        dump_field(out / f"{name}.bin", fld.values, g.Lx, g.Ymax, ap.time, name)
    if len(ring) >= 2:
        hist = layer_histories(ring, names=("nb1", "nb2", "u2b2"))
        R = compute_remainders(outer, layers, args.epsilon, g, hist)
        for name, arr in R.arrays().items():
            dump_field(out / f"{name}.bin", arr, g.Lx, g.Ymax, R.time, name)
    else:
        print("compose: single layer snapshot, remainders skipped", file=sys.stderr)
    write_json(out / "wall.json", ap.wall_residuals())
    print(f"compose: eps={args.epsilon}, t={ap.time:.4g} -> {out}")


def cmd_converge(args):
    cfg = _config(args.config)
    out = Path(args.out)
    rep = ex.run_convergence(cfg, progress=lambda m: print(m, file=sys.stderr))
    path = ex.write_report(rep, out)
    for k, f in rep["fits"].items():
        if f["slope"] is not None and not k.startswith("ablation.") or k == "ablation.u_L2":
            s = f"{f['slope']:.3f} +- {f['ci95']:.3f}" if f["slope"] is not None else f["note"]
            print(f"{k:24s} slope {s}")
    print(json.dumps(rep["flags"], sort_keys=True))
    print(f"report -> {path}")


def cmd_fluidfree(args):
    cfg = _config(args.config)
    if args.config is None:
        cfg.family = "fluid_free"
    rep = ex.run_fluid_free_check(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "fluidfree.json", rep)
    for name, chk in rep["checks"].items():
        print(f"{name}: {chk['value']:.3e} (tol {chk['tol']:.0e}) "
              f"{'PASS' if chk['passed'] else 'FAIL'}")
    return 0 if rep["passed"] else 1


def cmd_norms(args):
    files = [Path(f) for f in args.fields]
    hdrs, vals = zip(*(load_field(f) for f in files))
    grid, lgrid = load_grid(args.grid or files[0].parent / "grid.json")
    times = [h["time"] for h in hdrs]
    spec = NormSpec(args.l, args.m, args.kind, args.s)
    if args.kind == "Z":
        if lgrid is None:
            raise SystemExit("Z norms need z nodes in grid.json")
        h = FieldHistory(np.stack(vals), times, lgrid, hdrs[0]["Lx"])
        value = z_norm(h, spec, args.delta)
    else:
        h = FieldHistory(np.stack(vals), times, grid)
        fn = y_norm if args.kind == "Y" else y_inf_norm
        value = fn(h, spec, ConormalWeight(args.delta))
    row = [times[-1], args.kind, args.l, args.m, args.s, value]
    if args.out:
        write_norm_rows(args.out, [row])
    print(f"{args.kind}^{{{args.l},{args.m}}}_s={args.s}: {value:.10g}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemolayer",
                                description="Boundary-layer expansion of chemotaxis-fluid flow")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("outer", help="run the inviscid outer solver")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_outer)

    s = sub.add_parser("layers", help="run the layer correctors")
    s.add_argument("--traces", default="live", help="traces.csv from 'outer', or 'live'")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_layers)

    s = sub.add_parser("viscous", help="run the full viscous solver")
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_viscous)

    s = sub.add_parser("compose", help="assemble the approximation and its remainders")
    s.add_argument("--outer", required=True)
    s.add_argument("--layers", required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_compose)

    s = sub.add_parser("converge", help="epsilon sweep with rate fits")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_converge)

    s = sub.add_parser("fluidfree", help="fluid-free degeneracy check")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_fluidfree)

    s = sub.add_parser("norms", help="conormal norm of dumped fields")
    s.add_argument("fields", nargs="+", help="consecutive equally spaced dumps")
    s.add_argument("--kind", choices=("Y", "Yinf", "Z"), default="Y")
    s.add_argument("--l", type=int, default=0)
    s.add_argument("--m", type=int, default=0)
    s.add_argument("--s", type=float, default=0.0)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--grid")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_norms)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.fn(args)
    except (SolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
