"""Command-line driver: ``fstucker <command> [options]``.

Every command prints a human-readable report on stderr and a one-line JSON
summary on stdout.  Exit codes: 0 success, 1 computation failure, 2 I/O
error, 3 invalid parameters.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__, _accel
from .basis import BasisSpec
from .errors import DecodeError, DomainError, FSTuckerError, ParameterError
from .ingestion import (
    PointCloud,
    StructuredGrid,
    SyntheticField,
    interpolate_to_grid,
    read_cloud,
    subsample,
    write_csv,
    write_points,
)
from .model import assemble, deserialize, serialize
from .randls import (
    SketchConfig,
    build_design_rows,
    leverage_scores,
    mix,
    reestimate_core,
    self_convergence,
)
from .sthosvd import singular_value_decay, sthosvd
from .tensor import FTEN_MAGIC, read_tensor, write_tensor

log = logging.getLogger("fstucker")

EXIT_OK, EXIT_COMPUTE, EXIT_IO, EXIT_PARAM = 0, 1, 2, 3
_NOT_ECHOED = {"output", "config", "func", "verbose", "fits_csv"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARAM, f"{self.prog}: error: {message}\n")


def _ints(text):
    try:
        vals = [int(v) for v in text.replace("x", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _emit(summary):
    print(json.dumps(summary, sort_keys=True))


def _say(msg):
    print(msg, file=sys.stderr)


def _run_config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _is_tensor_file(path):
    with open(path, "rb") as fh:
        return fh.read(4) == FTEN_MAGIC


def _candidates(args):
    cands = []
    if args.basis_legendre_p is not None and args.basis_legendre_p >= 0:
        cands.append(BasisSpec.legendre(args.basis_legendre_p))
    if args.basis_wavelet_s is not None and args.basis_wavelet_s >= 0:
        cands.append(BasisSpec.wavelet(args.basis_wavelet_s, args.basis_wavelet_p))
    if not cands:
        raise ParameterError("at least one candidate basis is required")
    return cands


def _validation_error(model, points, values):
    pred = model.evaluate_batch(points)
    den = np.linalg.norm(values)
    return float(np.linalg.norm(pred - values) / den) if den > 0 else 0.0


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    try:
        params = json.loads(args.params)
        if not isinstance(params, dict):
            raise ValueError("not a JSON object")
        fld = SyntheticField(args.kind, len(args.shape), params, args.seed)
    except (ValueError, TypeError) as exc:
        raise ParameterError(f"bad --params: {exc}") from None
    summary = {"command": "synth", "kind": args.kind, "shape": args.shape, "seed": args.seed}
    if args.output:
        tensor, _ = fld.grid(args.shape)
        write_tensor(args.output, tensor)
        summary["tensor"] = args.output
        _say(f"wrote {args.kind} field on grid {args.shape} to {args.output}")
    if args.cloud:
        pc = fld.scatter(args.scatter, seed=args.seed + 1)
        if args.cloud.endswith(".csv"):
            write_csv(args.cloud, pc)
        else:
            write_points(args.cloud, pc)
        summary["cloud"] = args.cloud
        summary["points"] = len(pc)
        _say(f"wrote {len(pc)} scattered samples to {args.cloud}")
    if not args.output and not args.cloud:
        raise ParameterError("give --output and/or --cloud")
    _emit(summary)


def cmd_compress(args):
    rng = np.random.default_rng([args.seed, 1])
    cands = _candidates(args)
    meta = {}
    if _is_tensor_file(args.input):
        tensor = read_tensor(args.input)
        dom = args.domain or [0.0, 1.0]
        if len(dom) != 2:
            raise ParameterError("--domain takes two numbers for FTEN input")
        grid = StructuredGrid(tensor.shape, (tuple(dom),) * tensor.ndim)
        nodes_total = tensor.size
        nval = min(args.validation_points, nodes_total)
        vidx = np.sort(rng.choice(nodes_total, nval, replace=False))
        vpts = np.stack(
            [grid.axis(k)[i] for k, i in enumerate(np.unravel_index(vidx, tensor.shape, order="F"))],
            axis=1,
        )
        vvals = tensor.ravel(order="F")[vidx]
        original = nodes_total
        meta["input_kind"] = "tensor"
    else:
        pc = read_cloud(args.input)
        if args.grid is None:
            raise ParameterError("--grid is required for point-cloud input")
        sizes = args.grid if len(args.grid) == pc.d else args.grid * pc.d
        if len(sizes) != pc.d:
            raise ParameterError(f"--grid needs 1 or {pc.d} sizes")
        grid = StructuredGrid.covering(pc, sizes)
        nval = min(args.validation_points, len(pc))
        vidx = np.sort(rng.choice(len(pc), nval, replace=False))
        vpts, vvals = pc.points[vidx], pc.values[vidx]
        sub = subsample(pc, args.subsample_frac, seed=args.seed)
        tensor, stats = interpolate_to_grid(sub, grid, k=args.neighbours,
                                            degree=args.interp_degree, return_stats=True)
        original = len(pc)
        meta["input_kind"] = "cloud"
        meta["interpolation"] = stats
        meta["subsample_points"] = len(sub)
        _say(f"interpolated {len(sub)} of {len(pc)} samples onto grid {list(grid.sizes)}")

    dec = sthosvd(tensor, args.tucker_eps, order=args.mode_order)
    _say(f"ST-HOSVD ranks {list(dec.ranks)}, relative error {dec.achieved_error:.3e}")
    model = assemble(
        dec, grid.axes(), cands, residual_ceiling=args.residual_ceiling, threads=args.threads
    )
    model.metadata.update(meta)
    model.metadata["epsilon"] = args.tucker_eps
    model.metadata["original_points"] = int(original)
    model.metadata["run_config"] = _run_config(args)
    val_err = _validation_error(model, vpts, vvals)
    model.metadata["validation_error"] = val_err
    serialize(model, args.output)
    cost = model.storage_cost()
    ratio = model.compression_ratio(original)
    nnz = [[f.nnz for f in fs] for fs in model.modes]
    _say(f"per-function sparsity {nnz}")
    _say(f"storage {cost.coeff_count} coefficients, {cost.bytes} bytes (+{cost.index_bytes} index bytes)")
    _say(f"compression ratio {ratio:.1f}; validation error {val_err:.3e}")
    if args.fits_csv:
        _write_rows(args.fits_csv, model.fit_table())
    _emit(
        {
            "command": "compress",
            "ranks": list(model.ranks),
            "tucker_error": dec.achieved_error,
            "sparsity": nnz,
            "coeff_count": cost.coeff_count,
            "bytes": cost.bytes,
            "index_bytes": cost.index_bytes,
            "compression_ratio": ratio,
            "compression_ratio_with_index": model.compression_ratio(original, include_index=True),
            "validation_error": val_err,
            "flagged_fits": model.metadata["flagged_fits"],
            "output": args.output,
        }
    )


def cmd_reestimate(args):
    model = deserialize(args.model)
    pc = read_cloud(args.input)
    r = int(np.prod(model.ranks))
    s = args.sketch_s if args.sketch_s is not None else math.ceil(args.sketch_oversampling * r)
    if s <= r:
        raise ParameterError(f"--sketch-s must exceed the core size R={r}")
    cfg = SketchConfig(args.seed, args.working_subset or None, s, args.sketch_transform)
    new = reestimate_core(model, pc.points, pc.values, cfg, args.validation_frac)
    serialize(new, args.output)
    rep = new.metadata["reestimate"]
    _say(f"re-estimated {r} core entries from S={s} sketched rows ({args.sketch_transform})")
    if "validation_before" in rep:
        _say(f"validation residual {rep['validation_before']:.3e} -> {rep['validation_after']:.3e}")
    _emit({"command": "reestimate", **rep, "output": args.output})


def _read_coordinates(path, d):
    if path.endswith(".csv"):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        body = [r for r in rows[1:] if r]
        if not body:
            return np.empty((0, d))
        try:
            data = np.array([[float(v) for v in r] for r in body])
        except ValueError as exc:
            raise DecodeError(f"malformed point list: {exc}") from None
        if data.ndim != 2 or data.shape[1] < d:
            raise DecodeError(f"point list needs {d} coordinate columns")
        return data[:, :d]
    return read_cloud(path).points


def cmd_reconstruct(args):
    model = deserialize(args.model)
    if args.grid is not None:
        sizes = args.grid if len(args.grid) == model.d else args.grid * model.d
        if len(sizes) != model.d:
            raise ParameterError(f"--grid needs 1 or {model.d} sizes")
        grid = StructuredGrid(sizes, model.domains)
        t = model.evaluate_grid(grid.axes())
        write_tensor(args.output, t)
        _say(f"wrote reconstruction on grid {sizes} to {args.output}")
        _emit({"command": "reconstruct", "grid": sizes, "output": args.output})
        return
    if args.points is None:
        raise ParameterError("give --grid or --points")
    pts = _read_coordinates(args.points, model.d)
    vals = np.full(pts.shape[0], np.nan)
    ok = np.ones(pts.shape[0], dtype=bool)
    for k, (a, b) in enumerate(model.domains):
        slack = 1e-12 * (b - a)
        ok &= (pts[:, k] >= a - slack) & (pts[:, k] <= b + slack)
    if ok.any():
        vals[ok] = model.evaluate_batch(pts[ok])
    bad = np.nonzero(~ok)[0]
    for q in bad:
        _say(f"point {q} outside the model domain: {pts[q].tolist()}")
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{k + 1}" for k in range(model.d)] + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
    _emit(
        {
            "command": "reconstruct",
            "points": int(pts.shape[0]),
            "out_of_domain": bad.tolist(),
            "output": args.output,
        }
    )


def _parse_fixed(items, d):
    fixed = {}
    for item in items or []:
        key, _, val = item.partition("=")
        try:
            fixed[int(key)] = float(val)
        except ValueError:
            raise ParameterError(f"--fix expects MODE=VALUE, got {item!r}")
    for k in fixed:
        if not 0 <= k < d:
            raise ParameterError(f"--fix refers to missing mode {k}")
    return fixed


def write_pgm(path, image):
    """8-bit binary PGM of ``image`` (rows top to bottom), min-max normalized."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())


def cmd_slice(args):
    model = deserialize(args.model)
    free = args.free
    if len(free) != 2 or free[0] == free[1] or any(not 0 <= k < model.d for k in free):
        raise ParameterError(f"--free needs two distinct modes in [0, {model.d})")
    fixed = _parse_fixed(args.fix, model.d)
    missing = [k for k in range(model.d) if k not in free and k not in fixed]
    for k in missing:
        a, b = model.domains[k]
        fixed[k] = 0.5 * (a + b)
    if any(k in fixed for k in free):
        raise ParameterError("a free mode cannot also be fixed")
    res = args.resolution if len(args.resolution) == 2 else args.resolution * 2
    axes = []
    for k in range(model.d):
        if k in fixed:
            axes.append(np.array([fixed[k]]))
        else:
            a, b = model.domains[k]
            axes.append(np.linspace(a, b, res[free.index(k)]))
    vals = model.evaluate_grid(axes)
    img = np.squeeze(vals, axis=tuple(k for k in range(model.d) if k not in free))
    if free[0] > free[1]:
        img = img.T
    # first free mode along x (columns), second along y (rows, bottom up)
    picture = img.T[::-1]
    write_pgm(args.output, picture)
    csv_path = args.csv or os.path.splitext(args.output)[0] + ".csv"
    ax0, ax1 = axes[free[0]], axes[free[1]]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{free[0] + 1}", f"y{free[1] + 1}", "value"])
        for i, x0 in enumerate(ax0):
            for j, x1 in enumerate(ax1):
                w.writerow([repr(float(x0)), repr(float(x1)), repr(float(img[i, j]))])
    _say(f"wrote slice image {args.output} and values {csv_path}")
    _emit(
        {
            "command": "slice",
            "free": free,
            "fixed": {str(k): v for k, v in sorted(fixed.items())},
            "min": float(img.min()),
            "max": float(img.max()),
            "image": args.output,
            "csv": csv_path,
        }
    )


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow(r)


def cmd_diagnostics(args):
    model = deserialize(args.model)
    os.makedirs(args.out_dir, exist_ok=True)
    decay = singular_value_decay(model)
    files = {}
    path = os.path.join(args.out_dir, "decay.csv")
    _write_rows(path, [{"rank": i + 1, "abs_core": float(v)} for i, v in enumerate(decay)])
    files["decay"] = path
    path = os.path.join(args.out_dir, "fits.csv")
    _write_rows(path, model.fit_table())
    files["fits"] = path
    summary = {"command": "diagnostics", "core_entries": int(decay.size)}
    if args.input:
        pc = read_cloud(args.input)
        r = int(np.prod(model.ranks))
        rng = np.random.default_rng([args.seed, 2])
        qw = min(len(pc), max(args.leverage_rows, r + 1))
        idx = np.sort(rng.choice(len(pc), qw, replace=False))
        w = build_design_rows(model, pc.points[idx])
        signs = np.random.default_rng(args.seed).choice(np.array([-1.0, 1.0]), size=qw)
        mixed = mix(w, signs, args.sketch_transform)
        if args.sketch_transform == "fft":
            mixed = mixed[0] + 1j * mixed[1]
        before = leverage_scores(w)
        after = _complex_leverage(mixed)
        edges = np.linspace(0.0, max(before.max(), after.max()) * (1 + 1e-12), args.bins + 1)
        hb, _ = np.histogram(before, edges)
        ha, _ = np.histogram(after[: len(after)], edges)
        path = os.path.join(args.out_dir, "leverage_hist.csv")
        _write_rows(
            path,
            [
                {"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]),
                 "count_before": int(hb[i]), "count_after": int(ha[i])}
                for i in range(args.bins)
            ],
        )
        files["leverage_hist"] = path
        summary["leverage_rows"] = int(qw)
        summary["leverage_max_mean_before"] = float(before.max() / before.mean())
        summary["leverage_max_mean_after"] = float(after.max() / after.mean())
        s_values = args.s_values or [
            int(math.ceil(f * r)) for f in np.arange(1.2, 4.01, 0.2)
        ]
        pairs = []
        for s1 in s_values:
            s2 = s1 + max(1, int(math.ceil(args.s_step * r)))
            pairs.append((s1, s2))
        pairs = [p for p in pairs if p[1] <= len(pc)]
        rows = []
        flat = [s for p in pairs for s in p]
        kw = dict(seed=args.seed, transform=args.sketch_transform,
                  working_subset=args.working_subset or None)
        if pairs and all(a <= b for a, b in zip(flat, flat[1:])):
            # one shared sketch; entries 0, 2, 4, ... are the (S1, S2) pairs
            out = self_convergence(model, pc.points, pc.values, flat, **kw)[::2]
        else:
            out = [self_convergence(model, pc.points, pc.values, p, **kw)[0] for p in pairs]
        rows = [{"S1": s1, "S2": s2, "S1_over_R": s1 / r, "delta": delta}
                for s1, s2, delta in out]
        path = os.path.join(args.out_dir, "self_convergence.csv")
        _write_rows(path, rows)
        files["self_convergence"] = path
    summary["files"] = files
    _say("wrote " + ", ".join(files.values()))
    _emit(summary)


def _complex_leverage(m):
    umat, sv, _ = np.linalg.svd(m, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0])) if sv.size and sv[0] > 0 else 0
    return (np.abs(umat[:, :rank]) ** 2).sum(axis=1)


def cmd_info(args):
    model = deserialize(args.model)
    cost = model.storage_cost()
    info = {
        "command": "info",
        "d": model.d,
        "ranks": list(model.ranks),
        "domains": [list(dm) for dm in model.domains],
        "coeff_count": cost.coeff_count,
        "bytes": cost.bytes,
        "index_bytes": cost.index_bytes,
        "bases": [[f.basis.label() for f in fs] for fs in model.modes],
        "metadata": model.metadata,
    }
    orig = model.metadata.get("original_points")
    if orig:
        info["compression_ratio"] = model.compression_ratio(orig)
    _say(f"order {model.d}, ranks {list(model.ranks)}, {cost.coeff_count} coefficients")
    _emit(info)


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="fstucker", description="Functional sparse Tucker compression")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("synth", help="generate a synthetic field")
    common(sp)
    sp.add_argument("--kind", choices=["smooth", "flame-front", "multiscale"], default="smooth")
    sp.add_argument("--shape", type=_ints, default=[50, 50, 50])
    sp.add_argument("--params", default="{}", help="JSON dict of field parameters")
    sp.add_argument("-o", "--output", help="FTEN file for the gridded field")
    sp.add_argument("--cloud", help="point-cloud file (.csv or binary FPCL)")
    sp.add_argument("--scatter", type=int, default=100000, help="number of scattered samples")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("compress", help="compress a dataset into an FSTK model")
    common(sp)
    sp.add_argument("-i", "--input", required=True, help="point cloud (CSV/FPCL) or FTEN tensor")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--grid", type=_ints, help="interpolation grid sizes (point clouds)")
    sp.add_argument("--domain", type=_floats, help="physical interval of every mode (FTEN input)")
    sp.add_argument("--tucker-eps", type=float, default=1e-2)
    sp.add_argument("--mode-order", choices=["increasing", "decreasing-size"], default="increasing")
    sp.add_argument("--basis-legendre-p", type=int, default=40, help="Legendre degree; <0 disables")
    sp.add_argument("--basis-wavelet-s", type=int, default=5, help="wavelet resolution; <0 disables")
    sp.add_argument("--basis-wavelet-p", type=int, default=3, help="wavelet degree")
    sp.add_argument("--subsample-frac", type=float, default=0.1)
    sp.add_argument("--neighbours", type=int, default=None)
    sp.add_argument("--interp-degree", type=int, choices=(0, 1), default=1)
    sp.add_argument("--residual-ceiling", type=float, default=0.5)
    sp.add_argument("--validation-points", type=int, default=10000)
    sp.add_argument("--fits-csv", help="write per-function fit diagnostics here")
    sp.set_defaults(func=cmd_compress)

    sp = sub.add_parser("reestimate", help="re-estimate the core by randomized least squares")
    common(sp)
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-i", "--input", required=True, help="original point cloud")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--sketch-s", type=int, default=None, help="sampled rows S")
    sp.add_argument("--sketch-oversampling", type=float, default=2.5)
    sp.add_argument("--sketch-transform", choices=["dct", "wht", "fft"], default="dct")
    sp.add_argument("--working-subset", type=int, default=1 << 20)
    sp.add_argument("--validation-frac", type=float, default=0.1)
    sp.set_defaults(func=cmd_reestimate)

    sp = sub.add_parser("reconstruct", help="evaluate a model on a grid or point list")
    common(sp)
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--grid", type=_ints)
    sp.add_argument("--points", help="CSV (header + coordinate columns) or FPCL file")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("slice", help="render a 2-D slice as PGM + CSV")
    common(sp)
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-o", "--output", required=True, help="PGM image path")
    sp.add_argument("--csv")
    sp.add_argument("--free", type=_ints, default=[0, 1], help="two free modes")
    sp.add_argument("--fix", action="append", help="MODE=VALUE for a fixed mode (repeatable)")
    sp.add_argument("--resolution", type=_ints, default=[200])
    sp.set_defaults(func=cmd_slice)

    sp = sub.add_parser("diagnostics", help="decay, leverage and self-convergence CSVs")
    common(sp)
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-i", "--input", help="original point cloud (enables sketch diagnostics)")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--sketch-transform", choices=["dct", "wht", "fft"], default="dct")
    sp.add_argument("--leverage-rows", type=int, default=4096)
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--s-values", type=_ints)
    sp.add_argument("--s-step", type=float, default=0.05, help="S_2 - S_1 as a multiple of R")
    sp.add_argument("--working-subset", type=int, default=1 << 20)
    sp.set_defaults(func=cmd_diagnostics)

    sp = sub.add_parser("info", help="print model metadata")
    common(sp)
    sp.add_argument("-m", "--model", required=True)
    sp.set_defaults(func=cmd_info)
    return p


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config``; explicit flags win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        cfg = json.load(fh)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(cfg) - known
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:
            # argparse reports bad usage (and --help) by exiting
            return exc.code
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        _accel.set_threads(args.threads)
        args.func(args)
    except (ParameterError, DomainError) as exc:
        _say(f"error: {exc}")
        return EXIT_PARAM
    except (OSError, DecodeError, json.JSONDecodeError) as exc:
        _say(f"I/O error: {exc}")
        return EXIT_IO
    except (FSTuckerError, np.linalg.LinAlgError, ArithmeticError) as exc:
        _say(f"computation failed: {exc}")
        return EXIT_COMPUTE
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
