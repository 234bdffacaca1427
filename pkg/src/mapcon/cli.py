"""Command-line entry point.

Exit codes::

    0  success
    1  I/O failure (unreadable input, unwritable output, missing ground truth with --strict)
    2  invalid flags
    3  non-finite loss during training (last good checkpoint is kept)
    4  model/input dimension mismatch
    5  gradient check failure
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_NONFINITE, EXIT_DIMS, EXIT_GRADCHECK = 0, 1, 2, 3, 4, 5
SEED_ENV = "MAPCON_SEED"


class FlagError(ValueError):
    pass


def _eval_seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise FlagError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    from .mesh_io import DEFAULT_EVAL_SEED
    return DEFAULT_EVAL_SEED


def read_config_file(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment. Keys may use - or _."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FlagError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


# -- gen-data -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .synthetic import make_dataset
    if args.n_ids < 2 or args.n_poses < 2:
        raise FlagError("--n-ids and --n-poses must be at least 2")
    if not 0.0 <= args.split <= 1.0:
        raise FlagError("--split must lie in [0, 1]")
    if args.noise < 0:
        raise FlagError("--noise must be non-negative")
    ds = make_dataset(args.n_ids, args.n_poses, args.seed, args.split, args.out,
                      segments=args.segments, rings=args.rings, sides=args.sides, noise=args.noise)
    print(f"wrote {len(ds.entries)} meshes ({len(ds.labelled)} labelled, "
          f"{len(ds.unlabelled)} unlabelled) to {args.out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def build_config(args):
    from .losses import LossWeights
    from .network import ModelDims
    from .trainer import TrainingConfig
    if args.dims_scale <= 0:
        raise FlagError("--dims-scale must be positive")
    weights = LossWeights(args.lambda_rec, args.lambda_edge, args.lambda_mesh_cc,
                          args.lambda_mesh_ss, args.lambda_point, args.margin)
    seeds = [args.seed if s is None else s for s in (args.seed_init, args.seed_shuffle, args.seed_reorder)]
    return TrainingConfig(
        mode=args.mode, epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr,
        weights=weights, epsilon=args.epsilon, iterations=args.sinkhorn_iters,
        dims=ModelDims.from_scale(args.dims_scale, disentangle=not args.no_disentangle),
        seed_init=seeds[0], seed_shuffle=seeds[1], seed_reorder=seeds[2],
        stage_switch_epoch=args.stage_switch_epoch, checkpoint_every=args.checkpoint_every,
        out_dir=args.out)


def cmd_train(args) -> int:
    from .losses import LossError
    from .synthetic import read_manifest
    from .trainer import TrainingAborted, TrainingError, train
    from .checkpoint import load_checkpoint
    try:
        config = build_config(args)
    except (TrainingError, LossError) as exc:
        raise FlagError(str(exc)) from None
    dataset = read_manifest(args.data)
    params = state = None
    if args.resume:
        params, state, _ = load_checkpoint(args.resume)
    for k, v in config.header().items():
        print(f"# {k}={v}")
    t0 = time.perf_counter()
    try:
        result = train(config, dataset, params, state)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        kept = getattr(exc, "checkpoints", [])
        print(f"last good checkpoint: {kept[-1] if kept else 'none'}", file=sys.stderr)
        return EXIT_NONFINITE
    last = result.log.records[-1] if result.log.records else None
    print(f"trained {len(result.log.records)} steps in {time.perf_counter() - t0:.1f}s")
    if last:
        print("final losses: " + ", ".join(f"{k}={last[k]:.6g}" for k in
                                             ("l_rec", "l_edge", "l_mesh_cc", "l_mesh_ss", "l_point", "total")))
    print(f"checkpoint: {result.checkpoints[-1]}")
    return EXIT_OK


# -- transfer -------------------------------------------------------------------

def _load_model(path, args):
    from .checkpoint import load_checkpoint
    from .network import ModelDims, NetworkError, SINKHORN_EPS, SINKHORN_ITERS, infer_dims
    params, _, extra = load_checkpoint(path)
    dims = infer_dims(params)
    if getattr(args, "dims_scale", None) is not None:
        want = ModelDims.from_scale(args.dims_scale, disentangle=not args.no_disentangle)
        if want != dims:
            raise NetworkError(f"checkpoint dims {dims} do not match requested {want}", "load")
    eps, iters = SINKHORN_EPS, SINKHORN_ITERS
    if "__sinkhorn" in extra:
        eps = float(f"{float(extra['__sinkhorn'][0]):.6g}")
        iters = int(round(float(extra["__sinkhorn"][1])))
    if args.epsilon is not None:
        eps = args.epsilon
    if args.sinkhorn_iters is not None:
        iters = args.sinkhorn_iters
    return params, dims, eps, iters


def _restore_order(points, perm):
    """Undo a vertex permutation so the output uses the identity mesh's own indexing."""
    return np.asarray(points)[perm.mapping]


def cmd_transfer(args) -> int:
    from .mesh_io import load_mesh, save_mesh
    from .trainer import transfer
    seed = _eval_seed(args.seed)
    params, dims, eps, iters = _load_model(args.checkpoint, args)
    pose = load_mesh(args.pose_mesh)
    ident = load_mesh(args.id_mesh)
    res, _, perm = transfer(params, pose, ident, dims, seed, eps, iters)
    out = ident.with_vertices(_restore_order(res.final.values, perm))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_mesh(out, args.out)
    print(f"wrote {args.out} ({out.n_vertices} vertices)")
    if args.emit_warped:
        stem, ext = os.path.splitext(args.out)
        wpath = f"{stem}_warped{ext}"
        save_mesh(ident.with_vertices(_restore_order(res.warped.values, perm)), wpath)
        print(f"wrote {wpath}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------

def read_pair_list(path) -> list:
    """CSV rows ``pair_id,pose_path,id_path,gt_path``; gt_path may be empty."""
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) not in (3, 4):
                raise FlagError(f"{path}:{lineno}: expected pair_id,pose,identity[,ground_truth]")
            gt = row[3] if len(row) == 4 and row[3] else None
            rows.append((row[0], os.path.join(base, row[1]), os.path.join(base, row[2]),
                         os.path.join(base, gt) if gt else None))
    return rows


def manifest_pairs(dataset, poses=None) -> list:
    """Every identity receives every pose from the next identity (sorted, cyclic).

    The identity input is that identity's first pose other than the target
    pose; the ground truth is the identity in the target pose.
    """
    by_id: dict = {}
    for e in dataset.entries:
        by_id.setdefault(e.identity_id, []).append(e)
    names = sorted(by_id)
    rows = []
    for k, b in enumerate(names):
        a = names[(k + 1) % len(names)]
        for src in sorted(by_id[a], key=lambda e: e.pose_id):
            if poses is not None and src.pose_id not in poses:
                continue
            ident = next((e for e in sorted(by_id[b], key=lambda e: e.pose_id)
                          if e.pose_id != src.pose_id), None)
            if ident is None:
                continue
            gt = dataset.lookup(b, src.pose_id)
            rows.append((f"{a}:{src.pose_id}->{b}", os.path.join(dataset.root, src.path),
                         os.path.join(dataset.root, ident.path),
                         os.path.join(dataset.root, gt.path) if gt else None))
    return rows


def cmd_eval(args) -> int:
    from .mesh_io import load_mesh, preprocess
    from .metrics import CSV_HEADER, evaluate_pair
    from .synthetic import read_manifest
    from .trainer import transfer
    seed = _eval_seed(args.seed)
    if (args.data is None) == (args.pairs is None):
        raise FlagError("give exactly one of --data or --pairs")
    if args.checkpoint is None and not args.oracle:
        raise FlagError("--checkpoint is required unless --oracle is set")
    poses = set(args.poses.split(",")) if args.poses else None
    rows = read_pair_list(args.pairs) if args.pairs else manifest_pairs(read_manifest(args.data), poses)
    if not rows:
        raise FlagError("no pairs to evaluate")
    model = None if args.oracle else _load_model(args.checkpoint, args)

    out_rows, reports, missing = [], [], []
    for pair_id, pose_path, id_path, gt_path in rows:
        if gt_path is None or not os.path.exists(gt_path):
            missing.append(pair_id)
            print(f"warning: pair {pair_id} has no ground truth; row flagged", file=sys.stderr)
            out_rows.append([pair_id, "nan", "nan", "nan", 0, "nan"])
            continue
        gt, _ = preprocess(load_mesh(gt_path), seed + 1)
        if model is None:
            pred = gt.vertices
        else:
            params, dims, eps, iters = model
            res, _, _ = transfer(params, load_mesh(pose_path), load_mesh(id_path), dims, seed, eps, iters)
            pred = res.final.values
        rep = evaluate_pair(pred, gt.vertices)
        reports.append(rep)
        out_rows.append(rep.row(pair_id))
    if args.strict and missing:
        print(f"error: {len(missing)} pair(s) lack ground truth: {', '.join(missing)}", file=sys.stderr)
        return EXIT_IO

    if reports:
        mean = [float(np.mean([float(r[c]) for r in out_rows if r[1] != "nan"])) for c in (1, 2, 3)]
        summary = ["mean"] + [f"{v:.6f}" for v in mean] + [len(reports), ""]
    else:
        summary = ["mean", "nan", "nan", "nan", 0, ""]
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(out_rows)
        w.writerow(summary)
    # timing column varies run to run; strip it with --no-timing for byte-stable files
    if args.no_timing:
        _blank_timing(args.out)
    print(f"evaluated {len(reports)} pair(s); mean PMD={summary[1]} (1e-4), CD={summary[2]} (1e-4), "
          f"EMD={summary[3]} (1e-3) -> {args.out}")
    return EXIT_OK


def _blank_timing(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for r in rows[1:]:
        r[-1] = ""
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# -- gradcheck ----------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .verification import run_checks
    if args.tol <= 0:
        raise FlagError("--tol must be positive")
    if args.n_seeds < 1:
        raise FlagError("--n-seeds must be at least 1")
    worst: dict = {}
    for s in range(args.seed, args.seed + args.n_seeds):
        for r in run_checks(args.which, args.tol, s):
            key = (r.group, r.name)
            worst[key] = max(worst.get(key, 0.0), r.max_rel_error)
    failed = []
    for (group, name), err in worst.items():
        ok = err <= args.tol
        print(f"{group:7s} {name:18s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradcheck failed (tol {args.tol:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"all {len(worst)} items within tol {args.tol:g} over {args.n_seeds} seed(s)")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def _model_flags(p, required=True):
    p.add_argument("--checkpoint", required=required)
    p.add_argument("--seed", type=int, default=None,
                   help=f"evaluation seed (default: ${SEED_ENV} or 9001)")
    p.add_argument("--epsilon", type=float, default=None, help="override Sinkhorn epsilon")
    p.add_argument("--sinkhorn-iters", type=int, default=None, help="override Sinkhorn iterations")
    p.add_argument("--dims-scale", type=float, default=None,
                   help="expected width scale; mismatch with the checkpoint exits 4")
    p.add_argument("--no-disentangle", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapcon", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic articulated-tube dataset")
    g.add_argument("--n-ids", type=int, default=4)
    g.add_argument("--n-poses", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", type=float, default=1.0, help="labelled fraction")
    g.add_argument("--out", "--out-dir", dest="out", required=True)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--segments", type=int, default=5)
    g.add_argument("--rings", type=int, default=6)
    g.add_argument("--sides", type=int, default=10)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value file; flags override it")
    t.add_argument("--mode", choices=("supervised", "unsupervised", "semi"), default="supervised")
    t.add_argument("--data", required=True, help="manifest.csv or its directory")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=2)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lambda-rec", type=float, default=1000.0)
    t.add_argument("--lambda-edge", type=float, default=0.5)
    t.add_argument("--lambda-mesh-cc", type=float, default=1.0)
    t.add_argument("--lambda-mesh-ss", type=float, default=1.0)
    t.add_argument("--lambda-point", type=float, default=1.0)
    t.add_argument("--margin", type=float, default=1.0)
    t.add_argument("--epsilon", type=float, default=0.05)
    t.add_argument("--sinkhorn-iters", type=int, default=30)
    t.add_argument("--dims-scale", type=float, default=1.0)
    t.add_argument("--no-disentangle", action="store_true",
                   help="feed all latent channels (not just identity) to refinement")
    t.add_argument("--seed", type=int, default=0, help="default for the three seeds below")
    t.add_argument("--seed-init", type=int, default=None)
    t.add_argument("--seed-shuffle", type=int, default=None)
    t.add_argument("--seed-reorder", type=int, default=None)
    t.add_argument("--stage-switch-epoch", type=int, default=None,
                   help="semi mode: labelled-only before this epoch, unlabelled-only after")
    t.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("transfer", help="apply a trained model to one pose/identity pair")
    _model_flags(tr)
    tr.add_argument("--pose-mesh", required=True)
    tr.add_argument("--id-mesh", required=True)
    tr.add_argument("--out", required=True, help=".obj or .ply")
    tr.add_argument("--emit-warped", action="store_true", help="also write the warped intermediate")
    tr.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="PMD/CD/EMD over evaluation pairs")
    _model_flags(e, required=False)
    e.add_argument("--data", help="manifest.csv or its directory")
    e.add_argument("--pairs", help="CSV pair list: pair_id,pose,identity,ground_truth")
    e.add_argument("--poses", help="comma-separated target pose ids (manifest mode)")
    e.add_argument("--out", required=True, help="output CSV")
    e.add_argument("--strict", action="store_true", help="missing ground truth is an error")
    e.add_argument("--oracle", action="store_true",
                   help="score the ground truth against itself (pipeline check)")
    e.add_argument("--no-timing", action="store_true", help="leave the seconds column empty")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every kernel and loss")
    c.add_argument("--which", choices=("losses", "ops", "all"), default="all")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-seeds", type=int, default=1)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def _apply_config(parser, argv):
    """Parse twice so that a --config file sits between defaults and flags."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    values = read_config_file(path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    for key, raw in values.items():
        if key not in known or key in ("config", "help"):
            raise FlagError(f"{path}: unknown key {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                val = action.type(raw)
            except ValueError:
                raise FlagError(f"{path}: bad value for {key}: {raw!r}") from None
        else:
            val = raw
        if action.choices is not None and val not in action.choices:
            raise FlagError(f"{path}: {key} must be one of {list(action.choices)}")
        sub.set_defaults(**{key: val})
        action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .losses import LossError
    from .mesh_io import MeshError
    from .network import NetworkError
    from .synthetic import SyntheticError
    from .trainer import TrainingError

    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:  # argparse
        return int(exc.code) if isinstance(exc.code, int) else EXIT_FLAGS
    except FlagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except NetworkError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMS
    except (OSError, CheckpointError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, SyntheticError, LossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS


if __name__ == "__main__":
    sys.exit(main())
