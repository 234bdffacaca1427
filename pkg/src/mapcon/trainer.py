"""Supervised, unsupervised and semi-supervised training loops.

One iteration optimises either the labelled objective (a triple
``pose A1, identity B2, ground truth B1``) or the unlabelled objective
(``A1, A2`` sharing an identity plus an identity input ``B3``). A batch is a
list of independent triples whose losses are averaged.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .mesh_io import Mesh, preprocess
from .network import (SINKHORN_EPS, SINKHORN_ITERS, ModelDims, check_params, feature_extract,
                      generate, init_params)
from .synthetic import Dataset, ManifestEntry
from .tensor_core import AdamState, Tape, Tensor, TensorError, adam_step, backward, ops

MODES = ("supervised", "unsupervised", "semi")
LOG_COLUMNS = ("epoch", "iter", "mode", "lr", "l_rec", "l_edge", "l_mesh_cc", "l_mesh_ss",
               "l_point", "total")
COMPONENTS = LOG_COLUMNS[4:]

# rng streams for schedule sampling
_LABELLED, _UNLABELLED = 0, 1


class TrainingError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """A loss came out non-finite; ``record`` holds the offending values."""

    def __init__(self, record: dict):
        bad = [k for k in COMPONENTS if k in record and not np.isfinite(record[k])]
        super().__init__(f"non-finite loss at epoch {record.get('epoch')} iter "
                         f"{record.get('iter')}: {', '.join(bad)} ({record})")
        self.record = record


@dataclass(frozen=True)
class TrainingConfig:
    mode: str = "supervised"
    epochs: int = 200
    batch_size: int = 2
    lr0: float = 1e-4
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    epsilon: float = SINKHORN_EPS
    iterations: int = SINKHORN_ITERS
    dims: ModelDims = field(default_factory=ModelDims)
    seed_init: int = 0
    seed_shuffle: int = 0
    seed_reorder: int = 0
    stage_switch_epoch: Optional[int] = None
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainingError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch size must be >= 1")
        if not self.lr0 > 0:
            raise TrainingError("lr0 must be positive")
        if self.iterations < 1 or not self.epsilon > 0:
            raise TrainingError("sinkhorn needs epsilon > 0 and at least one iteration")

    def header(self) -> dict:
        w = self.weights
        return {"mode": self.mode, "epochs": self.epochs, "batch": self.batch_size,
                "lr": self.lr0, "lambda_rec": w.rec, "lambda_edge": w.edge,
                "lambda_mesh_cc": w.mesh_cc, "lambda_mesh_ss": w.mesh_ss,
                "lambda_point": w.point, "margin": w.margin, "epsilon": self.epsilon,
                "sinkhorn_iters": self.iterations, "disentangle": int(self.dims.disentangle),
                "seed_init": self.seed_init, "seed_shuffle": self.seed_shuffle,
                "seed_reorder": self.seed_reorder,
                "stage_switch_epoch": self.stage_switch_epoch}


def lr_at(step: float, config: TrainingConfig, steps_per_epoch: int = 1) -> float:
    """Constant for the first half of training, then linear down to 0."""
    e = step / steps_per_epoch
    half = config.epochs / 2.0
    if e < half:
        return config.lr0
    return config.lr0 * max(0.0, (config.epochs - e) / (config.epochs - half))


# -- data access --------------------------------------------------------------

class MeshBank:
    """Cached mesh loader that counts every read, split by role.

    Ground-truth reads go through :meth:`ground_truth` only, which refuses
    unlabelled entries; the counters make mode purity testable.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict = {}
        self.input_reads = 0
        self.gt_reads = 0

    def _load(self, entry: ManifestEntry) -> Mesh:
        m = self._cache.get(entry)
        if m is None:
            m = self._cache[entry] = self.dataset.mesh(entry)
        return m

    def input(self, entry: ManifestEntry) -> Mesh:
        self.input_reads += 1
        return self._load(entry)

    def ground_truth(self, entry: ManifestEntry) -> Mesh:
        if not entry.labelled:
            raise TrainingError(f"ground truth requested for unlabelled mesh {entry.path}")
        self.gt_reads += 1
        return self._load(entry)


# -- schedules ------------------------------------------------------------------

@dataclass(frozen=True)
class WorkItem:
    """One triple. Labelled: (pose A1, identity B2, truth B1); unlabelled: (A1, A2, B3).

    ``seeds`` are the vertex-reordering seeds: the first for the pose-side
    meshes, the second for the identity-side meshes.
    """
    tag: str
    entries: tuple
    seeds: tuple
    case: Optional[int] = None


@dataclass(frozen=True)
class Iteration:
    epoch: int
    index: int  # within the epoch
    tag: str
    items: tuple
    case: Optional[int] = None


def _rngs(config, epoch, stream):
    return (np.random.default_rng([config.seed_shuffle, epoch, stream]),
            np.random.default_rng([config.seed_reorder, epoch, stream]))


def _seeds(rng):
    return tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=2))


def _by_identity(entries):
    out: dict = {}
    for e in entries:
        out.setdefault(e.identity_id, []).append(e)
    return out


def labelled_items(entries: list, config: TrainingConfig, epoch: int) -> list:
    """One item per labelled mesh, taken as ground truth B1, in shuffled order."""
    rng, srng = _rngs(config, epoch, _LABELLED)
    ids = _by_identity(entries)
    by_pose: dict = {}
    for e in entries:
        by_pose.setdefault(e.pose_id, []).append(e)
    items = []
    for k in rng.permutation(len(entries)):
        gt = entries[k]
        pose_src = [e for e in by_pose[gt.pose_id] if e.identity_id != gt.identity_id]
        id_src = [e for e in ids[gt.identity_id] if e.pose_id != gt.pose_id]
        if not pose_src or not id_src:
            raise TrainingError(f"no valid triple for ground truth {gt.path}: need another "
                                "identity in the same pose and another pose of this identity")
        a1 = pose_src[rng.integers(len(pose_src))]
        b2 = id_src[rng.integers(len(id_src))]
        items.append(WorkItem("L", (a1, b2, gt), _seeds(srng)))
    return items


def _unlabelled_item(rng, srng, pair_pool, id_pool, case, anchor=None) -> WorkItem:
    pairs = _by_identity(pair_pool)
    if anchor is None:
        anchors = [e for e in pair_pool if len(pairs[e.identity_id]) > 1]
        if not anchors:
            raise TrainingError("no identity has two poses in the pair pool")
        anchor = anchors[rng.integers(len(anchors))]
    same = [e for e in pairs[anchor.identity_id] if e.pose_id != anchor.pose_id]
    other = [e for e in id_pool if e.identity_id != anchor.identity_id]
    if not same or not other:
        raise TrainingError(f"cannot form an unlabelled triple around {anchor.path}")
    a2 = same[rng.integers(len(same))]
    b3 = other[rng.integers(len(other))]
    return WorkItem("U", (anchor, a2, b3), _seeds(srng), case)


def unlabelled_items(entries: list, config: TrainingConfig, epoch: int) -> list:
    """One item per mesh taken as the anchor A1, in shuffled order."""
    rng, srng = _rngs(config, epoch, _UNLABELLED)
    return [_unlabelled_item(rng, srng, entries, entries, None, entries[k])
            for k in rng.permutation(len(entries))]


def _batches(items, size):
    return [tuple(items[i:i + size]) for i in range(0, len(items), size)]


# sampling cases for unlabelled iterations: (pair pool, identity pool)
SEMI_CASES = (("U", "L"), ("L", "U"), ("U", "U"))


def epoch_schedule(dataset: Dataset, config: TrainingConfig, epoch: int) -> list:
    """All iterations of one epoch, in order."""
    mode = config.mode
    if mode == "supervised":
        items = labelled_items(dataset.labelled, config, epoch)
        return [Iteration(epoch, i, "L", b) for i, b in enumerate(_batches(items, config.batch_size))]
    if mode == "unsupervised":
        items = unlabelled_items(dataset.entries, config, epoch)
        return [Iteration(epoch, i, "U", b) for i, b in enumerate(_batches(items, config.batch_size))]

    lab, unl = dataset.labelled, dataset.unlabelled
    if not lab:
        raise TrainingError("semi-supervised mode needs a non-empty labelled partition")
    l_batches = _batches(labelled_items(lab, config, epoch), config.batch_size)
    if not unl:
        return [Iteration(epoch, i, "L", b) for i, b in enumerate(l_batches)]
    pools = {"L": lab, "U": unl}
    rng, srng = _rngs(config, epoch, _UNLABELLED)

    def u_iteration(index, case):
        pair_pool, id_pool = (pools[k] for k in SEMI_CASES[case])
        items = tuple(_unlabelled_item(rng, srng, pair_pool, id_pool, case)
                      for _ in range(config.batch_size))
        return Iteration(epoch, index, "U", items, case)

    if config.stage_switch_epoch is not None:
        if epoch < config.stage_switch_epoch:
            return [Iteration(epoch, i, "L", b) for i, b in enumerate(l_batches)]
        n_u = len(unl)
        return [u_iteration(i, 2) for i in range((n_u + config.batch_size - 1) // config.batch_size)]

    out = []
    n_u = epoch * len(l_batches)  # unlabelled iterations before this epoch
    for b in l_batches:
        out.append(Iteration(epoch, len(out), "L", b))
        out.append(u_iteration(len(out), n_u % 3))
        n_u += 1
    return out


def semi_schedule(dataset: Dataset, config: TrainingConfig, start_epoch: int = 0) -> Iterator[Iteration]:
    """Iterations across every epoch of the configured run."""
    for epoch in range(start_epoch, config.epochs):
        yield from epoch_schedule(dataset, config, epoch)


# -- per-sample objectives -----------------------------------------------------

@dataclass
class LabelledSample:
    pose: np.ndarray
    ident: np.ndarray
    gt: np.ndarray
    edges: np.ndarray


@dataclass
class UnlabelledSample:
    a1: np.ndarray
    a2: np.ndarray
    b3: np.ndarray
    edges: np.ndarray  # of A2 (and A1, which shares its order)


def prepare(item: WorkItem, bank: MeshBank):
    """Reorder and centre the meshes of one triple.

    Meshes on the same side of the triple share a permutation so they stay
    aligned; the two sides are reordered independently.
    """
    s_pose, s_id = item.seeds
    if item.tag == "L":
        a1, b2, b1 = item.entries
        pose, _ = preprocess(bank.input(a1), s_pose)
        ident, _ = preprocess(bank.input(b2), s_id)
        gt, _ = preprocess(bank.ground_truth(b1), s_id)
        return LabelledSample(pose.vertices, ident.vertices, gt.vertices, ident.edges)
    a1, a2, b3 = item.entries
    m1, _ = preprocess(bank.input(a1), s_pose)
    m2, _ = preprocess(bank.input(a2), s_pose)
    m3, _ = preprocess(bank.input(b3), s_id)
    return UnlabelledSample(m1.vertices, m2.vertices, m3.vertices, m2.edges)


def _zero():
    return Tensor._wrap(np.zeros((), dtype=np.float32))


def _aux(w: L.LossWeights):
    return w.mesh_ss > 0 or w.point > 0 or w.mesh_cc > 0


def labelled_objective(params, sample: LabelledSample, config: TrainingConfig):
    """Returns (total, components, generate result)."""
    w, dims = config.weights, config.dims
    res = generate(params, sample.pose, sample.ident, dims, config.epsilon, config.iterations)
    rec = L.rec_loss(res.final, sample.gt)
    edge = L.edge_loss(res.final, sample.ident, sample.edges)
    l_s = ops.add(ops.mul_scalar(rec, w.rec), ops.mul_scalar(edge, w.edge))
    mesh_ss = point = None
    if w.mesh_ss > 0 or w.point > 0:
        f_w = feature_extract(params, res.warped, dims)
        # (u, v, w) = (identity input, pose input, warped output)
        mesh_ss = L.mesh_ss_loss(f_w.pose(), res.feat_pose.pose(), res.feat_id.pose(),
                                 f_w.identity(), res.feat_id.identity(), res.feat_pose.identity(),
                                 res.binary, w.margin)
        point = L.point_triplet(f_w.values, res.feat_id.values, w.margin)
    total = L.labelled_total(l_s, mesh_ss, point, w)
    comps = {"l_rec": rec, "l_edge": edge, "l_mesh_cc": None, "l_mesh_ss": mesh_ss,
             "l_point": point, "total": total}
    return total, comps, res


@dataclass
class UnlabelledPasses:
    cc: object
    sc1: object
    sc2: object
    proxy: Tensor  # stop-gradient copy of the first SC output


def unlabelled_objective(params, sample: UnlabelledSample, config: TrainingConfig,
                         proxy_values: Optional[np.ndarray] = None):
    """Cross-consistency pass plus both self-consistency passes.

    ``proxy_values`` replaces the (stop-gradient) first-pass output fed to the
    second pass; used to probe the gradient boundary.
    Returns (total, components, UnlabelledPasses).
    """
    w, dims = config.weights, config.dims
    eps, K = config.epsilon, config.iterations
    f1 = feature_extract(params, sample.a1, dims)
    f2 = feature_extract(params, sample.a2, dims)
    f3 = feature_extract(params, sample.b3, dims)
    cc = generate(params, sample.a1, sample.a2, dims, eps, K, feat_pose=f1, feat_id=f2)
    sc1 = generate(params, sample.a1, sample.b3, dims, eps, K, feat_pose=f1, feat_id=f3)
    if proxy_values is None:
        proxy = ops.stop_gradient(sc1.final)
    else:
        proxy = Tensor._wrap(np.asarray(proxy_values, dtype=sc1.final.dtype))
    sc2 = generate(params, proxy, sample.a2, dims, eps, K, feat_id=f2)

    rec = ops.add(L.rec_loss(cc.final, sample.a1), L.rec_loss(sc2.final, sample.a1))
    edge = ops.add(L.edge_loss(cc.final, sample.a2, sample.edges),
                   L.edge_loss(sc2.final, sample.a2, sample.edges))
    l_us = ops.add(ops.mul_scalar(rec, w.rec), ops.mul_scalar(edge, w.edge))

    mesh_cc = mesh_ss = point = None
    if _aux(w):
        g_cc = feature_extract(params, cc.warped, dims)
        g1 = feature_extract(params, sc1.warped, dims)
        g2 = feature_extract(params, sc2.warped, dims)
        m = w.margin
        mesh_cc = L.mesh_cc_loss(f1.pose(), g_cc.pose(), f2.pose(),
                                 f1.identity(), f2.identity(), g_cc.identity(), m)
        ss1 = L.mesh_ss_loss(g1.pose(), f1.pose(), f3.pose(),
                             g1.identity(), f3.identity(), f1.identity(), sc1.binary, m)
        fp = sc2.feat_pose
        ss2 = L.mesh_ss_loss(g2.pose(), fp.pose(), f2.pose(),
                             g2.identity(), f2.identity(), fp.identity(), sc2.binary, m)
        mesh_ss = ops.add(ss1, ss2)
        point = ops.add(ops.add(L.point_triplet(g_cc.values, f2.values, m),
                                L.point_triplet(g1.values, f3.values, m)),
                        L.point_triplet(g2.values, f2.values, m))
    total = L.unlabelled_total(l_us, mesh_cc, mesh_ss, point, w)
    comps = {"l_rec": rec, "l_edge": edge, "l_mesh_cc": mesh_cc, "l_mesh_ss": mesh_ss,
             "l_point": point, "total": total}
    return total, comps, UnlabelledPasses(cc, sc1, sc2, proxy)


# -- optimisation -----------------------------------------------------------------

def _record(iteration: Iteration, lr: float, comps_list: list) -> dict:
    rec = {"epoch": iteration.epoch, "iter": iteration.index, "mode": iteration.tag, "lr": lr}
    for k in COMPONENTS:
        vals = [c[k] for c in comps_list if c[k] is not None]
        rec[k] = float(np.mean([float(v.values) for v in vals])) if vals else 0.0
    return rec


def batch_loss(params, iteration: Iteration, bank: MeshBank, config: TrainingConfig):
    """Averaged loss over a batch; must be called inside an active tape."""
    totals, comps_list = [], []
    for item in iteration.items:
        sample = prepare(item, bank)
        if item.tag == "L":
            total, comps, _ = labelled_objective(params, sample, config)
        else:
            total, comps, _ = unlabelled_objective(params, sample, config)
        totals.append(total)
        comps_list.append(comps)
    loss = totals[0]
    for t in totals[1:]:
        loss = ops.add(loss, t)
    return ops.mul_scalar(loss, 1.0 / len(totals)), comps_list


def train_step(params: dict, state: AdamState, iteration: Iteration, bank: MeshBank,
               config: TrainingConfig, lr: float):
    """One Adam update. Returns (params, state, log record)."""
    with Tape():
        loss, comps_list = batch_loss(params, iteration, bank, config)
        record = _record(iteration, lr, comps_list)
        if not all(np.isfinite(record[k]) for k in COMPONENTS):
            raise TrainingAborted(record)
        grads = backward(loss)
    named = {name: grads.get(p, np.zeros(p.shape, dtype=p.dtype)) for name, p in params.items()}
    for name, g in named.items():
        if not np.all(np.isfinite(g)):
            record["bad_gradient"] = name
            raise TrainingAborted({**record, "total": float("nan")})
    params, state = adam_step(params, named, state, lr)
    return params, state, record


def supervised_step(params, state, triples, bank, config, lr, epoch=0, index=0):
    items = tuple(triples)
    if any(it.tag != "L" for it in items):
        raise TrainingError("supervised_step takes labelled triples")
    return train_step(params, state, Iteration(epoch, index, "L", items), bank, config, lr)


def unsupervised_step(params, state, triples, bank, config, lr, epoch=0, index=0):
    items = tuple(triples)
    if any(it.tag != "U" for it in items):
        raise TrainingError("unsupervised_step takes unlabelled triples")
    return train_step(params, state, Iteration(epoch, index, "U", items), bank, config, lr)


# -- logging ----------------------------------------------------------------------

@dataclass
class TrainLog:
    header: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        for k in COMPONENTS:
            if not np.isfinite(record[k]):
                raise TrainingAborted(record)
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in self.header.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([r["epoch"], r["iter"], r["mode"], repr(float(r["lr"]))]
                           + [repr(float(r[k])) for k in COMPONENTS])


def read_log(path) -> TrainLog:
    header, records = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        else:
            body.append(line)
    for row in csv.DictReader(body):
        r = {"epoch": int(row["epoch"]), "iter": int(row["iter"]), "mode": row["mode"]}
        for k in ("lr",) + COMPONENTS:
            r[k] = float(row[k])
        records.append(r)
    return TrainLog(header, records)


# -- driver -----------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    state: AdamState
    log: TrainLog
    bank: MeshBank
    checkpoints: list


def checkpoint_extras(config: TrainingConfig) -> dict:
    return {"__sinkhorn": np.array([config.epsilon, config.iterations], dtype=np.float32)}


def train(config: TrainingConfig, dataset: Dataset, params: Optional[dict] = None,
          state: Optional[AdamState] = None, max_steps: Optional[int] = None,
          bank: Optional[MeshBank] = None) -> TrainResult:
    """Run (or resume) training.

    Resuming: pass the ``params`` and ``state`` from a checkpoint; the step
    counter in ``state`` locates the position in the deterministic schedule.
    ``max_steps`` stops early after that many global steps (for tests).
    """
    if params is None:
        params = init_params(config.dims, config.seed_init)
    check_params(params, config.dims)
    state = state if state is not None else AdamState()
    bank = bank if bank is not None else MeshBank(dataset)
    log = TrainLog(config.header())
    written = []
    # epochs can differ in length (staged semi-supervised runs), so locate
    # steps through the cumulative lengths rather than a fixed stride
    lengths = [len(epoch_schedule(dataset, config, e)) for e in range(config.epochs)]
    if min(lengths) == 0:
        raise TrainingError("empty schedule: no training data")
    starts = np.concatenate([[0], np.cumsum(lengths)])
    total_steps = int(starts[-1])
    stop = total_steps if max_steps is None else min(total_steps, max_steps)

    out = config.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
    step = state.step
    epoch = int(np.searchsorted(starts, step, side="right")) - 1
    try:
        while step < stop:
            sched = epoch_schedule(dataset, config, epoch)
            for it in sched[step - starts[epoch]:]:
                if step >= stop:
                    break
                lr = lr_at(epoch + (step - starts[epoch]) / lengths[epoch], config)
                params, state, record = train_step(params, state, it, bank, config, lr)
                log.append(record)
                step += 1
            epoch += 1
            if out and step == starts[epoch] and config.checkpoint_every \
                    and epoch % config.checkpoint_every == 0:
                path = os.path.join(out, f"epoch{epoch:04d}.ckpt")
                save_checkpoint(path, params, state, checkpoint_extras(config))
                written.append(path)
    except TrainingAborted as exc:
        if out:
            log.write_csv(os.path.join(out, "train_log.csv"))
        exc.log = log
        exc.checkpoints = written
        raise
    if out:
        final = os.path.join(out, "final.ckpt")
        save_checkpoint(final, params, state, checkpoint_extras(config))
        written.append(final)
        log.write_csv(os.path.join(out, "train_log.csv"))
    return TrainResult(params, state, log, bank, written)


def resume(path, config: TrainingConfig, dataset: Dataset, **kw) -> TrainResult:
    params, state, _ = load_checkpoint(path)
    return train(config, dataset, params, state, **kw)


# -- evaluation helpers ------------------------------------------------------------

def heldout_split(dataset: Dataset, n_heldout_poses: int = 2, seed: int = 0):
    """Split off whole poses: returns (train dataset, held-out pose ids)."""
    poses = sorted({e.pose_id for e in dataset.entries})
    if not 0 < n_heldout_poses < len(poses):
        raise TrainingError(f"cannot hold out {n_heldout_poses} of {len(poses)} poses")
    rng = np.random.default_rng(seed)
    held = sorted(poses[i] for i in rng.permutation(len(poses))[:n_heldout_poses])
    return dataset.subset(lambda e: e.pose_id not in held), held


def heldout_pairs(dataset: Dataset, held_poses) -> list:
    """(pose mesh, identity mesh, ground truth) triples whose target pose was never trained on.

    The pose source is another identity in a held-out pose; the identity input
    is the first non-held-out pose of the target identity.
    """
    ids = _by_identity(dataset.entries)
    names = sorted(ids)
    pairs = []
    for k, b in enumerate(names):
        a = names[(k + 1) % len(names)]
        ident = next(e for e in sorted(ids[b], key=lambda e: e.pose_id) if e.pose_id not in held_poses)
        for p in held_poses:
            src = dataset.lookup(a, p)
            gt = dataset.lookup(b, p)
            if src is not None and gt is not None:
                pairs.append((src, ident, gt))
    return pairs


def transfer(params, pose_mesh: Mesh, id_mesh: Mesh, dims: ModelDims, seed: int,
             epsilon=SINKHORN_EPS, iterations=SINKHORN_ITERS):
    """Preprocess with the evaluation seed and run the generator.

    Returns (GenerateResult, preprocessed identity mesh, identity permutation).
    """
    pose, _ = preprocess(pose_mesh, seed)
    ident, perm = preprocess(id_mesh, seed + 1)
    res = generate(params, pose.vertices, ident.vertices, dims, epsilon, iterations)
    return res, ident, perm


def evaluate_pmd(params, dims: ModelDims, pairs: list, dataset: Dataset, seed: int = 9001,
                 epsilon=SINKHORN_EPS, iterations=SINKHORN_ITERS) -> float:
    """Mean PMD of transfers against ground truth reordered like the identity input."""
    from .metrics import pmd
    vals = []
    for src, ident, gt in pairs:
        res, _, _ = transfer(params, dataset.mesh(src), dataset.mesh(ident), dims, seed,
                             epsilon, iterations)
        gt_mesh, _ = preprocess(dataset.mesh(gt), seed + 1)
        vals.append(pmd(res.final.values, gt_mesh.vertices))
    return float(np.mean(vals))


__all__ = [
    "COMPONENTS", "Iteration", "LOG_COLUMNS", "MeshBank", "SEMI_CASES", "TrainLog", "TrainResult",
    "TrainingAborted", "TrainingConfig", "TrainingError", "UnlabelledPasses", "WorkItem",
    "batch_loss", "epoch_schedule", "evaluate_pmd", "heldout_pairs", "heldout_split",
    "labelled_items", "labelled_objective", "lr_at", "prepare", "read_log", "resume",
    "semi_schedule", "supervised_step", "train", "train_step", "transfer", "unlabelled_items",
    "unlabelled_objective", "unsupervised_step",
]
