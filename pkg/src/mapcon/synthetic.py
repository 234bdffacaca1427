"""Articulated tube meshes with independent identity and pose factors.

Every mesh is a chain of ``J`` cylindrical segments swept along a planar
kinematic chain. The identity fixes segment lengths and radii, the pose fixes
the joint bend angles. Vertex order and topology depend only on
``(J, rings, sides)``, so the mesh of identity B in pose 1 is the exact
ground truth for transferring pose 1 onto identity B.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mesh_io import Mesh, load_mesh, save_mesh

MIN_EXTENT = 0.02

# desk sampling ranges (model units / radians)
LENGTH_RANGE = (0.25, 0.45)
RADIUS_RANGE = (0.04, 0.09)
ANGLE_RANGE = (-0.7, 0.7)


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class IdentitySpec:
    lengths: tuple
    radii: tuple
    identity_id: str = ""

    def __post_init__(self):
        if len(self.lengths) != len(self.radii):
            raise SyntheticError("lengths and radii must have one entry per segment")
        if min(self.lengths) <= MIN_EXTENT or min(self.radii) <= MIN_EXTENT:
            raise SyntheticError(f"segment lengths and radii must exceed {MIN_EXTENT}")

    @property
    def n_segments(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class PoseSpec:
    angles: tuple
    pose_id: str = ""

    def __post_init__(self):
        if any(abs(a) > np.pi / 2 for a in self.angles):
            raise SyntheticError("joint angles must lie in [-pi/2, pi/2]")


def n_vertices(segments: int, rings: int, sides: int) -> int:
    return segments * rings * sides + 2


def tube_faces(segments: int, rings: int, sides: int) -> np.ndarray:
    """Triangles of the shared template: ring strips plus two cap fans."""
    n_rings = segments * rings
    start_cap = n_rings * sides
    end_cap = start_cap + 1
    faces = []
    for r in range(n_rings - 1):
        for s in range(sides):
            a = r * sides + s
            b = r * sides + (s + 1) % sides
            c = (r + 1) * sides + s
            d = (r + 1) * sides + (s + 1) % sides
            faces.append((a, c, b))
            faces.append((b, c, d))
    last = (n_rings - 1) * sides
    for s in range(sides):
        faces.append((start_cap, s, (s + 1) % sides))
        faces.append((end_cap, last + (s + 1) % sides, last + s))
    return np.array(faces, dtype=np.int64)


def chain_frames(identity: IdentitySpec, pose: PoseSpec):
    """Joint positions and segment headings of the bent planar chain."""
    j = identity.n_segments
    if len(pose.angles) != j - 1:
        raise SyntheticError(f"pose has {len(pose.angles)} angles, identity needs {j - 1}")
    headings = np.concatenate([[0.0], np.cumsum(pose.angles)])
    dirs = np.stack([np.cos(headings), np.sin(headings), np.zeros(j)], axis=1)
    joints = np.zeros((j + 1, 3))
    joints[1:] = np.cumsum(dirs * np.asarray(identity.lengths)[:, None], axis=0)
    return joints, dirs


def make_mesh(identity: IdentitySpec, pose: PoseSpec, rings: int = 6, sides: int = 10,
              noise: float = 0.0, noise_seed: int = 0) -> Mesh:
    j = identity.n_segments
    if j < 2 or rings < 2 or sides < 3:
        raise SyntheticError("need at least 2 segments, 2 rings per segment and 3 sides")
    joints, dirs = chain_frames(identity, pose)
    phi = 2 * np.pi * np.arange(sides) / sides
    z = np.array([0.0, 0.0, 1.0])
    rings_xyz = []
    for seg in range(j):
        d = dirs[seg]
        normal = np.array([-d[1], d[0], 0.0])
        offs = np.cos(phi)[:, None] * normal + np.sin(phi)[:, None] * z
        for r in range(rings):
            t = (r + 0.5) / rings
            centre = joints[seg] + t * identity.lengths[seg] * d
            rings_xyz.append(centre + identity.radii[seg] * offs)
    verts = np.concatenate(rings_xyz + [joints[:1], joints[-1:]], axis=0)
    if noise > 0:
        rng = np.random.default_rng(noise_seed)
        verts = verts + rng.uniform(-noise, noise, size=verts.shape)
    name = f"{identity.identity_id}_{pose.pose_id}".strip("_")
    return Mesh(verts, tube_faces(j, rings, sides), name=name)


def ring_centres(identity: IdentitySpec, pose: PoseSpec, rings: int = 6) -> np.ndarray:
    joints, dirs = chain_frames(identity, pose)
    out = []
    for seg in range(identity.n_segments):
        for r in range(rings):
            out.append(joints[seg] + (r + 0.5) / rings * identity.lengths[seg] * dirs[seg])
    return np.array(out)


def sample_identity(rng, segments: int, label: str) -> IdentitySpec:
    return IdentitySpec(tuple(rng.uniform(*LENGTH_RANGE, size=segments)),
                        tuple(rng.uniform(*RADIUS_RANGE, size=segments)), label)


def sample_pose(rng, segments: int, label: str) -> PoseSpec:
    return PoseSpec(tuple(rng.uniform(*ANGLE_RANGE, size=segments - 1)), label)


@dataclass(frozen=True)
class ManifestEntry:
    identity_id: str
    pose_id: str
    labelled: bool
    path: str


@dataclass
class Dataset:
    root: str
    entries: list

    def mesh(self, entry: ManifestEntry) -> Mesh:
        return load_mesh(os.path.join(self.root, entry.path))

    @property
    def labelled(self):
        return [e for e in self.entries if e.labelled]

    @property
    def unlabelled(self):
        return [e for e in self.entries if not e.labelled]

    def lookup(self, identity_id: str, pose_id: str) -> Optional[ManifestEntry]:
        for e in self.entries:
            if e.identity_id == identity_id and e.pose_id == pose_id:
                return e
        return None

    def subset(self, keep) -> "Dataset":
        return Dataset(self.root, [e for e in self.entries if keep(e)])


MANIFEST_NAME = "manifest.csv"


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for e in entries:
            w.writerow([e.identity_id, e.pose_id, int(e.labelled), e.path])


def read_manifest(path) -> Dataset:
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    entries = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 4 or row[2] not in ("0", "1"):
                raise SyntheticError(f"{path}:{lineno}: malformed manifest row {row!r}")
            entries.append(ManifestEntry(row[0], row[1], row[2] == "1", row[3]))
    return Dataset(os.path.dirname(os.path.abspath(path)), entries)


def make_dataset(n_ids: int, n_poses: int, seed: int, split: float, out_dir,
                 segments: int = 5, rings: int = 6, sides: int = 10,
                 noise: float = 0.0) -> Dataset:
    """Sample identities and poses, write meshes as OBJ plus a manifest.

    With ``split < 1`` the labelled partition keeps ``round(split * n_ids)``
    identities crossed with ``round(split * n_poses)`` poses; the unlabelled
    partition crosses the remaining identities with the remaining poses.
    """
    if n_ids < 2 or n_poses < 2:
        raise SyntheticError("need at least 2 identities and 2 poses")
    if not 0.0 <= split <= 1.0:
        raise SyntheticError(f"split must lie in [0, 1], got {split}")
    rng = np.random.default_rng(seed)
    ids = [sample_identity(rng, segments, f"id{i:02d}") for i in range(n_ids)]
    poses = [sample_pose(rng, segments, f"pose{p:02d}") for p in range(n_poses)]

    if split >= 1.0:
        lab_ids, lab_poses = set(range(n_ids)), set(range(n_poses))
        unl_ids, unl_poses = set(), set()
    else:
        k_ids = int(round(split * n_ids))
        k_poses = int(round(split * n_poses))
        lab_ids = set(rng.permutation(n_ids)[:k_ids].tolist())
        lab_poses = set(rng.permutation(n_poses)[:k_poses].tolist())
        unl_ids = set(range(n_ids)) - lab_ids
        unl_poses = set(range(n_poses)) - lab_poses

    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "meshes"), exist_ok=True)
    entries = []
    for i, ident in enumerate(ids):
        for p, pose in enumerate(poses):
            if i in lab_ids and p in lab_poses:
                labelled = True
            elif i in unl_ids and p in unl_poses:
                labelled = False
            else:
                continue
            rel = f"meshes/{ident.identity_id}_{pose.pose_id}.obj"
            mesh = make_mesh(ident, pose, rings, sides, noise,
                             noise_seed=seed * 100003 + i * 1009 + p)
            save_mesh(mesh, os.path.join(out_dir, rel))
            entries.append(ManifestEntry(ident.identity_id, pose.pose_id, labelled, rel))
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), entries)
    return Dataset(out_dir, entries)
