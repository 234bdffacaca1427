"""ASCII OBJ/PLY reading and writing, edge derivation, and input preprocessing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_EVAL_SEED = 9001


class MeshError(ValueError):
    pass


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges (i < j) of a triangle array, sorted."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(e, axis=0)


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if len(v) == 0:
            raise MeshError("mesh has no vertices")
        self.vertices = v
        n = len(v)
        if self.faces is not None:
            f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
            if f.size and (f.min() < 0 or f.max() >= n):
                raise MeshError(f"face index out of range [0, {n})")
            self.faces = f
        if self.edges is None:
            self.edges = edges_from_faces(self.faces) if self.faces is not None \
                else np.zeros((0, 2), dtype=np.int64)
        else:
            e = np.sort(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2), axis=1)
            if e.size and (e.min() < 0 or e.max() >= n):
                raise MeshError(f"edge index out of range [0, {n})")
            if np.any(e[:, 0] == e[:, 1]):
                raise MeshError("edge set contains a self-loop")
            self.edges = np.unique(e, axis=0)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces, self.edges, self.name)


@dataclass
class Permutation:
    """``mapping[old] = new``."""

    mapping: np.ndarray
    seed: int = 0
    inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        if not np.array_equal(np.sort(m), np.arange(len(m))):
            raise MeshError("mapping is not a bijection")
        self.mapping = m
        inv = np.empty_like(m)
        inv[m] = np.arange(len(m))
        self.inverse = inv


# -- OBJ ------------------------------------------------------------------

def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            tag = s[0]
            try:
                if tag == "v":
                    verts.append([float(t) for t in s[1:4]])
                    if len(s) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "f":
                    idx = []
                    for tok in s[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 indices")
                    faces.extend(_fan(idx))
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: cannot parse {line.strip()!r} ({exc})") from None
    if not verts:
        raise MeshError(f"{path}: no vertices")
    return np.array(verts, dtype=np.float64), (np.array(faces, dtype=np.int64) if faces else None)


def _save_obj(mesh, path):
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices.astype(np.float64):
            fh.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        if mesh.faces is not None:
            for a, b, c in mesh.faces + 1:
                fh.write(f"f {a} {b} {c}\n")


# -- PLY ------------------------------------------------------------------

def _load_ply(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}:1: missing 'ply' magic")
    elements = []  # [name, count, [props]]
    i = 1
    while i < len(lines):
        s = lines[i].split()
        i += 1
        if not s or s[0] in ("comment", "obj_info"):
            continue
        if s[0] == "format":
            if s[1] != "ascii":
                raise MeshError(f"{path}:{i}: only ASCII PLY is supported")
        elif s[0] == "element":
            elements.append([s[1], int(s[2]), []])
        elif s[0] == "property":
            if not elements:
                raise MeshError(f"{path}:{i}: property before element")
            elements[-1][2].append(s[-1])
        elif s[0] == "end_header":
            break
        else:
            raise MeshError(f"{path}:{i}: unexpected header line {lines[i - 1]!r}")
    verts, faces = None, []
    for name, count, props in elements:
        rows = lines[i:i + count]
        if len(rows) < count:
            raise MeshError(f"{path}: truncated {name} element")
        if name == "vertex":
            try:
                cols = [props.index(c) for c in ("x", "y", "z")]
            except ValueError:
                raise MeshError(f"{path}: vertex element lacks x/y/z") from None
            verts = []
            for k, row in enumerate(rows):
                try:
                    vals = row.split()
                    verts.append([float(vals[c]) for c in cols])
                except (ValueError, IndexError):
                    raise MeshError(f"{path}:{i + k + 1}: cannot parse vertex {row!r}") from None
        elif name == "face":
            for k, row in enumerate(rows):
                try:
                    vals = [int(t) for t in row.split()]
                    cnt = vals[0]
                    poly = vals[1:1 + cnt]
                    if cnt < 3 or len(poly) != cnt:
                        raise ValueError
                except (ValueError, IndexError):
                    raise MeshError(f"{path}:{i + k + 1}: cannot parse face {row!r}") from None
                faces.extend(_fan(poly))
        i += count
    if not verts:
        raise MeshError(f"{path}: no vertices")
    return np.array(verts, dtype=np.float64), (np.array(faces, dtype=np.int64) if faces else None)


def _save_ply(mesh, path):
    nf = 0 if mesh.faces is None else len(mesh.faces)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {nf}\nproperty list uchar int vertex_indices\nend_header\n")
        for x, y, z in mesh.vertices.astype(np.float64):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
        if nf:
            for a, b, c in mesh.faces:
                fh.write(f"3 {a} {b} {c}\n")


def load_mesh(path) -> Mesh:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        v, f = _load_obj(path)
    elif ext == ".ply":
        v, f = _load_ply(path)
    else:
        raise MeshError(f"unsupported mesh format {ext!r}")
    if f is not None and (f.min() < 0 or f.max() >= len(v)):
        raise MeshError(f"{path}: face index out of range [0, {len(v)})")
    return Mesh(v, f, name=os.path.splitext(os.path.basename(path))[0])


def save_mesh(mesh: Mesh, path, format: Optional[str] = None) -> None:
    path = os.fspath(path)
    fmt = (format or os.path.splitext(path)[1].lstrip(".")).lower()
    if fmt == "obj":
        _save_obj(mesh, path)
    elif fmt == "ply":
        _save_ply(mesh, path)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")


# -- preprocessing --------------------------------------------------------

def random_permutation(n: int, seed: int) -> Permutation:
    rng = np.random.Generator(np.random.PCG64(seed))
    return Permutation(rng.permutation(n), seed)


def apply_permutation(mesh: Mesh, perm: Permutation) -> Mesh:
    new_v = np.empty_like(mesh.vertices)
    new_v[perm.mapping] = mesh.vertices
    faces = None if mesh.faces is None else perm.mapping[mesh.faces]
    edges = perm.mapping[mesh.edges]
    return Mesh(new_v, faces, edges, mesh.name)


def random_reorder(mesh: Mesh, seed: int):
    """Shuffle vertex order with a seeded uniform permutation, remapping topology."""
    perm = random_permutation(mesh.n_vertices, seed)
    return apply_permutation(mesh, perm), perm


def zero_center(mesh: Mesh) -> Mesh:
    v = mesh.vertices.astype(np.float64)
    c = 0.5 * (v.min(axis=0) + v.max(axis=0))
    return mesh.with_vertices(v - c)


def preprocess(mesh: Mesh, seed: int):
    """Reorder then centre; the fixed order used for training and evaluation."""
    shuffled, perm = random_reorder(mesh, seed)
    return zero_center(shuffled), perm
