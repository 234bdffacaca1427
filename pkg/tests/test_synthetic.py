import filecmp
import os

import numpy as np
import pytest

from mapcon.losses import edge_lengths
from mapcon.mesh_io import random_reorder
from mapcon.metrics import pmd
from mapcon.synthetic import (IdentitySpec, PoseSpec, SyntheticError, make_dataset, make_mesh,
                              n_vertices, read_manifest, ring_centres, sample_identity, sample_pose)


def ident(k=0):
    rng = np.random.default_rng(k)
    return sample_identity(rng, 5, f"id{k}")


def pose(k=0):
    rng = np.random.default_rng(100 + k)
    return sample_pose(rng, 5, f"p{k}")


def test_default_vertex_count():
    m = make_mesh(ident(), pose())
    assert m.n_vertices == n_vertices(5, 6, 10) == 302


def test_deterministic():
    a, b = make_mesh(ident(1), pose(2)), make_mesh(ident(1), pose(2))
    assert a.vertices.tobytes() == b.vertices.tobytes()


def test_zero_angles_collinear():
    c = ring_centres(ident(), PoseSpec((0.0,) * 4))
    d = c - c[0]
    direction = d[-1] / np.linalg.norm(d[-1])
    resid = d - np.outer(d @ direction, direction)
    assert np.abs(resid).max() < 1e-6
    m = make_mesh(ident(), PoseSpec((0.0,) * 4))
    centres = m.vertices[:300].reshape(30, 10, 3).mean(axis=1)
    assert np.abs(centres[:, 1:]).max() < 1e-6


def test_shared_topology_across_samples():
    meshes = [make_mesh(ident(i), pose(p)) for i in range(4) for p in range(4)]
    for m in meshes[1:]:
        assert np.array_equal(m.edges, meshes[0].edges)
        assert np.array_equal(m.faces, meshes[0].faces)


def test_spec_validation():
    with pytest.raises(SyntheticError):
        IdentitySpec((0.01, 0.3), (0.05, 0.05))
    with pytest.raises(SyntheticError):
        PoseSpec((2.0,))
    with pytest.raises(SyntheticError):
        make_mesh(ident(), PoseSpec((0.1,)))
    with pytest.raises(SyntheticError):
        make_mesh(ident(), pose(), rings=1)


def test_factorization():
    a1 = make_mesh(ident(0), pose(1))
    b1 = make_mesh(ident(1), pose(1))
    b2 = make_mesh(ident(1), pose(2))
    assert pmd(b1.vertices, b1.vertices) == 0
    assert pmd(b2.vertices, b1.vertices) > 0
    # same pose, different identity: still a different shape
    assert not np.allclose(a1.vertices, b1.vertices)


def test_min_edge_length():
    for i in range(4):
        for p in range(4):
            m = make_mesh(ident(i), pose(p))
            assert edge_lengths(m.vertices, m.edges).min() > 1e-4


def test_reordered_meshes_do_not_share_order():
    m = make_mesh(ident(), pose())
    a, _ = random_reorder(m, 1)
    b, _ = random_reorder(make_mesh(ident(), pose()), 2)
    assert not np.array_equal(a.vertices, b.vertices)


def test_noise_flag():
    clean = make_mesh(ident(), pose())
    noisy = make_mesh(ident(), pose(), noise=0.01, noise_seed=4)
    diff = np.abs(noisy.vertices - clean.vertices)
    assert 0 < diff.max() <= 0.01 + 1e-6


def test_dataset_full(tmp_path):
    ds = make_dataset(4, 4, 0, 1.0, tmp_path)
    assert len(ds.entries) == 16 and all(e.labelled for e in ds.entries)
    # every (A1, B2, B1) triple resolves
    ids = sorted({e.identity_id for e in ds.entries})
    poses = sorted({e.pose_id for e in ds.entries})
    for a in ids:
        for b in ids:
            for p in poses:
                assert ds.lookup(a, p) is not None and ds.lookup(b, p) is not None
    again = read_manifest(tmp_path)
    assert again.entries == ds.entries


def test_dataset_split_half(tmp_path):
    ds = make_dataset(4, 4, 0, 0.5, tmp_path)
    lab, unl = ds.labelled, ds.unlabelled
    assert len(lab) == 4 and len(unl) == 4
    assert len({e.identity_id for e in lab}) == 2 and len({e.pose_id for e in lab}) == 2
    assert not {e.identity_id for e in lab} & {e.identity_id for e in unl}
    assert not {e.pose_id for e in lab} & {e.pose_id for e in unl}


def test_dataset_deterministic(tmp_path):
    make_dataset(3, 3, 11, 1.0, tmp_path / "a")
    make_dataset(3, 3, 11, 1.0, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert filecmp.cmp(tmp_path / "a" / "manifest.csv", tmp_path / "b" / "manifest.csv", shallow=False)
    for name in os.listdir(tmp_path / "a" / "meshes"):
        assert filecmp.cmp(tmp_path / "a" / "meshes" / name, tmp_path / "b" / "meshes" / name, shallow=False)


def test_dataset_errors(tmp_path):
    with pytest.raises(SyntheticError):
        make_dataset(1, 4, 0, 1.0, tmp_path)
    with pytest.raises(SyntheticError):
        make_dataset(4, 4, 0, 1.5, tmp_path)
    (tmp_path / "bad.csv").write_text("id0,p0,2,x.obj\n")
    with pytest.raises(SyntheticError, match="bad.csv:1"):
        read_manifest(tmp_path / "bad.csv")
