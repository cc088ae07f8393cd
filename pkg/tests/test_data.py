"""Data model: .skel round-trips, topology validation, bones, resampling,
and the synthetic generator."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slim.data import (
    SkeletonSequence,
    SkeletonTopology,
    SyntheticConfig,
    bones_to_joints,
    gen_synthetic,
    joints_to_bones,
    kinect25,
    load_dataset_index,
    load_sequence,
    load_topology,
    resample_linear,
    save_dataset_index,
    save_sequence,
    save_topology,
    topology_from_dict,
    topology_to_dict,
)
from slim.errors import FormatError, ValidationError

# ---------------------------------------------------------------------------
# .skel format


def test_skel_roundtrip_zero_case(tmp_path):
    seq = SkeletonSequence(np.zeros((1, 1, 3)))
    path = tmp_path / "zero.skel"
    save_sequence(seq, path)
    back = load_sequence(path)
    assert back.frames == 1 and back.joints == 1
    assert (back.coords == 0).all()


def test_skel_header_shape_contract(tmp_path):
    rng = np.random.default_rng(3)
    seq = SkeletonSequence(rng.normal(size=(64, 25, 3)).astype(np.float32))
    path = tmp_path / "a.skel"
    save_sequence(seq, path)
    raw = path.read_bytes()
    assert raw[:4] == b"SKEL"
    assert raw[4] == 1
    assert len(raw) == 17 + 64 * 25 * 3 * 4
    back = load_sequence(path)
    assert back.frames == 64 and back.joints == 25


@settings(max_examples=25, deadline=None)
@given(
    frames=st.integers(1, 40),
    joints=st.integers(1, 30),
    seed=st.integers(0, 2**32 - 1),
)
def test_skel_roundtrip_bit_exact(tmp_path_factory, frames, joints, seed):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(frames, joints, 3)).astype(np.float32)
    seq = SkeletonSequence(coords)
    path = tmp_path_factory.mktemp("skel") / "seq.skel"
    save_sequence(seq, path)
    back = load_sequence(path)
    assert (back.coords == seq.coords).all()
    # Determinism: a second save is byte-identical.
    first = path.read_bytes()
    save_sequence(back, path)
    assert path.read_bytes() == first


def test_skel_bad_magic(tmp_path):
    path = tmp_path / "bad.skel"
    path.write_bytes(b"NOPE" + bytes(13))
    with pytest.raises(FormatError, match="magic"):
        load_sequence(path)


def test_skel_bad_version(tmp_path):
    seq = SkeletonSequence(np.zeros((1, 1, 3)))
    path = tmp_path / "v.skel"
    save_sequence(seq, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_sequence(path)


def test_skel_truncated_payload(tmp_path):
    seq = SkeletonSequence(np.zeros((64, 25, 3)))
    path = tmp_path / "t.skel"
    save_sequence(seq, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 25 * 3 * 4])  # drop one frame
    with pytest.raises(FormatError, match="length"):
        load_sequence(path)


def test_skel_non_finite_payload(tmp_path):
    path = tmp_path / "nan.skel"
    save_sequence(SkeletonSequence(np.zeros((1, 2, 3))), path)
    raw = bytearray(path.read_bytes())
    raw[17:21] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(ValidationError, match="finite"):
        load_sequence(path)


def test_sequence_validation():
    with pytest.raises(ValidationError):
        SkeletonSequence(np.zeros((0, 1, 3)))
    with pytest.raises(ValidationError):
        SkeletonSequence(np.zeros((1, 0, 3)))
    with pytest.raises(ValidationError):
        SkeletonSequence(np.full((1, 1, 3), np.inf))
    with pytest.raises(ValidationError):
        SkeletonSequence(np.zeros((1, 1, 4)))


# ---------------------------------------------------------------------------
# Topology


def test_kinect25_groups_match_published_regions(topo):
    groups = dict(topo.groups)
    assert groups["torso"] == [0, 1, 20, 2, 3]
    assert groups["left_arm"] == [4, 5, 6, 7, 21, 22]
    assert groups["right_arm"] == [8, 9, 10, 11, 23, 24]
    assert groups["left_leg"] == [12, 13, 14, 15]
    assert groups["right_leg"] == [16, 17, 18, 19]


def test_kinect25_swap_pairs(topo):
    expected = {
        (4, 8), (5, 9), (6, 10), (7, 11),
        (12, 16), (13, 17), (14, 18), (15, 19),
        (21, 23), (22, 24),
    }
    assert {tuple(sorted(p)) for p in topo.swap_pairs} == expected
    # Each pair maps the left group onto the right counterpart.
    groups = dict(topo.groups)
    left = set(groups["left_arm"]) | set(groups["left_leg"])
    right = set(groups["right_arm"]) | set(groups["right_leg"])
    for a, b in topo.swap_pairs:
        assert (a in left and b in right) or (a in right and b in left)
    # Central torso joints stay unpaired.
    paired = {j for p in topo.swap_pairs for j in p}
    assert paired.isdisjoint(groups["torso"])


def test_topology_roundtrip_file(topo, tmp_path):
    path = tmp_path / "topo.json"
    save_topology(topo, path)
    back = load_topology(path)
    assert back.groups == topo.groups
    assert (back.parents == topo.parents).all()
    assert back.swap_pairs == topo.swap_pairs


def test_topology_rejects_group_overlap(topo):
    doc = topology_to_dict(topo)
    doc["groups"][0]["joints"] = [0, 1, 20, 2, 3, 3]
    with pytest.raises(ValidationError, match="partition"):
        topology_from_dict(doc)


def test_topology_rejects_duplicated_joint_across_groups(topo):
    doc = topology_to_dict(topo)
    doc["groups"][1]["joints"][0] = 3  # joint 3 now in torso and left_arm
    with pytest.raises(ValidationError, match="partition"):
        topology_from_dict(doc)


def test_topology_rejects_swap_pair_reuse(topo):
    doc = topology_to_dict(topo)
    doc["swap_pairs"][1] = [4, 9]  # joint 4 already in (4, 8)
    with pytest.raises(ValidationError, match="more than one swap pair"):
        topology_from_dict(doc)


def test_topology_rejects_parent_cycle(topo):
    doc = topology_to_dict(topo)
    doc["parents"][1] = 20  # 1 -> 20 -> 1 cycle
    with pytest.raises(ValidationError):
        topology_from_dict(doc)


def test_topology_rejects_two_roots(topo):
    doc = topology_to_dict(topo)
    doc["parents"][5] = 5
    with pytest.raises(ValidationError, match="root"):
        topology_from_dict(doc)


def test_topology_rejects_broken_chain_order(topo):
    doc = topology_to_dict(topo)
    doc["groups"][0]["joints"] = [0, 20, 1, 2, 3]  # 0 and 20 not adjacent
    with pytest.raises(ValidationError, match="chain order"):
        topology_from_dict(doc)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_topology_fuzzed_single_field_corruption(seed):
    """Random single-field corruptions must either error or stay consistent."""
    topo = kinect25()
    doc = topology_to_dict(topo)
    rng = np.random.default_rng(seed)
    kind = rng.integers(0, 3)
    if kind == 0:  # corrupt a parent pointer
        j = int(rng.integers(0, 25))
        doc["parents"][j] = int(rng.integers(0, 25))
    elif kind == 1:  # move a joint between groups (breaks the partition)
        src = int(rng.integers(0, 5))
        dst = int(rng.integers(0, 5))
        if src == dst:
            return
        joint = doc["groups"][src]["joints"][int(rng.integers(0, len(doc["groups"][src]["joints"])))]
        doc["groups"][dst]["joints"].append(joint)
    else:  # corrupt one swap index
        i = int(rng.integers(0, len(doc["swap_pairs"])))
        doc["swap_pairs"][i][int(rng.integers(0, 2))] = int(rng.integers(0, 25))
    try:
        rebuilt = topology_from_dict(doc)
    except ValidationError:
        return
    rebuilt.validate()  # if accepted, it must still validate


# ---------------------------------------------------------------------------
# Joint <-> bone conversion


def test_joints_to_bones_hand_example(chain3):
    coords = np.array([[[0, 0, 0], [0, 1, 0], [0, 2, 0]]], dtype=np.float64)
    bones = joints_to_bones(SkeletonSequence(coords), chain3)
    expected = np.array([[[0, 0, 0], [0, 1, 0], [0, 1, 0]]], dtype=np.float64)
    assert np.allclose(bones.bones, expected)
    assert np.allclose(bones.root_trajectory, [[0, 0, 0]])


def test_bones_to_joints_inverts_hand_example(chain3):
    coords = np.array([[[0, 0, 0], [0, 1, 0], [0, 2, 0]]], dtype=np.float64)
    seq = SkeletonSequence(coords)
    back = bones_to_joints(joints_to_bones(seq, chain3), chain3)
    assert np.allclose(back.coords, coords)


def test_bones_coincident_joints(chain3):
    seq = SkeletonSequence(np.ones((4, 3, 3)))
    bones = joints_to_bones(seq, chain3)
    assert (bones.bones == 0).all()


def test_bones_root_only():
    topo = SkeletonTopology(num_joints=1, parents=[0], groups=[("all", [0])], swap_pairs=[])
    seq = SkeletonSequence(np.arange(12, dtype=np.float64).reshape(4, 1, 3))
    bones = joints_to_bones(seq, topo)
    assert (bones.bones == 0).all()
    assert np.allclose(bones.root_trajectory, seq.coords[:, 0])


def test_zero_bones_collapse_to_root(chain3):
    from slim.data import BoneSequence

    traj = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    bones = BoneSequence(bones=np.zeros((2, 3, 3)), root_trajectory=traj)
    seq = bones_to_joints(bones, chain3)
    assert np.allclose(seq.coords, traj[:, None, :])


def test_bones_joint_count_mismatch(chain3):
    with pytest.raises(ValidationError):
        joints_to_bones(SkeletonSequence(np.zeros((1, 4, 3))), chain3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), frames=st.integers(1, 12))
def test_bone_roundtrip_property(seed, frames):
    topo = kinect25()
    rng = np.random.default_rng(seed)
    seq = SkeletonSequence(rng.normal(size=(frames, 25, 3)))
    back = bones_to_joints(joints_to_bones(seq, topo), topo)
    assert np.abs(back.coords - seq.coords).max() < 1e-6


# ---------------------------------------------------------------------------
# Resampling


def test_resample_identity(seq25):
    out = resample_linear(seq25, seq25.frames)
    assert (out.coords == seq25.coords).all()


def test_resample_hand_midpoint():
    coords = np.array([[[0, 0, 0]], [[2, 0, 0]]], dtype=np.float64)
    out = resample_linear(SkeletonSequence(coords), 3)
    assert np.allclose(out.coords[1], [[1, 0, 0]])
    assert (out.coords[0] == coords[0]).all() and (out.coords[2] == coords[1]).all()


def test_resample_single_frame_broadcast():
    coords = np.array([[[1.0, 2.0, 3.0]]])
    out = resample_linear(SkeletonSequence(coords), 8)
    assert out.frames == 8
    assert (out.coords == coords[0]).all()


def test_resample_endpoints_preserved(rng):
    seq = SkeletonSequence(rng.normal(size=(13, 4, 3)))
    for target in (2, 5, 13, 29):
        out = resample_linear(seq, target)
        assert np.allclose(out.coords[0], seq.coords[0])
        assert np.allclose(out.coords[-1], seq.coords[-1])


def test_resample_rejects_zero():
    with pytest.raises(ValidationError):
        resample_linear(SkeletonSequence(np.zeros((2, 1, 3))), 0)


# ---------------------------------------------------------------------------
# Dataset index


def test_dataset_index_roundtrip(tmp_path, topo, rng):
    seqs = [SkeletonSequence(rng.normal(size=(8, 25, 3)).astype(np.float32)) for _ in range(3)]
    records = []
    for i, s in enumerate(seqs):
        save_sequence(s, tmp_path / f"s{i}.skel")
        records.append((f"s{i}.skel", i % 2))
    save_dataset_index(records, tmp_path / "index.jsonl")
    ds = load_dataset_index(tmp_path / "index.jsonl", topo)
    assert len(ds) == 3
    assert ds.num_classes == 2
    assert (ds.sequences[1].coords == seqs[1].coords).all()
    for line in (tmp_path / "index.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert set(rec) == {"path", "label"}


def test_dataset_index_bad_record(tmp_path, topo):
    (tmp_path / "index.jsonl").write_text('{"path": "x.skel"}\n')
    with pytest.raises(FormatError):
        load_dataset_index(tmp_path / "index.jsonl", topo)


# ---------------------------------------------------------------------------
# Synthetic generator


def test_synthetic_deterministic(topo):
    cfg = SyntheticConfig(num_classes=2, sequences_per_class=3, frames=16)
    a = gen_synthetic(cfg, topo, seed=7)
    b = gen_synthetic(cfg, topo, seed=7)
    for sa, sb in zip(a.sequences, b.sequences):
        assert (sa.coords == sb.coords).all()
    c = gen_synthetic(cfg, topo, seed=8)
    assert any((sa.coords != sc.coords).any() for sa, sc in zip(a.sequences, c.sequences))


def test_synthetic_noise_free_knn_oracle(topo):
    """Leave-one-out 1-NN on raw flattened coordinates must be perfect."""
    cfg = SyntheticConfig(num_classes=2, sequences_per_class=10, frames=32, noise_std=0.0)
    ds = gen_synthetic(cfg, topo, seed=0)
    flat = np.stack([s.coords.ravel() for s in ds.sequences])
    labels = ds.labels
    hits = 0
    for i in range(len(flat)):
        d = np.linalg.norm(flat - flat[i], axis=1)
        d[i] = np.inf
        hits += labels[np.argmin(d)] == labels[i]
    assert hits == len(flat)


def test_synthetic_rejects_single_class():
    with pytest.raises(ValidationError):
        SyntheticConfig(num_classes=1, sequences_per_class=3)


def test_synthetic_labels_and_shapes(topo):
    cfg = SyntheticConfig(num_classes=3, sequences_per_class=2, frames=12, noise_std=0.01)
    ds = gen_synthetic(cfg, topo, seed=1)
    assert len(ds) == 6
    assert sorted(ds.labels.tolist()) == [0, 0, 1, 1, 2, 2]
    assert all(s.frames == 12 and s.joints == 25 for s in ds.sequences)
