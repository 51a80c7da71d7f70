"""Skeleton sequences, their graph encoding and pool construction.

A sequence of ``T`` frames over ``J`` joints becomes a graph with one node per
joint trajectory. Each node carries the concatenated mean 3D position of the
joint over ``M_c`` equal temporal chunks (``s = 3 * M_c`` values); edges follow
the skeleton bones.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .numerics import ContractError, make_rng

DEFAULT_CHUNKS = 4

# 15-joint Kinect skeleton: head, neck, torso, then left/right arm, left/right leg.
SBU_BONES = [
    (0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8),
    (2, 9), (9, 10), (10, 11), (2, 12), (12, 13), (13, 14),
]


class DatasetFormatError(ValueError):
    """A dataset file does not follow the expected layout."""


class ChunkingError(ContractError):
    pass


def chain_topology(joints):
    return [(j, j + 1) for j in range(joints - 1)]


def two_person_topology(bones=SBU_BONES, joints_per_person=15):
    """Bones of two skeletons stacked as joints ``0..J-1`` and ``J..2J-1``."""
    return list(bones) + [(a + joints_per_person, b + joints_per_person) for a, b in bones]


def default_topology(joints):
    if joints == 15:
        return list(SBU_BONES)
    if joints == 30:
        return two_person_topology()
    return chain_topology(joints)


@dataclass
class SkeletonSequence:
    """``coords`` has shape (frames, joints, 3)."""

    coords: np.ndarray
    label: int | None = None
    split: str | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ContractError(f"coords must be (frames, joints, 3), got {self.coords.shape}")

    @property
    def frames(self):
        return self.coords.shape[0]

    @property
    def joints(self):
        return self.coords.shape[1]


@dataclass
class SkeletonGraph:
    node_descriptors: np.ndarray  # (s, m), column j is the descriptor of joint j
    adjacency: np.ndarray  # (m, m), row-normalized, self-loops included
    label: int | None = None
    chunk_count: int = DEFAULT_CHUNKS

    @property
    def m(self):
        return self.node_descriptors.shape[1]

    @property
    def s(self):
        return self.node_descriptors.shape[0]


def _chunk_weights(frames, chunks):
    """Overlap of frame interval ``[t, t+1)/T`` with chunk ``[c, c+1)/M_c``.

    Returns an array (chunks, frames) whose rows sum to one. When ``chunks``
    divides ``frames`` this is plain assignment of frame ``t`` to chunk
    ``floor(t * chunks / frames)``.
    """
    # integer arithmetic on the common grid of T * M_c ticks keeps weights exact
    t = np.arange(frames)
    c = np.arange(chunks)
    lo = np.maximum(t[None, :] * chunks, c[:, None] * frames)
    hi = np.minimum((t[None, :] + 1) * chunks, (c[:, None] + 1) * frames)
    overlap = np.maximum(hi - lo, 0).astype(np.float64)
    return overlap / overlap.sum(axis=1, keepdims=True)


def chunk_descriptors(seq, chunks=DEFAULT_CHUNKS):
    """Descriptors of all joints at once, shape (3 * chunks, joints)."""
    if chunks < 1:
        raise ChunkingError("chunk count must be positive")
    if seq.frames < chunks:
        raise ChunkingError(f"{seq.frames} frames cannot fill {chunks} chunks")
    w = _chunk_weights(seq.frames, chunks)
    means = np.einsum("ct,tjd->cdj", w, seq.coords)  # (chunks, 3, joints)
    return means.reshape(3 * chunks, seq.joints)


def chunk_descriptor(seq, joint, chunks=DEFAULT_CHUNKS):
    """Per-chunk mean position of one joint, concatenated in chunk order."""
    if not 0 <= joint < seq.joints:
        raise ContractError(f"joint {joint} out of range")
    return chunk_descriptors(seq, chunks)[:, joint]


def adjacency_matrix(joints, topology, normalize=True):
    """Symmetric 0/1 bone matrix plus self-loops, optionally row-normalized."""
    A = np.eye(joints)
    for a, b in topology:
        if not (0 <= a < joints and 0 <= b < joints):
            raise ContractError(f"edge ({a}, {b}) references a joint outside 0..{joints - 1}")
        if a != b:
            A[a, b] = A[b, a] = 1.0
    if normalize:
        A /= A.sum(axis=1, keepdims=True)
    return A


def build_graph(seq, topology=None, chunks=DEFAULT_CHUNKS):
    topology = default_topology(seq.joints) if topology is None else topology
    return SkeletonGraph(
        node_descriptors=chunk_descriptors(seq, chunks),
        adjacency=adjacency_matrix(seq.joints, topology),
        label=seq.label,
        chunk_count=chunks,
    )


def flatten(graph, target_dim=None):
    """Node descriptors stacked node after node, zero-padded to ``target_dim``."""
    U = graph.node_descriptors if isinstance(graph, SkeletonGraph) else np.asarray(graph)
    v = U.reshape(-1, order="F")
    target_dim = v.size if target_dim is None else target_dim
    if v.size > target_dim:
        raise ContractError(f"descriptor block of size {v.size} exceeds target dimension {target_dim}")
    return np.concatenate([v, np.zeros(target_dim - v.size)])


def unflatten(v, m, s):
    v = np.asarray(v, dtype=np.float64)
    if m * s > v.size:
        raise ContractError(f"vector of length {v.size} holds fewer than {m}*{s} values")
    return v[: m * s].reshape((s, m), order="F")


@dataclass
class Pool:
    """Sequences, their graphs and the flattened feature matrix (p x n).

    ``labels`` are hidden ground truth, read only through an oracle.
    """

    sequences: list
    graphs: list
    flat: np.ndarray
    labels: np.ndarray
    split: np.ndarray | None = None
    topology: list = field(default_factory=list)
    chunks: int = DEFAULT_CHUNKS

    @property
    def n(self):
        return self.flat.shape[1]

    @property
    def p(self):
        return self.flat.shape[0]

    @property
    def features(self):
        """Samples as rows, ``(n, p)``."""
        return self.flat.T

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Pool(
            sequences=[self.sequences[i] for i in index],
            graphs=[self.graphs[i] for i in index],
            flat=self.flat[:, index],
            labels=self.labels[index],
            split=None if self.split is None else self.split[index],
            topology=self.topology,
            chunks=self.chunks,
        )

    def train_test(self):
        """``(train, test)`` pools; without a declared split both are the full pool."""
        if self.split is None:
            return self, self
        return self.subset(self.split != "test"), self.subset(self.split == "test")

    def equals(self, other):
        same_split = (self.split is None and other.split is None) or (
            self.split is not None and other.split is not None
            and np.array_equal(self.split, other.split))
        return (
            self.flat.shape == other.flat.shape
            and np.array_equal(self.flat, other.flat)
            and np.array_equal(self.labels, other.labels)
            and same_split
            and all(np.array_equal(a.coords, b.coords) for a, b in zip(self.sequences, other.sequences))
        )


def make_pool(sequences, topology=None, chunks=DEFAULT_CHUNKS, target_dim=None):
    if not sequences:
        raise ContractError("a pool needs at least one sequence")
    joints = sequences[0].joints
    topology = default_topology(joints) if topology is None else list(topology)
    graphs = [build_graph(s, topology, chunks) for s in sequences]
    dim = max(g.m * g.s for g in graphs) if target_dim is None else target_dim
    flat = np.stack([flatten(g, dim) for g in graphs], axis=1)
    labels = np.array([-1 if s.label is None else s.label for s in sequences], dtype=np.int64)
    splits = [s.split for s in sequences]
    split = None if all(x is None for x in splits) else np.array(
        [x if x is not None else "train" for x in splits])
    return Pool(list(sequences), graphs, flat, labels, split, topology, chunks)


def synth_sequences(classes, per_class, joints, frames, noise, rng, test_per_class=0,
                    step_scale=None):
    """Class prototypes as smooth random walks, samples as jittered copies.

    All classes share one rest skeleton (standard-normal joint positions) and
    differ by their motion: each joint of each class prototype moves by
    cumulative Gaussian steps of scale ``step_scale`` (default
    ``1/sqrt(frames)``, so the total drift is of order one). A sample adds
    i.i.d. Gaussian noise of scale ``noise`` to every coordinate of every frame.
    """
    if min(classes, per_class, joints, frames) < 1 or noise < 0 or test_per_class < 0:
        raise ContractError("counts must be positive and noise nonnegative")
    rng = make_rng(rng)
    step_scale = 1.0 / np.sqrt(frames) if step_scale is None else step_scale
    start = rng.standard_normal((1, 1, joints, 3))
    steps = step_scale * rng.standard_normal((classes, frames, joints, 3))
    steps[:, 0] = 0.0
    protos = start + np.cumsum(steps, axis=1)
    out = []
    for split, count in (("train", per_class), ("test", test_per_class)):
        for c in range(classes):
            for _ in range(count):
                jitter = noise * rng.standard_normal((frames, joints, 3))
                out.append(SkeletonSequence(protos[c] + jitter, label=c,
                                            split=split if test_per_class else None))
    return out


def synth_pool(classes, per_class, joints, frames, noise, rng, test_per_class=0,
               chunks=DEFAULT_CHUNKS, topology=None):
    """Synthetic labeled pool; with ``test_per_class`` a held-out split is appended."""
    seqs = synth_sequences(classes, per_class, joints, frames, noise, rng, test_per_class)
    return make_pool(seqs, topology, chunks)


def save_dataset(pool_or_sequences, path):
    """Write sequences as JSON lines: ``{label, joints, frames, coords[, split]}``."""
    seqs = pool_or_sequences.sequences if isinstance(pool_or_sequences, Pool) else pool_or_sequences
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            rec = {"label": s.label, "joints": s.joints, "frames": s.frames,
                   "coords": s.coords.reshape(-1, 3).tolist()}
            if s.split is not None:
                rec["split"] = s.split
            fh.write(json.dumps(rec) + "\n")


def _parse_record(line, lineno):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"record {lineno}: invalid JSON ({exc.msg})") from None
    for key in ("joints", "frames", "coords"):
        if key not in rec:
            raise DatasetFormatError(f"record {lineno}: missing field '{key}'")
    J, T = int(rec["joints"]), int(rec["frames"])
    try:
        pts = np.asarray(rec["coords"], dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetFormatError(f"record {lineno}: coords must be [x, y, z] triples") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DatasetFormatError(f"record {lineno}: coords must be [x, y, z] triples")
    if pts.shape[0] != J * T:
        raise DatasetFormatError(
            f"record {lineno}: expected {T} frames x {J} joints = {J * T} points, got {pts.shape[0]}")
    split = rec.get("split")
    if split not in (None, "train", "test"):
        raise DatasetFormatError(f"record {lineno}: split must be 'train' or 'test'")
    label = rec.get("label")
    return SkeletonSequence(pts.reshape(T, J, 3), None if label is None else int(label), split)


def read_jsonl(path):
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                seqs.append(_parse_record(line, lineno))
    if not seqs:
        raise DatasetFormatError(f"{path}: no records")
    return seqs


def read_sbu(root):
    """SBU Interaction layout: ``<set>/<action>/<take>/skeleton_pos.txt``.

    Each line is ``frame, x1, y1, z1, ..., x30, y30, z30`` (two 15-joint
    skeletons); the action folder name (1-based) gives the label.
    """
    seqs = []
    for f in sorted(Path(root).glob("**/skeleton_pos.txt")):
        rows = []
        for lineno, line in enumerate(f.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            vals = line.split(",")
            if len(vals) != 91:
                raise DatasetFormatError(f"{f}:{lineno}: expected 91 values, got {len(vals)}")
            rows.append([float(v) for v in vals[1:]])
        if not rows:
            raise DatasetFormatError(f"{f}: empty sequence")
        label = int(f.parent.parent.name) - 1
        seqs.append(SkeletonSequence(np.array(rows).reshape(len(rows), 30, 3), label))
    if not seqs:
        raise DatasetFormatError(f"{root}: no skeleton_pos.txt files found")
    return seqs


def load_dataset(path, format="jsonl", topology=None, chunks=DEFAULT_CHUNKS, target_dim=None):
    """Load a pool from disk (``format`` is ``"jsonl"`` or ``"sbu"``)."""
    if format == "jsonl":
        seqs = read_jsonl(path)
    elif format == "sbu":
        seqs = read_sbu(path)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    return make_pool(seqs, topology, chunks, target_dim)


class SkeletonGraphEncoder(TransformerMixin, BaseEstimator):
    """Turn skeleton sequences into flattened, zero-padded graph descriptors.

    Parameters
    ----------
    chunks : int
        Number of temporal chunks per trajectory.
    topology : list of (int, int) or None
        Bone list; ``None`` picks a default from the joint count.
    target_dim : int or None
        Output width; ``None`` uses ``joints * 3 * chunks`` of the fitted data.
    """

    def __init__(self, chunks=DEFAULT_CHUNKS, topology=None, target_dim=None):
        self.chunks = chunks
        self.topology = topology
        self.target_dim = target_dim

    def fit(self, X, y=None):
        joints = {s.joints for s in X}
        if len(joints) != 1:
            raise ContractError("all sequences must share the joint count")
        self.n_joints_ = joints.pop()
        self.topology_ = default_topology(self.n_joints_) if self.topology is None else list(self.topology)
        self.adjacency_ = adjacency_matrix(self.n_joints_, self.topology_)
        self.n_features_out_ = self.target_dim or self.n_joints_ * 3 * self.chunks
        return self

    def transform(self, X):
        return np.stack([flatten(chunk_descriptors(s, self.chunks), self.n_features_out_) for s in X])
