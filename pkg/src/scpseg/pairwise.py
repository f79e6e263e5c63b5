"""Pairwise segment features and the two-layer network that scores them."""
from __future__ import annotations

import heapq
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .grammar import JointLabel, LabelGrammar
from .potentials import (PROB_FLOOR, PotentialMap, TrainConfig, TrainingDivergence,
                         log_softmax, softmax)
from .proposal import SegmentGroup, label_segments

log = logging.getLogger(__name__)

HIDDEN = 32
DROPOUT = 0.2


# --------------------------------------------------------------------------
# edge map and region-adjacency geodesics


def compute_edge_map(source: PotentialMap) -> np.ndarray:
    """Largest per-channel gradient magnitude, min-max scaled to [0, 1].

    Central differences in the interior, one-sided at the border.
    """
    v = source.values
    h, w, _ = v.shape
    if h == 1 and w == 1:
        raise ValueError("edge map needs more than one pixel")
    gy = np.gradient(v, axis=0) if h > 1 else np.zeros_like(v)
    gx = np.gradient(v, axis=1) if w > 1 else np.zeros_like(v)
    mag = np.sqrt(gy ** 2 + gx ** 2).max(axis=2)
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0:
        return np.zeros((h, w))
    return (mag - lo) / (hi - lo)


@dataclass(frozen=True)
class EdgeWeightGraph:
    """Region adjacency over the nodes of one group.

    ``weights[(i, j)]`` with i < j is the sum of edge-map values over the
    pixels of i and j that touch the other segment.
    """

    num_nodes: int
    weights: dict[tuple[int, int], float]

    def __post_init__(self) -> None:
        for (i, j), w in self.weights.items():
            if not (0 <= i < j < self.num_nodes):
                raise ValueError(f"bad edge ({i}, {j})")
            if not w >= 0:
                raise ValueError(f"edge ({i}, {j}) has negative weight {w}")

    def weight(self, i: int, j: int) -> float | None:
        return self.weights.get((min(i, j), max(i, j)))

    def neighbours(self, i: int) -> list[tuple[int, float]]:
        out = []
        for (a, b), w in self.weights.items():
            if a == i:
                out.append((b, w))
            elif b == i:
                out.append((a, w))
        return out

    @property
    def sentinel(self) -> float:
        """Distance reported for disconnected pairs."""
        return float(sum(self.weights.values())) + 1.0


def build_edge_graph(group: SegmentGroup, edge_map: np.ndarray) -> EdgeWeightGraph:
    edge_map = np.asarray(edge_map, dtype=np.float64)
    nodes = label_segments(edge_map.shape, group.segments)
    id_to_node = {s.id: k for k, s in enumerate(group.segments)}
    lut = np.full(max(id_to_node) + 2, -1, dtype=np.int64)
    for sid, k in id_to_node.items():
        lut[sid] = k
    node = np.where(nodes >= 0, lut[nodes], -1)

    w = edge_map.shape[1]
    touching = set()  # (flat pixel, own node, other node)
    for a, b, pa, pb in (
        (node[:, :-1], node[:, 1:], np.s_[:, :-1], np.s_[:, 1:]),
        (node[:-1, :], node[1:, :], np.s_[:-1, :], np.s_[1:, :]),
    ):
        hit = (a >= 0) & (b >= 0) & (a != b)
        flat = np.arange(node.size).reshape(node.shape)
        fa, fb = flat[pa][hit], flat[pb][hit]
        na, nb = a[hit], b[hit]
        touching.update(zip(fa.tolist(), na.tolist(), nb.tolist()))
        touching.update(zip(fb.tolist(), nb.tolist(), na.tolist()))

    weights: dict[tuple[int, int], float] = {}
    for pix, own, other in sorted(touching):
        key = (min(own, other), max(own, other))
        weights[key] = weights.get(key, 0.0) + float(edge_map[divmod(pix, w)])
    return EdgeWeightGraph(len(group), weights)


def _dijkstra(g: EdgeWeightGraph, source: int) -> np.ndarray:
    adj: list[list[tuple[int, float]]] = [[] for _ in range(g.num_nodes)]
    for (a, b), w in g.weights.items():
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = np.full(g.num_nodes, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def geodesic_distance(g: EdgeWeightGraph, i: int, j: int) -> float:
    for k in (i, j):
        if not 0 <= k < g.num_nodes:
            raise IndexError(f"unknown node {k}")
    d = _dijkstra(g, i)[j]
    return float(d) if np.isfinite(d) else g.sentinel


def geodesic_matrix(g: EdgeWeightGraph) -> np.ndarray:
    d = np.stack([_dijkstra(g, i) for i in range(g.num_nodes)]) if g.num_nodes else np.zeros((0, 0))
    d[~np.isfinite(d)] = g.sentinel
    return d


# --------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class SegmentDescriptor:
    mean_object_potentials: np.ndarray
    mean_scp_potentials: np.ndarray
    normalized_area: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.mean_object_potentials, self.mean_scp_potentials,
                               [self.normalized_area]])


@dataclass(frozen=True)
class PairwiseFeatures:
    desc_i: SegmentDescriptor
    desc_j: SegmentDescriptor
    geodesic: float
    euclidean: float
    angle_sin: float
    angle_cos: float

    def vector(self) -> np.ndarray:
        # geodesic distances are unbounded (disconnected pairs get a sentinel),
        # so the network sees log1p of them
        return np.concatenate([self.desc_i.vector(), self.desc_j.vector(),
                               [math.log1p(self.geodesic), self.euclidean,
                                self.angle_sin, self.angle_cos]])


def feature_dim(num_object_labels: int, num_scp_labels: int) -> int:
    """Length of :meth:`PairwiseFeatures.vector` (label counts include background)."""
    return 2 * (num_object_labels + num_scp_labels + 1) + 4


def describe(group: SegmentGroup, obj: PotentialMap, scp: PotentialMap, i: int) -> SegmentDescriptor:
    s = group.segments[i]
    return SegmentDescriptor(
        obj.values[s.rows, s.cols].mean(axis=0),
        scp.values[s.rows, s.cols].mean(axis=0),
        s.area / group.object_area,
    )


def _relative(group: SegmentGroup, i: int, j: int) -> tuple[float, float, float]:
    if group.height <= 0 or group.width <= 0:
        raise ValueError("degenerate group bounding box")
    (ri, ci), (rj, cj) = group.segments[i].centroid, group.segments[j].centroid
    dr, dc = rj - ri, cj - ci
    dist = math.hypot(dr / group.height, dc / group.width)
    if dr == 0 and dc == 0:
        return dist, 0.0, 1.0
    theta = math.atan2(dr, dc)
    return dist, math.sin(theta), math.cos(theta)


def pairwise_features(group: SegmentGroup, obj: PotentialMap, scp: PotentialMap, i: int, j: int,
                      edge_map: np.ndarray | None = None) -> PairwiseFeatures:
    """Features of the ordered pair (i, j) of nodes in ``group``.

    The angle is the direction of j's centroid seen from i's (row axis
    pointing down), encoded as (sin, cos); coincident centroids give (0, 1).
    """
    n = len(group)
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node indices ({i}, {j}) out of range for a group of {n}")
    if i == j:
        raise ValueError("pairwise features need two distinct nodes")
    if edge_map is None:
        edge_map = compute_edge_map(scp)
    graph = build_edge_graph(group, edge_map)
    dist, s, c = _relative(group, i, j)
    return PairwiseFeatures(describe(group, obj, scp, i), describe(group, obj, scp, j),
                            geodesic_distance(graph, i, j), dist, s, c)


def group_features(group: SegmentGroup, obj: PotentialMap, scp: PotentialMap,
                   edge_map: np.ndarray) -> dict[tuple[int, int], PairwiseFeatures]:
    """Features for every ordered pair of distinct nodes."""
    desc = [describe(group, obj, scp, k) for k in range(len(group))]
    geo = geodesic_matrix(build_edge_graph(group, edge_map))
    out = {}
    for i in range(len(group)):
        for j in range(len(group)):
            if i != j:
                dist, s, c = _relative(group, i, j)
                out[i, j] = PairwiseFeatures(desc[i], desc[j], float(geo[i, j]), dist, s, c)
    return out


# --------------------------------------------------------------------------
# network

HEAD_NAMES = ("object_i", "object_j", "scp_i", "scp_j")


@dataclass
class PairwiseModel:
    """Shared ReLU hidden layer feeding four softmax heads.

    Head order: object of i, object of j, SCP of i, SCP of j.
    """

    w1: np.ndarray
    b1: np.ndarray
    head_w: list[np.ndarray]
    head_b: list[np.ndarray]
    dropout_rate: float = DROPOUT
    losses: list[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.head_w = [np.asarray(w, dtype=np.float64) for w in self.head_w]
        self.head_b = [np.asarray(b, dtype=np.float64) for b in self.head_b]
        if len(self.head_w) != 4 or len(self.head_b) != 4:
            raise ValueError("pairwise model needs exactly four heads")
        hidden = self.w1.shape[1]
        if self.b1.shape != (hidden,):
            raise ValueError("hidden bias length mismatch")
        for w, b in zip(self.head_w, self.head_b):
            if w.shape[0] != hidden or b.shape != (w.shape[1],):
                raise ValueError("head shape mismatch")
        if self.head_w[0].shape != self.head_w[1].shape or self.head_w[2].shape != self.head_w[3].shape:
            raise ValueError("paired heads must share label-space sizes")
        if not all(np.isfinite(p).all() for p in self.params()):
            raise ValueError("pairwise model weights must be finite")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def num_object_labels(self) -> int:
        return self.head_w[0].shape[1]

    @property
    def num_scp_labels(self) -> int:
        return self.head_w[2].shape[1]

    @property
    def head_sizes(self) -> tuple[int, int, int, int]:
        return tuple(w.shape[1] for w in self.head_w)  # type: ignore[return-value]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, *self.head_w, *self.head_b]

    def copy(self) -> "PairwiseModel":
        return PairwiseModel(self.w1.copy(), self.b1.copy(), [w.copy() for w in self.head_w],
                             [b.copy() for b in self.head_b], self.dropout_rate, list(self.losses))

    @classmethod
    def zeros(cls, input_dim: int, num_object_labels: int, num_scp_labels: int,
              hidden: int = HIDDEN) -> "PairwiseModel":
        sizes = (num_object_labels, num_object_labels, num_scp_labels, num_scp_labels)
        return cls(np.zeros((input_dim, hidden)), np.zeros(hidden),
                   [np.zeros((hidden, k)) for k in sizes], [np.zeros(k) for k in sizes])

    @classmethod
    def random(cls, input_dim: int, num_object_labels: int, num_scp_labels: int,
               hidden: int = HIDDEN, seed: int = 0, dropout_rate: float = DROPOUT) -> "PairwiseModel":
        rng = np.random.default_rng(seed)
        sizes = (num_object_labels, num_object_labels, num_scp_labels, num_scp_labels)
        return cls(
            rng.normal(0.0, math.sqrt(2.0 / input_dim), (input_dim, hidden)),
            np.full(hidden, 0.01),
            [rng.normal(0.0, math.sqrt(1.0 / hidden), (hidden, k)) for k in sizes],
            [np.zeros(k) for k in sizes],
            dropout_rate,
        )

    @classmethod
    def for_grammar(cls, g: LabelGrammar, seed: int = 0, hidden: int = HIDDEN,
                    dropout_rate: float = DROPOUT) -> "PairwiseModel":
        no, ns = len(g.object_labels), len(g.scp_labels)
        return cls.random(feature_dim(no, ns), no, ns, hidden, seed, dropout_rate)

    def check_grammar(self, g: LabelGrammar) -> None:
        no, ns = len(g.object_labels), len(g.scp_labels)
        if (self.num_object_labels, self.num_scp_labels) != (no, ns):
            raise ValueError(
                f"model heads ({self.num_object_labels} objects, {self.num_scp_labels} SCPs) "
                f"do not match grammar ({no}, {ns})")
        if self.input_dim != feature_dim(no, ns):
            raise ValueError(f"model input dim {self.input_dim} != {feature_dim(no, ns)}")


def _as_matrix(f) -> np.ndarray:
    if isinstance(f, PairwiseFeatures):
        return f.vector()[None, :]
    x = np.asarray(f, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _hidden(m: PairwiseModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = x @ m.w1 + m.b1
    return pre, np.maximum(pre, 0.0)


def model_log_probs(m: PairwiseModel, f) -> list[np.ndarray]:
    """Per-head log-probabilities, each (n, K). ``f`` may be features or an (n, D) matrix."""
    x = _as_matrix(f)
    if x.shape[1] != m.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} does not match model input {m.input_dim}")
    _, h = _hidden(m, x)
    return [log_softmax(h @ w + b, axis=1) for w, b in zip(m.head_w, m.head_b)]


def model_forward(m: PairwiseModel, f: PairwiseFeatures) -> tuple[np.ndarray, ...]:
    """Four probability vectors; dropout is never applied here."""
    x = _as_matrix(f)
    if x.shape[1] != m.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} does not match model input {m.input_dim}")
    _, h = _hidden(m, x)
    return tuple(softmax(h @ w + b, axis=1)[0] for w, b in zip(m.head_w, m.head_b))


def _neg_log(p: np.ndarray) -> np.ndarray:
    return -np.log(np.maximum(p, PROB_FLOOR))


def pairwise_potential(m: PairwiseModel, f: PairwiseFeatures,
                       labels: tuple[int, int, int, int]) -> float:
    """-log P(l_o^i) - log P(l_o^j) - log P(l_p^i) - log P(l_p^j)."""
    probs = model_forward(m, f)
    total = 0.0
    for p, lab in zip(probs, labels):
        if not 0 <= lab < len(p):
            raise IndexError(f"label {lab} out of range for a head of size {len(p)}")
        total += float(_neg_log(p[lab]))
    return total


def pairwise_table(m: PairwiseModel, f: PairwiseFeatures, dom_i: Sequence[JointLabel],
                   dom_j: Sequence[JointLabel]) -> np.ndarray:
    """``table[a, b]`` = pairwise_potential for labels dom_i[a], dom_j[b]."""
    oi, oj, si, sj = (_neg_log(p) for p in model_forward(m, f))
    di = np.array(dom_i, dtype=np.int64).reshape(-1, 2)
    dj = np.array(dom_j, dtype=np.int64).reshape(-1, 2)
    left = oi[di[:, 0]] + si[di[:, 1]]
    right = oj[dj[:, 0]] + sj[dj[:, 1]]
    return left[:, None] + right[None, :]


# --------------------------------------------------------------------------
# training

PairwiseSample = tuple[PairwiseFeatures, tuple[int, int, int, int]]


def model_loss_and_grad(m: PairwiseModel, x: np.ndarray, y: np.ndarray,
                        keep: np.ndarray | None = None, with_grad: bool = True):
    """Mean over samples of the summed four-head multinomial logistic loss.

    ``keep`` is an optional (n, hidden) dropout multiplier (0 or 1/(1-rate)).
    Gradients come back in :meth:`PairwiseModel.params` order.
    """
    n = len(x)
    pre, h = _hidden(m, x)
    hd = h * keep if keep is not None else h
    idx = np.arange(n)
    loss = 0.0
    dhd = np.zeros_like(h)
    gw, gb = [], []
    for k, (w, b) in enumerate(zip(m.head_w, m.head_b)):
        ls = log_softmax(hd @ w + b, axis=1)
        loss -= ls[idx, y[:, k]].sum()
        if with_grad:
            dz = np.exp(ls)
            dz[idx, y[:, k]] -= 1.0
            dz /= n
            gw.append(hd.T @ dz)
            gb.append(dz.sum(axis=0))
            dhd += dz @ w.T
    loss /= n
    if not with_grad:
        return loss
    dh = dhd * keep if keep is not None else dhd
    dpre = dh * (pre > 0)
    return loss, [x.T @ dpre, dpre.sum(axis=0), *gw, *gb]


def _samples_to_arrays(samples: Sequence[PairwiseSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([f.vector() if isinstance(f, PairwiseFeatures) else np.asarray(f, float)
                  for f, _ in samples])
    y = np.array([lab for _, lab in samples], dtype=np.int64).reshape(len(samples), 4)
    return x, y


def train_model(samples: Sequence[PairwiseSample], cfg: TrainConfig,
                init: PairwiseModel | None = None, num_labels: tuple[int, int] | None = None,
                dropout_rate: float | None = None) -> PairwiseModel:
    """Mini-batch gradient descent with inverted dropout on the hidden layer.

    ``num_labels`` = (object labels, SCP labels) including background, needed
    when no ``init`` model is given. ``losses`` on the result records the
    dropout-free full-set loss before training and after each epoch.
    """
    if len(samples) == 0:
        raise ValueError("train_model needs at least one sample")
    x, y = _samples_to_arrays(samples)
    if init is None:
        if num_labels is None:
            raise ValueError("pass num_labels or an init model")
        init = PairwiseModel.random(x.shape[1], *num_labels, seed=cfg.seed,
                                    dropout_rate=DROPOUT if dropout_rate is None else dropout_rate)
    m = init.copy()
    if dropout_rate is not None:
        m.dropout_rate = dropout_rate
    m.losses = []
    if x.shape[1] != m.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} does not match model input {m.input_dim}")
    sizes = np.array(m.head_sizes)
    if (y < 0).any() or (y >= sizes).any():
        raise ValueError("ground-truth label out of range")

    rng = np.random.default_rng(cfg.seed + 1)
    n = len(x)
    rate = m.dropout_rate
    m.losses.append(float(model_loss_and_grad(m, x, y, with_grad=False)))
    for epoch in range(cfg.max_epochs):
        order = np.arange(n) if cfg.batch_size >= n else rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            keep = None
            if rate > 0:
                keep = (rng.random((len(idx), m.hidden)) >= rate) / (1.0 - rate)
            _, grads = model_loss_and_grad(m, x[idx], y[idx], keep)
            for p, g in zip(m.params(), grads):
                p -= cfg.learning_rate * g
        loss = float(model_loss_and_grad(m, x, y, with_grad=False))
        if not np.isfinite(loss):
            raise TrainingDivergence(
                f"pairwise training diverged at epoch {epoch}: loss={loss}, "
                f"last finite loss={m.losses[-1]:.6g}, learning_rate={cfg.learning_rate}")
        m.losses.append(loss)
    log.debug("pairwise loss %.6g -> %.6g over %d epochs", m.losses[0], m.losses[-1], cfg.max_epochs)
    return m


def head_accuracy(m: PairwiseModel, samples: Sequence[PairwiseSample]) -> np.ndarray:
    x, y = _samples_to_arrays(samples)
    lp = model_log_probs(m, x)
    return np.array([(np.argmax(l, axis=1) == y[:, k]).mean() for k, l in enumerate(lp)])


# --------------------------------------------------------------------------
# model files: 16-byte header, then D, hidden, K_obj, K_scp (uint32),
# dropout rate (float32), then w1, b1, the four head matrices and the four
# head biases, each row-major float32

_MODEL_MAGIC = b"SCPPAIR\x00"


def save_model(m: PairwiseModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", _MODEL_MAGIC, 1, 0))
        fh.write(struct.pack("<IIIIf", m.input_dim, m.hidden, m.num_object_labels,
                             m.num_scp_labels, m.dropout_rate))
        for p in m.params():
            fh.write(np.asarray(p, dtype="<f4").tobytes())


def load_model(path: str | Path, grammar: LabelGrammar | None = None) -> PairwiseModel:
    raw = Path(path).read_bytes()
    if len(raw) < 36:
        raise formats.FormatError(f"{path}: file too short for pairwise-model header")
    magic, version, _ = struct.unpack_from("<8sII", raw, 0)
    if magic != _MODEL_MAGIC or version != 1:
        raise formats.FormatError(f"{path}: not a pairwise-model file (magic={magic!r})")
    d, hid, ko, ks, rate = struct.unpack_from("<IIIIf", raw, 16)
    shapes = [(d, hid), (hid,), (hid, ko), (hid, ko), (hid, ks), (hid, ks), (ko,), (ko,), (ks,), (ks,)]
    need = 36 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != need:
        raise formats.FormatError(f"{path}: payload is {len(raw)} bytes, dimensions imply {need}")
    arrays, off = [], 36
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(np.frombuffer(raw, "<f4", k, off).reshape(s).astype(np.float64))
        off += 4 * k
    m = PairwiseModel(arrays[0], arrays[1], arrays[2:6], arrays[6:10], float(rate))
    if grammar is not None:
        m.check_grammar(grammar)
    return m
