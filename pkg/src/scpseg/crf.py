"""Fully connected CRF over one segment group, solved by min-sum loopy BP.

Energy of a labeling x (one admissible (object, SCP) pair per node)::

    E(x) = sum_i U_i(x_i) + lambda_e * sum_{i != j} psi_ij(x_i, x_j)

The ordered sum over i != j is stored per unordered edge as
``psi_ij + psi_ji^T``. Inconsistent (object, SCP) pairs are excluded from the
node domains instead of being given infinite energy.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grammar import JointLabel, LabelGrammar, is_consistent
from .pairwise import PairwiseModel, compute_edge_map, group_features, pairwise_table
from .potentials import PotentialMap
from .proposal import Segment, SegmentGroup

LAMBDA_E = 2.0
LAMBDA_P = 0.3
MAX_ITERS = 5
# undamped: damping 0.5 halves the remaining change per sweep and cannot reach
# TOL within MAX_ITERS sweeps
DAMPING = 0.0
TOL = 1e-6
BRUTE_FORCE_LIMIT = 10 ** 7


def node_domain(g: LabelGrammar, proposed_scp: int | None = None,
                restrict: bool = False) -> list[JointLabel]:
    """Admissible labels of a segment node.

    By default every consistent foreground pair. With ``restrict``, only pairs
    whose SCP is ``proposed_scp`` or shares its semantic meaning.
    """
    pairs = g.consistent_pairs()
    if restrict:
        if proposed_scp is None or proposed_scp == 0:
            raise ValueError("restricted domains need the segment's proposed SCP")
        meaning = g.meaning_of[proposed_scp]
        pairs = [p for p in pairs if p.scp == proposed_scp or g.meaning_of[p.scp] == meaning]
    return pairs


def unary_energy(seg: Segment, obj: PotentialMap, scp: PotentialMap, label: JointLabel,
                 lambda_p: float = LAMBDA_P, grammar: LabelGrammar | None = None) -> float:
    if grammar is not None and not is_consistent(grammar, label.object, label.scp):
        raise ValueError(f"label {tuple(label)} is not in the node domain")
    if not (0 <= label.object < obj.channels and 0 <= label.scp < scp.channels):
        raise ValueError(f"label {tuple(label)} is out of range")
    po = obj.neg_log()[seg.rows, seg.cols, label.object].sum()
    ps = scp.neg_log()[seg.rows, seg.cols, label.scp].sum()
    return float(po + lambda_p * ps)


def unary_table(seg: Segment, obj_nlog: np.ndarray, scp_nlog: np.ndarray,
                domain: Sequence[JointLabel], lambda_p: float) -> np.ndarray:
    so = obj_nlog[seg.rows, seg.cols].sum(axis=0)
    ss = scp_nlog[seg.rows, seg.cols].sum(axis=0)
    d = np.array(domain, dtype=np.int64).reshape(-1, 2)
    return so[d[:, 0]] + lambda_p * ss[d[:, 1]]


@dataclass(frozen=True)
class FactorGraph:
    domains: tuple[tuple[JointLabel, ...], ...]
    unaries: tuple[np.ndarray, ...]
    # (i, j) with i < j -> |D_i| x |D_j| table, already summed over both orders
    pairwise: dict[tuple[int, int], np.ndarray]
    lambda_e: float = LAMBDA_E
    lambda_p: float = LAMBDA_P

    def __post_init__(self) -> None:
        n = len(self.domains)
        if len(self.unaries) != n:
            raise ValueError("one unary table per node is required")
        for i, (d, u) in enumerate(zip(self.domains, self.unaries)):
            if len(d) == 0:
                raise ValueError(f"node {i} has an empty domain")
            if np.shape(u) != (len(d),):
                raise ValueError(f"node {i}: unary table shape {np.shape(u)} != ({len(d)},)")
            if not np.isfinite(u).all():
                raise ValueError(f"node {i}: non-finite unary energy")
        expected = {(i, j) for i in range(n) for j in range(i + 1, n)}
        if set(self.pairwise) != expected:
            raise ValueError("factor graph must be fully connected with keys (i, j), i < j")
        for (i, j), t in self.pairwise.items():
            if np.shape(t) != (len(self.domains[i]), len(self.domains[j])):
                raise ValueError(f"edge ({i}, {j}) table shape {np.shape(t)} does not match domains")
            if not np.isfinite(t).all():
                raise ValueError(f"edge ({i}, {j}): non-finite pairwise energy")

    @property
    def num_nodes(self) -> int:
        return len(self.domains)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.pairwise)

    @property
    def search_space(self) -> int:
        return int(np.prod([len(d) for d in self.domains], dtype=object))

    def energy(self, assignment: Sequence[int]) -> float:
        """Energy of a labeling given as per-node domain indices."""
        e = sum(float(u[a]) for u, a in zip(self.unaries, assignment))
        for (i, j), t in self.pairwise.items():
            e += self.lambda_e * float(t[assignment[i], assignment[j]])
        return e


@dataclass(frozen=True)
class Labeling:
    labels: tuple[JointLabel, ...]
    indices: tuple[int, ...]
    total_energy: float
    iterations: int = 0
    converged: bool = True
    max_change: float = 0.0
    history: tuple[float, ...] = field(default=(), repr=False)


def build_fcrf(group: SegmentGroup, obj: PotentialMap, scp: PotentialMap, model: PairwiseModel,
               g: LabelGrammar, lambda_e: float = LAMBDA_E, lambda_p: float = LAMBDA_P,
               restrict_domains: bool = False, edge_map: np.ndarray | None = None) -> FactorGraph:
    if len(group.segments) == 0:
        raise ValueError("cannot build a CRF over an empty group")
    if obj.channels != len(g.object_labels) or scp.channels != len(g.scp_labels):
        raise ValueError("potential channel counts do not match the grammar")
    domains = tuple(tuple(node_domain(g, s.scp, restrict_domains)) for s in group.segments)
    obj_nlog, scp_nlog = obj.neg_log(), scp.neg_log()
    unaries = tuple(unary_table(s, obj_nlog, scp_nlog, d, lambda_p)
                    for s, d in zip(group.segments, domains))
    pairwise: dict[tuple[int, int], np.ndarray] = {}
    if len(group) > 1:
        if edge_map is None:
            edge_map = compute_edge_map(scp)
        feats = group_features(group, obj, scp, edge_map)
        n = len(group)
        for i in range(n):
            for j in range(i + 1, n):
                forward = pairwise_table(model, feats[i, j], domains[i], domains[j])
                backward = pairwise_table(model, feats[j, i], domains[j], domains[i])
                pairwise[i, j] = forward + backward.T
    return FactorGraph(domains, unaries, pairwise, lambda_e, lambda_p)


def _labeling(fg: FactorGraph, idx: Sequence[int], **kw) -> Labeling:
    idx = tuple(int(a) for a in idx)
    return Labeling(tuple(fg.domains[i][a] for i, a in enumerate(idx)), idx, fg.energy(idx), **kw)


def lbp_map(fg: FactorGraph, max_iters: int = MAX_ITERS, damping: float = DAMPING,
            tol: float = TOL) -> Labeling:
    """Synchronous min-sum loopy belief propagation.

    Messages are shifted so their minimum is zero, then blended as
    ``damping * old + (1 - damping) * new``. Iteration stops once the largest
    message change drops below ``tol`` or after ``max_iters`` sweeps.
    """
    if not 0 <= damping < 1:
        raise ValueError("damping must lie in [0, 1)")
    n = fg.num_nodes
    if n == 1 or max_iters < 1:
        beliefs = fg.unaries
        idx = [int(np.argmin(b)) for b in beliefs]
        return _labeling(fg, idx, iterations=1 if n == 1 else 0, converged=n == 1)

    # pairwise factor seen from i towards j: |D_i| x |D_j|
    tables = {}
    for (i, j), t in fg.pairwise.items():
        tables[i, j] = fg.lambda_e * t
        tables[j, i] = fg.lambda_e * t.T
    msgs = {(i, j): np.zeros(len(fg.domains[j])) for (i, j) in tables}
    incoming = [[k for k in range(n) if k != i] for i in range(n)]

    history = []
    converged = False
    it = 0
    change = np.inf
    for it in range(1, max_iters + 1):
        totals = [fg.unaries[i] + sum(msgs[k, i] for k in incoming[i]) for i in range(n)]
        new = {}
        for (i, j), t in tables.items():
            h = totals[i] - msgs[j, i]
            m = (h[:, None] + t).min(axis=0)
            m -= m.min()
            if damping:
                m = damping * msgs[i, j] + (1.0 - damping) * m
            new[i, j] = m
        change = max(float(np.abs(new[e] - msgs[e]).max()) for e in msgs)
        msgs = new
        history.append(change)
        if change < tol:
            converged = True
            break

    beliefs = [fg.unaries[i] + sum(msgs[k, i] for k in incoming[i]) for i in range(n)]
    idx = [int(np.argmin(b)) for b in beliefs]
    return _labeling(fg, idx, iterations=it, converged=converged, max_change=change,
                     history=tuple(history))


def brute_force_map(fg: FactorGraph, limit: int = BRUTE_FORCE_LIMIT) -> Labeling:
    """Exhaustive minimum; ties go to the lexicographically first assignment."""
    size = fg.search_space
    if size > limit:
        raise ValueError(f"search space of {size} assignments exceeds the limit of {limit}")
    n = fg.num_nodes
    sizes = [len(d) for d in fg.domains]
    total = np.zeros(sizes)
    for i, u in enumerate(fg.unaries):
        shape = [1] * n
        shape[i] = sizes[i]
        total = total + u.reshape(shape)
    for (i, j), t in fg.pairwise.items():
        shape = [1] * n
        shape[i], shape[j] = sizes[i], sizes[j]
        total = total + fg.lambda_e * t.reshape(shape)
    # C-order flattening makes argmin's first hit the lexicographic minimum
    idx = np.unravel_index(int(np.argmin(total)), sizes)
    return _labeling(fg, idx)


def brute_force_reference(fg: FactorGraph) -> Labeling:
    """Pure-Python enumeration, for checking :func:`brute_force_map` on tiny graphs."""
    best, best_idx = np.inf, None
    for idx in itertools.product(*(range(len(d)) for d in fg.domains)):
        e = fg.energy(idx)
        if e < best:
            best, best_idx = e, idx
    return _labeling(fg, best_idx)


def decode_maps(groups: SegmentGroup | Sequence[SegmentGroup],
                labelings: Labeling | Sequence[Labeling], g: LabelGrammar,
                height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Paint object and full part labels; pixels outside every group stay background."""
    if isinstance(groups, SegmentGroup):
        groups, labelings = [groups], [labelings]  # type: ignore[list-item]
    obj_map = np.zeros((height, width), dtype=np.int64)
    part_map = np.zeros((height, width), dtype=np.int64)
    painted = np.zeros((height, width), dtype=bool)
    for group, lab in zip(groups, labelings):
        if len(lab.labels) != len(group.segments):
            raise ValueError("labeling size does not match group")
        for seg, (o, s) in zip(group.segments, lab.labels):
            assert not painted[seg.rows, seg.cols].any(), "overlapping segments"
            painted[seg.rows, seg.cols] = True
            obj_map[seg.rows, seg.cols] = o
            part_map[seg.rows, seg.cols] = g.part_index(o, s)
    return obj_map, part_map


def group_report(group: SegmentGroup, lab: Labeling, g: LabelGrammar,
                 oracle: Labeling | None = None) -> dict:
    rec = {
        "nodes": len(group),
        "bbox": list(group.bbox),
        "iterations": lab.iterations,
        "converged": lab.converged,
        "energy": lab.total_energy,
        "labels": [
            {"segment": seg.id, "object": g.object_labels[o], "scp": g.scp_labels[s],
             "part": g.part_labels[g.part_index(o, s)]}
            for seg, (o, s) in zip(group.segments, lab.labels)
        ],
    }
    if oracle is not None:
        rec["oracle"] = {
            "energy": oracle.total_energy,
            "agrees": oracle.indices == lab.indices,
            "ratio": lab.total_energy / oracle.total_energy if oracle.total_energy else None,
        }
    return rec
