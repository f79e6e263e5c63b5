import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_energy
from scpseg.crf import (FactorGraph, Labeling, brute_force_map, brute_force_reference, build_fcrf,
                        decode_maps, group_report, lbp_map, node_domain, unary_energy)
from scpseg.grammar import JointLabel, is_consistent
from scpseg.pairwise import PairwiseModel
from scpseg.potentials import PotentialMap, normalize
from scpseg.proposal import Segment, SegmentGroup, connected_components, propose
from scpseg.synth import random_scene
from scpseg.testing import random_factor_graph


def pixel(po, ps):
    return PotentialMap(np.array([[po]])), PotentialMap(np.array([[ps]]))


def one_pixel_segment():
    return Segment(0, 1, np.array([0]), np.array([0]))


# ---------------------------------------------------------------- unaries

def test_unary_examples():
    seg = one_pixel_segment()
    obj, scp = pixel([0.0, 1.0, 0.0], [0.0, 1.0, 0.0])
    assert unary_energy(seg, obj, scp, JointLabel(1, 1)) == pytest.approx(0.0, abs=1e-9)
    obj, scp = pixel([0.5, 0.5, 0.0], [0.5, 0.5, 0.0])
    assert unary_energy(seg, obj, scp, JointLabel(1, 1), 0.3) == pytest.approx(1.3 * -math.log(0.5))


def test_unary_floor_keeps_energy_finite():
    obj, scp = pixel([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    e = unary_energy(one_pixel_segment(), obj, scp, JointLabel(1, 1))
    assert e == pytest.approx(1.3 * -math.log(1e-12))


def test_unary_matches_pixel_summation():
    rng = np.random.default_rng(0)
    obj, scp = normalize(rng.random((4, 5, 3))), normalize(rng.random((4, 5, 6)))
    flat = rng.choice(20, 10, replace=False)
    rows, cols = np.divmod(np.sort(flat), 5)
    seg = Segment(0, 2, rows, cols)
    label = JointLabel(2, 4)
    want = 0.0
    for r, c in zip(rows.tolist(), cols.tolist()):
        want += -math.log(obj.values[r, c, 2]) + 0.3 * -math.log(scp.values[r, c, 4])
    assert unary_energy(seg, obj, scp, label, 0.3) == pytest.approx(want, abs=1e-9)


def test_unary_rejects_inconsistent_label(horse_cow):
    obj, scp = pixel([0.2, 0.4, 0.4], [0.1] * 5 + [0.5])
    with pytest.raises(ValueError):
        unary_energy(one_pixel_segment(), obj, scp, JointLabel(1, 0), grammar=horse_cow)
    with pytest.raises(ValueError):
        unary_energy(one_pixel_segment(), obj, scp, JointLabel(7, 1))


# ---------------------------------------------------------------- domains and structure

def test_horse_cow_domain(horse_cow):
    dom = node_domain(horse_cow)
    assert len(dom) == len(horse_cow.connections) - 1 == 8
    assert all(is_consistent(horse_cow, o, s) and o != 0 and s != 0 for o, s in dom)


def test_restricted_domain(horse_cow):
    leg = horse_cow.scp_index("leg1")
    dom = node_domain(horse_cow, leg, restrict=True)
    assert {p.scp for p in dom} == {leg}
    assert {p.object for p in dom} == {1, 2}
    # both head SCPs share the meaning "head"
    dom = node_domain(horse_cow, horse_cow.scp_index("head(h)"), restrict=True)
    assert set(dom) == {JointLabel(1, horse_cow.scp_index("head(h)")),
                        JointLabel(2, horse_cow.scp_index("head(c)"))}
    with pytest.raises(ValueError):
        node_domain(horse_cow, None, restrict=True)


def scene_group(g, seed, min_nodes):
    for s in range(seed, seed + 50):
        scene = random_scene(g, s)
        for group in propose(scene.scp):
            if len(group) >= min_nodes:
                return scene, group
    raise AssertionError("no group large enough")


def test_single_node_group(horse_cow):
    scene, group = scene_group(horse_cow, 0, 1)
    single = SegmentGroup(group.segments[:1])
    fg = build_fcrf(single, scene.obj, scene.scp, PairwiseModel.for_grammar(horse_cow), horse_cow)
    assert fg.edges == []
    lab = lbp_map(fg)
    assert lab.indices == (int(np.argmin(fg.unaries[0])),)
    assert lab.iterations == 1
    assert brute_force_map(fg).indices == lab.indices


def test_three_node_structure(horse_cow):
    scene, group = scene_group(horse_cow, 0, 3)
    sub = SegmentGroup(group.segments[:3])
    fg = build_fcrf(sub, scene.obj, scene.scp, PairwiseModel.for_grammar(horse_cow), horse_cow)
    assert fg.edges == [(0, 1), (0, 2), (1, 2)]
    for (i, j), t in fg.pairwise.items():
        assert t.shape == (len(fg.domains[i]), len(fg.domains[j]))
    assert fg.lambda_e == 2.0 and fg.lambda_p == 0.3


def test_factor_graph_validation():
    d = (JointLabel(1, 1), JointLabel(1, 2))
    with pytest.raises(ValueError, match="fully connected"):
        FactorGraph((d, d), (np.zeros(2), np.zeros(2)), {})
    with pytest.raises(ValueError, match="non-finite"):
        FactorGraph((d,), (np.array([0.0, np.inf]),), {})
    with pytest.raises(ValueError, match="empty domain"):
        FactorGraph(((),), (np.zeros(0),), {})
    with pytest.raises(ValueError, match="does not match"):
        FactorGraph((d, d), (np.zeros(2), np.zeros(2)), {(0, 1): np.zeros((2, 3))})


# ---------------------------------------------------------------- inference

@pytest.mark.parametrize("seed", range(20))
def test_two_node_lbp_is_exact(seed):
    fg = random_factor_graph(np.random.default_rng(seed), nodes=2)
    assert lbp_map(fg).indices == brute_force_map(fg).indices


@pytest.mark.parametrize("seed", range(10))
def test_brute_force_matches_loop_oracles(seed):
    fg = random_factor_graph(np.random.default_rng(seed), max_nodes=4, max_labels=4)
    fast, slow = brute_force_map(fg), brute_force_reference(fg)
    assert fast.indices == slow.indices
    best, arg = brute_force_energy([len(d) for d in fg.domains], lambda i, a: fg.unaries[i][a],
                                   lambda i, j, a, b: fg.pairwise[i, j][a, b], fg.lambda_e)
    assert fast.total_energy == pytest.approx(best) and fast.indices == arg


def test_brute_force_tie_break_and_limit():
    d = tuple(JointLabel(1, k) for k in (1, 2, 3))
    fg = FactorGraph((d, d), (np.zeros(3), np.zeros(3)), {(0, 1): np.zeros((3, 3))})
    assert brute_force_map(fg).indices == (0, 0)
    with pytest.raises(ValueError, match="exceeds"):
        brute_force_map(fg, limit=8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["segment", "uniform"]))
def test_oracle_dominance_and_energy(seed, family):
    fg = random_factor_graph(np.random.default_rng(seed), family=family)
    lab, best = lbp_map(fg), brute_force_map(fg)
    assert best.total_energy <= lab.total_energy + 1e-9
    assert abs(lab.total_energy - fg.energy(lab.indices)) <= 1e-9
    assert all(lab.labels[i] in fg.domains[i] for i in range(fg.num_nodes))


def test_four_node_zero_pairwise_decomposes():
    rng = np.random.default_rng(5)
    fg = random_factor_graph(rng, nodes=4)
    flat = FactorGraph(fg.domains, fg.unaries, {e: np.zeros_like(t) for e, t in fg.pairwise.items()})
    want = tuple(int(np.argmin(u)) for u in fg.unaries)
    assert brute_force_map(flat).indices == want
    assert lbp_map(flat).indices == want


@pytest.mark.parametrize("seed", range(10))
def test_constant_pairwise_decomposes(seed):
    fg = random_factor_graph(np.random.default_rng(seed), nodes=5)
    const = FactorGraph(fg.domains, fg.unaries,
                        {e: np.full_like(t, 3.7) for e, t in fg.pairwise.items()})
    assert lbp_map(const).indices == tuple(int(np.argmin(u)) for u in fg.unaries)


@pytest.mark.parametrize("seed", range(10))
def test_constant_shift_leaves_argmin(seed):
    fg = random_factor_graph(np.random.default_rng(seed), nodes=4)
    c = 12.5
    shifted = FactorGraph(fg.domains, (fg.unaries[0] + c, *fg.unaries[1:]), fg.pairwise,
                          fg.lambda_e, fg.lambda_p)
    a, b = brute_force_map(fg), brute_force_map(shifted)
    assert b.indices == a.indices
    assert b.total_energy == pytest.approx(a.total_energy + c)
    assert lbp_map(shifted).indices == lbp_map(fg).indices
    some = tuple(0 for _ in fg.domains)
    assert shifted.energy(some) == pytest.approx(fg.energy(some) + c)


def test_lbp_reports_convergence():
    fg = random_factor_graph(np.random.default_rng(1), family="segment", nodes=4)
    lab = lbp_map(fg, max_iters=50)
    assert lab.converged and lab.max_change < 1e-6
    assert len(lab.history) == lab.iterations
    capped = lbp_map(fg, max_iters=1)
    assert capped.iterations == 1
    with pytest.raises(ValueError):
        lbp_map(fg, damping=1.0)
    damped = lbp_map(fg, max_iters=200, damping=0.5)
    assert damped.converged


# ---------------------------------------------------------------- decoding

def test_decode_single_leg(horse_cow):
    lm = np.zeros((4, 4), int)
    lm[1:3, 1:3] = horse_cow.scp_index("leg1")
    (seg,) = connected_components(lm)
    horse = horse_cow.object_index("horse")
    lab = Labeling((JointLabel(horse, seg.scp),), (0,), 0.0)
    obj, part = decode_maps(SegmentGroup((seg,)), lab, horse_cow, 4, 4)
    assert (obj[lm > 0] == horse).all() and (obj[lm == 0] == 0).all()
    assert {horse_cow.part_labels[k] for k in np.unique(part[lm > 0])} == {"horse-leg"}
    assert (part[lm == 0] == 0).all()


def test_decode_empty(horse_cow):
    obj, part = decode_maps([], [], horse_cow, 3, 5)
    assert not obj.any() and not part.any()


def test_decode_groups_independently(horse_cow):
    scene = random_scene(horse_cow, 3)
    groups = propose(scene.scp)
    assert len(groups) >= 2
    labs = []
    for gr in groups:
        dom = node_domain(horse_cow)
        labs.append(Labeling(tuple(dom[k % len(dom)] for k in range(len(gr))),
                             tuple(k % len(dom) for k in range(len(gr))), 0.0))
    obj, part = decode_maps(groups, labs, horse_cow, scene.scp.height, scene.scp.width)
    acc_o, acc_p = np.zeros_like(obj), np.zeros_like(part)
    for gr, lab in zip(groups, labs):
        o, p = decode_maps(gr, lab, horse_cow, scene.scp.height, scene.scp.width)
        r0, c0, r1, c1 = gr.bbox
        acc_o[r0:r1 + 1, c0:c1 + 1] += o[r0:r1 + 1, c0:c1 + 1]
        acc_p[r0:r1 + 1, c0:c1 + 1] += p[r0:r1 + 1, c0:c1 + 1]
    assert np.array_equal(obj, acc_o) and np.array_equal(part, acc_p)


def test_group_report_fields(horse_cow):
    scene, group = scene_group(horse_cow, 0, 2)
    fg = build_fcrf(group, scene.obj, scene.scp, PairwiseModel.for_grammar(horse_cow), horse_cow)
    lab = lbp_map(fg)
    rec = group_report(group, lab, horse_cow, brute_force_map(fg) if fg.search_space < 1e6 else None)
    assert rec["nodes"] == len(group) and len(rec["labels"]) == len(group)
    assert {"iterations", "converged", "energy"} <= set(rec)
