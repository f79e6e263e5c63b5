import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scpseg.grammar import is_consistent
from scpseg.potentials import ConvRefiner
from scpseg.proposal import argmax_labels, propose
from scpseg.synth import (Confusion, Instance, PartShape, SceneError, SceneSpec,
                          confused_leg_scene, dominant_label, generate_pairwise_dataset,
                          generate_scene, load_scene, paint_ground_truth, random_scene, save_scene)


def simple_spec(noise=0.0, confusions=()):
    horse = Instance("horse", (2, 2), (
        PartShape("body1", (2, 4, 8, 16)),
        PartShape("head(h)", (0, 0, 6, 5), "ellipse"),
        PartShape("leg1", (8, 5, 13, 7)),
        PartShape("leg1", (8, 12, 13, 14)),
    ))
    return SceneSpec(20, 30, (horse,), noise, tuple(confusions))


def test_noise_zero_is_one_hot(horse_cow):
    s = generate_scene(simple_spec(), horse_cow, 0)
    assert set(np.unique(s.obj.values)) == {0.0, 1.0}
    assert np.array_equal(np.argmax(s.obj.values, 2), s.object_gt)
    assert np.array_equal(np.argmax(s.scp.values, 2), s.scp_gt)


def test_ground_truth_is_grammar_consistent(horse_cow):
    s = generate_scene(simple_spec(), horse_cow, 0)
    for o, sc, p in zip(s.object_gt.ravel(), s.scp_gt.ravel(), s.part_gt.ravel()):
        assert is_consistent(horse_cow, int(o), int(sc))
        assert p == horse_cow.part_index(int(o), int(sc))
    assert (s.object_gt == 0).sum() > 0


def test_noise_accuracy_over_seeds(horse_cow):
    accs = []
    for seed in range(20):
        s = random_scene(horse_cow, seed, noise=0.05)
        accs.append((np.argmax(s.obj.values, 2) == s.object_gt).mean())
        accs.append((argmax_labels(s.scp) == s.scp_gt).mean())
    assert min(accs) >= 0.99


def test_confusion_mislabels_region_only(horse_cow):
    box = (10, 7, 15, 9)
    spec = simple_spec(0.05, [Confusion(box, ("horse", "cow"))])
    clean = generate_scene(simple_spec(0.05), horse_cow, 3)
    conf = generate_scene(spec, horse_cow, 3)
    assert np.array_equal(clean.object_gt, conf.object_gt)
    pred = np.argmax(conf.obj.values, 2)
    r0, c0, r1, c1 = box
    assert (pred[r0:r1, c0:c1] == horse_cow.object_index("cow")).all()
    outside = np.ones(pred.shape, bool)
    outside[r0:r1, c0:c1] = False
    assert np.array_equal(conf.obj.values[outside], clean.obj.values[outside])


def test_generation_is_seeded(horse_cow):
    a, b = random_scene(horse_cow, 11), random_scene(horse_cow, 11)
    assert np.array_equal(a.obj.values, b.obj.values) and a.spec == b.spec
    assert not np.array_equal(a.obj.values, random_scene(horse_cow, 12).obj.values)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.floats(0, 1), st.floats(0, 1))
def test_potentials_always_valid(seed, noise, rate):
    from scpseg.grammar import builtin_grammar
    g = builtin_grammar("horse_cow")
    s = random_scene(g, seed, noise=noise, confusion_rate=rate)
    for pm in (s.obj, s.scp):
        assert np.allclose(pm.values.sum(2), 1, atol=1e-5) and (pm.values >= 0).all()


def test_spec_errors(horse_cow):
    bad_part = SceneSpec(10, 10, (Instance("horse", (0, 0), (PartShape("head(c)", (0, 0, 2, 2)),)),))
    with pytest.raises(SceneError, match="cannot have"):
        paint_ground_truth(bad_part, horse_cow)
    outside = SceneSpec(10, 10, (Instance("horse", (5, 5), (PartShape("body1", (0, 0, 8, 8)),)),))
    with pytest.raises(SceneError, match="leaves"):
        paint_ground_truth(outside, horse_cow)
    with pytest.raises(SceneError):
        paint_ground_truth(SceneSpec(10, 10, (Instance("zebra", (0, 0), ()),)), horse_cow)
    with pytest.raises(SceneError):
        paint_ground_truth(SceneSpec(10, 10, (), noise=2.0), horse_cow)
    with pytest.raises(SceneError):
        SceneSpec.from_dict({"height": 1, "width": 1, "instances": [], "colour": 1})


def test_spec_dict_round_trip():
    spec = simple_spec(0.1, [Confusion((1, 1, 3, 3), ("horse", "cow"))])
    import json
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_scene_files_round_trip(tmp_path, horse_cow):
    s = random_scene(horse_cow, 4)
    save_scene(s, tmp_path / "s")
    back = load_scene(tmp_path / "s", horse_cow)
    assert np.array_equal(back.obj.values.astype(np.float32), s.obj.values.astype(np.float32))
    assert np.array_equal(back.part_gt, s.part_gt)


def test_confused_leg_scene(horse_cow):
    s = confused_leg_scene(horse_cow, 0)
    pred = np.argmax(s.obj.values, 2)
    cow, horse = horse_cow.object_index("cow"), horse_cow.object_index("horse")
    assert set(np.unique(s.object_gt)) == {0, cow}
    assert ((pred == horse) & (s.object_gt == cow)).sum() == 12


def test_dominant_label():
    assert dominant_label(np.array([3] * 6 + [5] * 4)) == 3
    assert dominant_label(np.array([5] * 6 + [3] * 4)) == 5
    assert dominant_label(np.array([2, 2, 1, 1])) == 1


def test_dataset_labels_and_size(horse_cow):
    scenes = [random_scene(horse_cow, k, noise=0.0) for k in range(4)]
    data = generate_pairwise_dataset(scenes, horse_cow)
    expected = sum(len(gr) * (len(gr) - 1) for s in scenes for gr in propose(s.scp))
    assert len(data) == expected > 0
    for f, (oi, oj, si, sj) in data:
        assert is_consistent(horse_cow, oi, si) and is_consistent(horse_cow, oj, sj)
        assert oi != 0 and si != 0
    with_refiner = generate_pairwise_dataset(scenes, horse_cow, ConvRefiner.identity(6, 3))
    assert len(with_refiner) == len(data)


def test_dataset_majority_on_straddling_segment(horse_cow):
    # a leg whose object potentials say "horse" but 60% of the pixels are gt cow
    cow = Instance("cow", (0, 0), (PartShape("body1", (0, 0, 4, 10)), PartShape("leg1", (4, 2, 9, 4))))
    horse = Instance("horse", (0, 0), (PartShape("leg1", (7, 2, 9, 4)),))
    s = generate_scene(SceneSpec(12, 12, (cow, horse)), horse_cow, 0)
    data = generate_pairwise_dataset([s], horse_cow)
    leg_labels = {lab[0] for f, lab in data if lab[2] == horse_cow.scp_index("leg1")}
    assert leg_labels == {horse_cow.object_index("cow")}
