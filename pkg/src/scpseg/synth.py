"""Synthetic scenes with exact ground truth.

A scene is a set of object instances built from axis-aligned rectangles and
ellipses, one shape per part. Potentials are the one-hot ground truth mixed
with Dirichlet noise, optionally with channel swaps inside chosen regions to
imitate a dense predictor confusing, say, a cow leg for a horse leg.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .grammar import GrammarError, LabelGrammar, is_consistent
from .pairwise import PairwiseFeatures, compute_edge_map, group_features
from .potentials import (ConvRefiner, PotentialMap, load_potential_map, refine_object_potentials,
                         save_potential_map)
from .proposal import DEFAULT_TS, argmax_labels, connected_components, group_segments

Box = tuple[int, int, int, int]  # row0, col0, row1, col1 (half-open)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class PartShape:
    scp: str
    box: Box  # relative to the instance origin
    shape: str = "rect"


@dataclass(frozen=True)
class Instance:
    object: str
    origin: tuple[int, int]
    parts: tuple[PartShape, ...]


@dataclass(frozen=True)
class Confusion:
    """Swap two channels of one potential map inside ``box`` (absolute)."""

    box: Box
    labels: tuple[str, str]
    target: str = "object"


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    instances: tuple[Instance, ...]
    noise: float = 0.0
    confusions: tuple[Confusion, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        unknown = set(d) - {"height", "width", "instances", "noise", "confusions"}
        if unknown:
            raise SceneError(f"unknown scene keys {sorted(unknown)}")
        instances = tuple(
            Instance(i["object"], tuple(i["origin"]),
                     tuple(PartShape(p["scp"], tuple(p["box"]), p.get("shape", "rect"))
                           for p in i["parts"]))
            for i in d["instances"])
        confusions = tuple(Confusion(tuple(c["box"]), tuple(c["labels"]), c.get("target", "object"))
                           for c in d.get("confusions", ()))
        return cls(int(d["height"]), int(d["width"]), instances, float(d.get("noise", 0.0)),
                   confusions)


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    object_gt: np.ndarray
    scp_gt: np.ndarray
    part_gt: np.ndarray
    obj: PotentialMap
    scp: PotentialMap


def _shape_mask(h: int, w: int, box: Box, shape: str) -> np.ndarray:
    r0, c0, r1, c1 = box
    mask = np.zeros((h, w), dtype=bool)
    if shape == "rect":
        mask[max(r0, 0):max(r1, 0), max(c0, 0):max(c1, 0)] = True
    elif shape == "ellipse":
        rr, cc = np.mgrid[0:h, 0:w]
        cy, cx = (r0 + r1 - 1) / 2.0, (c0 + c1 - 1) / 2.0
        ry, rx = max((r1 - r0) / 2.0, 0.5), max((c1 - c0) / 2.0, 0.5)
        mask = ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1.0
    else:
        raise SceneError(f"unknown part shape {shape!r}")
    return mask


def _validate(spec: SceneSpec, g: LabelGrammar) -> None:
    if spec.height < 1 or spec.width < 1:
        raise SceneError("scene must be at least 1 x 1")
    if not 0 <= spec.noise <= 1:
        raise SceneError("noise strength must lie in [0, 1]")
    for inst in spec.instances:
        try:
            o = g.object_index(inst.object)
        except GrammarError as exc:
            raise SceneError(str(exc)) from exc
        if o == 0:
            raise SceneError("instances cannot be background")
        for part in inst.parts:
            try:
                s = g.scp_index(part.scp)
            except GrammarError as exc:
                raise SceneError(str(exc)) from exc
            if not is_consistent(g, o, s):
                raise SceneError(f"{inst.object} cannot have part {part.scp}")
            r0, c0, r1, c1 = part.box
            orow, ocol = inst.origin
            if r1 <= r0 or c1 <= c0:
                raise SceneError(f"empty part box {part.box}")
            if orow + r0 < 0 or ocol + c0 < 0 or orow + r1 > spec.height or ocol + c1 > spec.width:
                raise SceneError(f"part {part.scp} of {inst.object} leaves the image")
    for conf in spec.confusions:
        if conf.target not in ("object", "scp"):
            raise SceneError(f"confusion target must be 'object' or 'scp', got {conf.target!r}")
        lookup = g.object_index if conf.target == "object" else g.scp_index
        for name in conf.labels:
            try:
                lookup(name)
            except GrammarError as exc:
                raise SceneError(str(exc)) from exc


def paint_ground_truth(spec: SceneSpec, g: LabelGrammar) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(object, SCP, part) label maps; later parts overwrite earlier ones."""
    _validate(spec, g)
    h, w = spec.height, spec.width
    obj = np.zeros((h, w), dtype=np.int64)
    scp = np.zeros((h, w), dtype=np.int64)
    part = np.zeros((h, w), dtype=np.int64)
    for inst in spec.instances:
        o = g.object_index(inst.object)
        orow, ocol = inst.origin
        for p in inst.parts:
            s = g.scp_index(p.scp)
            r0, c0, r1, c1 = p.box
            m = _shape_mask(h, w, (r0 + orow, c0 + ocol, r1 + orow, c1 + ocol), p.shape)
            obj[m], scp[m], part[m] = o, s, g.part_index(o, s)
    return obj, scp, part


def _noisy_one_hot(labels: np.ndarray, channels: int, noise: float,
                   rng: np.random.Generator) -> np.ndarray:
    one_hot = np.eye(channels)[labels]
    if noise == 0:
        return one_hot
    dirichlet = rng.dirichlet(np.ones(channels), size=labels.shape)
    p = (1.0 - noise) * one_hot + noise * dirichlet
    return p / p.sum(axis=2, keepdims=True)


def generate_scene(spec: SceneSpec, g: LabelGrammar, seed: int = 0) -> Scene:
    obj_gt, scp_gt, part_gt = paint_ground_truth(spec, g)
    rng = np.random.default_rng(seed)
    obj_p = _noisy_one_hot(obj_gt, len(g.object_labels), spec.noise, rng)
    scp_p = _noisy_one_hot(scp_gt, len(g.scp_labels), spec.noise, rng)
    for conf in spec.confusions:
        target = obj_p if conf.target == "object" else scp_p
        lookup = g.object_index if conf.target == "object" else g.scp_index
        a, b = (lookup(n) for n in conf.labels)
        r0, c0, r1, c1 = conf.box
        region = target[r0:r1, c0:c1]
        region[..., [a, b]] = region[..., [b, a]]
    return Scene(spec, obj_gt, scp_gt, part_gt, PotentialMap(obj_p), PotentialMap(scp_p))


# --------------------------------------------------------------------------
# random quadruped-like layouts


def _scp_for(g: LabelGrammar, obj: int, meaning: str) -> str | None:
    if meaning not in g.semantic_meanings:
        return None
    m = g.semantic_meanings.index(meaning)
    for s in g.scps_of(obj):
        if g.meaning_of[s] == m:
            return g.scp_labels[s]
    return None


def random_instance(g: LabelGrammar, rng: np.random.Generator, obj: int | None = None,
                    origin: tuple[int, int] = (0, 0),
                    leg_shape: tuple[int, int] | None = None) -> tuple[Instance, tuple[int, int]]:
    """An animal-like instance and its (height, width) extent.

    Body rectangle, head ellipse on one side, a tail on the other and two to
    four legs below, all 4-connected to the body. Legs sit at least two
    columns apart so equal-SCP legs stay separate segments. ``leg_shape``
    fixes (length, width) of the legs.
    """
    if obj is None:
        obj = int(rng.integers(1, len(g.object_labels)))
    bh, bw = int(rng.integers(6, 10)), int(rng.integers(14, 19))
    hh, hw = int(rng.integers(6, 9)), int(rng.integers(5, 8))
    lh, lw = int(rng.integers(5, 9)), int(rng.integers(2, 4))
    tl = int(rng.integers(3, 6))
    if leg_shape is not None:
        lh, lw = leg_shape
    top = 3
    width = hw + bw + 2
    height = top + bh + lh
    parts: list[tuple[str, Box, str]] = []
    body = _scp_for(g, obj, "body")
    head = _scp_for(g, obj, "head")
    leg = _scp_for(g, obj, "leg")
    tail = _scp_for(g, obj, "tail")
    if body:
        parts.append((body, (top, hw, top + bh, hw + bw), "rect"))
    if head:
        parts.append((head, (0, 0, hh, hw + 1), "ellipse"))
    if tail:
        parts.append((tail, (top, hw + bw, top + tl, hw + bw + 2), "rect"))
    if leg:
        max_legs = min(4, (bw - lw - 2) // (lw + 2) + 1)
        n_legs = int(rng.integers(2, max_legs + 1))
        slots = np.linspace(hw + 1, hw + bw - lw - 1, n_legs).round().astype(int)
        for c in slots:
            parts.append((leg, (top + bh, int(c), top + bh + lh, int(c) + lw), "rect"))
    if rng.random() < 0.5:  # face right
        parts = [(s, (r0, width - c1, r1, width - c0), sh) for s, (r0, c0, r1, c1), sh in parts]
    inst = Instance(g.object_labels[obj], origin,
                    tuple(PartShape(s, b, sh) for s, b, sh in parts))
    return inst, (height, width)


def random_scene_spec(g: LabelGrammar, rng: np.random.Generator, height: int = 40,
                      width: int = 96, max_instances: int = 2, noise: float = 0.05,
                      gap: int = int(DEFAULT_TS) + 2, confusion_rate: float = 0.0) -> SceneSpec:
    """Instances laid out left to right, separated by at least ``gap`` columns.

    With probability ``confusion_rate`` an instance gets one shared part whose
    object potentials are swapped with another object that shares that SCP.
    """
    n = int(rng.integers(1, max_instances + 1))
    instances = []
    confusions = []
    col = int(rng.integers(1, 4))
    for _ in range(n):
        inst, (ih, iw) = random_instance(g, rng)
        if col + iw > width - 1 or ih > height - 2:
            break
        row = int(rng.integers(1, height - ih))
        instances.append(Instance(inst.object, (row, col), inst.parts))
        if confusion_rate > 0 and rng.random() < confusion_rate:
            conf = _shared_part_confusion(g, instances[-1], rng)
            if conf is not None:
                confusions.append(conf)
        col += iw + gap + int(rng.integers(0, 4))
    return SceneSpec(height, width, tuple(instances), noise, tuple(confusions))


def _shared_part_confusion(g: LabelGrammar, inst: Instance,
                           rng: np.random.Generator) -> Confusion | None:
    o = g.object_index(inst.object)
    options = []
    for part in inst.parts:
        s = g.scp_index(part.scp)
        others = [k for k in range(1, len(g.object_labels)) if k != o and is_consistent(g, k, s)]
        options.extend((part, k) for k in others)
    if not options:
        return None
    part, other = options[int(rng.integers(len(options)))]
    r0, c0, r1, c1 = part.box
    orow, ocol = inst.origin
    return Confusion((r0 + orow, c0 + ocol, r1 + orow, c1 + ocol),
                     (inst.object, g.object_labels[other]), "object")


def random_scene(g: LabelGrammar, seed: int, **kw) -> Scene:
    rng = np.random.default_rng(seed)
    return generate_scene(random_scene_spec(g, rng, **kw), g, seed=int(rng.integers(2 ** 31)))


def confused_leg_scene(g: LabelGrammar, seed: int, true_object: str = "cow",
                       wrong_object: str = "horse", noise: float = 0.05,
                       leg_shape: tuple[int, int] = (6, 2)) -> Scene:
    """One instance with one randomly chosen leg carrying swapped object potentials.

    Legs are kept small (``leg_shape`` = length, width) so that the rest of the
    instance outweighs the confused region.
    """
    rng = np.random.default_rng(seed)
    inst, (ih, iw) = random_instance(g, rng, g.object_index(true_object), leg_shape=leg_shape)
    origin = (2, 2)
    inst = Instance(inst.object, origin, inst.parts)
    leg_meaning = g.semantic_meanings.index("leg")
    legs = [p for p in inst.parts if g.meaning_of[g.scp_index(p.scp)] == leg_meaning]
    if not legs:
        raise SceneError(f"{true_object} has no leg in this grammar")
    r0, c0, r1, c1 = legs[int(rng.integers(len(legs)))].box
    box = (r0 + origin[0], c0 + origin[1], r1 + origin[0], c1 + origin[1])
    spec = SceneSpec(ih + 4, iw + 4, (inst,), noise,
                     (Confusion(box, (true_object, wrong_object), "object"),))
    return generate_scene(spec, g, seed=int(rng.integers(2 ** 31)))


def save_scene(scene: Scene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(json.dumps(scene.spec.to_dict(), indent=1))
    save_potential_map(scene.obj, out / "obj.pot")
    save_potential_map(scene.scp, out / "scp.pot")
    formats.write_labels(out / "object_gt.lbl", scene.object_gt)
    formats.write_labels(out / "scp_gt.lbl", scene.scp_gt)
    formats.write_labels(out / "part_gt.lbl", scene.part_gt)


def load_scene(scene_dir, g: LabelGrammar) -> Scene:
    d = Path(scene_dir)
    spec = SceneSpec.from_dict(json.loads((d / "scene.json").read_text()))
    obj_gt, scp_gt, part_gt = paint_ground_truth(spec, g)
    for name, painted in (("object_gt", obj_gt), ("scp_gt", scp_gt), ("part_gt", part_gt)):
        stored = formats.read_labels(d / f"{name}.lbl")
        if not np.array_equal(stored, painted):
            raise SceneError(f"{d / name}.lbl does not match scene.json under this grammar")
    return Scene(spec, obj_gt, scp_gt, part_gt,
                 load_potential_map(d / "obj.pot"), load_potential_map(d / "scp.pot"))


# --------------------------------------------------------------------------
# training data for the pairwise network


def dominant_label(labels: np.ndarray) -> int:
    """Most frequent label; the lowest label wins ties."""
    return int(np.argmax(np.bincount(np.asarray(labels).ravel())))


def generate_pairwise_dataset(scenes: Sequence[Scene], g: LabelGrammar,
                              refiner: ConvRefiner | None = None, t_s: float = DEFAULT_TS,
                              metric: str = "euclidean", min_area: int = 0,
                              ) -> list[tuple[PairwiseFeatures, tuple[int, int, int, int]]]:
    """Every ordered segment pair of every proposed group, with dominant gt labels.

    Features are computed exactly as at inference: from the refined object
    potentials when a refiner is given, and from argmax SCP segments.
    """
    samples = []
    for scene in scenes:
        obj = refine_object_potentials(scene.scp, scene.obj, refiner) if refiner else scene.obj
        groups = group_segments(connected_components(argmax_labels(scene.scp), min_area), t_s, metric)
        edge = compute_edge_map(scene.scp) if groups else None
        for group in groups:
            if len(group) < 2:
                continue
            feats = group_features(group, obj, scene.scp, edge)
            dom = [(dominant_label(scene.object_gt[s.rows, s.cols]),
                    dominant_label(scene.scp_gt[s.rows, s.cols])) for s in group.segments]
            for (i, j), f in feats.items():
                samples.append((f, (dom[i][0], dom[j][0], dom[i][1], dom[j][1])))
    return samples


__all__ = [
    "Confusion", "Instance", "PartShape", "Scene", "SceneError", "SceneSpec",
    "confused_leg_scene", "dominant_label", "generate_pairwise_dataset", "generate_scene", "load_scene", "save_scene",
    "paint_ground_truth", "random_instance", "random_scene", "random_scene_spec",
]
