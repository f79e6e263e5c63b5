"""End-to-end training and inference."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .crf import (DAMPING, LAMBDA_E, LAMBDA_P, MAX_ITERS, TOL, Labeling, brute_force_map,
                  build_fcrf, decode_maps, group_report, lbp_map)
from .grammar import LabelGrammar, load_grammar_file
from .pairwise import (PairwiseModel, compute_edge_map, load_model, save_model, train_model)
from .potentials import (ConvRefiner, PotentialMap, TrainConfig, TrainingDivergence,
                         load_potential_map, load_refiner, refine_object_potentials, save_refiner,
                         train_refiner)
from .proposal import DEFAULT_TS, SegmentGroup, propose
from .synth import Scene, generate_pairwise_dataset

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    """Re-raise anything escaping the block as a stage-tagged PipelineError."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


@dataclass(frozen=True)
class InferenceConfig:
    lambda_e: float = LAMBDA_E
    lambda_p: float = LAMBDA_P
    t_s: float = DEFAULT_TS
    metric: str = "euclidean"
    min_area: int = 0
    max_iters: int = MAX_ITERS
    damping: float = DAMPING
    tol: float = TOL
    restrict_domains: bool = False
    oracle: bool = False
    # brute force only runs on groups with at most this many nodes
    oracle_max_nodes: int = 5


@dataclass(frozen=True, eq=False)
class InferenceResult:
    object_map: np.ndarray
    part_map: np.ndarray
    refined: PotentialMap
    groups: list[SegmentGroup]
    labelings: list[Labeling]
    report: dict


def infer(obj: PotentialMap, scp: PotentialMap, g: LabelGrammar, refiner: ConvRefiner | None,
          model: PairwiseModel, cfg: InferenceConfig = InferenceConfig()) -> InferenceResult:
    """refine -> argmax -> components -> groups -> one FCRF per group -> LBP -> decode."""
    with _stage("check"):
        if obj.shape[:2] != scp.shape[:2]:
            raise ValueError(f"object map {obj.shape[:2]} and SCP map {scp.shape[:2]} differ in size")
        if obj.channels != len(g.object_labels) or scp.channels != len(g.scp_labels):
            raise ValueError(
                f"potentials have {obj.channels}/{scp.channels} channels, grammar needs "
                f"{len(g.object_labels)}/{len(g.scp_labels)}")
        model.check_grammar(g)
    with _stage("refine"):
        refined = refine_object_potentials(scp, obj, refiner) if refiner is not None else obj
    with _stage("propose"):
        groups = propose(scp, cfg.t_s, cfg.metric, cfg.min_area)
        edge = compute_edge_map(scp) if groups and scp.height * scp.width > 1 else None
    labelings, records = [], []
    for k, group in enumerate(groups):
        with _stage(f"fcrf[group {k}]"):
            fg = build_fcrf(group, refined, scp, model, g, cfg.lambda_e, cfg.lambda_p,
                            cfg.restrict_domains, edge)
        with _stage(f"lbp[group {k}]"):
            lab = lbp_map(fg, cfg.max_iters, cfg.damping, cfg.tol)
        oracle = None
        if cfg.oracle and len(group) <= cfg.oracle_max_nodes:
            with _stage(f"oracle[group {k}]"):
                oracle = brute_force_map(fg)
        labelings.append(lab)
        records.append(group_report(group, lab, g, oracle))
    with _stage("decode"):
        obj_map, part_map = decode_maps(groups, labelings, g, scp.height, scp.width)
    report = {"height": scp.height, "width": scp.width, "config": asdict(cfg), "groups": records}
    return InferenceResult(obj_map, part_map, refined, groups, labelings, report)


def run_pipeline(obj_path, scp_path, grammar_path, refiner_path, model_path,
                 cfg: InferenceConfig = InferenceConfig(), out_dir=None) -> InferenceResult:
    """File-level pipeline. Writes object.lbl, part.lbl and report.json to ``out_dir``."""
    with _stage("load grammar"):
        g = load_grammar_file(grammar_path)
    with _stage("load potentials"):
        obj = load_potential_map(obj_path)
        scp = load_potential_map(scp_path)
    with _stage("load refiner"):
        refiner = load_refiner(refiner_path) if refiner_path else None
    with _stage("load pairwise model"):
        model = load_model(model_path, g)
    result = infer(obj, scp, g, refiner, model, cfg)
    if out_dir is not None:
        with _stage("write outputs"):
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            formats.write_labels(out / "object.lbl", result.object_map)
            formats.write_labels(out / "part.lbl", result.part_map)
            (out / "report.json").write_text(json.dumps(result.report, indent=2))
    return result


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class PipelineTrainConfig:
    refiner: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.05, batch_size=10_000, max_epochs=60))
    pairwise: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.1, batch_size=10_000, max_epochs=400))
    # the refiner's im2col matrices grow with every scene; a few suffice
    refiner_scenes: int = 8
    dropout_rate: float = 0.2
    t_s: float = DEFAULT_TS
    seed: int = 0


def train(scenes: Sequence[Scene], g: LabelGrammar,
          cfg: PipelineTrainConfig = PipelineTrainConfig()) -> tuple[ConvRefiner, PairwiseModel]:
    if not scenes:
        raise PipelineError("train", ValueError("scene corpus is empty"))
    with _stage("train refiner"):
        samples = [(s.scp, s.obj, s.object_gt) for s in scenes[:cfg.refiner_scenes]]
        refiner = train_refiner(samples, TrainConfig(**{**asdict(cfg.refiner), "seed": cfg.seed}))
        # persisted weights are float32; train the pairwise model on what inference will see
        refiner = _round_trip_refiner(refiner)
    with _stage("pairwise dataset"):
        data = generate_pairwise_dataset(scenes, g, refiner, cfg.t_s)
        if not data:
            raise ValueError("corpus has no group with two or more segments")
    with _stage("train pairwise model"):
        model = train_model(
            data, TrainConfig(**{**asdict(cfg.pairwise), "seed": cfg.seed}),
            num_labels=(len(g.object_labels), len(g.scp_labels)), dropout_rate=cfg.dropout_rate)
    return refiner, model


def _round_trip_refiner(r: ConvRefiner) -> ConvRefiner:
    out = ConvRefiner(r.kernel.astype(np.float32).astype(np.float64),
                      r.bias.astype(np.float32).astype(np.float64), r.scp_channels)
    out.losses = list(r.losses)
    return out


def train_pipeline(scenes: Sequence[Scene], g: LabelGrammar, out_dir,
                   cfg: PipelineTrainConfig = PipelineTrainConfig()) -> tuple[Path, Path]:
    """Train both models and write refiner.bin, pairwise.bin and train_log.json."""
    refiner, model = train(scenes, g, cfg)
    for name, losses in (("refiner", refiner.losses), ("pairwise", model.losses)):
        if losses and losses[-1] >= losses[0]:
            log.warning("%s loss did not decrease: %.6g -> %.6g", name, losses[0], losses[-1])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rpath, mpath = out / "refiner.bin", out / "pairwise.bin"
    with _stage("write models"):
        save_refiner(refiner, rpath)
        save_model(model, mpath)
        (out / "train_log.json").write_text(json.dumps({
            "scenes": len(scenes),
            "refiner_loss": refiner.losses,
            "pairwise_loss": model.losses,
        }, indent=1))
    return rpath, mpath


__all__ = [
    "InferenceConfig", "InferenceResult", "PipelineError", "PipelineTrainConfig",
    "TrainingDivergence", "infer", "run_pipeline", "train", "train_pipeline",
]
