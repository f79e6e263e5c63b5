"""Command-line interface: synth, train, infer, eval, oracle-check."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import crf, formats
from .evaluation import iou, mean_over
from .grammar import LabelGrammar, builtin_grammar, load_grammar_file
from .pipeline import (InferenceConfig, PipelineError, PipelineTrainConfig, run_pipeline,
                       train_pipeline)
from .potentials import TrainConfig
from .proposal import DEFAULT_TS
from .synth import SceneSpec, generate_scene, load_scene, random_scene, save_scene

log = logging.getLogger("scpseg")


def _grammar(arg: str) -> LabelGrammar:
    path = Path(arg)
    if path.exists():
        return load_grammar_file(path)
    return builtin_grammar(arg)


def _grammar_path(arg: str, scratch: Path) -> Path:
    """A file path for ``arg``, materialising built-in grammars when needed."""
    path = Path(arg)
    if path.exists():
        return path
    from importlib import resources
    text = resources.files("scpseg.grammars").joinpath(f"{arg}.yaml").read_text()
    scratch.mkdir(parents=True, exist_ok=True)
    out = scratch / f"{arg}.yaml"
    out.write_text(text)
    return out


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _add_inference_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-e", type=float, default=crf.LAMBDA_E)
    p.add_argument("--lambda-p", type=float, default=crf.LAMBDA_P)
    p.add_argument("--ts", type=float, default=DEFAULT_TS, help="grouping distance threshold")
    p.add_argument("--metric", choices=["euclidean", "cityblock"], default="euclidean")
    p.add_argument("--min-area", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=crf.MAX_ITERS)
    p.add_argument("--damping", type=float, default=crf.DAMPING)
    p.add_argument("--tol", type=float, default=crf.TOL)
    p.add_argument("--restrict-domains", action="store_true")
    p.add_argument("--oracle", action="store_true",
                   help="also run brute-force MAP on small groups and compare")


def _inference_config(a: argparse.Namespace) -> InferenceConfig:
    return InferenceConfig(a.lambda_e, a.lambda_p, a.ts, a.metric, a.min_area, a.max_iters,
                           a.damping, a.tol, a.restrict_domains, a.oracle)


def cmd_synth(a: argparse.Namespace) -> int:
    g = _grammar(a.grammar)
    out = Path(a.out)
    if a.spec:
        import yaml
        spec = SceneSpec.from_dict(yaml.safe_load(Path(a.spec).read_text()))
        scene = generate_scene(spec, g, a.seed)
        save_scene(scene, out)
        _emit({"scene": str(out), "height": spec.height, "width": spec.width})
        return 0
    for k in range(a.count):
        scene = random_scene(g, a.seed + k, noise=a.noise, confusion_rate=a.confusion_rate)
        save_scene(scene, out / f"scene_{k:04d}")
    _emit({"scenes": a.count, "out": str(out)})
    return 0


def _corpus(a: argparse.Namespace, g: LabelGrammar):
    if a.corpus:
        dirs = sorted(p for p in Path(a.corpus).iterdir() if (p / "scene.json").exists())
        return [load_scene(d, g) for d in dirs]
    return [random_scene(g, a.seed + k, noise=a.noise, confusion_rate=a.confusion_rate)
            for k in range(a.scenes)]


def cmd_train(a: argparse.Namespace) -> int:
    g = _grammar(a.grammar)
    scenes = _corpus(a, g)
    cfg = PipelineTrainConfig(
        refiner=TrainConfig(a.refiner_lr, 10_000, a.refiner_epochs, a.seed),
        pairwise=TrainConfig(a.pairwise_lr, a.batch_size, a.pairwise_epochs, a.seed),
        t_s=a.ts, seed=a.seed)
    rpath, mpath = train_pipeline(scenes, g, a.out, cfg)
    losses = json.loads((Path(a.out) / "train_log.json").read_text())
    _emit({"refiner": str(rpath), "pairwise": str(mpath), "scenes": len(scenes),
           "refiner_loss": [losses["refiner_loss"][0], losses["refiner_loss"][-1]],
           "pairwise_loss": [losses["pairwise_loss"][0], losses["pairwise_loss"][-1]]})
    return 0


def cmd_infer(a: argparse.Namespace) -> int:
    out = Path(a.out)
    grammar_path = _grammar_path(a.grammar, out)
    t0 = time.perf_counter()
    res = run_pipeline(a.obj, a.scp, grammar_path, a.refiner, a.model, _inference_config(a), out)
    groups = res.report["groups"]
    _emit({"out": str(out), "groups": len(groups), "seconds": round(time.perf_counter() - t0, 4),
           "converged": all(gr["converged"] for gr in groups)})
    return 0


def cmd_eval(a: argparse.Namespace) -> int:
    if len(a.pred) != len(a.gt):
        raise SystemExit("eval: --pred and --gt need the same number of files")
    names = None
    n = a.num_labels
    if a.grammar:
        g = _grammar(a.grammar)
        names = g.object_labels if a.kind == "object" else g.part_labels
        n = n or len(names)
    if not n:
        raise SystemExit("eval: pass --num-labels or --grammar")
    results = []
    for p, t in zip(a.pred, a.gt):
        r = iou(formats.read_labels(p), formats.read_labels(t), n)
        results.append(r)
        _emit({"pred": p, "gt": t, **r.to_record(names)})
    _emit({"aggregate": mean_over(results)})
    return 0


def cmd_oracle_check(a: argparse.Namespace) -> int:
    from .testing import random_factor_graph
    rng = np.random.default_rng(a.seed)
    worst, agree, two = 1.0, 0, 0
    t0 = time.perf_counter()
    for k in range(a.count):
        fg = random_factor_graph(rng, a.max_nodes, a.max_labels, a.family)
        lab = crf.lbp_map(fg, a.max_iters, a.damping, a.tol)
        best = crf.brute_force_map(fg)
        ratio = lab.total_energy / best.total_energy if best.total_energy > 0 else 1.0
        worst = max(worst, ratio)
        if fg.num_nodes == 2:
            two += 1
            agree += lab.indices == best.indices
        if a.verbose:
            _emit({"instance": k, "nodes": fg.num_nodes, "lbp": lab.total_energy,
                   "brute_force": best.total_energy, "ratio": ratio, "iterations": lab.iterations})
    _emit({"instances": a.count, "worst_ratio": worst, "two_node_instances": two,
           "two_node_agreement": agree, "seconds": round(time.perf_counter() - t0, 3)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scpseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic scenes")
    s.add_argument("--grammar", default="horse_cow", help="grammar file or built-in name")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--confusion-rate", type=float, default=0.0)
    s.add_argument("--spec", help="render this scene spec (YAML/JSON) instead of random scenes")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the refiner and the pairwise network")
    t.add_argument("--grammar", default="horse_cow")
    t.add_argument("--out", required=True)
    t.add_argument("--corpus", help="directory of scenes written by 'synth'")
    t.add_argument("--scenes", type=int, default=20, help="random scenes when no corpus is given")
    t.add_argument("--noise", type=float, default=0.05)
    t.add_argument("--confusion-rate", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ts", type=float, default=DEFAULT_TS)
    t.add_argument("--refiner-lr", type=float, default=PipelineTrainConfig().refiner.learning_rate)
    t.add_argument("--refiner-epochs", type=int, default=PipelineTrainConfig().refiner.max_epochs)
    t.add_argument("--pairwise-lr", type=float, default=PipelineTrainConfig().pairwise.learning_rate)
    t.add_argument("--pairwise-epochs", type=int, default=PipelineTrainConfig().pairwise.max_epochs)
    t.add_argument("--batch-size", type=int, default=PipelineTrainConfig().pairwise.batch_size)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run the full pipeline on one image's potentials")
    i.add_argument("--grammar", default="horse_cow")
    i.add_argument("--obj", required=True, help="object potential map")
    i.add_argument("--scp", required=True, help="SCP potential map")
    i.add_argument("--refiner", help="refiner weights; omit to use raw object potentials")
    i.add_argument("--model", required=True, help="pairwise model weights")
    i.add_argument("--out", required=True)
    i.add_argument("--seed", type=int, default=0, help="accepted for symmetry; inference is deterministic")
    _add_inference_flags(i)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="IOU and pixel accuracy of label maps")
    e.add_argument("--pred", nargs="+", required=True)
    e.add_argument("--gt", nargs="+", required=True)
    e.add_argument("--num-labels", type=int)
    e.add_argument("--grammar")
    e.add_argument("--kind", choices=["object", "part"], default="object")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle-check", help="compare LBP against brute force on random graphs")
    o.add_argument("--count", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--max-nodes", type=int, default=5)
    o.add_argument("--max-labels", type=int, default=8)
    o.add_argument("--family", choices=["segment", "uniform"], default="segment")
    o.add_argument("--max-iters", type=int, default=crf.MAX_ITERS)
    o.add_argument("--damping", type=float, default=crf.DAMPING)
    o.add_argument("--tol", type=float, default=crf.TOL)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
