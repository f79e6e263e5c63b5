"""How many LBP sweeps the groups of synthetic scenes need to converge.

Trains the pipeline once, then runs inference on held-out scenes with
several damping values and reports the fraction of groups whose largest
message change falls below the tolerance within 5 sweeps.

    python scripts/convergence_study.py --scenes 60
"""
import argparse
from collections import Counter

from scpseg.grammar import builtin_grammar
from scpseg.pipeline import InferenceConfig, infer, train
from scpseg.synth import random_scene


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grammar", default="horse_cow")
    p.add_argument("--train-scenes", type=int, default=30)
    p.add_argument("--scenes", type=int, default=60)
    p.add_argument("--confusion-rate", type=float, default=0.5)
    a = p.parse_args()
    g = builtin_grammar(a.grammar)
    refiner, model = train([random_scene(g, s, confusion_rate=0.5) for s in range(a.train_scenes)], g)
    scenes = [random_scene(g, 500 + k, confusion_rate=a.confusion_rate) for k in range(a.scenes)]
    for damping in (0.0, 0.25, 0.5):
        within5, sizes, total = 0, Counter(), 0
        its = Counter()
        for s in scenes:
            res = infer(s.obj, s.scp, g, refiner, model, InferenceConfig(damping=damping, max_iters=100))
            for group, lab in zip(res.groups, res.labelings):
                if len(group) < 2:
                    continue
                total += 1
                sizes[len(group)] += 1
                its[lab.iterations] += 1
                within5 += lab.converged and lab.iterations <= 5
        print(f"damping {damping:.2f}: {within5}/{total} groups converged within 5 sweeps; "
              f"sweeps needed {dict(sorted(its.items()))}")
    print(f"group sizes {dict(sorted(sizes.items()))}")


if __name__ == "__main__":
    main()
