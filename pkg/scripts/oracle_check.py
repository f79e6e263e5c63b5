"""LBP versus brute-force MAP on random fully connected graphs.

Compares the two random-graph families and a few damping settings:

    python scripts/oracle_check.py --count 100
"""
import argparse
import time

import numpy as np

from scpseg.crf import brute_force_map, lbp_map
from scpseg.testing import random_factor_graph


def sweep(family, damping, max_iters, count, seed):
    rng = np.random.default_rng(seed)
    ratios, two, agree = [], 0, 0
    for _ in range(count):
        fg = random_factor_graph(rng, 5, 8, family)
        lab, best = lbp_map(fg, max_iters, damping), brute_force_map(fg)
        ratios.append(lab.total_energy / best.total_energy if best.total_energy > 0 else 1.0)
        if fg.num_nodes == 2:
            two += 1
            agree += lab.indices == best.indices
    r = np.array(ratios)
    return r.max(), (r > 1.05).sum(), (r > 1 + 1e-9).sum(), agree, two


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    print(f"{'family':8} {'damping':>7} {'iters':>5} {'worst':>7} {'>1.05':>6} {'subopt':>6} {'2-node':>7} {'sec':>5}")
    for family in ("segment", "uniform"):
        for damping, iters in ((0.0, 5), (0.5, 5), (0.5, 50), (0.0, 50)):
            t0 = time.perf_counter()
            worst, over, sub, agree, two = sweep(family, damping, iters, a.count, a.seed)
            print(f"{family:8} {damping:7.1f} {iters:5d} {worst:7.3f} {over:6d} {sub:6d} "
                  f"{agree:3d}/{two:<3d} {time.perf_counter() - t0:5.1f}")


if __name__ == "__main__":
    main()
