"""Random factor graphs for checking LBP against brute force."""
from __future__ import annotations

import numpy as np

from .crf import LAMBDA_E, LAMBDA_P, FactorGraph
from .grammar import JointLabel


def random_factor_graph(rng: np.random.Generator, max_nodes: int = 5, max_labels: int = 8,
                        family: str = "segment", nodes: int | None = None,
                        lambda_e: float = LAMBDA_E) -> FactorGraph:
    """A fully connected graph with random energies.

    ``segment`` mimics the graphs built from segments: unaries are pixel
    counts times -log of a random distribution, and each ordered pair adds
    -log of a random distribution over label pairs. ``uniform`` draws every
    energy from U(0, 1), which gives frustrated, pairwise-dominated graphs.
    """
    n = int(rng.integers(1, max_nodes + 1)) if nodes is None else nodes
    sizes = [int(k) for k in rng.integers(1, max_labels + 1, size=n)]
    domains = tuple(tuple(JointLabel(1, k + 1) for k in range(s)) for s in sizes)
    if family == "segment":
        unaries = tuple(int(rng.integers(5, 60)) * -np.log(rng.dirichlet(np.ones(s))) for s in sizes)

        def table(a: int, b: int) -> np.ndarray:
            fwd = -np.log(rng.dirichlet(np.ones(a * b))).reshape(a, b)
            bwd = -np.log(rng.dirichlet(np.ones(a * b))).reshape(b, a)
            return fwd + bwd.T
    elif family == "uniform":
        unaries = tuple(rng.uniform(0, 1, s) for s in sizes)

        def table(a: int, b: int) -> np.ndarray:
            return rng.uniform(0, 1, (a, b))
    else:
        raise ValueError(f"unknown family {family!r}")
    pairwise = {(i, j): table(sizes[i], sizes[j]) for i in range(n) for j in range(i + 1, n)}
    return FactorGraph(domains, unaries, pairwise, lambda_e, LAMBDA_P)
