"""SCP segment proposal: argmax, 4-connected components, spatial grouping."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .potentials import PotentialMap

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
DEFAULT_TS = 10.0


def argmax_labels(scp: PotentialMap) -> np.ndarray:
    """Per-pixel argmax; ``np.argmax`` returns the lowest index on ties."""
    return np.argmax(scp.values, axis=2).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Segment:
    id: int
    scp: int
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self) -> None:
        if len(self.rows) == 0 or len(self.rows) != len(self.cols):
            raise ValueError("segment needs a nonempty, aligned pixel list")

    @property
    def area(self) -> int:
        return len(self.rows)

    @property
    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    @cached_property
    def centroid(self) -> tuple[float, float]:
        return float(self.rows.mean()), float(self.cols.mean())

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        """(row0, col0, row1, col1), inclusive."""
        return (int(self.rows.min()), int(self.cols.min()),
                int(self.rows.max()), int(self.cols.max()))

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean mask over the bbox, padded by one pixel on every side."""
        r0, c0, r1, c1 = self.bbox
        m = np.zeros((r1 - r0 + 3, c1 - c0 + 3), dtype=bool)
        m[self.rows - r0 + 1, self.cols - c0 + 1] = True
        return m

    @cached_property
    def boundary(self) -> np.ndarray:
        """(n, 2) member pixels with at least one non-member 4-neighbour."""
        m = self.mask
        interior = m.copy()
        interior[1:-1, 1:-1] &= m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
        rr, cc = np.nonzero(m & ~interior)
        r0, c0, _, _ = self.bbox
        return np.stack([rr + r0 - 1, cc + c0 - 1], axis=1)

    def to_record(self) -> dict:
        return {"id": self.id, "scp": self.scp, "area": self.area,
                "centroid": list(self.centroid), "bbox": list(self.bbox)}


def connected_components(lm: np.ndarray, min_area: int = 0) -> list[Segment]:
    """Maximal 4-connected regions of equal non-background label.

    Segments come out ordered by their first pixel in row-major order.
    ``min_area`` drops segments smaller than that many pixels.
    """
    lm = np.asarray(lm)
    if lm.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {lm.shape}")
    found = []
    for label in np.unique(lm):
        if label == 0:
            continue
        comp, n = ndimage.label(lm == label, structure=FOUR_CONNECTED)
        if n == 0:
            continue
        flat = comp.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=n + 1)
        starts = np.cumsum(counts)[:-1]
        for k in range(1, n + 1):
            idx = order[starts[k - 1]:starts[k - 1] + counts[k]]
            if len(idx) < max(min_area, 1):
                continue
            rows, cols = np.divmod(idx, lm.shape[1])
            found.append((int(idx[0]), int(label), rows, cols))
    found.sort(key=lambda t: t[0])
    return [Segment(i, scp, rows, cols) for i, (_, scp, rows, cols) in enumerate(found)]


@dataclass(frozen=True, eq=False)
class SegmentGroup:
    segments: tuple[Segment, ...]
    bbox: tuple[int, int, int, int] = field(init=False)
    object_area: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("a segment group must contain at least one segment")
        boxes = np.array([s.bbox for s in self.segments])
        object.__setattr__(self, "bbox", (int(boxes[:, 0].min()), int(boxes[:, 1].min()),
                                          int(boxes[:, 2].max()), int(boxes[:, 3].max())))
        object.__setattr__(self, "object_area", sum(s.area for s in self.segments))

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def height(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    def to_record(self) -> dict:
        return {"bbox": list(self.bbox), "object_area": self.object_area,
                "segments": [s.to_record() for s in self.segments]}


def segment_distance(a: Segment, b: Segment, metric: str = "euclidean") -> float:
    """Minimum pixel-to-pixel distance, evaluated on boundary pixels only."""
    return float(cdist(a.boundary, b.boundary, metric=metric).min())


def _bbox_gap(a: Segment, b: Segment) -> float:
    ar0, ac0, ar1, ac1 = a.bbox
    br0, bc0, br1, bc1 = b.bbox
    dr = max(0, br0 - ar1, ar0 - br1)
    dc = max(0, bc0 - ac1, ac0 - bc1)
    return float(max(dr, dc))


def group_segments(segs: Sequence[Segment], t_s: float = DEFAULT_TS,
                   metric: str = "euclidean") -> list[SegmentGroup]:
    """Single-linkage clustering: link two segments when their distance < t_s."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    if metric not in ("euclidean", "cityblock"):
        raise ValueError(f"unsupported metric {metric!r}")
    n = len(segs)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            # the Chebyshev gap lower-bounds both metrics
            if _bbox_gap(segs[i], segs[j]) >= t_s:
                continue
            if find(i) == find(j):
                continue
            if segment_distance(segs[i], segs[j], metric) < t_s:
                parent[find(i)] = find(j)

    clusters: dict[int, list[Segment]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(segs[i])
    groups = [SegmentGroup(tuple(sorted(c, key=lambda s: s.id))) for c in clusters.values()]
    groups.sort(key=lambda g: (g.bbox[0], g.bbox[1], g.segments[0].id))
    return groups


def propose(scp: PotentialMap, t_s: float = DEFAULT_TS, metric: str = "euclidean",
            min_area: int = 0) -> list[SegmentGroup]:
    return group_segments(connected_components(argmax_labels(scp), min_area), t_s, metric)


def label_segments(shape: tuple[int, int], segs: Iterable[Segment]) -> np.ndarray:
    """Map of segment ids (-1 where no segment)."""
    out = np.full(shape, -1, dtype=np.int64)
    for s in segs:
        out[s.rows, s.cols] = s.id
    return out
