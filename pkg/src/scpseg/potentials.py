"""Per-pixel potential maps and the joint object-potential refiner.

The refiner is a single K x K convolution over the channel-wise
concatenation of SCP and object potentials, followed by a per-pixel softmax.
It is trained with plain gradient descent on the per-pixel multinomial
logistic loss.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import formats

log = logging.getLogger(__name__)

SUM_TOL = 1e-5
PROB_FLOOR = 1e-12


class PotentialError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class PotentialMap:
    """H x W x C per-pixel probabilities."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] < 1:
            raise PotentialError(f"potential map must be H x W x C, got shape {v.shape}")
        if np.isnan(v).any():
            raise PotentialError("potential map contains NaN")
        if (v < 0).any() or (v > 1 + SUM_TOL).any():
            raise PotentialError("potential values must lie in [0, 1]")
        sums = v.sum(axis=2)
        bad = np.abs(sums - 1.0) > SUM_TOL
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise PotentialError(
                f"pixel ({r}, {c}) channel sum is {sums[r, c]:.6g}, expected 1 within {SUM_TOL}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    def neg_log(self) -> np.ndarray:
        return -np.log(np.maximum(self.values, PROB_FLOOR))


def normalize(raw: np.ndarray) -> PotentialMap:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise PotentialError(f"expected H x W x C scores, got shape {raw.shape}")
    if (raw < 0).any():
        raise PotentialError("raw scores must be nonnegative")
    sums = raw.sum(axis=2, keepdims=True)
    if (sums <= 0).any():
        r, c, _ = np.argwhere(sums <= 0)[0]
        raise PotentialError(f"pixel ({r}, {c}) has an all-zero score vector")
    return PotentialMap(raw / sums)


def save_potential_map(pm: PotentialMap, path: str | Path) -> None:
    formats.write_tensor(path, pm.values)


def load_potential_map(path: str | Path) -> PotentialMap:
    try:
        return PotentialMap(formats.read_tensor(path))
    except PotentialError as exc:
        raise PotentialError(f"{path}: {exc}") from exc


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# refiner


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


# Values used for the large-scale models; too slow for desk-scale scenes.
REFERENCE_REFINER_CONFIG = TrainConfig(learning_rate=1e-4, batch_size=32)
REFERENCE_PAIRWISE_CONFIG = TrainConfig(learning_rate=1e-2, batch_size=10000)


@dataclass
class ConvRefiner:
    kernel: np.ndarray  # K x K x C_in x C_out
    bias: np.ndarray    # C_out
    scp_channels: int
    losses: list[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self) -> None:
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        k = self.kernel.shape[0]
        if self.kernel.ndim != 4 or self.kernel.shape[1] != k or k % 2 == 0:
            raise PotentialError(f"kernel must be K x K x C_in x C_out with odd K, got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[3],):
            raise PotentialError("bias length must equal C_out")
        if not 0 < self.scp_channels < self.kernel.shape[2]:
            raise PotentialError("scp_channels must leave at least one object channel")
        if self.object_channels != self.out_channels:
            raise PotentialError(
                f"C_in - scp_channels = {self.object_channels} must equal C_out = {self.out_channels}")
        if not (np.isfinite(self.kernel).all() and np.isfinite(self.bias).all()):
            raise PotentialError("refiner weights must be finite")

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[3]

    @property
    def object_channels(self) -> int:
        return self.in_channels - self.scp_channels

    @classmethod
    def zeros(cls, scp_channels: int, object_channels: int, size: int = 5) -> "ConvRefiner":
        kernel = np.zeros((size, size, scp_channels + object_channels, object_channels))
        return cls(kernel, np.zeros(object_channels), scp_channels)

    @classmethod
    def identity(cls, scp_channels: int, object_channels: int, size: int = 5,
                 gain: float = 1.0) -> "ConvRefiner":
        """Centre tap copies the object channels; everything else zero."""
        r = cls.zeros(scp_channels, object_channels, size)
        c = size // 2
        for o in range(object_channels):
            r.kernel[c, c, scp_channels + o, o] = gain
        return r

    def copy(self) -> "ConvRefiner":
        return ConvRefiner(self.kernel.copy(), self.bias.copy(), self.scp_channels, list(self.losses))

    def save(self, path: str | Path) -> None:
        save_refiner(self, path)


def _patches(x: np.ndarray, size: int) -> np.ndarray:
    """(H*W, K*K*C) matrix of zero-padded neighbourhoods, tap-major then channel."""
    p = size // 2
    h, w, c = x.shape
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (size, size), axis=(0, 1))  # H, W, C, K, K
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, size * size * c)


def _stack(scp: np.ndarray, obj: np.ndarray) -> np.ndarray:
    return np.concatenate([scp, obj], axis=2)


def _check_inputs(scp: PotentialMap, obj: PotentialMap, r: ConvRefiner) -> None:
    if scp.shape[:2] != obj.shape[:2]:
        raise PotentialError(f"SCP map {scp.shape[:2]} and object map {obj.shape[:2]} differ in size")
    if scp.channels != r.scp_channels or obj.channels != r.object_channels:
        raise PotentialError(
            f"refiner expects {r.scp_channels}+{r.object_channels} channels, "
            f"got {scp.channels}+{obj.channels}")


def refiner_logits(scp: PotentialMap, obj: PotentialMap, r: ConvRefiner) -> np.ndarray:
    """Pre-softmax refiner output, H x W x C_out."""
    _check_inputs(scp, obj, r)
    h, w = scp.height, scp.width
    cols = _patches(_stack(scp.values, obj.values), r.size)
    z = cols @ r.kernel.reshape(-1, r.out_channels) + r.bias
    return z.reshape(h, w, r.out_channels)


def refine_object_potentials(scp: PotentialMap, obj: PotentialMap, r: ConvRefiner) -> PotentialMap:
    p = softmax(refiner_logits(scp, obj, r), axis=2)
    # renormalise in case of float round-off on very peaked outputs
    return PotentialMap(p / p.sum(axis=2, keepdims=True))


RefinerSample = tuple[PotentialMap, PotentialMap, np.ndarray]


def _check_samples(samples: Sequence[RefinerSample], n_out: int) -> None:
    if len(samples) == 0:
        raise ValueError("train_refiner needs at least one sample")
    for i, (scp, obj, gt) in enumerate(samples):
        gt = np.asarray(gt)
        if gt.shape != scp.shape[:2] or gt.shape != obj.shape[:2]:
            raise PotentialError(f"sample {i}: label map shape {gt.shape} does not match potentials")
        if gt.size and (gt.min() < 0 or gt.max() >= n_out):
            raise ValueError(f"sample {i}: labels must lie in [0, {n_out})")


class _Design:
    """Cached im2col matrices for a fixed training set."""

    def __init__(self, samples: Sequence[RefinerSample], size: int):
        self.cols = [_patches(_stack(s.values, o.values), size) for s, o, _ in samples]
        self.labels = [np.asarray(gt).reshape(-1) for _, _, gt in samples]


def refiner_loss_and_grad(r: ConvRefiner, cols: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                          with_grad: bool = True):
    """Mean per-pixel multinomial logistic loss and its gradient."""
    n_out = r.out_channels
    wmat = r.kernel.reshape(-1, n_out)
    total = sum(len(y) for y in labels)
    loss = 0.0
    gw = np.zeros_like(wmat)
    gb = np.zeros(n_out)
    for x, y in zip(cols, labels):
        ls = log_softmax(x @ wmat + r.bias, axis=1)
        idx = np.arange(len(y))
        loss -= ls[idx, y].sum()
        if with_grad:
            dz = np.exp(ls)
            dz[idx, y] -= 1.0
            gw += x.T @ dz
            gb += dz.sum(axis=0)
    loss /= total
    if not with_grad:
        return loss
    return loss, (gw / total).reshape(r.kernel.shape), gb / total


def train_refiner(samples: Sequence[RefinerSample], cfg: TrainConfig,
                  init: ConvRefiner | None = None, size: int = 5) -> ConvRefiner:
    """Gradient-descent training of the refiner.

    Starts from ``init`` when given, otherwise from the identity refiner
    plus small seeded noise. ``losses`` on the result holds the full
    training-set loss before training and after every epoch.
    """
    scp0, obj0, _ = samples[0] if samples else (None, None, None)
    if init is None:
        if scp0 is None:
            raise ValueError("train_refiner needs at least one sample")
        init = ConvRefiner.identity(scp0.channels, obj0.channels, size)
        rng = np.random.default_rng(cfg.seed)
        init.kernel += rng.normal(0.0, 1e-3, init.kernel.shape)
    r = init.copy()
    r.losses = []
    _check_samples(samples, r.out_channels)
    for scp, obj, _ in samples:
        _check_inputs(scp, obj, r)

    design = _Design(samples, r.size)
    rng = np.random.default_rng(cfg.seed)
    n = len(samples)
    full = cfg.batch_size >= n

    def full_loss() -> float:
        return float(refiner_loss_and_grad(r, design.cols, design.labels, with_grad=False))

    r.losses.append(full_loss())
    for epoch in range(cfg.max_epochs):
        order = np.arange(n) if full else rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gw, gb = refiner_loss_and_grad(
                r, [design.cols[i] for i in idx], [design.labels[i] for i in idx])
            r.kernel -= cfg.learning_rate * gw
            r.bias -= cfg.learning_rate * gb
        loss = full_loss()
        if not np.isfinite(loss) or not (np.isfinite(r.kernel).all() and np.isfinite(r.bias).all()):
            raise TrainingDivergence(
                f"refiner training diverged at epoch {epoch}: loss={loss}, "
                f"last finite loss={r.losses[-1]:.6g}, learning_rate={cfg.learning_rate}")
        r.losses.append(loss)
    log.debug("refiner loss %.6g -> %.6g over %d epochs", r.losses[0], r.losses[-1], cfg.max_epochs)
    return r


# --------------------------------------------------------------------------
# refiner files: 16-byte header, then K, C_in, C_out, scp_channels (uint32),
# then the kernel (K*K*C_in*C_out float32, row-major) and the bias (C_out float32)

_REFINER_MAGIC = b"SCPREFN\x00"


def save_refiner(r: ConvRefiner, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", _REFINER_MAGIC, 1, 0))
        fh.write(struct.pack("<IIII", r.size, r.in_channels, r.out_channels, r.scp_channels))
        fh.write(r.kernel.astype("<f4").tobytes())
        fh.write(r.bias.astype("<f4").tobytes())


def load_refiner(path: str | Path) -> ConvRefiner:
    raw = Path(path).read_bytes()
    if len(raw) < 32:
        raise formats.FormatError(f"{path}: file too short for refiner header")
    magic, version, _ = struct.unpack_from("<8sII", raw, 0)
    if magic != _REFINER_MAGIC or version != 1:
        raise formats.FormatError(f"{path}: not a refiner file (magic={magic!r}, version={version})")
    k, cin, cout, nscp = struct.unpack_from("<IIII", raw, 16)
    nk = k * k * cin * cout
    if len(raw) != 32 + 4 * (nk + cout):
        raise formats.FormatError(f"{path}: payload size does not match K={k}, C_in={cin}, C_out={cout}")
    kernel = np.frombuffer(raw, "<f4", nk, 32).reshape(k, k, cin, cout)
    bias = np.frombuffer(raw, "<f4", cout, 32 + 4 * nk)
    return ConvRefiner(kernel.astype(np.float64), bias.astype(np.float64), nscp)


__all__ = [
    "ConvRefiner", "PotentialError", "PotentialMap", "TrainConfig", "TrainingDivergence",
    "load_potential_map", "load_refiner", "normalize", "refine_object_potentials",
    "refiner_logits", "save_potential_map", "save_refiner", "train_refiner",
]
