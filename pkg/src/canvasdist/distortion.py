"""Color and canvas distortion measures and their gradients.

Color distortion is the squared residual between reference samples and
affinely recolored moved samples. Canvas distortion is the worst discrepancy
of log stretch ratios over the lattice's 45-degree edge pairs; it vanishes
exactly on conformal warps (translations, rotations, uniform scalings and
their compositions). The hard max is what gets reported; a smooth p-norm
surrogate with matching gradients is what gets descended.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import CanvasLattice

__all__ = [
    "AffineColor",
    "DistortionEval",
    "color_distortion",
    "optimal_affine",
    "canvas_distortion",
    "canvas_distortion_soft",
]

# lengths are clamped here before the log so collapsed edges stay finite
LENGTH_FLOOR = 1e-6


@dataclass(frozen=True)
class AffineColor:
    """Contrast/brightness recoloring c -> scale * c + offset."""

    scale: float
    offset: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and np.isfinite(self.offset)):
            raise ValueError("affine color parameters must be finite")


@dataclass(frozen=True)
class DistortionEval:
    """A distortion value with the gradients needed to descend it.

    `gradient` matches the shape of the distorted parameter: the moved color
    vector for color distortion, the (k, 2) warp for canvas distortion.
    `color_gradient`, present for color distortion only, is d(value)/d(scale,
    offset).
    """

    value: float
    gradient: np.ndarray
    color_gradient: np.ndarray | None = None


def color_distortion(ref_samples, moved_samples, color: AffineColor) -> DistortionEval:
    """Squared recoloring residual ||scale * moved + offset - ref||^2."""
    ref = np.asarray(ref_samples, dtype=np.float64).ravel()
    moved = np.asarray(moved_samples, dtype=np.float64).ravel()
    if ref.shape != moved.shape:
        raise ValueError(f"sample length mismatch: {ref.shape} vs {moved.shape}")
    residual = color.scale * moved + color.offset - ref
    value = float(residual @ residual)
    gradient = 2.0 * color.scale * residual
    color_gradient = np.array([2.0 * (residual @ moved), 2.0 * residual.sum()])
    return DistortionEval(value, gradient, color_gradient)


def optimal_affine(ref_samples, moved_samples, nonneg_scale: bool = False) -> AffineColor:
    """Least-squares recoloring of the moved samples onto the reference.

    Constant moved samples get scale 0 and offset mean(ref); the optional
    `nonneg_scale` flag clips negative scales for polarity-sensitive corpora
    (the offset is refit after clipping).
    """
    ref = np.asarray(ref_samples, dtype=np.float64).ravel()
    moved = np.asarray(moved_samples, dtype=np.float64).ravel()
    if ref.shape != moved.shape:
        raise ValueError(f"sample length mismatch: {ref.shape} vs {moved.shape}")
    if ref.size == 0:
        raise ValueError("cannot fit a recoloring to empty samples")
    ref_mean = float(ref.mean())
    moved_mean = float(moved.mean())
    centered = moved - moved_mean
    denom = float(centered @ centered)
    # guard against numerically constant inputs, scaled to their magnitude
    tiny = (1e-12 * max(1.0, abs(moved_mean))) ** 2 * moved.size
    if denom <= tiny:
        return AffineColor(0.0, ref_mean)
    scale = float(centered @ (ref - ref_mean)) / denom
    if nonneg_scale and scale < 0.0:
        scale = 0.0
    return AffineColor(scale, ref_mean - scale * moved_mean)


def _edge_log_ratios(warp: np.ndarray, lattice: CanvasLattice, length_floor: float):
    diff = warp[lattice.edges[:, 0]] - warp[lattice.edges[:, 1]]
    lengths = np.hypot(diff[:, 0], diff[:, 1])
    clamped = np.maximum(lengths, length_floor)
    ratios = np.log(clamped) - np.log(lattice.rest_lengths)
    return diff, lengths, clamped, ratios


def canvas_distortion(warp, lattice: CanvasLattice, length_floor: float = LENGTH_FLOOR) -> float:
    """Worst log-stretch discrepancy over the lattice's 45-degree edge pairs.

    Zero (up to rounding) for any conformal warp, since those stretch every
    edge by the same factor.
    """
    w = np.asarray(warp, dtype=np.float64)
    if w.shape != (lattice.m * lattice.n, 2):
        raise ValueError(f"warp must have shape ({lattice.m * lattice.n}, 2), got {w.shape}")
    _, _, _, ratios = _edge_log_ratios(w, lattice, length_floor)
    pairs = lattice.neighbor_pairs
    if pairs.size == 0:
        return 0.0
    return float(np.abs(ratios[pairs[:, 0]] - ratios[pairs[:, 1]]).max())


def canvas_distortion_soft(
    warp,
    lattice: CanvasLattice,
    sharpness: float = 8.0,
    length_floor: float = LENGTH_FLOOR,
    with_gradient: bool = True,
) -> DistortionEval:
    """Unnormalized p-norm surrogate of the hard max, with its warp gradient.

    The value is (sum |discrepancy|^p)^(1/p) over all edge pairs, so it
    sandwiches the hard max: max <= soft <= max * pair_count^(1/p), and
    converges to the max as sharpness grows. Evaluation is rescaled by the
    largest discrepancy to stay stable at high sharpness.
    """
    if sharpness < 1.0:
        raise ValueError("sharpness must be at least 1")
    w = np.asarray(warp, dtype=np.float64)
    k = lattice.m * lattice.n
    if w.shape != (k, 2):
        raise ValueError(f"warp must have shape ({k}, 2), got {w.shape}")

    diff, lengths, clamped, ratios = _edge_log_ratios(w, lattice, length_floor)
    pairs = lattice.neighbor_pairs
    gaps = ratios[pairs[:, 0]] - ratios[pairs[:, 1]]
    mags = np.abs(gaps)
    top = mags.max() if mags.size else 0.0
    if top == 0.0:
        return DistortionEval(0.0, np.zeros((k, 2)))

    scaled = mags / top
    powered = scaled**sharpness
    total = powered.sum()
    value = float(top * total ** (1.0 / sharpness))
    if not with_gradient:
        return DistortionEval(value, np.zeros((k, 2)))

    # d value / d |gap_i| = (|gap_i|/top)^(p-1) * total^((1-p)/p)
    d_mag = scaled ** (sharpness - 1.0) * total ** ((1.0 - sharpness) / sharpness)
    d_gap = d_mag * np.sign(gaps)
    edge_count = lattice.edge_count
    d_ratio = np.bincount(pairs[:, 0], weights=d_gap, minlength=edge_count) - np.bincount(
        pairs[:, 1], weights=d_gap, minlength=edge_count
    )
    # d ratio / d endpoint = +/- diff / length^2, zero where the floor clamps
    live = lengths > length_floor
    scale = np.where(live, d_ratio / np.where(live, clamped**2, 1.0), 0.0)
    pull = diff * scale[:, None]
    gradient = np.zeros((k, 2))
    for axis in range(2):
        gradient[:, axis] = np.bincount(
            lattice.edges[:, 0], weights=pull[:, axis], minlength=k
        ) - np.bincount(lattice.edges[:, 1], weights=pull[:, axis], minlength=k)
    return DistortionEval(value, gradient)
