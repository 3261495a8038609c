"""Digital images and their smooth extensions to the whole plane.

A digital image lives on the integer grid [m] x [n]. Its smooth extension
is a weighted sum of linearly decaying bumps, one per grid point, measured
in the Chebyshev (l-inf) metric and cut off at a configurable radius. The
extension is defined and piecewise differentiable everywhere, which is what
lets the warp solvers compute color gradients analytically instead of
resampling on a discrete grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DigitalImage",
    "SmoothImage",
    "smooth",
    "sample",
    "sample_gradient",
    "sample_with_gradient",
]


@dataclass(frozen=True)
class DigitalImage:
    """Grayscale intensities on the grid [m] x [n], flat lexicographic order.

    Pixel k holds the intensity at grid point (k // n, k % n); intensities
    lie in [0, 1]. Instances are immutable (the pixel buffer is marked
    read-only) and safe to share across threads and processes.
    """

    m: int
    n: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.m}x{self.n}")
        px = np.array(np.asarray(self.pixels, dtype=np.float64).ravel(), copy=True)
        if px.size != self.m * self.n:
            raise ValueError(f"expected {self.m * self.n} pixels, got {px.size}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel intensities must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def grid(self) -> np.ndarray:
        """Pixels as a read-only (m, n) view."""
        return self.pixels.reshape(self.m, self.n)

    @classmethod
    def from_array(cls, array, clip: bool = False) -> "DigitalImage":
        """Build from a 2-D array; `clip` clamps intensities into [0, 1]."""
        a = np.asarray(array, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        if clip:
            a = np.clip(a, 0.0, 1.0)
        return cls(a.shape[0], a.shape[1], a.ravel())


@dataclass(frozen=True)
class SmoothImage:
    """A digital image extended to the plane by a sum of cutoff kernels.

    Every grid point z contributes  pixel(z) * max(0, 1 - |z - x|_inf / cutoff)
    at position x. The extension vanishes outside the cutoff-dilated bounding
    box of the grid and is piecewise linear in between; no normalization is
    applied, so overlapping bumps (cutoff > 1) stack. Larger cutoffs act as a
    blur that also widens the basin seen by gradient-based warping.
    """

    source: DigitalImage
    cutoff: float

    def __post_init__(self):
        c = float(self.cutoff)
        if not np.isfinite(c) or c <= 0.0:
            raise ValueError(f"cutoff must be a positive real, got {self.cutoff}")
        object.__setattr__(self, "cutoff", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.source.shape


def smooth(image: DigitalImage, cutoff: float) -> SmoothImage:
    """Attach a kernel cutoff radius to a digital image."""
    return SmoothImage(image, cutoff)


def _window(image: SmoothImage, points: np.ndarray):
    """Gather every grid value whose kernel support can reach each point.

    Returns (values, off0, off1) where values is (k, span, span) with
    out-of-grid entries zeroed, and off0/off1 are the signed coordinate
    offsets point - gridpoint along each axis, shape (k, span).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be a (k, 2) matrix, got shape {pts.shape}")
    m, n = image.shape
    c = image.cutoff
    grid = image.source.grid()
    # smallest integer window covering the open support (x - c, x + c)
    span = int(2.0 * c) + 1
    steps = np.arange(span, dtype=np.int64)
    i0 = (np.floor(pts[:, 0] - c).astype(np.int64) + 1)[:, None] + steps
    i1 = (np.floor(pts[:, 1] - c).astype(np.int64) + 1)[:, None] + steps
    off0 = pts[:, 0, None] - i0
    off1 = pts[:, 1, None] - i1
    ok = (i0 >= 0)[:, :, None] & (i0 < m)[:, :, None] & \
         ((i1 >= 0) & (i1 < n))[:, None, :]
    values = grid[np.clip(i0, 0, m - 1)[:, :, None], np.clip(i1, 0, n - 1)[:, None, :]]
    values = np.where(ok, values, 0.0)
    return values, off0, off1


def sample(image: SmoothImage, points) -> np.ndarray:
    """Evaluate the smooth image at each row of `points`, shape (k, 2).

    Sampling the identity grid with cutoff <= 1 returns the digital pixels
    exactly (the bumps do not overlap at grid points). With cutoff > 1 the
    bumps stack and grid-point values exceed the raw pixels by definition.
    """
    values, off0, off1 = _window(image, points)
    dist = np.maximum(np.abs(off0)[:, :, None], np.abs(off1)[:, None, :])
    weight = np.clip(1.0 - dist / image.cutoff, 0.0, None)
    return np.einsum("kab,kab->k", values, weight)


def sample_gradient(image: SmoothImage, points) -> np.ndarray:
    """Spatial gradient of the smooth image at each point, shape (k, 2).

    Each bump is piecewise linear; its gradient is -sign(offset)/cutoff along
    the dominating axis. On the measure-zero nonsmooth loci the convention is
    deterministic: equal-offset ties resolve to the first axis, the exact
    bump peak contributes zero, and the cutoff boundary takes the outside
    (zero) limit.
    """
    return sample_with_gradient(image, points)[1]


def sample_with_gradient(image: SmoothImage, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate colors and spatial gradients in one pass over the kernels."""
    values, off0, off1 = _window(image, points)
    a0 = np.abs(off0)[:, :, None]
    a1 = np.abs(off1)[:, None, :]
    dist = np.maximum(a0, a1)
    weight = np.clip(1.0 - dist / image.cutoff, 0.0, None)
    colors = np.einsum("kab,kab->k", values, weight)

    inside = dist < image.cutoff
    first_axis = a0 >= a1  # ties fall on the first-axis face
    slope = -1.0 / image.cutoff
    g0 = np.where(inside & first_axis, slope * np.sign(off0)[:, :, None], 0.0)
    g1 = np.where(inside & ~first_axis, slope * np.sign(off1)[:, None, :], 0.0)
    grads = np.empty((values.shape[0], 2), dtype=np.float64)
    grads[:, 0] = np.einsum("kab,kab->k", values, g0)
    grads[:, 1] = np.einsum("kab,kab->k", values, g1)
    return colors, grads
