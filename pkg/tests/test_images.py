import numpy as np
import pytest

from canvasdist.images import DigitalImage, SmoothImage, sample, sample_gradient, smooth

from conftest import random_image


def eval_plane_bruteforce(image: DigitalImage, cutoff: float, point) -> float:
    """Literal sum over every grid point; the oracle for the kernel sum."""
    total = 0.0
    grid = image.grid()
    for i in range(image.m):
        for j in range(image.n):
            d = max(abs(i - point[0]), abs(j - point[1]))
            if d < cutoff:
                total += grid[i, j] * (1.0 - d / cutoff)
    return total


def away_from_nonsmooth_loci(image, cutoff, point, margin):
    """True when no kernel face tie or cutoff boundary sits within margin."""
    for i in range(image.m):
        for j in range(image.n):
            dx = abs(i - point[0])
            dy = abs(j - point[1])
            if abs(dx - dy) < margin:
                return False
            if abs(max(dx, dy) - cutoff) < margin:
                return False
    return True


class TestDigitalImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            DigitalImage(1, 2, [0.0, 1.5])

    def test_rejects_count_mismatch(self):
        with pytest.raises(ValueError):
            DigitalImage(2, 2, [0.0, 1.0, 0.5])

    def test_pixels_read_only(self):
        img = DigitalImage(1, 2, [0.0, 1.0])
        with pytest.raises(ValueError):
            img.pixels[0] = 0.5

    def test_from_array_clip(self):
        img = DigitalImage.from_array([[1.5, -0.2]], clip=True)
        assert img.pixels.tolist() == [1.0, 0.0]


class TestSmooth:
    def test_rejects_nonpositive_cutoff(self):
        img = DigitalImage(1, 1, [1.0])
        with pytest.raises(ValueError):
            smooth(img, 0.0)

    def test_zero_image_everywhere_zero(self, rng):
        img = DigitalImage(3, 4, np.zeros(12))
        pts = rng.uniform(-2, 6, size=(40, 2))
        assert np.all(sample(smooth(img, 1.7), pts) == 0.0)

    def test_single_pixel_values(self):
        img = DigitalImage(3, 3, [0, 0, 0, 0, 1, 0, 0, 0, 0])
        sm = smooth(img, 1.0)
        got = sample(sm, [[1.0, 1.0], [1.0, 1.5], [1.5, 1.5]])
        assert got[0] == 1.0
        assert got[1] == 0.5
        assert got[2] == 0.5  # Chebyshev ball: diagonal distance is 0.5 too

    def test_matches_bruteforce_sum(self, rng):
        img = random_image(rng, 5, 5)
        cutoff = 1.5
        pts = rng.uniform(-1.0, 6.0, size=(20, 2))
        got = sample(smooth(img, cutoff), pts)
        want = [eval_plane_bruteforce(img, cutoff, p) for p in pts]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_identity_grid_reproduces_pixels_exactly(self, rng):
        from canvasdist.lattice import identity_transform

        img = random_image(rng, 4, 6)
        for cutoff in (0.4, 1.0):
            got = sample(smooth(img, cutoff), identity_transform(4, 6))
            assert np.array_equal(got, img.pixels)

    def test_zero_outside_dilated_bounding_box(self, rng):
        img = random_image(rng, 4, 4)
        sm = smooth(img, 2.5)
        far = np.array([[-2.5, 0.0], [0.0, 5.5], [7.0, 7.0], [-3.0, -3.0]])
        assert np.all(sample(sm, far) == 0.0)

    def test_linearity_of_the_kernel_sum(self, rng):
        a = rng.uniform(0.0, 0.5, size=20)
        b = rng.uniform(0.0, 0.5, size=20)
        pts = rng.uniform(-1, 6, size=(30, 2))
        cutoff = 1.8
        sa = sample(smooth(DigitalImage(4, 5, a), cutoff), pts)
        sb = sample(smooth(DigitalImage(4, 5, b), cutoff), pts)
        sab = sample(smooth(DigitalImage(4, 5, a + b), cutoff), pts)
        np.testing.assert_allclose(sab, sa + sb, atol=1e-12, rtol=0)

    def test_overlapping_kernels_stack_above_pixels(self):
        img = DigitalImage(3, 3, np.full(9, 0.5))
        center = sample(smooth(img, 2.0), [[1.0, 1.0]])[0]
        assert center > 0.5  # unnormalized sum, by definition


class TestSampleGradient:
    def test_zero_image(self, rng):
        img = DigitalImage(3, 3, np.zeros(9))
        pts = rng.uniform(0, 3, size=(10, 2))
        assert np.all(sample_gradient(smooth(img, 1.3), pts) == 0.0)

    def test_single_pixel_dominant_axis(self):
        pixels = np.zeros(9)
        pixels[4] = 1.0  # grid point (1, 1)
        sm = smooth(DigitalImage(3, 3, pixels), 1.0)
        got = sample_gradient(sm, [[1.5, 1.2]])
        np.testing.assert_allclose(got, [[-1.0, 0.0]], atol=1e-15)

    def test_matches_central_differences(self, rng):
        img = random_image(rng, 6, 5)
        cutoff = 1.4
        sm = smooth(img, cutoff)
        h = 1e-5
        checked = 0
        while checked < 50:
            p = rng.uniform(-0.5, 6.0, size=2)
            if not away_from_nonsmooth_loci(img, cutoff, p, margin=1e-3):
                continue
            grad = sample_gradient(sm, [p])[0]
            fd = np.array(
                [
                    (sample(sm, [p + [h, 0]])[0] - sample(sm, [p - [h, 0]])[0]) / (2 * h),
                    (sample(sm, [p + [0, h]])[0] - sample(sm, [p + [0, -h]])[0]) / (2 * h),
                ]
            )
            scale = max(np.linalg.norm(fd), 1e-9)
            assert np.linalg.norm(grad - fd) / scale <= 1e-3
            checked += 1


def test_smooth_image_is_plain_metadata():
    img = DigitalImage(2, 2, [0.1, 0.2, 0.3, 0.4])
    sm = SmoothImage(img, 2.5)
    assert sm.shape == (2, 2)
    assert sm.cutoff == 2.5
