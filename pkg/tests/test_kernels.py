import itertools

import numpy as np
import pytest

from src.core import kernels
from src.core.errors import ConfigurationError, DimensionError


def naive_conv2d(x, k, stride, padding):
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for b, o, i, j in itertools.product(range(n), range(c_out), range(ho), range(wo)):
        patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
        out[b, o, i, j] = np.sum(patch * k[o])
    return out


class TestOutputSize:
    def test_mnist_pyramid(self):
        sizes = [28]
        for _ in range(4):
            sizes.append(kernels.conv_output_size(sizes[-1], 3, 2, 1))
        assert sizes == [28, 14, 7, 4, 2]

    def test_kernel_larger_than_input(self):
        with pytest.raises(ConfigurationError):
            kernels.conv_output_size(2, 5, 1, 0)

    def test_transpose_size_needs_target_for_stride_two(self):
        with pytest.raises(ConfigurationError):
            kernels.resolve_transpose_size(14, 3, 2, 1)
        assert kernels.resolve_transpose_size(14, 3, 2, 1, target=28) == 28
        assert kernels.resolve_transpose_size(14, 3, 2, 1, target=27) == 27
        assert kernels.resolve_transpose_size(5, 3, 1, 0) == 7

    def test_wrong_target_rejected(self):
        with pytest.raises(ConfigurationError):
            kernels.resolve_transpose_size(14, 3, 2, 1, target=20)


class TestConv:
    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_matches_loop_oracle(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(2, 3, 7, 6))
        k = rng.normal(size=(4, 3, 3, 3))
        np.testing.assert_allclose(kernels.conv2d(x, k, stride, padding), naive_conv2d(x, k, stride, padding),
                                   rtol=1e-10, atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            kernels.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))

    def test_single_pixel_kernel_identity(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(kernels.conv2d(x, np.ones((1, 1, 1, 1))), x)

    def test_adjointness_random_cases(self):
        rng = np.random.default_rng(0)
        for case in range(100):
            stride, padding = 1 + case % 2, (case // 2) % 2
            kh = int(rng.integers(1, 4))
            h, w = int(rng.integers(kh, 9)), int(rng.integers(kh, 9))
            c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = rng.normal(size=(2, c_in, h, w))
            k = rng.normal(size=(c_out, c_in, kh, kh))
            y = kernels.conv2d(x, k, stride, padding)
            g = rng.normal(size=y.shape)
            back = kernels.conv2d_transpose(g, k, stride, padding, out_hw=(h, w))
            assert back.shape == x.shape
            lhs, rhs = np.sum(y * g), np.sum(x * back)
            assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))

    def test_kernel_grad_is_inner_product_derivative(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 2, 6, 6))
        k = rng.normal(size=(4, 2, 3, 3))
        g = rng.normal(size=kernels.conv2d(x, k, 2, 1).shape)
        grad = kernels.conv2d_kernel_grad(x, g, 3, 3, 2, 1)
        # <conv(x, K), g> is linear in K, so it equals <K, dK>
        np.testing.assert_allclose(np.sum(kernels.conv2d(x, k, 2, 1) * g), np.sum(k * grad), rtol=1e-10)

    def test_float32_stays_float32(self):
        x = np.ones((1, 1, 4, 4), dtype=np.float32)
        k = np.ones((1, 1, 3, 3), dtype=np.float32)
        assert kernels.conv2d(x, k, 1, 1).dtype == np.float32
        assert kernels.conv2d_transpose(np.ones((1, 1, 4, 4), np.float32), k, 1, 1).dtype == np.float32
