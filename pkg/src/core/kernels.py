"""
Numerical kernels for strided 2-D convolution and its exact adjoint

All kernels work on batched float arrays laid out as [N, C, H, W] and use the
cross-correlation convention (no kernel flip), so `conv2d_transpose` is the
literal adjoint of `conv2d` under the same kernel, stride and padding.
"""
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError

Array = np.ndarray


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial size produced by a convolution: floor((size + 2p - k) / s) + 1"""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"padding must be >= 0, got {padding}")
    out = (size + 2 * padding - kernel) // stride + 1
    if size + 2 * padding < kernel or out < 1:
        raise ConfigurationError(
            f"kernel {kernel} does not fit input {size} with padding {padding} (output size {out})"
        )
    return out


def resolve_transpose_size(size_out: int, kernel: int, stride: int, padding: int,
                           target: Optional[int] = None) -> int:
    """Input size a transposed convolution must restore

    With stride > 1 several input sizes floor to the same output size, so the
    caller has to name the one it wants.
    """
    if target is None:
        if stride > 1:
            raise ConfigurationError(
                f"stride {stride} admits several preimages of size {size_out}; pass the target size"
            )
        target = size_out - 1 + kernel - 2 * padding
    if conv_output_size(target, kernel, stride, padding) != size_out:
        raise ConfigurationError(
            f"target size {target} does not convolve to {size_out} "
            f"(kernel {kernel}, stride {stride}, padding {padding})"
        )
    return target


def _pad(x: Array, padding: int) -> Array:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(x: Array, kh: int, kw: int, stride: int, padding: int) -> Array:
    """Strided view of every receptive field: [N, C, H', W', kh, kw]"""
    win = np.lib.stride_tricks.sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_kernel(kernel: Array) -> Tuple[int, int, int, int]:
    if kernel.ndim != 4:
        raise DimensionError("kernel must be [c_out, c_in, kh, kw]", kernel.shape)
    return kernel.shape


def conv2d(x: Array, kernel: Array, stride: int = 1, padding: int = 0) -> Array:
    """Cross-correlate a batch [N, c_in, H, W] with kernel [c_out, c_in, kh, kw]"""
    c_out, c_in, kh, kw = _check_kernel(kernel)
    if x.ndim != 4 or x.shape[1] != c_in:
        raise DimensionError("conv2d input channels do not match kernel", x.shape, kernel.shape)
    conv_output_size(x.shape[2], kh, stride, padding)
    conv_output_size(x.shape[3], kw, stride, padding)
    win = _windows(x, kh, kw, stride, padding)
    out = np.einsum("nchwij,ocij->nohw", win, kernel, optimize=True)
    return np.ascontiguousarray(out, dtype=np.result_type(x, kernel))


def conv2d_transpose(g: Array, kernel: Array, stride: int = 1, padding: int = 0,
                     out_hw: Optional[Tuple[int, int]] = None) -> Array:
    """Adjoint of `conv2d`: maps [N, c_out, H', W'] back to [N, c_in, H, W]"""
    c_out, c_in, kh, kw = _check_kernel(kernel)
    if g.ndim != 4 or g.shape[1] != c_out:
        raise DimensionError("conv2d_transpose input channels do not match kernel", g.shape, kernel.shape)
    n, _, hg, wg = g.shape
    target_h, target_w = out_hw if out_hw is not None else (None, None)
    h = resolve_transpose_size(hg, kh, stride, padding, target_h)
    w = resolve_transpose_size(wg, kw, stride, padding, target_w)

    cols = np.einsum("nohw,ocij->ncijhw", g, kernel, optimize=True)
    out = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=np.result_type(g, kernel))
    # scatter each kernel tap back onto the padded grid
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (hg - 1) + 1:stride, j:j + stride * (wg - 1) + 1:stride] += cols[:, :, i, j]
    return np.ascontiguousarray(out[:, :, padding:padding + h, padding:padding + w])


def conv2d_kernel_grad(x: Array, g: Array, kh: int, kw: int, stride: int = 1, padding: int = 0) -> Array:
    """Gradient of <conv2d(x, K), g> with respect to K"""
    win = _windows(x, kh, kw, stride, padding)
    if win.shape[2:4] != g.shape[2:4]:
        raise DimensionError("gradient does not match convolution output", win.shape[2:4], g.shape[2:4])
    grad = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
    return np.ascontiguousarray(grad, dtype=np.result_type(x, g))
