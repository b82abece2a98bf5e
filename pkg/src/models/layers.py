"""
Dense and convolutional layers whose upward and downward passes share weights

A tied layer keeps a single weight buffer: the downward pass of a dense layer
multiplies by W^T and the downward pass of a conv layer is the transposed
convolution with the same kernel. An untied layer carries its own downward
weights (the plain autoencoder baseline). Biases are per direction and never
tied.
"""
import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..core import tensor as T
from ..core.errors import ConfigurationError, DimensionError
from ..core.kernels import conv_output_size
from ..core.tensor import Tape, Tensor


def glorot_uniform(shape: Tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _rows(x: Tensor, width: int, what: str) -> Tuple[Tensor, bool]:
    """View a vector or a batch of vectors as a 2-D batch"""
    if x.shape[-1:] != (width,) or len(x.shape) not in (1, 2):
        raise DimensionError(f"{what} expects [..., {width}]", x.shape)
    if len(x.shape) == 1:
        return T.reshape(x, (1, width)), True
    return x, False


@dataclass(frozen=True)
class DenseLayer:
    W: Tensor                          # [n_out, n_in]
    b_up: Tensor                       # [n_out]
    b_down: Tensor                     # [n_in]
    tied: bool = True
    W_down: Optional[Tensor] = None    # [n_in, n_out], untied only
    name: str = "dense"

    def __post_init__(self):
        if len(self.W.shape) != 2:
            raise DimensionError("dense weight must be a matrix", self.W.shape)
        n_out, n_in = self.W.shape
        if self.b_up.shape != (n_out,) or self.b_down.shape != (n_in,):
            raise DimensionError("dense biases do not match W", self.W.shape, self.b_up.shape, self.b_down.shape)
        if self.tied and self.W_down is not None:
            raise ConfigurationError(f"{self.name}: tied layer cannot carry W_down")
        if not self.tied:
            if self.W_down is None:
                raise ConfigurationError(f"{self.name}: untied layer needs W_down")
            if self.W_down.shape != (n_in, n_out):
                raise DimensionError("W_down must be [n_in, n_out]", self.W_down.shape, (n_in, n_out))

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, tied: bool = True,
             name: str = "dense") -> "DenseLayer":
        W = glorot_uniform((n_out, n_in), n_in, n_out, rng)
        W_down = None if tied else glorot_uniform((n_in, n_out), n_out, n_in, rng)
        return cls(
            W=Tensor(W),
            b_up=Tensor(np.zeros(n_out, np.float32)),
            b_down=Tensor(np.zeros(n_in, np.float32)),
            tied=tied,
            W_down=None if W_down is None else Tensor(W_down),
            name=name,
        )

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"{self.name}.W": self.W}
        if self.W_down is not None:
            params[f"{self.name}.W_down"] = self.W_down
        params[f"{self.name}.b_up"] = self.b_up
        params[f"{self.name}.b_down"] = self.b_down
        return params

    def with_parameters(self, params: Dict[str, Union[Tensor, np.ndarray]]) -> "DenseLayer":
        fields = {}
        for key in ("W", "W_down", "b_up", "b_down"):
            full = f"{self.name}.{key}"
            if full in params:
                fields[key] = T.as_tensor(params[full])
        return dataclasses.replace(self, **fields)

    def bind(self, tape: Tape) -> "DenseLayer":
        return self.with_parameters({k: tape.param(k, v) for k, v in self.parameters().items()})

    def untie(self) -> "DenseLayer":
        """Split off a downward weight initialised to W^T"""
        if not self.tied:
            return self
        return dataclasses.replace(self, tied=False, W_down=Tensor(self.W.data.T.copy()))

    def up(self, x: Tensor) -> Tensor:
        return dense_up(self, x)

    def down(self, z: Tensor) -> Tensor:
        return dense_down(self, z)


def dense_up(layer: DenseLayer, x: Tensor) -> Tensor:
    """Bottom-up pre-activation W x + b_up"""
    rows, single = _rows(T.as_tensor(x), layer.n_in, f"{layer.name} up")
    y = T.add(T.matmul(rows, T.transpose(layer.W)), layer.b_up)
    return T.reshape(y, (layer.n_out,)) if single else y


def dense_down(layer: DenseLayer, z: Tensor) -> Tensor:
    """Top-down pre-activation W^T z + b_down (W_down z + b_down when untied)"""
    rows, single = _rows(T.as_tensor(z), layer.n_out, f"{layer.name} down")
    if layer.tied:
        u = T.matmul(rows, layer.W)
    else:
        u = T.matmul(rows, T.transpose(layer.W_down))
    u = T.add(u, layer.b_down)
    return T.reshape(u, (layer.n_in,)) if single else u


@dataclass(frozen=True)
class ConvLayer:
    K: Tensor                          # [c_out, c_in, kh, kw]
    b_up: Tensor                       # [c_out]
    b_down: Tensor                     # [c_in]
    stride: int = 2
    padding: int = 1
    tied: bool = True
    K_down: Optional[Tensor] = None    # same shape as K, untied only
    name: str = "conv"

    def __post_init__(self):
        if len(self.K.shape) != 4:
            raise DimensionError("conv kernel must be [c_out, c_in, kh, kw]", self.K.shape)
        c_out, c_in = self.K.shape[:2]
        if self.b_up.shape != (c_out,) or self.b_down.shape != (c_in,):
            raise DimensionError("conv biases do not match K", self.K.shape, self.b_up.shape, self.b_down.shape)
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"{self.name}: stride {self.stride} / padding {self.padding} invalid")
        if self.tied and self.K_down is not None:
            raise ConfigurationError(f"{self.name}: tied layer cannot carry K_down")
        if not self.tied and (self.K_down is None or self.K_down.shape != self.K.shape):
            raise ConfigurationError(f"{self.name}: untied layer needs K_down shaped like K")

    @property
    def c_in(self) -> int:
        return self.K.shape[1]

    @property
    def c_out(self) -> int:
        return self.K.shape[0]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3, stride: int = 2,
             padding: int = 1, tied: bool = True, name: str = "conv") -> "ConvLayer":
        shape = (c_out, c_in, kernel, kernel)
        fan_in, fan_out = c_in * kernel * kernel, c_out * kernel * kernel
        K = glorot_uniform(shape, fan_in, fan_out, rng)
        K_down = None if tied else glorot_uniform(shape, fan_out, fan_in, rng)
        return cls(
            K=Tensor(K),
            b_up=Tensor(np.zeros(c_out, np.float32)),
            b_down=Tensor(np.zeros(c_in, np.float32)),
            stride=stride,
            padding=padding,
            tied=tied,
            K_down=None if K_down is None else Tensor(K_down),
            name=name,
        )

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"{self.name}.K": self.K}
        if self.K_down is not None:
            params[f"{self.name}.K_down"] = self.K_down
        params[f"{self.name}.b_up"] = self.b_up
        params[f"{self.name}.b_down"] = self.b_down
        return params

    def with_parameters(self, params: Dict[str, Union[Tensor, np.ndarray]]) -> "ConvLayer":
        fields = {}
        for key in ("K", "K_down", "b_up", "b_down"):
            full = f"{self.name}.{key}"
            if full in params:
                fields[key] = T.as_tensor(params[full])
        return dataclasses.replace(self, **fields)

    def bind(self, tape: Tape) -> "ConvLayer":
        return self.with_parameters({k: tape.param(k, v) for k, v in self.parameters().items()})

    def untie(self) -> "ConvLayer":
        if not self.tied:
            return self
        return dataclasses.replace(self, tied=False, K_down=Tensor(self.K.data.copy()))

    def output_hw(self, hw: Tuple[int, int]) -> Tuple[int, int]:
        kh, kw = self.K.shape[2:]
        return (conv_output_size(hw[0], kh, self.stride, self.padding),
                conv_output_size(hw[1], kw, self.stride, self.padding))

    def up(self, x: Tensor) -> Tensor:
        return conv_up(self, x)

    def down(self, z: Tensor, target_hw: Optional[Tuple[int, int]] = None) -> Tensor:
        return conv_down(self, z, target_hw)


def _channel_bias(b: Tensor) -> Tensor:
    return T.reshape(b, (b.shape[0], 1, 1))


def conv_up(layer: ConvLayer, x: Tensor) -> Tensor:
    """Bottom-up convolution plus b_up broadcast over space"""
    x = T.as_tensor(x)
    y = T.conv2d(x, layer.K, layer.stride, layer.padding)
    return T.add(y, _channel_bias(layer.b_up))


def conv_down(layer: ConvLayer, z: Tensor, target_hw: Optional[Tuple[int, int]] = None) -> Tensor:
    """Top-down transposed convolution with the shared (or untied) kernel plus b_down"""
    kernel = layer.K if layer.tied else layer.K_down
    u = T.conv2d_transpose(T.as_tensor(z), kernel, layer.stride, layer.padding, out_hw=target_hw)
    return T.add(u, _channel_bias(layer.b_down))
