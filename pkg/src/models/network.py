"""
Lmser network: a folded autoencoder with shared weights and paired neurons

Perception runs as alternating passes. Pass 0 goes bottom-up with every
top-down signal at zero; each reflection then runs one top-down pass followed
by one bottom-up pass; a final top-down pass emits the reconstruction. With
neuron sharing a hidden layer fuses both directions additively,
z_m = act(y_m + u_m). Without it the top-down stream keeps its own
activations and never sees y.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core import tensor as T
from ..core.errors import CapabilityError, ConfigurationError, ContractViolation, DimensionError
from ..core.kernels import conv_output_size
from ..core.tensor import ACTIVATIONS, Tape, Tensor
from .layers import ConvLayer, DenseLayer

logger = logging.getLogger(__name__)

Layer = Union[DenseLayer, ConvLayer]

# name -> (weight_sharing, neuron_sharing, supervised)
VARIANTS: Dict[str, Tuple[bool, bool, bool]] = {
    "ae": (False, False, False),
    "lmser-un-n": (True, False, False),
    "lmser-un": (True, True, False),
    "lmser-w": (False, True, False),
    "lmser-sup": (True, True, True),
    "lmser-sup-n-w": (False, False, True),
    "fcn": (False, False, True),
}


@dataclass(frozen=True)
class LmserConfig:
    layer_specs: Tuple[int, ...] = (784, 300, 100, 10)
    backbone: str = "dense"
    weight_sharing: bool = True
    neuron_sharing: bool = True
    supervised: bool = False
    n_classes: int = 10
    style_units: int = 0
    reflections: int = 1
    hidden_activation: str = "relu"
    top_down_activation: Optional[str] = None
    output_activation: str = "sigmoid"
    input_shape: Tuple[int, ...] = (1, 28, 28)
    kernel_size: int = 3
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_specs", tuple(int(s) for s in self.layer_specs))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.backbone not in ("dense", "conv"):
            raise ConfigurationError(f"backbone must be dense or conv, got {self.backbone!r}")
        min_specs = 2 if self.backbone == "dense" else 1
        if len(self.layer_specs) < min_specs or min(self.layer_specs) < 1:
            raise ConfigurationError(f"invalid layer_specs {self.layer_specs}")
        if self.reflections < 0:
            raise ContractViolation(f"reflections must be >= 0, got {self.reflections}")
        for act in (self.hidden_activation, self.top_down_activation or self.hidden_activation):
            if act not in ("relu", "sigmoid"):
                raise ConfigurationError(f"hidden activation must be relu or sigmoid, got {act!r}")
        if self.output_activation != "sigmoid":
            raise ConfigurationError("output activation is fixed to sigmoid")
        if self.style_units < 0:
            raise ConfigurationError("style_units must be >= 0")
        if self.style_units and not self.supervised:
            raise ConfigurationError("style units sit next to category units and need supervised=true")
        if self.supervised and self.top_width < self.n_classes + self.style_units:
            raise ConfigurationError(
                f"top layer width {self.top_width} < n_classes {self.n_classes} + style_units {self.style_units}"
            )

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "LmserConfig":
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
        ws, ns, sup = VARIANTS[variant]
        overrides.setdefault("weight_sharing", ws)
        overrides.setdefault("neuron_sharing", ns)
        overrides.setdefault("supervised", sup)
        return cls(**overrides)

    @property
    def top_down_act(self) -> str:
        return self.top_down_activation or self.hidden_activation

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        """Shape of one network input"""
        if self.backbone == "dense":
            return (self.layer_specs[0],)
        return self.input_shape

    @property
    def spatial_sizes(self) -> List[Tuple[int, int]]:
        """Spatial size at the input of every conv layer, then at the top"""
        hw = [tuple(self.input_shape[1:])]
        for _ in self.layer_specs:
            h, w = hw[-1]
            hw.append((conv_output_size(h, self.kernel_size, self.stride, self.padding),
                       conv_output_size(w, self.kernel_size, self.stride, self.padding)))
        return hw

    @property
    def top_shape(self) -> Tuple[int, ...]:
        if self.backbone == "dense":
            return (self.layer_specs[-1],)
        h, w = self.spatial_sizes[-1]
        return (self.layer_specs[-1], h, w)

    @property
    def top_width(self) -> int:
        return int(np.prod(self.top_shape))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_specs"] = list(self.layer_specs)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LmserConfig":
        return cls(**d)


@dataclass
class LmserState:
    """Signals of one forward pass; index m runs over hidden layers bottom to top"""

    y: List[Tensor]
    u: List[Optional[Tensor]]
    z: List[Tensor]
    reconstruction: Tensor
    top_code: Tensor
    top_down: List[Optional[Tensor]] = field(default_factory=list)
    logits: Optional[Tensor] = None
    style_code: Optional[Tensor] = None
    style_offset: int = 0
    style_units: int = 0
    passes: List[str] = field(default_factory=list)


def _flat(t: Tensor) -> Tensor:
    return T.reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))


def inject_style_noise(state: LmserState, sigma: float, rng: np.random.Generator) -> Tensor:
    """Top code with zero-mean Gaussian noise of std `sigma` on the style units"""
    return _perturb_style(state.top_code, state.style_offset, state.style_units, sigma, rng)


def _perturb_style(code: Tensor, offset: int, units: int, sigma: float,
                   rng: Optional[np.random.Generator]) -> Tensor:
    if units == 0 or sigma == 0:
        return code
    if rng is None:
        raise ContractViolation("style noise needs an rng")
    n = code.shape[0]
    noise = np.zeros((n, int(np.prod(code.shape[1:]))), dtype=code.data.dtype)
    noise[:, offset:offset + units] = rng.normal(0.0, sigma, size=(n, units))
    return T.add(code, Tensor(noise.reshape(code.shape)))


class LmserNetwork:
    """Layer stack plus the perception dynamics over it"""

    def __init__(self, config: LmserConfig, layers: Sequence[Layer]):
        self.config = config
        self.layers: List[Layer] = list(layers)

    @classmethod
    def initialize(cls, config: LmserConfig, seed: int = 0) -> "LmserNetwork":
        """Glorot-uniform weights and zero biases drawn from `seed`"""
        rng = np.random.default_rng(seed)
        tied = config.weight_sharing
        layers: List[Layer] = []
        if config.backbone == "dense":
            sizes = config.layer_specs
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
                layers.append(DenseLayer.init(n_in, n_out, rng, tied=tied, name=f"layer{i}"))
        else:
            channels = (config.input_shape[0],) + config.layer_specs
            for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:]), start=1):
                layers.append(ConvLayer.init(c_in, c_out, rng, kernel=config.kernel_size,
                                             stride=config.stride, padding=config.padding,
                                             tied=tied, name=f"layer{i}"))
        net = cls(config, layers)
        logger.debug(f"Initialised {config.backbone} Lmser with {net.num_parameters():,} parameters")
        return net

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> Dict[str, Tensor]:
        """Named parameters in the fixed checkpoint / update order"""
        params: Dict[str, Tensor] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def with_parameters(self, params: Dict[str, Union[Tensor, np.ndarray]]) -> "LmserNetwork":
        missing = set(self.parameters()) - set(params)
        if missing:
            raise ContractViolation(f"missing parameters: {sorted(missing)}")
        return LmserNetwork(self.config, [layer.with_parameters(params) for layer in self.layers])

    def bind(self, tape: Optional[Tape]) -> List[Layer]:
        if tape is None:
            return self.layers
        return [layer.bind(tape) for layer in self.layers]

    # -- shapes ---------------------------------------------------------------

    def to_input(self, images) -> np.ndarray:
        """Reshape a batch of [n, c, h, w] images to network input layout"""
        arr = np.asarray(images, dtype=np.float32)
        return arr.reshape((arr.shape[0],) + self.config.sample_shape)

    def _batched(self, x: Tensor, shape: Tuple[int, ...], what: str) -> Tuple[Tensor, bool]:
        if x.shape == shape:
            return T.reshape(x, (1,) + shape), True
        if x.shape[1:] != shape:
            raise DimensionError(f"{what} shape does not match network", x.shape, shape)
        return x, False

    def _down(self, layers: List[Layer], m: int, z: Tensor) -> Tensor:
        """Top-down pre-activation into the input of layer m"""
        layer = layers[m]
        if isinstance(layer, ConvLayer):
            return layer.down(z, target_hw=self.config.spatial_sizes[m])
        return layer.down(z)

    # -- perception -----------------------------------------------------------

    def forward(self, x, k: Optional[int] = None, tape: Optional[Tape] = None,
                style_sigma: float = 0.0, rng: Optional[np.random.Generator] = None) -> LmserState:
        cfg = self.config
        k = cfg.reflections if k is None else k
        if k < 0:
            raise ContractViolation(f"reflections must be >= 0, got {k}")
        layers = self.bind(tape)
        x, single = self._batched(T.as_tensor(x), cfg.sample_shape, "input")
        act_up = ACTIVATIONS[cfg.hidden_activation]
        act_down = ACTIVATIONS[cfg.top_down_act]
        n_layers = len(layers)
        top = n_layers - 1
        style_offset = cfg.n_classes if cfg.supervised else 0
        style_units = cfg.style_units

        y: List[Optional[Tensor]] = [None] * n_layers
        u: List[Optional[Tensor]] = [None] * n_layers
        z: List[Optional[Tensor]] = [None] * n_layers
        d: List[Optional[Tensor]] = [None] * n_layers
        passes: List[str] = []

        def bottom_up():
            below = x
            for m, layer in enumerate(layers):
                y[m] = layer.up(below)
                if cfg.neuron_sharing and u[m] is not None:
                    z[m] = act_up(T.add(y[m], u[m]))
                else:
                    z[m] = act_up(y[m])
                below = z[m]
            passes.append("up")

        def top_down() -> Tensor:
            above = _perturb_style(z[top], style_offset, style_units, style_sigma, rng)
            for m in range(top - 1, -1, -1):
                u[m] = self._down(layers, m + 1, above)
                if cfg.neuron_sharing:
                    z[m] = act_down(T.add(y[m], u[m]))
                    above = z[m]
                else:
                    d[m] = act_down(u[m])
                    above = d[m]
            passes.append("down")
            return above

        bottom_up()
        for _ in range(k):
            top_down()
            bottom_up()
        reconstruction = T.sigmoid(self._down(layers, 0, top_down()))

        top_code = z[top]
        logits = style_code = None
        if cfg.supervised:
            flat = _flat(top_code)
            logits = T.slice_last(flat, 0, cfg.n_classes)
            if style_units:
                style_code = T.slice_last(flat, style_offset, style_offset + style_units)

        if single:
            reconstruction = T.reshape(reconstruction, cfg.sample_shape)
            if logits is not None:
                logits = T.reshape(logits, (cfg.n_classes,))
            if style_code is not None:
                style_code = T.reshape(style_code, (style_units,))

        return LmserState(
            y=y, u=u, z=z, reconstruction=reconstruction, top_code=top_code, top_down=d,
            logits=logits, style_code=style_code, style_offset=style_offset,
            style_units=style_units, passes=passes,
        )

    def encode(self, x, tape: Optional[Tape] = None) -> Tensor:
        """Top code from a single bottom-up pass, as a [n, top_width] batch"""
        layers = self.bind(tape)
        x, _ = self._batched(T.as_tensor(x), self.config.sample_shape, "input")
        act_up = ACTIVATIONS[self.config.hidden_activation]
        below = x
        for layer in layers:
            below = act_up(layer.up(below))
        return _flat(below)

    def decode(self, code, tape: Optional[Tape] = None) -> Tensor:
        """Pure top-down pass from a top code; z_m = act(u_m) everywhere"""
        cfg = self.config
        layers = self.bind(tape)
        code = T.as_tensor(code)
        single = code.shape == (cfg.top_width,)
        if single:
            code = T.reshape(code, (1, cfg.top_width))
        if len(code.shape) != 2 or code.shape[1] != cfg.top_width:
            raise DimensionError("code width does not match top layer", code.shape, (cfg.top_width,))
        act_down = ACTIVATIONS[cfg.top_down_act]
        above = T.reshape(code, (code.shape[0],) + cfg.top_shape)
        for m in range(len(layers) - 2, -1, -1):
            above = act_down(self._down(layers, m + 1, above))
        image = T.sigmoid(self._down(layers, 0, above))
        return T.reshape(image, cfg.sample_shape) if single else image

    def classify(self, x, k: Optional[int] = None) -> Union[int, np.ndarray]:
        """Argmax of the label head; ties go to the smallest index"""
        if not self.config.supervised:
            raise CapabilityError("classify needs a supervised network")
        logits = self.forward(x, k).logits.numpy()
        labels = np.argmax(logits, axis=-1)
        return int(labels) if logits.ndim == 1 else labels

    def inject_style_noise(self, state: LmserState, sigma: float, rng: np.random.Generator) -> Tensor:
        return inject_style_noise(state, sigma, rng)
