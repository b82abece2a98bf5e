"""
Finite-difference verification of the autodiff gradients and of the layer adjoints
"""
import logging
from typing import Optional

import numpy as np
import pandas as pd

from ..core import tensor as T
from ..core.errors import ConfigurationError
from ..core.tensor import Tape, Tensor
from ..models.layers import ConvLayer, DenseLayer
from ..models.network import LmserConfig, LmserNetwork
from .trainer import TrainConfig, objective

logger = logging.getLogger(__name__)

GRADCHECK_COLUMNS = ["parameter", "entries", "max_abs_error", "rel_error", "passed"]


def _loss(net: LmserNetwork, x: Tensor, labels: np.ndarray, k: Optional[int], config: TrainConfig,
          tape: Optional[Tape] = None) -> Tensor:
    state = net.forward(x, k, tape=tape)
    return objective(x, state, labels, config)


def gradcheck(config: LmserConfig, k: Optional[int] = None, batch_size: int = 3, seed: int = 0,
              h: float = 1e-6, tolerance: float = 1e-3, train_config: Optional[TrainConfig] = None) -> pd.DataFrame:
    """Compare tape gradients of the training loss with central differences

    Runs in float64. Each parameter group gets one row with the relative error
    ||g_tape - g_fd|| / (||g_tape|| + ||g_fd||).
    """
    train_config = train_config or TrainConfig(style_sigma=0.0)
    rng = np.random.default_rng(seed)
    rows = []
    with T.precision(np.float64):
        net = LmserNetwork.initialize(config, seed=seed)
        params = {name: p.numpy().astype(np.float64) for name, p in net.parameters().items()}
        # small random biases so no bias gradient is trivially compared against zeros
        for name in params:
            if ".b_" in name:
                params[name] = rng.normal(0.0, 0.1, size=params[name].shape)
        net = net.with_parameters(params)

        x = Tensor(rng.uniform(0.0, 1.0, size=(batch_size,) + config.sample_shape))
        labels = rng.integers(0, config.n_classes, size=batch_size)

        tape = Tape()
        grads = tape.backward(_loss(net, x, labels, k, train_config, tape))

        for name, value in params.items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                original = value[idx]
                value[idx] = original + h
                plus = _loss(net.with_parameters(params), x, labels, k, train_config).item()
                value[idx] = original - h
                minus = _loss(net.with_parameters(params), x, labels, k, train_config).item()
                value[idx] = original
                numeric[idx] = (plus - minus) / (2 * h)
            analytic = grads[name].numpy()
            diff = np.linalg.norm(analytic - numeric)
            denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
            rel = 0.0 if denom < 1e-8 else diff / denom
            rows.append({
                "parameter": name,
                "entries": value.size,
                "max_abs_error": float(np.max(np.abs(analytic - numeric))),
                "rel_error": float(rel),
                "passed": bool(rel <= tolerance),
            })
    report = pd.DataFrame(rows, columns=GRADCHECK_COLUMNS)
    worst = report["rel_error"].max() if len(report) else 0.0
    status = "✅" if report["passed"].all() else "❌"
    logger.info(f"{status} Gradient check: {len(report)} parameter groups, max relative error {worst:.2e}")
    return report


def adjointness_gap(layer, rng: np.random.Generator, batch_size: int = 2,
                    in_hw: Optional[tuple] = None) -> float:
    """Gap between <up(x), z> and <x, down(z)> for the bias-free linear maps"""
    if isinstance(layer, DenseLayer):
        x = rng.normal(size=(batch_size, layer.n_in))
        z = rng.normal(size=(batch_size, layer.n_out))
        w_down = layer.W if layer.tied else T.transpose(layer.W_down)
        y = T.matmul(Tensor(x), T.transpose(layer.W)).numpy()
        back = T.matmul(Tensor(z), w_down).numpy()
    elif isinstance(layer, ConvLayer):
        if in_hw is None:
            raise ConfigurationError("conv adjointness needs the input spatial size")
        kernel = layer.K if layer.tied else layer.K_down
        x = rng.normal(size=(batch_size, layer.c_in) + tuple(in_hw))
        y = T.conv2d(Tensor(x), layer.K, layer.stride, layer.padding).numpy()
        z = rng.normal(size=y.shape)
        back = T.conv2d_transpose(Tensor(z), kernel, layer.stride, layer.padding, out_hw=tuple(in_hw)).numpy()
    else:
        raise TypeError(f"unsupported layer type {type(layer).__name__}")
    y, back = y.astype(np.float64), back.astype(np.float64)
    lhs, rhs = np.sum(y * z), np.sum(x * back)
    # normalised by the Cauchy-Schwarz bound on either side
    return float(abs(lhs - rhs) / max(np.linalg.norm(y) * np.linalg.norm(z), 1e-12))


def adjointness_report(net: LmserNetwork, seed: int = 0, trials: int = 10) -> pd.DataFrame:
    """Worst adjointness gap per tied layer over random trials"""
    rng = np.random.default_rng(seed)
    sizes = net.config.spatial_sizes if net.config.backbone == "conv" else [None] * (len(net.layers) + 1)
    rows = []
    for layer, hw in zip(net.layers, sizes):
        if not layer.tied:
            continue
        worst = max(adjointness_gap(layer, rng, in_hw=hw) for _ in range(trials))
        rows.append({"layer": layer.name, "trials": trials, "max_gap": worst})
    return pd.DataFrame(rows, columns=["layer", "trials", "max_gap"])
