"""
Learning phase: losses, Adam with exponential decay, the training loop and metrics
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..core import tensor as T
from ..core.data_processor import Dataset, batch_stream
from ..core.errors import CapabilityError, ConfigurationError, ContractViolation
from ..core.tensor import Tape, Tensor
from ..models.checkpoint import save_checkpoint
from ..models.network import LmserNetwork, LmserState
from ..utils.file_handler import append_csv_row

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["iteration", "recon_error", "accuracy", "lr"]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    lr0: float = 0.01
    decay: float = 0.9999
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_cls: float = 1.0
    lambda_rec: float = 1.0
    iterations: int = 5000
    seed: int = 0
    eval_every: int = 500
    eval_size: int = 1000
    checkpoint_at: Tuple[int, ...] = ()
    style_sigma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_at", tuple(int(t) for t in self.checkpoint_at))
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.decay <= 1:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be > 0, got {self.lr0}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigurationError("Adam needs 0 <= beta < 1 and eps > 0")
        if self.lambda_cls < 0 or self.lambda_rec < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.iterations < 0 or self.eval_every < 1 or self.eval_size < 1:
            raise ConfigurationError("iterations >= 0, eval_every >= 1 and eval_size >= 1 required")
        if self.style_sigma < 0:
            raise ConfigurationError(f"style_sigma must be >= 0, got {self.style_sigma}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_at"] = list(self.checkpoint_at)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    """First/second moments per parameter name and the shared step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: Dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros(p.shape, dtype=p.data.dtype) for name, p in params.items()},
            v={name: np.zeros(p.shape, dtype=p.data.dtype) for name, p in params.items()},
        )


# ---------------------------------------------------------------------------
# losses

def loss_unsup(x: Tensor, reconstruction: Tensor) -> Tensor:
    """1/2 * per-pixel mean squared reconstruction error"""
    return T.scale(T.mse(x, reconstruction), 0.5)


def loss_joint(x: Tensor, reconstruction: Tensor, logits: Optional[Tensor], labels,
               lambda_cls: float = 1.0, lambda_rec: float = 1.0) -> Tensor:
    """lambda_rec * loss_unsup + lambda_cls * cross-entropy of the label head"""
    if logits is None:
        raise CapabilityError("joint loss needs a supervised label head")
    rec = loss_unsup(x, reconstruction)
    if lambda_rec != 1.0:
        rec = T.scale(rec, lambda_rec)
    return T.add(rec, T.scale(T.softmax_cross_entropy(logits, labels), lambda_cls))


def objective(x: Tensor, state: LmserState, labels, config: TrainConfig) -> Tensor:
    """Training loss of a forward state: joint when a label head exists"""
    if state.logits is not None:
        return loss_joint(x, state.reconstruction, state.logits, labels,
                          lambda_cls=config.lambda_cls, lambda_rec=config.lambda_rec)
    rec = loss_unsup(x, state.reconstruction)
    return rec if config.lambda_rec == 1.0 else T.scale(rec, config.lambda_rec)


# ---------------------------------------------------------------------------
# optimizer

def learning_rate(config: TrainConfig, t: int) -> float:
    """lr used by the update at 0-based step t: lr0 * decay^t"""
    return config.lr0 * config.decay ** t


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], state: AdamState,
              lr_t: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Dict[str, Tensor]:
    """Bias-corrected Adam update, applied in the order of `params`"""
    missing = [name for name in params if name not in grads]
    if missing:
        raise ContractViolation(f"no gradient for parameters: {missing}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    updated: Dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.shape:
            raise ContractViolation(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(p.data.dtype)
        state.v[name] = v.astype(p.data.dtype)
        step = lr_t * (m / c1) / (np.sqrt(v / c2) + eps)
        updated[name] = Tensor(p.data - step)
    return updated


# ---------------------------------------------------------------------------
# metrics

def reconstruction_errors(net: LmserNetwork, images, k: Optional[int] = None, batch_size: int = 500) -> np.ndarray:
    """Per-sample per-pixel MSE between inputs and their reconstructions"""
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    errors = []
    for start in range(0, len(data), batch_size):
        x = net.to_input(data[start:start + batch_size])
        recon = net.forward(Tensor(x), k).reconstruction.numpy()
        diff = recon.astype(np.float64) - x.astype(np.float64)
        errors.append((diff * diff).reshape(len(x), -1).mean(axis=1))
    return np.concatenate(errors) if errors else np.zeros(0)


def eval_reconstruction_error(net: LmserNetwork, dataset: Dataset, k: Optional[int] = None) -> float:
    """Per-pixel MSE averaged over the subset (no 1/2 factor)"""
    if len(dataset) == 0:
        raise ConfigurationError("evaluation subset is empty")
    return float(reconstruction_errors(net, dataset.images, k).mean())


def eval_accuracy(net: LmserNetwork, dataset: Dataset, k: Optional[int] = None, batch_size: int = 500) -> float:
    """Fraction of samples whose argmax label matches"""
    if len(dataset) == 0:
        raise ConfigurationError("evaluation subset is empty")
    data = dataset.images.data
    correct = 0
    for start in range(0, len(data), batch_size):
        predicted = net.classify(Tensor(net.to_input(data[start:start + batch_size])), k)
        correct += int(np.sum(predicted == dataset.labels[start:start + batch_size]))
    return correct / len(dataset)


def psnr(mse: float) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]"""
    return math.inf if mse <= 0 else 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# training loop

class LmserTrainer:
    """Minibatch Adam training with periodic evaluation and checkpoints"""

    def __init__(self, config: TrainConfig, metrics_path: Optional[Union[str, Path]] = None,
                 checkpoint_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None

    def step(self, net: LmserNetwork, images: Tensor, labels: np.ndarray, state: AdamState,
             rng: np.random.Generator) -> Tuple[LmserNetwork, float]:
        """One forward/backward/update; returns the new network and the loss"""
        cfg = self.config
        tape = Tape()
        x = Tensor(net.to_input(images.data))
        forward_state = net.forward(x, tape=tape, style_sigma=cfg.style_sigma, rng=rng)
        loss = objective(x, forward_state, labels, cfg)
        grads = tape.backward(loss)
        lr_t = learning_rate(cfg, state.t)
        params = adam_step(net.parameters(), grads, state, lr_t, cfg.beta1, cfg.beta2, cfg.eps)
        return net.with_parameters(params), loss.item()

    def evaluate(self, net: LmserNetwork, eval_set: Dataset, iteration: int) -> Dict[str, float]:
        accuracy = eval_accuracy(net, eval_set) if net.config.supervised else float("nan")
        return {
            "iteration": iteration,
            "recon_error": eval_reconstruction_error(net, eval_set),
            "accuracy": accuracy,
            "lr": learning_rate(self.config, iteration - 1),
        }

    def fit(self, net: LmserNetwork, dataset: Dataset,
            eval_set: Optional[Dataset] = None) -> Tuple[LmserNetwork, pd.DataFrame]:
        """Run `iterations` updates; returns the trained network and its metric log"""
        cfg = self.config
        if len(dataset) == 0:
            raise ConfigurationError("training dataset is empty")
        eval_set = (eval_set if eval_set is not None else dataset).subset(cfg.eval_size)
        logger.info(f"🧠 Training {net.config.backbone} net ({net.num_parameters():,} parameters) "
                    f"for {cfg.iterations:,} iterations, batch {cfg.batch_size}")

        stream = batch_stream(dataset, cfg.batch_size, cfg.seed)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
        state = AdamState.zeros(net.parameters())
        rows: List[Dict[str, float]] = []
        checkpoints = set(cfg.checkpoint_at)

        progress = tqdm(range(1, cfg.iterations + 1), desc="Training", disable=cfg.iterations == 0)
        for iteration in progress:
            images, labels = next(stream)
            net, loss = self.step(net, images, labels, state, rng)
            if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
                row = self.evaluate(net, eval_set, iteration)
                rows.append(row)
                progress.set_postfix(loss=f"{loss:.4f}", recon=f"{row['recon_error']:.4f}")
                if self.metrics_path is not None:
                    append_csv_row(self.metrics_path, row, METRIC_COLUMNS)
            if iteration in checkpoints and self.checkpoint_dir is not None:
                save_checkpoint(self.checkpoint_dir / f"iter_{iteration:06d}.lmsr", net, cfg.seed, iteration)

        log = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        if len(log):
            last = log.iloc[-1]
            logger.info(f"✅ Training done: recon_error {last['recon_error']:.5f}, accuracy {last['accuracy']:.4f}")
        return net, log


def train(net: LmserNetwork, dataset: Dataset, config: TrainConfig, eval_set: Optional[Dataset] = None,
          metrics_path: Optional[Union[str, Path]] = None,
          checkpoint_dir: Optional[Union[str, Path]] = None) -> Tuple[LmserNetwork, pd.DataFrame]:
    return LmserTrainer(config, metrics_path, checkpoint_dir).fit(net, dataset, eval_set)
