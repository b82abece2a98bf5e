"""
Experiment runners on a trained network: reconstruction, FGSM attack,
top-code generation sweeps and associative recall from masked inputs.

Each runner writes a PGM grid and a CSV sidecar into the output directory
and returns the sidecar as a DataFrame.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..core import tensor as T
from ..core.data_processor import Dataset, MaskSpec, apply_mask
from ..core.errors import CapabilityError, ConfigurationError
from ..core.tensor import Tape, Tensor
from ..models.network import LmserNetwork
from ..utils.file_handler import image_grid, save_csv, write_pgm
from .trainer import TrainConfig, loss_joint, psnr, reconstruction_errors

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ATTACK_LOSSES = ("cls", "joint")
INPUT_BINDING = "__input__"


def _images(net: LmserNetwork, batch: np.ndarray) -> np.ndarray:
    """Network outputs back in [n, rows, cols] image layout"""
    rows, cols = net.config.input_shape[-2:]
    return np.asarray(batch).reshape(len(batch), rows, cols)


def fgsm(net: LmserNetwork, images, labels, epsilon: float, attack_loss: str = "cls",
         k: Optional[int] = None, train_config: Optional[TrainConfig] = None) -> Tensor:
    """Single-step adversarial images clip(x + epsilon * sign(grad_x L), 0, 1)"""
    if not net.config.supervised:
        raise CapabilityError("FGSM attacks the label head of a supervised network")
    if attack_loss not in ATTACK_LOSSES:
        raise ConfigurationError(f"attack loss must be one of {ATTACK_LOSSES}, got {attack_loss!r}")
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be >= 0, got {epsilon}")
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    x0 = net.to_input(data)
    if epsilon == 0:
        return Tensor(x0.reshape(data.shape))

    tape = Tape()
    x = tape.leaf(x0, name=INPUT_BINDING)
    state = net.forward(x, k, tape=tape)
    if attack_loss == "cls":
        loss = T.softmax_cross_entropy(state.logits, labels)
    else:
        cfg = train_config or TrainConfig()
        loss = loss_joint(x, state.reconstruction, state.logits, labels,
                          lambda_cls=cfg.lambda_cls, lambda_rec=cfg.lambda_rec)
    grad = tape.backward(loss)[INPUT_BINDING].numpy()
    adversarial = np.clip(x0 + np.float32(epsilon) * np.sign(grad), 0.0, 1.0)
    return Tensor(adversarial.reshape(data.shape))


def run_reconstruct(net: LmserNetwork, dataset: Dataset, out_dir: PathLike, n: int = 10,
                    k: Optional[int] = None, gap: int = 2) -> pd.DataFrame:
    """Input row over reconstruction row, with per-sample MSE and PSNR"""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    logger.info(f"🔁 Reconstructing {n} test images")
    samples = dataset.subset(n)
    x = net.to_input(samples.images.data)
    recon = net.forward(Tensor(x), k).reconstruction.numpy()
    write_pgm(out_dir / "reconstruct.pgm", image_grid([_images(net, x), _images(net, recon)], gap),
              "Reconstruction grid")

    errors = reconstruction_errors(net, samples.images, k)
    df = pd.DataFrame({
        "index": np.arange(len(samples)),
        "label": samples.labels,
        "mse": errors,
        "psnr": [psnr(e) for e in errors],
    })
    save_csv(df, out_dir / "reconstruct.csv", "Reconstruction errors")
    return df


def run_attack(net: LmserNetwork, dataset: Dataset, out_dir: PathLike,
               epsilons: Sequence[float] = (0.0, 0.1, 0.3), attack_loss: str = "cls",
               k: Optional[int] = None, batch_size: int = 500, n_show: int = 10, gap: int = 2,
               train_config: Optional[TrainConfig] = None) -> pd.DataFrame:
    """Accuracy under FGSM for each epsilon"""
    if not net.config.supervised:
        raise CapabilityError("attack needs a supervised checkpoint")
    if len(dataset) == 0:
        raise ConfigurationError("attack subset is empty")
    out_dir = Path(out_dir)
    logger.info(f"⚔️ FGSM ({attack_loss} loss) on {len(dataset):,} images, epsilons {list(epsilons)}")
    rows, shown = [], []
    data = dataset.images.data
    for epsilon in tqdm(list(epsilons), desc="FGSM"):
        correct, linf = 0, []
        for start in range(0, len(data), batch_size):
            clean = data[start:start + batch_size]
            labels = dataset.labels[start:start + batch_size]
            adversarial = fgsm(net, clean, labels, epsilon, attack_loss, k, train_config).numpy()
            predicted = net.classify(Tensor(net.to_input(adversarial)), k)
            correct += int(np.sum(predicted == labels))
            linf.append(np.abs(adversarial - clean).reshape(len(clean), -1).max(axis=1))
            if start == 0:
                shown.append(_images(net, adversarial[:n_show]))
        linf = np.concatenate(linf)
        rows.append({
            "epsilon": float(epsilon),
            "accuracy": correct / len(dataset),
            "mean_linf": float(linf.mean()),
            "max_linf": float(linf.max()),
            "n": len(dataset),
        })
        logger.info(f"   ε={epsilon:g}: accuracy {rows[-1]['accuracy']:.4f}")

    write_pgm(out_dir / "attack.pgm", image_grid(shown, gap), "Adversarial examples")
    df = pd.DataFrame(rows, columns=["epsilon", "accuracy", "mean_linf", "max_linf", "n"])
    save_csv(df, out_dir / "attack.csv", "FGSM accuracy table")
    return df


def sweep_codes(net: LmserNetwork, unit_index: int, values: Sequence[float], category: int = 0,
                reference: Optional[np.ndarray] = None, k: Optional[int] = None) -> np.ndarray:
    """Top codes that differ only in `unit_index`, one per value

    The fixed units come from `reference`'s top code when given, otherwise
    zeros; a supervised net additionally fixes its category units to the
    one-hot vector of `category`.
    """
    cfg = net.config
    if not 0 <= unit_index < cfg.top_width:
        raise ConfigurationError(f"unit index {unit_index} outside top layer of width {cfg.top_width}")
    if len(values) == 0:
        raise ConfigurationError("value grid is empty")
    if reference is not None:
        state = net.forward(Tensor(net.to_input(np.asarray(reference)[None])), k)
        base = state.top_code.numpy().reshape(-1).astype(np.float32)
    else:
        base = np.zeros(cfg.top_width, dtype=np.float32)
    if cfg.supervised:
        if not 0 <= category < cfg.n_classes:
            raise ConfigurationError(f"category {category} outside [0, {cfg.n_classes})")
        base[:cfg.n_classes] = 0.0
        base[category] = 1.0
    codes = np.repeat(base[None], len(values), axis=0)
    codes[:, unit_index] = np.asarray(values, dtype=np.float32)
    return codes


def run_generate(net: LmserNetwork, out_dir: PathLike, unit_index: Optional[int] = None,
                 values: Sequence[float] = tuple(np.linspace(0.0, 4.0, 10)), category: int = 0,
                 reference: Optional[np.ndarray] = None, k: Optional[int] = None, gap: int = 2) -> pd.DataFrame:
    """Decode a one-unit sweep of top codes into a single image row"""
    cfg = net.config
    if unit_index is None:
        unit_index = cfg.n_classes if cfg.style_units else 0
    out_dir = Path(out_dir)
    logger.info(f"🎨 Sweeping top unit {unit_index} over {len(values)} values")
    codes = sweep_codes(net, unit_index, values, category, reference, k)
    images = _images(net, net.decode(Tensor(codes)).numpy())
    write_pgm(out_dir / "generate.pgm", image_grid([images], gap), "Generation sweep")

    step_diff = [float("nan")] + [float(np.mean(np.abs(images[i] - images[i - 1]))) for i in range(1, len(images))]
    df = pd.DataFrame({
        "unit_index": unit_index,
        "value": np.asarray(values, dtype=np.float64),
        "mean_abs_diff_prev": step_diff,
    })
    save_csv(df, out_dir / "generate.csv", "Generation sweep")
    return df


def masked_region_mse(output: np.ndarray, truth: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Per-sample MSE restricted to the masked pixels (NaN for an empty mask)"""
    if not region.any():
        return np.full(len(output), np.nan)
    diff = output[:, region].astype(np.float64) - truth[:, region].astype(np.float64)
    return (diff * diff).mean(axis=1)


def run_associate(net: LmserNetwork, dataset: Dataset, out_dir: PathLike, mask_spec: MaskSpec = MaskSpec(),
                  n: int = 10, k: Optional[int] = None, gap: int = 2,
                  eval_size: int = 1000) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Masked input, network completion and ground truth as three grid rows"""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    rows, cols = net.config.input_shape[-2:]
    region = mask_spec.region(rows, cols)
    logger.info(f"🧩 Associative recall on {n} images with mask {mask_spec}")

    samples = dataset.subset(n)
    truth = _images(net, samples.images.data)
    masked = apply_mask(samples.images, mask_spec)
    output = _images(net, net.forward(Tensor(net.to_input(masked.data)), k).reconstruction.numpy())
    write_pgm(out_dir / "associate.pgm", image_grid([_images(net, masked.data), output, truth], gap),
              "Association grid")

    per_sample = pd.DataFrame({
        "index": np.arange(len(samples)),
        "label": samples.labels,
        "masked_mse": masked_region_mse(output, truth, region),
    })
    save_csv(per_sample, out_dir / "associate.csv", "Masked-region errors")

    summary = {"n": len(samples), "masked_mse": float(per_sample["masked_mse"].mean())}
    if net.config.supervised:
        subset = dataset.subset(eval_size)
        clean = net.classify(Tensor(net.to_input(subset.images.data)), k)
        occluded = net.classify(Tensor(net.to_input(apply_mask(subset.images, mask_spec).data)), k)
        summary["clean_accuracy"] = float(np.mean(clean == subset.labels))
        summary["masked_accuracy"] = float(np.mean(occluded == subset.labels))
    summary_df = pd.DataFrame([summary])
    save_csv(summary_df, out_dir / "associate_summary.csv", "Association summary")
    return per_sample, summary_df
