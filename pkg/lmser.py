#!/usr/bin/env python3
"""
Lmser experiments from the command line

    python lmser.py train --variant lmser-un --backbone dense --iters 5000
    python lmser.py reconstruct --checkpoint runs/x/checkpoints/final.lmsr --n 10
    python lmser.py attack --checkpoint runs/sup/checkpoints/final.lmsr --epsilons 0 0.1 0.3
    python lmser.py generate --checkpoint runs/sup/checkpoints/final.lmsr --unit 10
    python lmser.py associate --checkpoint runs/x/checkpoints/final.lmsr --mask 0 0 9 28
    python lmser.py gradcheck --variant lmser-sup --reflections 1

Every command writes manifest.yaml into its output directory first; passing
that file back through --manifest replays the run.
"""
import argparse
import copy
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Import configuration
from config import CONFIG

from src import __version__
from src.core.data_processor import MaskSpec, load_mnist
from src.core.errors import ConfigurationError, LmserError
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.network import VARIANTS, LmserConfig, LmserNetwork
from src.pipeline.experiments import ATTACK_LOSSES, run_associate, run_attack, run_generate, run_reconstruct
from src.pipeline.gradcheck import adjointness_report, gradcheck
from src.pipeline.trainer import TrainConfig, train
from src.utils.file_handler import initialize_directories, load_yaml, save_csv, save_yaml
from src.utils.logger import setup_logging

logger = logging.getLogger(__name__)

Settings = Dict[str, Any]

# argparse dest -> settings path
FLAG_PATHS = {
    "dataset": ("data", "dataset"),
    "seed": ("training", "seed"),
    "variant": ("network", "variant"),
    "backbone": ("network", "backbone"),
    "style_units": ("network", "style_units"),
    "hidden_activation": ("network", "hidden_activation"),
    "top_down_activation": ("network", "top_down_activation"),
    "iters": ("training", "iterations"),
    "batch": ("training", "batch_size"),
    "lr": ("training", "lr0"),
    "decay": ("training", "decay"),
    "lambda_cls": ("training", "lambda_cls"),
    "lambda_rec": ("training", "lambda_rec"),
    "eval_every": ("training", "eval_every"),
    "eval_size": ("training", "eval_size"),
    "style_sigma": ("training", "style_sigma"),
    "checkpoint_at": ("training", "checkpoint_at"),
    "checkpoint": ("checkpoint",),
    "epsilons": ("attack", "epsilons"),
    "attack_loss": ("attack", "attack_loss"),
    "unit": ("generation", "unit_index"),
    "values": ("generation", "values"),
    "category": ("generation", "category"),
    "reference_index": ("generation", "reference_index"),
    "fill": ("association", "mask", "fill"),
    "out": ("output", "dir"),
    "log_level": ("logging", "level"),
}
N_PATHS = {
    "reconstruct": ("reconstruction", "n"),
    "attack": ("attack", "n"),
    "associate": ("association", "n"),
    "gradcheck": ("gradcheck", "batch_size"),
}
CHECKPOINT_COMMANDS = ("reconstruct", "attack", "generate", "associate")


def deep_merge(base: dict, overlay: dict) -> dict:
    """Recursively overlay `overlay` onto a copy of `base`"""
    merged = copy.deepcopy(base)
    for key, value in (overlay or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _set(settings: Settings, path, value):
    node = settings
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file overlaid on the defaults")
    common.add_argument("--manifest", help="manifest.yaml of an earlier run to replay")
    common.add_argument("--out", help="output directory (env LMSER_OUTPUT_DIR)")
    common.add_argument("--data-dir", dest="data_dir", help="IDX directory (env LMSER_DATA_DIR)")
    common.add_argument("--dataset", choices=["mnist", "fashion"])
    common.add_argument("--seed", type=int)
    common.add_argument("--log-level", dest="log_level")
    common.add_argument("--reflections", type=int, help="reflection count k")

    network = argparse.ArgumentParser(add_help=False)
    network.add_argument("--variant", choices=list(VARIANTS))
    network.add_argument("--backbone", choices=["dense", "conv"])
    network.add_argument("--layers", type=int, nargs="+", help="dense widths or conv channels")
    network.add_argument("--style-units", dest="style_units", type=int)
    network.add_argument("--hidden-activation", dest="hidden_activation", choices=["relu", "sigmoid"])
    network.add_argument("--top-down-activation", dest="top_down_activation", choices=["relu", "sigmoid"])

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--iters", type=int)
    training.add_argument("--batch", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--decay", type=float)
    training.add_argument("--lambda-cls", dest="lambda_cls", type=float)
    training.add_argument("--lambda-rec", dest="lambda_rec", type=float)
    training.add_argument("--eval-every", dest="eval_every", type=int)
    training.add_argument("--eval-size", dest="eval_size", type=int)
    training.add_argument("--style-sigma", dest="style_sigma", type=float)
    training.add_argument("--checkpoint-at", dest="checkpoint_at", type=int, nargs="*")

    checkpoint = argparse.ArgumentParser(add_help=False)
    checkpoint.add_argument("--checkpoint", help="checkpoint written by train")

    parser = argparse.ArgumentParser(description="Lmser: bidirectional autoencoder experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common, network, training], help="train a network")
    reconstruct = sub.add_parser("reconstruct", parents=[common, checkpoint], help="input / reconstruction grid")
    reconstruct.add_argument("--n", type=int, help="number of test images")

    attack = sub.add_parser("attack", parents=[common, checkpoint], help="FGSM accuracy table")
    attack.add_argument("--lambda-cls", dest="lambda_cls", type=float, help="weights for --attack-loss joint")
    attack.add_argument("--lambda-rec", dest="lambda_rec", type=float)
    attack.add_argument("--epsilons", type=float, nargs="+")
    attack.add_argument("--attack-loss", dest="attack_loss", choices=list(ATTACK_LOSSES))
    attack.add_argument("--n", type=int, help="number of test images")

    generate = sub.add_parser("generate", parents=[common, checkpoint], help="sweep one top coding unit")
    generate.add_argument("--unit", type=int)
    generate.add_argument("--values", type=float, nargs="+")
    generate.add_argument("--category", type=int)
    generate.add_argument("--reference-index", dest="reference_index", type=int)

    associate = sub.add_parser("associate", parents=[common, checkpoint], help="recall from masked inputs")
    associate.add_argument("--mask", type=int, nargs=4, metavar=("ROW0", "COL0", "HEIGHT", "WIDTH"))
    associate.add_argument("--fill", type=float)
    associate.add_argument("--n", type=int, help="number of test images")

    check = sub.add_parser("gradcheck", parents=[common, network], help="finite-difference gradient check")
    check.add_argument("--n", type=int, help="batch size of the check")
    return parser


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Defaults < variant defaults < manifest < --config < flags"""
    manifest = load_yaml(args.manifest) if args.manifest else {}
    if manifest and manifest.get("command") != args.command:
        raise ConfigurationError(f"manifest was written by {manifest.get('command')!r}, not {args.command!r}")
    overlay = load_yaml(args.config) if args.config else {}
    replay = manifest.get("settings", {})

    variant = getattr(args, "variant", None) \
        or overlay.get("network", {}).get("variant") \
        or replay.get("network", {}).get("variant") \
        or CONFIG["network"]["variant"]
    settings = deep_merge(CONFIG, {"checkpoint": None})
    settings = deep_merge(settings, CONFIG["variant_overrides"].get(variant, {}))
    settings = deep_merge(settings, replay)
    settings = deep_merge(settings, overlay)

    for dest, path in FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is not None:
            _set(settings, path, value)
    if getattr(args, "n", None) is not None:
        _set(settings, N_PATHS[args.command], args.n)
    if args.reflections is not None:
        key = "eval_reflections" if args.command in CHECKPOINT_COMMANDS else "reflections"
        settings["network"][key] = args.reflections
    if getattr(args, "layers", None):
        if args.command == "gradcheck":
            key = "layers" if settings["network"]["backbone"] == "dense" else "conv_channels"
            settings["gradcheck"][key] = args.layers
        else:
            key = "dense_layers" if settings["network"]["backbone"] == "dense" else "conv_channels"
            settings["network"][key] = args.layers
    if getattr(args, "mask", None):
        row0, col0, height, width = args.mask
        settings["association"]["mask"].update(row0=row0, col0=col0, height=height, width=width)
    if args.data_dir:
        settings["data"]["dirs"][settings["data"]["dataset"]] = args.data_dir
    return settings


def build_network_config(settings: Settings, command: str) -> LmserConfig:
    net = settings["network"]
    fields = dict(
        backbone=net["backbone"],
        n_classes=net["n_classes"],
        style_units=net["style_units"],
        reflections=net["reflections"],
        hidden_activation=net["hidden_activation"],
        top_down_activation=net["top_down_activation"],
    )
    if command == "gradcheck":
        check = settings["gradcheck"]
        fields.update(n_classes=check["n_classes"], hidden_activation=check["hidden_activation"])
        if net["backbone"] == "dense":
            fields["layer_specs"] = check["layers"]
        else:
            fields.update(layer_specs=check["conv_channels"], input_shape=check["input_shape"])
    else:
        fields["layer_specs"] = net["dense_layers"] if net["backbone"] == "dense" else net["conv_channels"]
    return LmserConfig.for_variant(net["variant"], **fields)


def write_manifest(out_dir: Path, command: str, settings: Settings,
                   net_config: Optional[LmserConfig] = None, train_config: Optional[TrainConfig] = None):
    data = settings["data"]
    manifest = {
        "command": command,
        "engine_version": __version__,
        "seed": settings["training"]["seed"],
        "data": {"dataset": data["dataset"], "dir": str(data["dirs"][data["dataset"]])},
        "output_dir": str(out_dir),
        "checkpoint": settings.get("checkpoint"),
        "network": net_config.to_dict() if net_config else None,
        "training": train_config.to_dict() if train_config else None,
        "settings": settings,
    }
    save_yaml(manifest, out_dir / "manifest.yaml", "Run manifest")


def _data_dir(settings: Settings) -> str:
    data = settings["data"]
    return data["dirs"][data["dataset"]]


def _test_split(settings: Settings):
    return load_mnist(_data_dir(settings), "test", check_counts=settings["data"]["check_counts"])


def _open_checkpoint(settings: Settings, out_dir: Path, command: str) -> LmserNetwork:
    if not settings.get("checkpoint"):
        raise ConfigurationError(f"{command} needs --checkpoint")
    net, meta = load_checkpoint(settings["checkpoint"])
    logger.info(f"📦 Loaded {settings['checkpoint']} (iteration {meta['iteration']})")
    write_manifest(out_dir, command, settings, net.config)
    return net


def cmd_train(settings: Settings, out_dir: Path) -> int:
    net_config = build_network_config(settings, "train")
    train_config = TrainConfig.from_dict(settings["training"])
    write_manifest(out_dir, "train", settings, net_config, train_config)

    data_dir, check = _data_dir(settings), settings["data"]["check_counts"]
    train_set = load_mnist(data_dir, "train", check_counts=check)
    test_set = load_mnist(data_dir, "test", check_counts=check)

    net = LmserNetwork.initialize(net_config, seed=train_config.seed)
    metrics_path = out_dir / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()
    net, log = train(net, train_set, train_config, eval_set=test_set,
                     metrics_path=metrics_path, checkpoint_dir=out_dir / "checkpoints")
    if not metrics_path.exists():
        save_csv(log, metrics_path, "Metric log (no evaluation rows)")
    save_checkpoint(out_dir / "checkpoints" / "final.lmsr", net, train_config.seed, train_config.iterations)
    return 0


def cmd_reconstruct(settings: Settings, out_dir: Path) -> int:
    net = _open_checkpoint(settings, out_dir, "reconstruct")
    run_reconstruct(net, _test_split(settings), out_dir, n=settings["reconstruction"]["n"],
                    k=settings["network"]["eval_reflections"], gap=settings["output"]["grid_gap"])
    return 0


def cmd_attack(settings: Settings, out_dir: Path) -> int:
    net = _open_checkpoint(settings, out_dir, "attack")
    attack = settings["attack"]
    run_attack(net, _test_split(settings).subset(attack["n"]), out_dir, epsilons=attack["epsilons"],
               attack_loss=attack["attack_loss"], k=settings["network"]["eval_reflections"],
               gap=settings["output"]["grid_gap"], train_config=TrainConfig.from_dict(settings["training"]))
    return 0


def cmd_generate(settings: Settings, out_dir: Path) -> int:
    net = _open_checkpoint(settings, out_dir, "generate")
    gen = settings["generation"]
    reference = None
    if gen["reference_index"] is not None:
        test_set = _test_split(settings)
        index = gen["reference_index"]
        if not 0 <= index < len(test_set):
            raise ConfigurationError(f"reference index {index} outside test split of {len(test_set)} images")
        reference = test_set.images.data[index]
    run_generate(net, out_dir, unit_index=gen["unit_index"], values=gen["values"], category=gen["category"],
                 reference=reference, k=settings["network"]["eval_reflections"],
                 gap=settings["output"]["grid_gap"])
    return 0


def cmd_associate(settings: Settings, out_dir: Path) -> int:
    net = _open_checkpoint(settings, out_dir, "associate")
    assoc = settings["association"]
    run_associate(net, _test_split(settings), out_dir, mask_spec=MaskSpec(**assoc["mask"]), n=assoc["n"],
                  k=settings["network"]["eval_reflections"], gap=settings["output"]["grid_gap"],
                  eval_size=settings["training"]["eval_size"])
    return 0


def cmd_gradcheck(settings: Settings, out_dir: Path) -> int:
    net_config = build_network_config(settings, "gradcheck")
    write_manifest(out_dir, "gradcheck", settings, net_config)
    check, seed = settings["gradcheck"], settings["training"]["seed"]
    report = gradcheck(net_config, batch_size=check["batch_size"], seed=seed, h=check["h"],
                       tolerance=check["tolerance"])
    save_csv(report, out_dir / "gradcheck.csv", "Gradient check report")
    adjoint = adjointness_report(LmserNetwork.initialize(net_config, seed=seed), seed=seed)
    save_csv(adjoint, out_dir / "adjointness.csv", "Adjointness report")
    return 0 if report["passed"].all() else 1


COMMAND_HANDLERS = {
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "attack": cmd_attack,
    "generate": cmd_generate,
    "associate": cmd_associate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = resolve_settings(args)
        setup_logging(settings["logging"]["level"], settings["logging"]["file"])
        logger.info(f"🚀 lmser {args.command} (engine {__version__})")
        out_dir = initialize_directories(settings["output"]["dir"])
        return COMMAND_HANDLERS[args.command](settings, out_dir)
    except (LmserError, FileNotFoundError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
