import os
from datetime import datetime
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

CONFIG = {
    "data": {
        "dataset": "mnist",  # "mnist" or "fashion" (identical IDX layout)
        "dirs": {
            "mnist": os.getenv("LMSER_DATA_DIR", "data/mnist"),
            "fashion": os.getenv("LMSER_FASHION_DIR", "data/fashion"),
        },
        "check_counts": True,  # assert 60000 train / 10000 test samples
    },
    "network": {
        "variant": "lmser-un",  # ae, lmser-un-n, lmser-un, lmser-w, lmser-sup, lmser-sup-n-w, fcn
        "backbone": "dense",
        "dense_layers": [784, 300, 100, 10],
        "conv_channels": [16, 32, 64, 64],  # 3x3 kernels, stride 2, padding 1
        "reflections": 1,
        "eval_reflections": None,  # k used when running a checkpoint; None = its own
        "hidden_activation": "relu",
        "top_down_activation": None,  # None = same as hidden_activation
        "n_classes": 10,
        "style_units": 0,  # extra top units next to the category units
    },
    "training": {
        "batch_size": 50,
        "lr0": 0.01,
        "decay": 0.9999,  # per-iteration learning-rate multiplier
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "lambda_cls": 1.0,
        "lambda_rec": 1.0,
        "iterations": 5000,
        "seed": 0,
        "eval_every": 500,
        "eval_size": 1000,  # first N test images
        "checkpoint_at": [],
        "style_sigma": 0.1,
    },
    # Per-variant defaults applied before command-line flags
    "variant_overrides": {
        "fcn": {"network": {"reflections": 0}, "training": {"lambda_rec": 0.0}},
    },
    "reconstruction": {"n": 10},
    "attack": {
        "epsilons": [0.0, 0.1, 0.3],
        "attack_loss": "cls",  # "cls" or "joint"
        "n": 1000,
    },
    "generation": {
        "unit_index": None,  # None = first style unit, else unit 0
        "values": [0.0, 0.444, 0.889, 1.333, 1.778, 2.222, 2.667, 3.111, 3.556, 4.0],
        "category": 0,
        "reference_index": None,  # test image whose code fixes the other units
    },
    "association": {
        "mask": {"row0": 0, "col0": 0, "height": 9, "width": 28, "fill": 0.0},  # upper third
        "n": 10,
    },
    "gradcheck": {
        "layers": [6, 4, 3],
        "conv_channels": [2, 3],
        "input_shape": [1, 6, 6],  # conv backbone only
        "n_classes": 2,
        "hidden_activation": "sigmoid",  # smooth, so finite differences never straddle a kink
        "batch_size": 3,
        "h": 1e-6,
        "tolerance": 1e-3,
    },
    "output": {
        "dir": os.getenv("LMSER_OUTPUT_DIR", f"runs/{datetime.now().strftime('%Y%m%d_%H%M%S')}"),
        "grid_gap": 2,
    },
    "logging": {
        "level": os.getenv("LMSER_LOG_LEVEL", "INFO"),
        "file": "logs/lmser.log",
    },
}
