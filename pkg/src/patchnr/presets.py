"""Named task profiles bundling operator, fidelity, and solver settings.

These are the published full-scale hyperparameters; they assume real
datasets and long training runs, so the test suite only exercises scaled-
down versions of the same wiring. ``lam`` is the user-scale weight; the
solver multiplies it by s/n_subset for the flow priors.
"""

import copy
from importlib import resources

__all__ = ["PRESETS", "TRAIN_PRESET", "get_preset", "preset_rows",
           "default_blur_kernel"]

TRAIN_PRESET = {
    "patch_size": 6,
    "n_blocks": 5,
    "hidden": 512,
    "clamp": 1.9,
    "lr": 1e-4,
    "batch_size": 32,
    "steps": 700_000,
}

PRESETS = {
    "sr": {
        "task": "sr",
        "lam": 0.15,
        "n_subset": 130_000,
        "iterations": 500,
        "lr": 0.03,
        "init": "bicubic",
        "crop": 40,
        "operator": {"kind": "blur_downsample", "kernel_size": 16,
                     "sigma": 2.0, "stride": 4},
        "fidelity": {"kind": "gaussian", "sigma": 0.01},
    },
    "ct_full": {
        "task": "ct_full",
        "lam": 700.0,
        "n_subset": 40_000,
        "iterations": 300,
        "lr": 0.005,
        "init": "fbp",
        "crop": 0,
        "operator": {"kind": "radon", "shape": [362, 362],
                     "domain": [26.0, 26.0], "n_bins": 513,
                     "n_angles": 1000, "drop": 0},
        "fidelity": {"kind": "poisson_ct", "n0": 4096.0},
    },
    "ct_limited": {
        "task": "ct_limited",
        "lam": 700.0,
        "n_subset": 40_000,
        "iterations": 3000,
        "lr": 0.005,
        "init": "fbp",
        "crop": 0,
        "operator": {"kind": "radon", "shape": [362, 362],
                     "domain": [26.0, 26.0], "n_bins": 513,
                     "n_angles": 1000, "drop": 100},
        "fidelity": {"kind": "poisson_ct", "n0": 4096.0},
    },
    "deblur": {
        "task": "deblur",
        "lam": 0.87,
        "n_subset": 40_000,
        "iterations": 600,
        "lr": 0.005,
        "init": "observation",
        "crop": 0,
        "operator": {"kind": "convolution", "kernel_size": 19},
        "fidelity": {"kind": "gaussian", "sigma": 5.0 / 255.0},
    },
}


def get_preset(task):
    if task not in PRESETS:
        raise ValueError(f"unknown task {task!r}; choose from "
                         f"{', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[task])


def preset_rows():
    """(task, lam, n_subset, iterations, lr) rows for the CLI listing."""
    return [(name, p["lam"], p["n_subset"], p["iterations"], p["lr"])
            for name, p in sorted(PRESETS.items())]


def default_blur_kernel():
    """The checked-in 19x19 motion-blur kernel used by the deblur task."""
    from .io import read_pfm
    path = resources.files("patchnr") / "assets" / "motion_blur_19.pfm"
    with resources.as_file(path) as p:
        return read_pfm(p).astype(float)
