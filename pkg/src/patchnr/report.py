"""Figure rendering for CLI reports.

Every CLI command that accepts ``--report DIR`` drops matplotlib figures
here next to its CSV output, so a run is inspectable without a notebook.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "save_loss_curve",
    "save_objective_trace",
    "save_image_panel",
    "save_nll_histograms",
    "save_decay_curve",
    "write_csv",
    "ensure_dir",
]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def save_loss_curve(trace, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("minibatch nll")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_objective_trace(trace, path):
    """trace rows are (fidelity, prior, objective)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace[:, 0], label="fidelity", lw=0.9)
    ax.plot(trace[:, 2], label="objective", lw=0.9)
    ax2 = ax.twinx()
    ax2.plot(trace[:, 1], label="prior", color="tab:green", lw=0.9)
    ax2.set_ylabel("prior")
    ax.set_xlabel("iteration")
    ax.set_ylabel("fidelity / objective")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_image_panel(images, path):
    """Side-by-side grayscale panels; ``images`` is a name -> array dict."""
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4))
    if n == 1:
        axes = [axes]
    for ax, (name, img) in zip(axes, images.items()):
        ax.imshow(img, cmap="gray")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def save_nll_histograms(groups, path, bins=50):
    """Overlaid per-patch nll histograms; ``groups`` maps name -> values."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in groups.items():
        ax.hist(values, bins=bins, alpha=0.55, label=name, density=True)
    ax.set_xlabel("patch nll")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_decay_curve(radii, log_phi_max, slope, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    r2 = radii ** 2
    ax.plot(r2, log_phi_max, "o-", label="measured")
    ax.plot(r2, log_phi_max[0] + slope * (r2 - r2[0]), "--",
            label=f"slope {slope:.4f}")
    ax.set_xlabel("radius$^2$")
    ax.set_ylabel("max log prior weight")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
