"""
SVG figures for simulation and detection runs
"""

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from anomaly import Histogram, MetricSeries  # noqa: E402
from utils import PathLike  # noqa: E402


HOURS = 3600.0


def apply_style() -> None:
    """Plot style with output that is stable across runs"""
    plt.rcParams.update(
        {
            "font.size": 10,
            "axes.grid": True,
            "grid.alpha": 0.25,
            "lines.linewidth": 1.0,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "svg.hashsalt": "evthermal",
            "svg.fonttype": "path",
        }
    )


def save_figure(fig: plt.Figure, path: PathLike) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(target, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return target


def plot_temperature_profiles(
    temperatures: np.ndarray,
    losses: np.ndarray,
    sample_period: float,
    module_ids: Sequence[int],
    path: PathLike,
) -> Path:
    """Power loss and heat-sink temperature of the given modules over the day"""
    apply_style()
    hours = np.arange(temperatures.shape[1]) * sample_period / HOURS

    fig, (ax_loss, ax_temp) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    for module_id in module_ids:
        ax_loss.plot(hours, losses[module_id], label=f"Module {module_id}")
        ax_temp.plot(hours, temperatures[module_id], label=f"Module {module_id}")

    ax_loss.set_ylabel("Power loss (W)")
    ax_loss.legend(loc="upper left")
    ax_temp.set_ylabel("Heat-sink temperature (°C)")
    ax_temp.set_xlabel("Time of day (h)")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_prediction_band(
    t_true: np.ndarray,
    mean: np.ndarray,
    ci_lo: np.ndarray,
    ci_hi: np.ndarray,
    sample_period: float,
    module_id: int,
    path: PathLike,
    level: float = 0.99,
) -> Path:
    """Measured temperature against the ensemble mean and its confidence band"""
    apply_style()
    hours = np.arange(len(t_true)) * sample_period / HOURS

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.fill_between(hours, ci_lo, ci_hi, color="#457B9D", alpha=0.3, label=f"{level:.0%} CI")
    ax.plot(hours, mean, color="#1D3557", label="Ensemble mean")
    ax.plot(hours, t_true, color="#E63946", linestyle="--", label="Measured")
    ax.set_xlabel("Time of day (h)")
    ax.set_ylabel("Heat-sink temperature (°C)")
    ax.set_title(f"Module {module_id}")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_metric_traces(
    metrics: MetricSeries,
    sample_period: float,
    module_id: int,
    path: PathLike,
    threshold: Optional[float] = None,
) -> Path:
    apply_style()
    hours = np.arange(len(metrics.ae)) * sample_period / HOURS

    fig, (ax_ae, ax_norm) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    ax_ae.plot(hours, metrics.ae, color="#ADB5BD", label="AE")
    ax_ae.plot(hours, metrics.ae_ema, color="#1D3557", label="AE EMA")
    ax_ae.set_ylabel("Absolute error (°C)")
    ax_ae.legend(loc="upper left")

    ax_norm.plot(hours, metrics.ae_norm, color="#ADB5BD", label="AE norm")
    ax_norm.plot(hours, metrics.sma, label=f"SMA (n={metrics.params.sma_window})")
    ax_norm.plot(hours, metrics.cma, label="CMA")
    ax_norm.plot(hours, metrics.ema, label=f"EMA (alpha={metrics.params.ema_alpha:g})")
    if threshold is not None:
        ax_norm.axhline(threshold, linestyle="--", color="#6A040F", label="Threshold")
    ax_norm.set_yscale("symlog")
    ax_norm.set_ylabel("Normalised error")
    ax_norm.set_xlabel("Time of day (h)")
    ax_norm.set_title(f"Module {module_id}")
    ax_norm.legend(loc="upper left")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_histograms(
    histograms: Dict[str, Histogram],
    path: PathLike,
    threshold: Optional[float] = None,
) -> Path:
    """Overlaid density histograms of EMA values, one per label"""
    apply_style()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, hist in histograms.items():
        if not hist.counts:
            continue
        ax.stairs(hist.density(), hist.edges, fill=True, alpha=0.4, label=label)
    if threshold is not None:
        ax.axvline(threshold, linestyle="--", color="#6A040F", label="Threshold")
    ax.set_xlabel("EMA of normalised error")
    ax.set_ylabel("Density")
    ax.legend()
    fig.tight_layout()
    return save_figure(fig, path)
