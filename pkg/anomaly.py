"""
Prediction-error anomaly metrics
Absolute and normalised errors, moving-average filters, histograms and the
per-module decision rule
"""

from typing import Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator


DEFAULT_S_FLOOR = 1e-3  # °C


class MetricParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sma_window: int = Field(default=500, ge=1)  # steps
    ema_alpha: float = Field(default=4e-3, gt=0, le=1)
    s_floor: float = Field(default=DEFAULT_S_FLOOR, gt=0)


class MetricSeries(BaseModel):
    """Per-step error metrics of one module; filters run over ae_norm"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    ae: np.ndarray
    ae_norm: np.ndarray
    sma: np.ndarray
    cma: np.ndarray
    ema: np.ndarray
    ae_ema: np.ndarray  # EMA of the raw error, °C
    params: MetricParams = Field(default_factory=MetricParams)

    def to_frame(self, module_id: int) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(len(self.ae)),
                "module_id": module_id,
                "ae": self.ae,
                "ae_norm": self.ae_norm,
                "sma": self.sma,
                "cma": self.cma,
                "ema": self.ema,
            }
        )


def _as_float(values):
    return float(values) if np.ndim(values) == 0 else values


def ae(t_true, mean_pred):
    """Absolute error in °C"""
    return _as_float(np.abs(np.asarray(t_true, dtype=float) - np.asarray(mean_pred, dtype=float)))


def ae_norm(t_true, mean_pred, s, s_floor: float = DEFAULT_S_FLOOR):
    """Absolute error in units of the ensemble sample std, floored at s_floor"""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("sample standard deviation must be non-negative")
    error = np.abs(np.asarray(t_true, dtype=float) - np.asarray(mean_pred, dtype=float))
    return _as_float(error / np.maximum(s, s_floor))


def sma(series, n: int = 500) -> np.ndarray:
    """Mean of the last min(k, n) values; warm-up uses the available prefix"""
    if n < 1:
        raise ValueError(f"SMA window must be at least 1, got {n}")
    return pd.Series(series, dtype=float).rolling(n, min_periods=1).mean().to_numpy()


def cma(series) -> np.ndarray:
    return pd.Series(series, dtype=float).expanding(min_periods=1).mean().to_numpy()


def ema(series, alpha: float = 4e-3) -> np.ndarray:
    """EMA_1 = x_1, EMA_k = alpha * x_k + (1 - alpha) * EMA_{k-1}"""
    if not 0 < alpha <= 1:
        raise ValueError(f"EMA alpha must be in (0, 1], got {alpha}")
    return pd.Series(series, dtype=float).ewm(alpha=alpha, adjust=False).mean().to_numpy()


def compute_metrics(t_true, mean_pred, s, params: Optional[MetricParams] = None) -> MetricSeries:
    params = params or MetricParams()
    errors = np.atleast_1d(ae(t_true, mean_pred))
    normed = np.atleast_1d(ae_norm(t_true, mean_pred, s, params.s_floor))
    return MetricSeries(
        ae=errors,
        ae_norm=normed,
        sma=sma(normed, params.sma_window),
        cma=cma(normed),
        ema=ema(normed, params.ema_alpha),
        ae_ema=ema(errors, params.ema_alpha),
        params=params,
    )


class Histogram(BaseModel):
    bin_width: float = Field(gt=0)
    edges: List[float]
    counts: List[int]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def density(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=float)
        if counts.sum() == 0:
            return counts
        return counts / (counts.sum() * self.bin_width)


def histogram(values, bin_width: float) -> Histogram:
    """Right-open bins [i*w, (i+1)*w) starting at 0"""
    if not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return Histogram(bin_width=bin_width, edges=[], counts=[])
    if np.any(values < 0):
        raise ValueError("histogram values must be non-negative")

    counts = np.bincount(np.floor(values / bin_width).astype(np.int64))
    edges = np.arange(len(counts) + 1) * bin_width
    return Histogram(bin_width=bin_width, edges=edges.tolist(), counts=counts.tolist())


def fraction_above(values, threshold: float) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot evaluate an empty series")
    return float(np.count_nonzero(values > threshold) / values.size)


class AnomalyReport(BaseModel):
    module_id: int
    fraction_above_threshold: float = Field(ge=0, le=1)
    threshold: float
    fraction_rule: float
    verdict: Literal["healthy", "anomalous"]
    histogram: Histogram
    n_samples: int
    sma_warmup_steps: int = 0
    median_ema: float = 0.0
    peer_ratio: Optional[float] = None
    alternative_threshold: Optional[float] = None
    fraction_above_alternative: Optional[float] = None

    @model_validator(mode="after")
    def _consistent_verdict(self) -> "AnomalyReport":
        expected = "anomalous" if self.fraction_above_threshold > self.fraction_rule else "healthy"
        if self.verdict != expected:
            raise ValueError(
                f"verdict {self.verdict} contradicts fraction {self.fraction_above_threshold} "
                f"against rule {self.fraction_rule}"
            )
        return self

    @property
    def is_anomalous(self) -> bool:
        return self.verdict == "anomalous"


def classify(
    ema_series,
    threshold: float = 30.0,
    fraction_rule: float = 0.2,
    module_id: int = 0,
    bin_width: float = 2.0,
    sma_warmup_steps: int = 0,
    alternative_threshold: Optional[float] = None,
) -> AnomalyReport:
    """Anomalous iff more than fraction_rule of the values exceed threshold"""
    values = np.asarray(ema_series, dtype=float)
    fraction = fraction_above(values, threshold)
    return AnomalyReport(
        module_id=module_id,
        fraction_above_threshold=fraction,
        threshold=threshold,
        fraction_rule=fraction_rule,
        verdict="anomalous" if fraction > fraction_rule else "healthy",
        histogram=histogram(values, bin_width),
        n_samples=int(values.size),
        sma_warmup_steps=sma_warmup_steps,
        median_ema=float(np.median(values)),
        alternative_threshold=alternative_threshold,
        fraction_above_alternative=(
            None if alternative_threshold is None else fraction_above(values, alternative_threshold)
        ),
    )


def peer_ratios(medians: Dict[int, float]) -> Dict[int, Optional[float]]:
    """Each module's median over the median of its peers' medians"""
    ratios: Dict[int, Optional[float]] = {}
    for module_id, value in medians.items():
        peers = [v for m, v in medians.items() if m != module_id]
        baseline = float(np.median(peers)) if peers else 0.0
        ratios[module_id] = value / baseline if baseline > 0 else None
    return ratios


def with_peer_ratios(reports: List[AnomalyReport]) -> List[AnomalyReport]:
    ratios = peer_ratios({r.module_id: r.median_ema for r in reports})
    return [r.model_copy(update={"peer_ratio": ratios[r.module_id]}) for r in reports]


class EmaProfile(BaseModel):
    """EMA(AE_norm) distribution on the training day"""

    percentile: float
    data_threshold: float
    histogram: Histogram
    n_samples: int

    @classmethod
    def from_values(cls, values, percentile: float = 99.0, bin_width: float = 2.0) -> "EmaProfile":
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("cannot profile an empty series")
        return cls(
            percentile=percentile,
            data_threshold=float(np.percentile(values, percentile)),
            histogram=histogram(values, bin_width),
            n_samples=int(values.size),
        )
