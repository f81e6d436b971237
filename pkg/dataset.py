"""
Training data assembly
Record tables, loss windows, train/validation split and z-score normalisation
"""

import math
from typing import Iterator, List, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from utils import DataError, PathLike


RECORD_COLUMNS = ["step", "time_s", "module_id", "p_loss_w", "t_hs_c"]
DEFAULT_WINDOW = 125
STD_FLOOR = 1e-6


class Record(BaseModel):
    """One (step, module) row of a simulated or measured day"""

    step: int = Field(ge=0)
    time_s: float
    module_id: int = Field(ge=0)
    p_loss: float = Field(ge=0)  # W
    t_hs: float  # °C


class Sample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    window: np.ndarray  # power losses, oldest first
    target: float
    module_id: int
    step: int


class NormStats(BaseModel):
    input_mean: float
    input_std: float = Field(gt=0)
    target_mean: float
    target_std: float = Field(gt=0)


def _coerce_numeric(frame: pd.DataFrame) -> pd.DataFrame:
    """Numeric record columns, integral step and module ids"""
    columns = {}
    for name in RECORD_COLUMNS:
        try:
            columns[name] = pd.to_numeric(frame[name], errors="raise")
        except (ValueError, TypeError) as e:
            raise DataError(f"Column {name} is not numeric: {e}")
    for name in ("step", "module_id"):
        values = columns[name].to_numpy(dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise DataError(f"Column {name} holds non-integer values")
        columns[name] = columns[name].astype(np.int64)
    for name in ("time_s", "p_loss_w", "t_hs_c"):
        columns[name] = columns[name].astype(float)
    return pd.DataFrame(columns, index=frame.index)


class Dataset:
    """Time-aligned power-loss and heat-sink temperature records"""

    def __init__(self, frame: pd.DataFrame):
        missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"Dataset is missing columns: {missing}")

        frame = _coerce_numeric(frame[RECORD_COLUMNS])
        frame = frame.sort_values(["step", "module_id"], kind="stable")
        self.frame = frame.reset_index(drop=True)
        self._validate()

    def _validate(self) -> None:
        frame = self.frame
        if frame.empty:
            return
        if not np.all(np.isfinite(frame["p_loss_w"].to_numpy(dtype=float))):
            raise DataError("Dataset contains non-finite power losses")
        if (frame["p_loss_w"] < 0).any():
            raise DataError("Dataset contains negative power losses")
        if not np.all(np.isfinite(frame["t_hs_c"].to_numpy(dtype=float))):
            raise DataError("Dataset contains non-finite temperatures")
        for module_id, group in frame.groupby("module_id"):
            steps = group["step"].to_numpy()
            if steps[0] != 0 or np.any(np.diff(steps) != 1):
                raise DataError(f"Steps of module {module_id} are not contiguous from 0")

    @classmethod
    def from_simulation(
        cls, losses: np.ndarray, temperatures: np.ndarray, sample_period: float
    ) -> "Dataset":
        """Build from (n_modules, n_steps) loss and temperature arrays"""
        n_modules, n_steps = losses.shape
        steps = np.tile(np.arange(n_steps), n_modules)
        frame = pd.DataFrame(
            {
                "step": steps,
                "time_s": np.round(steps * sample_period, 6),
                "module_id": np.repeat(np.arange(n_modules), n_steps),
                "p_loss_w": np.asarray(losses, dtype=float).ravel(),
                "t_hs_c": np.asarray(temperatures, dtype=float).ravel(),
            }
        )
        return cls(frame)

    @classmethod
    def read_csv(cls, path: PathLike) -> "Dataset":
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"Dataset not found: {path}")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataError(f"Unreadable dataset {path}: {e}")
        return cls(frame)

    def to_csv(self, path: PathLike) -> None:
        self.frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def module_ids(self) -> List[int]:
        return sorted(int(m) for m in self.frame["module_id"].unique())

    @property
    def sample_period(self) -> float:
        times = self.series_frame(self.module_ids[0])["time_s"].to_numpy()
        if len(times) < 2:
            raise DataError("Cannot infer the sample period from fewer than 2 steps")
        return float(times[1] - times[0])

    def series_frame(self, module_id: int) -> pd.DataFrame:
        return self.frame[self.frame["module_id"] == module_id]

    def series(self, module_id: int) -> Tuple[np.ndarray, np.ndarray]:
        """(p_loss, t_hs) of one module in step order"""
        rows = self.series_frame(module_id)
        return rows["p_loss_w"].to_numpy(dtype=float), rows["t_hs_c"].to_numpy(dtype=float)

    def records(self) -> Iterator[Record]:
        for row in self.frame.itertuples(index=False):
            yield Record(
                step=row.step,
                time_s=row.time_s,
                module_id=row.module_id,
                p_loss=row.p_loss_w,
                t_hs=row.t_hs_c,
            )


class SampleSet:
    """Loss windows and temperature targets held as parallel arrays"""

    def __init__(
        self,
        windows: np.ndarray,
        targets: np.ndarray,
        module_ids: np.ndarray,
        steps: np.ndarray,
    ):
        n = len(targets)
        if windows.ndim != 2 or windows.shape[0] != n or len(module_ids) != n or len(steps) != n:
            raise ValueError("windows, targets, module_ids and steps must align")
        self.windows = windows
        self.targets = targets
        self.module_ids = module_ids
        self.steps = steps

    @classmethod
    def empty(cls, window: int) -> "SampleSet":
        return cls(np.empty((0, window)), np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int))

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, index: int) -> Sample:
        return Sample(
            window=self.windows[index],
            target=float(self.targets[index]),
            module_id=int(self.module_ids[index]),
            step=int(self.steps[index]),
        )

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    def subset(self, index: np.ndarray) -> "SampleSet":
        return SampleSet(
            self.windows[index], self.targets[index], self.module_ids[index], self.steps[index]
        )

    def with_values(self, windows: np.ndarray, targets: np.ndarray) -> "SampleSet":
        return SampleSet(windows, targets, self.module_ids, self.steps)


def module_windows(losses: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Window per step ending at that step, zero-padded before the first sample"""
    padded = np.concatenate([np.zeros(window - 1), np.asarray(losses, dtype=float)])
    return sliding_window_view(padded, window).copy()


def make_samples(dataset: Dataset, window: int = DEFAULT_WINDOW) -> SampleSet:
    if len(dataset) == 0:
        return SampleSet.empty(window)

    windows, targets, module_ids, steps = [], [], [], []
    for module_id in dataset.module_ids:
        losses, temperatures = dataset.series(module_id)
        windows.append(module_windows(losses, window))
        targets.append(temperatures)
        module_ids.append(np.full(len(losses), module_id))
        steps.append(np.arange(len(losses)))

    return SampleSet(
        np.concatenate(windows),
        np.concatenate(targets),
        np.concatenate(module_ids),
        np.concatenate(steps),
    )


def split(
    samples: SampleSet, train_frac: float, rng: np.random.Generator
) -> Tuple[SampleSet, SampleSet]:
    """Random disjoint train/validation partition of floor(train_frac * N) and the rest"""
    n = len(samples)
    if n < 2:
        raise DataError(f"Need at least 2 samples to split, got {n}")

    order = rng.permutation(n)
    n_train = min(max(int(math.floor(train_frac * n)), 1), n - 1)
    return samples.subset(order[:n_train]), samples.subset(order[n_train:])


def _floored(std: float, mean: float, name: str) -> float:
    floor = STD_FLOOR * max(abs(mean), 1.0)
    if std < floor:
        logger.warning(f"Degenerate {name} std {std:.3g}, floored at {floor:.3g}")
        return floor
    return std


def compute_norm_stats(train: SampleSet) -> NormStats:
    """Pooled z-score statistics of the training split"""
    if len(train) == 0:
        raise DataError("Cannot compute normalisation statistics of an empty set")

    input_mean = float(train.windows.mean())
    target_mean = float(train.targets.mean())
    return NormStats(
        input_mean=input_mean,
        input_std=_floored(float(train.windows.std()), input_mean, "input"),
        target_mean=target_mean,
        target_std=_floored(float(train.targets.std()), target_mean, "target"),
    )


def normalize_inputs(windows: np.ndarray, stats: NormStats) -> np.ndarray:
    return (windows - stats.input_mean) / stats.input_std


def denormalize_inputs(windows: np.ndarray, stats: NormStats) -> np.ndarray:
    return windows * stats.input_std + stats.input_mean


def normalize_targets(targets: np.ndarray, stats: NormStats) -> np.ndarray:
    return (targets - stats.target_mean) / stats.target_std


def denormalize_targets(targets: np.ndarray, stats: NormStats) -> np.ndarray:
    return targets * stats.target_std + stats.target_mean


def apply_norm(samples: SampleSet, stats: NormStats) -> SampleSet:
    return samples.with_values(
        normalize_inputs(samples.windows, stats), normalize_targets(samples.targets, stats)
    )


def invert_norm(samples: SampleSet, stats: NormStats) -> SampleSet:
    return samples.with_values(
        denormalize_inputs(samples.windows, stats), denormalize_targets(samples.targets, stats)
    )
