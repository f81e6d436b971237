"""
Lumped RC thermal model of a charging module
Loss source -> R_eq -> heat-sink node (C_hs to ground, R_hs to ambient)
"""

import math
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.signal import lfilter

from utils import DataError, PathLike, dump_json, load_json


PARAMS_FORMAT_VERSION = 1


class ThermalMeans(BaseModel):
    """Population means of the module thermal parameters"""

    model_config = ConfigDict(extra="forbid")

    r_eq: float = Field(default=1e-3, gt=0)  # K/W
    r_hs: float = Field(default=1.5e-3, gt=0)  # K/W
    tau: float = Field(default=120.0, gt=0)  # s
    rel_std: float = Field(default=0.05, ge=0)
    truncation: float = Field(default=0.5, gt=0, lt=1)


class ThermalParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    r_eq: float = Field(gt=0)  # K/W
    r_hs: float = Field(gt=0)  # K/W
    c_hs: float = Field(gt=0)  # J/K
    t_amb: float = 20.0  # °C

    @property
    def tau(self) -> float:
        return self.r_hs * self.c_hs

    def scaled(self, r_hs_scale: float) -> "ThermalParams":
        """Heat-sink degradation: R_hs scaled, capacitance unchanged"""
        if not r_hs_scale > 0:
            raise ValueError(f"r_hs_scale must be positive, got {r_hs_scale}")
        return self.model_copy(update={"r_hs": self.r_hs * r_hs_scale})


class ThermalState(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_node: float  # °C

    @field_validator("t_node")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("node temperature must be finite")
        return value


def sample_params(
    rng: np.random.Generator,
    means: ThermalMeans = ThermalMeans(),
    rel_std: Optional[float] = None,
    t_amb: float = 20.0,
) -> ThermalParams:
    """Draw R_eq, R_hs and tau from truncated normals; C_hs = tau / R_hs"""
    rel_std = means.rel_std if rel_std is None else rel_std

    def draw(mean: float) -> float:
        floor = means.truncation * mean
        for _ in range(1000):
            value = float(rng.normal(mean, rel_std * mean))
            if value > floor:
                return value
        return mean

    r_eq = draw(means.r_eq)
    r_hs = draw(means.r_hs)
    tau = draw(means.tau)
    return ThermalParams(r_eq=r_eq, r_hs=r_hs, c_hs=tau / r_hs, t_amb=t_amb)


def step(state: ThermalState, p_loss: float, dt: float, params: ThermalParams) -> ThermalState:
    """Exact update for a loss held constant over dt"""
    for name, value in (("t_node", state.t_node), ("p_loss", p_loss), ("dt", dt)):
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if p_loss < 0:
        raise ValueError(f"p_loss must be non-negative, got {p_loss}")

    x = -dt / params.tau
    t_node = params.t_amb + (state.t_node - params.t_amb) * math.exp(x) - params.r_hs * p_loss * math.expm1(x)
    return ThermalState(t_node=t_node)


def measured_temperature(state: ThermalState, p_loss: float, params: ThermalParams) -> float:
    """Recorded heat-sink temperature, including the drop across R_eq"""
    return state.t_node + params.r_eq * p_loss


def steady_state(p_loss: float, params: ThermalParams) -> float:
    return params.t_amb + (params.r_hs + params.r_eq) * p_loss


def simulate_module(loss_series: Sequence[float], params: ThermalParams, dt: float) -> np.ndarray:
    """Recorded temperature per step for a module starting at ambient"""
    losses = np.asarray(loss_series, dtype=float)
    if not np.all(np.isfinite(losses)):
        raise ValueError("loss series contains non-finite values")
    if np.any(losses < 0):
        raise ValueError("loss series contains negative values")
    if losses.size == 0:
        return losses.copy()

    x = -dt / params.tau
    decay = math.exp(x)
    gain = -params.r_hs * math.expm1(x)
    # node rise above ambient: rise[k] = decay * rise[k-1] + gain * p[k]
    rise = lfilter([gain], [1.0, -decay], losses)
    return params.t_amb + rise + params.r_eq * losses


def save_params(path: PathLike, params: List[ThermalParams]) -> None:
    dump_json(
        path,
        {
            "format_version": PARAMS_FORMAT_VERSION,
            "modules": [p.model_dump() for p in params],
        },
    )
    logger.info(f"Saved thermal parameters for {len(params)} modules to {path}")


def load_params(path: PathLike) -> List[ThermalParams]:
    payload = load_json(path)
    if not isinstance(payload, dict) or payload.get("format_version") != PARAMS_FORMAT_VERSION:
        raise DataError(f"Unsupported thermal parameter file: {path}")
    try:
        return [ThermalParams.model_validate(entry) for entry in payload["modules"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Invalid thermal parameter file {path}: {e}")
