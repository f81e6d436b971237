"""
Charging-station operation simulator
Samples EV sessions, builds per-post load profiles and allocates charging
modules to minimise conversion losses
"""

import math
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


SOC_TOLERANCE = 1e-12
SECONDS_PER_HOUR = 3600.0


def default_hourly_rates() -> List[float]:
    """Daytime-weighted arrival profile, sessions per hour for each hour of the day"""
    rates = []
    for hour in range(24):
        if hour < 6:
            rates.append(0.5)
        elif 8 <= hour < 20:
            rates.append(3.0)
        else:
            rates.append(1.0)
    return rates


class StationConfig(BaseModel):
    """Station topology and simulation grid"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_blocks: int = Field(default=3, ge=1)
    modules_per_block: int = Field(default=3, ge=1)
    posts_per_block: int = Field(default=2, ge=1)
    module_rating: float = Field(default=60_000.0, gt=0)  # W
    sample_period: float = Field(default=7.2, gt=0)  # s
    horizon: float = Field(default=86_400.0, gt=0)  # s
    ambient_temp: float = 20.0  # °C
    rng_seed: int = 0

    @model_validator(mode="after")
    def _horizon_on_grid(self) -> "StationConfig":
        steps = self.horizon / self.sample_period
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(
                f"horizon {self.horizon} s is not a multiple of sample_period {self.sample_period} s"
            )
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.sample_period))

    @property
    def n_modules(self) -> int:
        return self.n_blocks * self.modules_per_block

    @property
    def n_posts(self) -> int:
        return self.n_blocks * self.posts_per_block

    def block_of_post(self, post_id: int) -> int:
        return post_id // self.posts_per_block

    def block_of_module(self, module_id: int) -> int:
        return module_id // self.modules_per_block

    def start_step(self, arrival_time: float) -> int:
        return int(arrival_time // self.sample_period)


class SessionDistributions(BaseModel):
    """Normal distributions of the five charging-curve parameters plus arrivals"""

    model_config = ConfigDict(extra="forbid")

    peak_power_mean: float = 150.0  # kW
    peak_power_std: float = Field(default=20.0, ge=0)
    peak_power_bounds: Tuple[float, float] = (10.0, 300.0)
    capacity_mean: float = 90.0  # kWh
    capacity_std: float = Field(default=10.0, ge=0)
    capacity_bounds: Tuple[float, float] = (20.0, 200.0)
    soc_init_mean: float = 0.3
    soc_init_std: float = Field(default=0.05, ge=0)
    soc_cc_end_mean: float = 0.8
    soc_cc_end_std: float = Field(default=0.03, ge=0)
    soc_final_mean: float = 0.95
    soc_final_std: float = Field(default=0.02, ge=0)
    decay_factor_mean: float = 2.0
    decay_factor_std: float = Field(default=0.2, ge=0)
    max_retries: int = Field(default=100, ge=1)
    hourly_arrival_rates: List[float] = Field(default_factory=default_hourly_rates)

    @field_validator("hourly_arrival_rates")
    @classmethod
    def _check_rates(cls, rates: List[float]) -> List[float]:
        if len(rates) != 24:
            raise ValueError(f"expected 24 hourly arrival rates, got {len(rates)}")
        if any(rate < 0 for rate in rates):
            raise ValueError("arrival rates must be non-negative")
        return rates

    @field_validator("peak_power_bounds", "capacity_bounds")
    @classmethod
    def _check_bounds(cls, bounds: Tuple[float, float]) -> Tuple[float, float]:
        low, high = bounds
        if not 0 < low <= high:
            raise ValueError(f"invalid truncation bounds {bounds}")
        return bounds


class EfficiencyMap(BaseModel):
    """Quadratic loss model of one charging module"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    k0: float = Field(default=450.0, ge=0)  # W, fixed loss while enabled
    k1: float = Field(default=0.01, ge=0)
    k2: float = Field(default=2.5e-7, ge=0)  # 1/W

    def loss(self, power):
        """Loss in W for assigned power in W; zero for a disabled module"""
        p = np.asarray(power, dtype=float)
        value = np.where(p > 0, self.k0 + self.k1 * p + self.k2 * p * p, 0.0)
        return float(value) if value.ndim == 0 else value

    def efficiency(self, power: float) -> float:
        if power <= 0:
            raise ValueError("efficiency is defined for positive power only")
        return power / (power + self.loss(power))


class EvSession(BaseModel):
    """One vehicle's charging curve and arrival"""

    model_config = ConfigDict(frozen=True)

    arrival_time: float = Field(ge=0)  # s since midnight
    post_id: Optional[int] = None
    battery_capacity: float = Field(gt=0)  # kWh
    soc_init: float
    soc_cc_end: float
    soc_final: float
    peak_power: float = Field(gt=0)  # kW
    decay_factor: float = Field(gt=0)

    @model_validator(mode="after")
    def _ordered_soc(self) -> "EvSession":
        if not 0.0 <= self.soc_init < self.soc_cc_end <= self.soc_final <= 1.0:
            raise ValueError(
                "expected 0 <= soc_init < soc_cc_end <= soc_final <= 1, got "
                f"{self.soc_init}, {self.soc_cc_end}, {self.soc_final}"
            )
        return self


class AllocationResult(BaseModel):
    """Per-module power and loss series, per-post unserved power (all W)"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    assigned_power: np.ndarray  # (n_modules, n_steps)
    module_loss: np.ndarray  # (n_modules, n_steps)
    unserved_power: np.ndarray  # (n_posts, n_steps)

    def to_frame(self, sample_period: float) -> pd.DataFrame:
        n_modules, n_steps = self.assigned_power.shape
        steps = np.tile(np.arange(n_steps), n_modules)
        return pd.DataFrame(
            {
                "step": steps,
                "time_s": np.round(steps * sample_period, 6),
                "module_id": np.repeat(np.arange(n_modules), n_steps),
                "assigned_w": self.assigned_power.ravel(),
                "loss_w": self.module_loss.ravel(),
            }
        ).sort_values(["step", "module_id"], kind="stable")


def charging_power(session: EvSession, soc: float) -> float:
    """Requested power in kW: constant up to soc_cc_end, exponential taper after"""
    if not session.soc_init - SOC_TOLERANCE <= soc <= session.soc_final + SOC_TOLERANCE:
        raise ValueError(
            f"SoC {soc} outside session range [{session.soc_init}, {session.soc_final}]"
        )
    if soc < session.soc_cc_end:
        return session.peak_power

    span = session.soc_final - session.soc_cc_end
    if span <= 0:
        return session.peak_power
    return session.peak_power * math.exp(-session.decay_factor * (soc - session.soc_cc_end) / span)


def integrate_session(
    session: EvSession, sample_period: float, max_steps: Optional[int] = None
) -> np.ndarray:
    """Explicit-Euler SoC march; returns requested power per step in kW"""
    dt_hours = sample_period / SECONDS_PER_HOUR
    soc = session.soc_init
    powers: List[float] = []

    while soc < session.soc_final - SOC_TOLERANCE:
        if max_steps is not None and len(powers) >= max_steps:
            break
        power = charging_power(session, soc)
        powers.append(power)
        soc += power * dt_hours / session.battery_capacity

    return np.asarray(powers, dtype=float)


def draw_arrival_times(
    dists: SessionDistributions, config: StationConfig, rng: np.random.Generator
) -> np.ndarray:
    """Poisson arrivals per hour, uniform within the hour; sorted seconds since midnight"""
    n_hours = int(math.ceil(config.horizon / SECONDS_PER_HOUR - 1e-9))
    starts = np.arange(n_hours) * SECONDS_PER_HOUR
    widths = np.minimum(starts + SECONDS_PER_HOUR, config.horizon) - starts
    rates = np.asarray(dists.hourly_arrival_rates, dtype=float)[np.arange(n_hours) % 24]

    counts = rng.poisson(rates * widths / SECONDS_PER_HOUR)
    arrivals = [starts[h] + rng.uniform(0.0, widths[h], size=counts[h]) for h in range(n_hours)]
    if not arrivals:
        return np.empty(0)
    return np.sort(np.concatenate(arrivals))


def _draw_truncated(
    rng: np.random.Generator, mean: float, std: float, bounds: Tuple[float, float], retries: int
) -> float:
    low, high = bounds
    value = mean
    for _ in range(retries):
        value = float(rng.normal(mean, std))
        if low <= value <= high:
            return value
    logger.warning(f"Draw N({mean}, {std}) rejected {retries} times, clamping into {bounds}")
    return float(np.clip(value, low, high))


def _draw_soc_profile(
    dists: SessionDistributions, rng: np.random.Generator
) -> Tuple[float, float, float, float]:
    for _ in range(dists.max_retries):
        soc_init = float(rng.normal(dists.soc_init_mean, dists.soc_init_std))
        soc_cc_end = float(rng.normal(dists.soc_cc_end_mean, dists.soc_cc_end_std))
        soc_final = float(rng.normal(dists.soc_final_mean, dists.soc_final_std))
        decay = float(rng.normal(dists.decay_factor_mean, dists.decay_factor_std))
        if 0.0 <= soc_init < soc_cc_end <= soc_final <= 1.0 and decay > 0:
            return soc_init, soc_cc_end, soc_final, decay

    logger.warning(f"SoC profile rejected {dists.max_retries} times, clamping")
    soc_init = float(np.clip(soc_init, 0.0, 0.98))
    soc_final = float(np.clip(soc_final, soc_init + 0.01, 1.0))
    soc_cc_end = float(np.clip(soc_cc_end, soc_init + 0.005, soc_final))
    return soc_init, soc_cc_end, soc_final, max(decay, 1e-3)


def _draw_session(
    dists: SessionDistributions, arrival_time: float, rng: np.random.Generator
) -> EvSession:
    peak = _draw_truncated(
        rng, dists.peak_power_mean, dists.peak_power_std, dists.peak_power_bounds, dists.max_retries
    )
    capacity = _draw_truncated(
        rng, dists.capacity_mean, dists.capacity_std, dists.capacity_bounds, dists.max_retries
    )
    soc_init, soc_cc_end, soc_final, decay = _draw_soc_profile(dists, rng)
    return EvSession(
        arrival_time=float(arrival_time),
        battery_capacity=capacity,
        soc_init=soc_init,
        soc_cc_end=soc_cc_end,
        soc_final=soc_final,
        peak_power=peak,
        decay_factor=decay,
    )


def assign_posts(
    sessions: List[EvSession], config: StationConfig
) -> Tuple[List[EvSession], List[EvSession]]:
    """First-come first-served: each arrival takes the lowest-index free post"""
    busy_until = [0] * config.n_posts
    assigned: List[EvSession] = []
    dropped: List[EvSession] = []

    for session in sorted(sessions, key=lambda s: s.arrival_time):
        start = config.start_step(session.arrival_time)
        post = next((p for p in range(config.n_posts) if busy_until[p] <= start), None)
        if post is None or start >= config.n_steps:
            dropped.append(session)
            continue
        duration = len(integrate_session(session, config.sample_period, config.n_steps - start))
        busy_until[post] = start + duration
        assigned.append(session.model_copy(update={"post_id": post}))

    return assigned, dropped


def sample_sessions(
    dists: SessionDistributions, config: StationConfig, rng: np.random.Generator
) -> List[EvSession]:
    """Sample one horizon of charging sessions, already placed on posts"""
    arrivals = draw_arrival_times(dists, config, rng)
    candidates = [_draw_session(dists, t, rng) for t in arrivals]
    sessions, dropped = assign_posts(candidates, config)

    if dropped:
        logger.info(f"{len(dropped)} of {len(candidates)} arrivals dropped, all posts busy")
    logger.info(f"Sampled {len(sessions)} charging sessions")
    return sessions


def build_post_loads(sessions: List[EvSession], config: StationConfig) -> np.ndarray:
    """Requested power per post and step, in W"""
    if any(session.post_id is None for session in sessions):
        sessions, _ = assign_posts(sessions, config)

    loads = np.zeros((config.n_posts, config.n_steps))
    for session in sessions:
        start = config.start_step(session.arrival_time)
        profile = integrate_session(session, config.sample_period, config.n_steps - start) * 1000.0
        window = loads[session.post_id, start:start + len(profile)]
        if np.any(window > 0):
            raise ValueError(f"Post {session.post_id} already carries a session at step {start}")
        window[:] = profile

    return loads


def allocate_modules(
    post_loads: np.ndarray, config: StationConfig, eff_map: EfficiencyMap
) -> AllocationResult:
    """Per block and step, enable the loss-minimising number of modules, lowest indices first"""
    loads = np.asarray(post_loads, dtype=float)
    n_steps = loads.shape[1]
    per_block = config.modules_per_block
    rating = config.module_rating

    assigned = np.zeros((config.n_modules, n_steps))
    losses = np.zeros((config.n_modules, n_steps))
    unserved = np.zeros_like(loads)
    counts = np.arange(1, per_block + 1)[:, None]

    for block in range(config.n_blocks):
        posts = slice(block * config.posts_per_block, (block + 1) * config.posts_per_block)
        request = loads[posts]
        demand = request.sum(axis=0)
        served = np.minimum(demand, per_block * rating)

        shortfall = demand - served
        share = np.divide(shortfall, demand, out=np.zeros_like(demand), where=demand > 0)
        unserved[posts] = request * share

        split_power = served[None, :] / counts
        total_loss = np.where(split_power <= rating * (1 + 1e-12), counts * eff_map.loss(split_power), np.inf)
        # argmin keeps the first minimum, i.e. the fewest modules on ties
        n_active = np.where(served > 0, np.argmin(total_loss, axis=0) + 1, 0)

        for offset in range(per_block):
            module = block * per_block + offset
            active = n_active > offset
            assigned[module] = np.where(active, served / np.maximum(n_active, 1), 0.0)
            losses[module] = np.where(active, eff_map.loss(assigned[module]), 0.0)

    if np.any(unserved > 0):
        logger.warning(f"Unserved energy: {unserved.sum() * config.sample_period / 3.6e6:.2f} kWh")

    return AllocationResult(assigned_power=assigned, module_loss=losses, unserved_power=unserved)


def module_activity(allocation: AllocationResult) -> np.ndarray:
    """Fraction of steps each module carries power"""
    return (allocation.assigned_power > 0).mean(axis=1)


def sessions_frame(sessions: List[EvSession]) -> pd.DataFrame:
    columns = list(EvSession.model_fields)
    return pd.DataFrame([session.model_dump() for session in sessions], columns=columns)
