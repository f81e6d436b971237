"""
Pipeline stages behind the command-line interface
simulate -> train -> detect, handing off through files in a run directory
"""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from anomaly import (
    AnomalyReport,
    EmaProfile,
    MetricParams,
    MetricSeries,
    classify,
    compute_metrics,
    histogram,
    with_peer_ratios,
)
from config import DetectionConfig, RunConfig, settings
from dataset import Dataset, apply_norm, compute_norm_stats, make_samples, module_windows, split
from mlp import Ensemble, confidence_interval, predict, train_ensemble
from plots import (
    plot_histograms,
    plot_metric_traces,
    plot_prediction_band,
    plot_temperature_profiles,
)
from station_sim import (
    allocate_modules,
    build_post_loads,
    module_activity,
    sample_sessions,
    sessions_frame,
)
from thermal import ThermalParams, load_params, sample_params, save_params, simulate_module
from utils import DataError, PathLike, UsageError, dump_json, ensure_dir, sha256_file, spawn_rngs


PREDICTION_COLUMNS = ["step", "module_id", "t_hs", "mean", "std", "ci_lo", "ci_hi"]
METRIC_COLUMNS = ["step", "module_id", "ae", "ae_norm", "sma", "cma", "ema"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest(BaseModel):
    """Provenance record written beside every command's outputs"""

    command: str
    tool_version: str = settings.app_version
    config_digest: str
    seeds: Dict[str, int] = Field(default_factory=dict)
    run_dir: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)  # file name -> sha256
    details: Dict[str, Any] = Field(default_factory=dict)
    started_at: str
    finished_at: Optional[str] = None

    def record(self, path: Path) -> None:
        self.outputs[path.name] = sha256_file(path)

    def write(self, path: PathLike) -> Path:
        self.finished_at = _now()
        return dump_json(path, self.model_dump())


class AnomalyInjection(BaseModel):
    module: int = Field(ge=0)
    r_hs_scale: float = Field(gt=0)

    @classmethod
    def parse(cls, tokens: List[str]) -> "AnomalyInjection":
        """From ["module=<id>", "r_hs_scale=<f>"]"""
        fields: Dict[str, str] = {}
        for token in tokens:
            key, sep, value = token.partition("=")
            if not sep or key not in ("module", "r_hs_scale"):
                raise UsageError(f"Expected module=<id> r_hs_scale=<f>, got {token!r}")
            fields[key] = value
        if set(fields) != {"module", "r_hs_scale"}:
            raise UsageError("--anomaly needs both module=<id> and r_hs_scale=<f>")
        try:
            module = int(fields["module"])
            scale = float(fields["r_hs_scale"])
        except ValueError:
            raise UsageError(f"Invalid --anomaly values: {tokens}")
        if module < 0:
            raise UsageError(f"Anomalous module id must be non-negative, got {module}")
        if not scale > 0:
            raise UsageError(f"r_hs_scale must be positive, got {scale}")
        return cls(module=module, r_hs_scale=scale)


class ModuleEvaluation(BaseModel):
    """Ensemble predictions and error metrics for one module's day"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    module_id: int
    t_true: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    metrics: MetricSeries

    def predictions_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(len(self.t_true)),
                "module_id": self.module_id,
                "t_hs": self.t_true,
                "mean": self.mean,
                "std": self.std,
                "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi,
            }
        )


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def _module_parameters(
    config: RunConfig, rng: np.random.Generator, params_path: Optional[PathLike]
) -> List[ThermalParams]:
    n_modules = config.station.n_modules
    if params_path is None:
        return [
            sample_params(rng, config.thermal, t_amb=config.station.ambient_temp)
            for _ in range(n_modules)
        ]

    params = load_params(params_path)
    if len(params) != n_modules:
        raise DataError(
            f"Parameter file {params_path} holds {len(params)} modules, station has {n_modules}"
        )
    logger.info(f"Re-using thermal parameters from {params_path}")
    return params


def cmd_simulate(
    config: RunConfig,
    out_dir: PathLike,
    seed: Optional[int] = None,
    params_path: Optional[PathLike] = None,
    anomaly: Optional[AnomalyInjection] = None,
) -> RunManifest:
    """Simulate one horizon of station operation and record module temperatures"""
    station = config.station
    seed = station.rng_seed if seed is None else seed
    if anomaly is not None and anomaly.module >= station.n_modules:
        raise UsageError(f"Module {anomaly.module} out of range, station has {station.n_modules}")

    manifest = RunManifest(
        command="simulate",
        config_digest=config.digest(),
        seeds={"seed": seed},
        run_dir=str(out_dir),
        started_at=_now(),
    )
    session_rng, thermal_rng = spawn_rngs(seed, 2)
    healthy = _module_parameters(config, thermal_rng, params_path)
    if params_path is not None:
        manifest.inputs["params"] = str(params_path)

    params = list(healthy)
    if anomaly is not None:
        params[anomaly.module] = healthy[anomaly.module].scaled(anomaly.r_hs_scale)
        manifest.details["anomaly"] = anomaly.model_dump()
        logger.info(f"Injected anomaly: module {anomaly.module} R_hs x {anomaly.r_hs_scale}")

    sessions = sample_sessions(config.sessions, station, session_rng)
    loads = build_post_loads(sessions, station)
    allocation = allocate_modules(loads, station, config.efficiency)
    temperatures = np.stack(
        [
            simulate_module(allocation.module_loss[m], params[m], station.sample_period)
            for m in range(station.n_modules)
        ]
    )

    activity = module_activity(allocation)
    logger.info("Module activity: " + ", ".join(f"{m}={a:.1%}" for m, a in enumerate(activity)))
    manifest.details.update(
        {
            "n_sessions": len(sessions),
            "module_activity": activity.tolist(),
            "unserved_kwh": float(allocation.unserved_power.sum() * station.sample_period / 3.6e6),
        }
    )

    run_dir = ensure_dir(out_dir)
    dataset = Dataset.from_simulation(allocation.module_loss, temperatures, station.sample_period)
    dataset.to_csv(run_dir / "dataset.csv")
    manifest.record(run_dir / "dataset.csv")
    manifest.record(_write_csv(allocation.to_frame(station.sample_period), run_dir / "allocation.csv"))
    manifest.record(_write_csv(sessions_frame(sessions), run_dir / "sessions.csv"))

    params_out = run_dir / "thermal_params.json"
    if params_path is None or Path(params_path).resolve() != params_out.resolve():
        save_params(params_out, healthy)
    manifest.record(params_out)

    block = 0 if anomaly is None else station.block_of_module(anomaly.module)
    shown = range(block * station.modules_per_block, (block + 1) * station.modules_per_block)
    manifest.record(
        plot_temperature_profiles(
            temperatures,
            allocation.module_loss,
            station.sample_period,
            list(shown),
            run_dir / "temperature_profiles.svg",
        )
    )

    manifest.write(run_dir / "manifest.json")
    logger.info(f"Simulation written to {run_dir}")
    return manifest


def evaluate_modules(
    ensemble: Ensemble, dataset: Dataset, detection: DetectionConfig
) -> List[ModuleEvaluation]:
    window = ensemble.layer_sizes[0]
    params = MetricParams(
        sma_window=detection.sma_window, ema_alpha=detection.ema_alpha, s_floor=detection.s_floor
    )

    evaluations = []
    for module_id in dataset.module_ids:
        losses, t_true = dataset.series(module_id)
        mean, s, _ = predict(ensemble, module_windows(losses, window))
        lo, hi = confidence_interval(mean, s, ensemble.size, detection.ci_level)
        evaluations.append(
            ModuleEvaluation(
                module_id=module_id,
                t_true=t_true,
                mean=mean,
                std=s,
                ci_lo=lo,
                ci_hi=hi,
                metrics=compute_metrics(t_true, mean, s, params),
            )
        )
    return evaluations


def training_ema_profile(
    ensemble: Ensemble, dataset: Dataset, detection: DetectionConfig
) -> EmaProfile:
    """EMA(AE_norm) distribution of the ensemble on its own training day"""
    values = np.concatenate([e.metrics.ema for e in evaluate_modules(ensemble, dataset, detection)])
    return EmaProfile.from_values(
        values, detection.data_threshold_percentile, detection.hist_bin_width
    )


def cmd_train(
    config: RunConfig,
    data_path: PathLike,
    model_path: PathLike,
    seed: int = 0,
    n_jobs: int = 1,
    show_progress: bool = False,
) -> Ensemble:
    """Train the ensemble on a simulated day and write the model file"""
    manifest = RunManifest(
        command="train",
        config_digest=config.digest(),
        seeds={"base_seed": seed},
        run_dir=str(Path(model_path).parent),
        inputs={"data": str(data_path)},
        started_at=_now(),
    )
    dataset = Dataset.read_csv(data_path)
    samples = make_samples(dataset, config.training.window)
    train, val = split(samples, config.training.train_fraction, spawn_rngs(seed, 1)[0])

    norm = compute_norm_stats(train)
    ensemble = train_ensemble(
        apply_norm(train, norm),
        apply_norm(val, norm),
        seed,
        norm,
        config.training,
        n_jobs=n_jobs,
        show_progress=show_progress,
    )

    profile = training_ema_profile(ensemble, dataset, config.detection)
    logger.info(
        f"Training-day EMA p{profile.percentile:g} = {profile.data_threshold:.3f} "
        f"over {profile.n_samples} samples"
    )
    ensemble.metadata = {
        "config_digest": config.digest(),
        "dataset_sha256": sha256_file(data_path),
        "n_train": len(train),
        "n_val": len(val),
        "training_profile": profile.model_dump(),
    }

    target = Path(model_path)
    ensure_dir(target.parent)
    ensemble.save(target)
    manifest.record(target)
    manifest.details["member_val_rmse"] = ensemble.member_val_rmse
    manifest.write(target.with_name(target.name + ".manifest.json"))
    return ensemble


class DetectResult(BaseModel):
    reports: List[AnomalyReport]
    threshold_source: str
    manifest: RunManifest

    @property
    def anomalous_modules(self) -> List[int]:
        return [r.module_id for r in self.reports if r.is_anomalous]


def _stored_profile(ensemble: Ensemble) -> Optional[EmaProfile]:
    payload = ensemble.metadata.get("training_profile")
    return None if payload is None else EmaProfile.model_validate(payload)


def cmd_detect(
    config: RunConfig,
    model_path: PathLike,
    data_path: PathLike,
    out_dir: PathLike,
    use_data_threshold: bool = False,
) -> DetectResult:
    """Predict a day's temperatures, score the errors and classify every module"""
    detection = config.detection
    ensemble = Ensemble.load(model_path)
    dataset = Dataset.read_csv(data_path)
    if len(dataset) == 0:
        raise DataError(f"Dataset {data_path} has no records")
    sample_period = dataset.sample_period

    profile = _stored_profile(ensemble)
    if use_data_threshold and profile is None:
        raise DataError(f"Model {model_path} carries no training EMA profile")
    data_threshold = None if profile is None else profile.data_threshold
    if use_data_threshold:
        threshold, alternative, source = data_threshold, detection.threshold, "data"
    else:
        threshold, alternative, source = detection.threshold, data_threshold, "fixed"

    evaluations = evaluate_modules(ensemble, dataset, detection)
    reports = with_peer_ratios(
        [
            classify(
                e.metrics.ema,
                threshold=threshold,
                fraction_rule=detection.fraction_rule,
                module_id=e.module_id,
                bin_width=detection.hist_bin_width,
                sma_warmup_steps=min(detection.sma_window, len(e.t_true)),
                alternative_threshold=alternative,
            )
            for e in evaluations
        ]
    )

    manifest = RunManifest(
        command="detect",
        config_digest=config.digest(),
        run_dir=str(out_dir),
        inputs={"model": str(model_path), "data": str(data_path)},
        started_at=_now(),
    )
    run_dir = ensure_dir(out_dir)
    manifest.record(
        _write_csv(
            pd.concat([e.metrics.to_frame(e.module_id) for e in evaluations])[METRIC_COLUMNS],
            run_dir / "metrics.csv",
        )
    )
    manifest.record(
        _write_csv(
            pd.concat([e.predictions_frame() for e in evaluations])[PREDICTION_COLUMNS],
            run_dir / "predictions.csv",
        )
    )

    anomalous = {r.module_id for r in reports if r.is_anomalous}
    report_path = dump_json(
        run_dir / "report.json",
        {
            "model_digest": ensemble.digest(),
            "dataset_sha256": sha256_file(data_path),
            "threshold_source": source,
            "threshold": threshold,
            "data_threshold": data_threshold,
            "fraction_rule": detection.fraction_rule,
            "anomalous_modules": sorted(anomalous),
            "modules": [r.model_dump() for r in reports],
        },
    )
    manifest.record(report_path)

    for e in evaluations:
        manifest.record(
            plot_prediction_band(
                e.t_true,
                e.mean,
                e.ci_lo,
                e.ci_hi,
                sample_period,
                e.module_id,
                run_dir / f"prediction_module_{e.module_id}.svg",
                detection.ci_level,
            )
        )
        manifest.record(
            plot_metric_traces(
                e.metrics,
                sample_period,
                e.module_id,
                run_dir / f"metrics_module_{e.module_id}.svg",
                threshold,
            )
        )

    histograms = {}
    if profile is not None:
        histograms["Training"] = profile.histogram
    for label, members in (("Healthy", False), ("Anomalous", True)):
        values = [e.metrics.ema for e in evaluations if (e.module_id in anomalous) == members]
        if values:
            histograms[label] = histogram(np.concatenate(values), detection.hist_bin_width)
    manifest.record(plot_histograms(histograms, run_dir / "histogram.svg", threshold))

    manifest.details["anomalous_modules"] = sorted(anomalous)
    manifest.write(run_dir / "manifest.json")
    for report in reports:
        log = logger.warning if report.is_anomalous else logger.info
        log(
            f"Module {report.module_id}: {report.verdict}, "
            f"{report.fraction_above_threshold:.1%} of EMA values above {threshold:.3g}"
        )
    return DetectResult(reports=reports, threshold_source=source, manifest=manifest)
