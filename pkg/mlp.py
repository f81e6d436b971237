"""
Feedforward regression networks in numpy
ReLU MLP forward/backward passes, Adam, checkpointed training, and the
ensemble used to predict heat-sink temperature with an uncertainty estimate
"""

import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats
from tqdm import tqdm

from config import TrainingConfig
from dataset import NormStats, SampleSet, denormalize_targets, normalize_inputs
from utils import DataError, PathLike, TrainingDivergedError, digest_payload, dump_json, load_json


MODEL_FORMAT_VERSION = 1


class MlpWeights(BaseModel):
    """Layer weights (out, in) and biases (out,), first layer first"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

    def clone(self) -> "MlpWeights":
        return MlpWeights(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_payload(self) -> Dict[str, Any]:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "MlpWeights":
        return cls(
            weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
            biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        )


def init_weights(layer_sizes: Sequence[int], rng: np.random.Generator) -> MlpWeights:
    """Glorot-uniform weights, zero biases"""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpWeights(weights=weights, biases=biases)


def _forward_pass(weights: MlpWeights, inputs: np.ndarray) -> List[np.ndarray]:
    """Activations of every layer for a (batch, in) input, input first"""
    if inputs.shape[-1] != weights.layer_sizes[0]:
        raise ValueError(
            f"Input dimension {inputs.shape[-1]} does not match network input {weights.layer_sizes[0]}"
        )

    activations = [inputs]
    last = len(weights.weights) - 1
    for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        z = activations[-1] @ w.T + b
        activations.append(z if i == last else np.maximum(z, 0.0))
    return activations


def forward(weights: MlpWeights, x: np.ndarray) -> Union[float, np.ndarray]:
    """Prediction for one window (float) or a batch of windows (array)"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(_forward_pass(weights, x[None, :])[-1][0, 0])
    if x.ndim != 2:
        raise ValueError(f"Expected a 1-D or 2-D input, got {x.ndim}-D")
    return _forward_pass(weights, x)[-1][:, 0]


def grad(weights: MlpWeights, inputs: np.ndarray, targets: np.ndarray) -> Tuple[float, MlpWeights]:
    """Mean squared error and its gradient by backpropagation"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if len(inputs) == 0:
        raise ValueError("Cannot compute a gradient over an empty batch")

    activations = _forward_pass(weights, inputs)
    residual = activations[-1][:, 0] - targets
    loss = float(np.mean(residual ** 2))

    delta = (2.0 / len(targets)) * residual[:, None]
    grad_w: List[np.ndarray] = []
    grad_b: List[np.ndarray] = []
    for layer in range(len(weights.weights) - 1, -1, -1):
        grad_w.append(delta.T @ activations[layer])
        grad_b.append(delta.sum(axis=0))
        if layer > 0:
            # ReLU subgradient at 0 is 0
            delta = (delta @ weights.weights[layer]) * (activations[layer] > 0)

    return loss, MlpWeights(weights=grad_w[::-1], biases=grad_b[::-1])


class AdamState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = Field(default=0, ge=0)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_weights(cls, weights: MlpWeights, config: Optional[TrainingConfig] = None) -> "AdamState":
        config = config or TrainingConfig()
        return cls(
            m=[np.zeros_like(a) for a in weights.arrays()],
            v=[np.zeros_like(a) for a in weights.arrays()],
            lr=config.learning_rate,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
        )


def adam_step(
    state: AdamState, weights: MlpWeights, grads: MlpWeights
) -> Tuple[AdamState, MlpWeights]:
    """Bias-corrected Adam update, applied in place"""
    params = weights.arrays()
    gradients = grads.arrays()
    if [p.shape for p in params] != [g.shape for g in gradients]:
        raise ValueError("Gradient shapes do not match the weights")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for param, g, m, v in zip(params, gradients, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        param -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)

    return state, weights


class EpochStats(BaseModel):
    epoch: int
    train_mse: float
    val_mse: float


class MemberResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    seed: int
    weights: MlpWeights
    best_epoch: int
    best_val_mse: float
    history: List[EpochStats]


def evaluate_mse(weights: MlpWeights, samples: SampleSet, batch_size: int = 4096) -> float:
    if len(samples) == 0:
        raise DataError("Cannot evaluate on an empty sample set")
    total = 0.0
    for start in range(0, len(samples), batch_size):
        stop = start + batch_size
        residual = forward(weights, samples.windows[start:stop]) - samples.targets[start:stop]
        total += float(np.sum(residual ** 2))
    return total / len(samples)


def train_member(
    train: SampleSet,
    val: SampleSet,
    seed: int,
    config: Optional[TrainingConfig] = None,
    show_progress: bool = False,
) -> MemberResult:
    """Train one network on normalised data, keeping the best-validation epoch"""
    config = config or TrainingConfig()
    if len(train) == 0 or len(val) == 0:
        raise DataError("Training and validation sets must be non-empty")

    rng = np.random.default_rng(seed)
    sizes = (train.window_length, *config.hidden_sizes, 1)
    weights = init_weights(sizes, rng)
    state = AdamState.for_weights(weights, config)

    best = weights.clone()
    best_val = math.inf
    best_epoch = 0
    history: List[EpochStats] = []

    epochs = tqdm(
        range(1, config.epochs + 1),
        desc=f"member seed={seed}",
        unit="epoch",
        disable=not show_progress,
    )
    for epoch in epochs:
        order = rng.permutation(len(train))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = grad(weights, train.windows[batch], train.targets[batch])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"Non-finite training loss at epoch {epoch} (seed {seed})"
                )
            running += loss * len(batch)
            adam_step(state, weights, grads)

        val_mse = evaluate_mse(weights, val)
        history.append(EpochStats(epoch=epoch, train_mse=running / len(train), val_mse=val_mse))
        logger.debug(f"seed={seed} epoch={epoch} train_mse={running / len(train):.6g} val_mse={val_mse:.6g}")
        if not math.isfinite(val_mse):
            raise TrainingDivergedError(f"Non-finite validation loss at epoch {epoch} (seed {seed})")

        if val_mse < best_val:
            best, best_val, best_epoch = weights.clone(), val_mse, epoch
        epochs.set_postfix(val_mse=f"{val_mse:.4g}", best=best_epoch)

    return MemberResult(
        seed=seed, weights=best, best_epoch=best_epoch, best_val_mse=best_val, history=history
    )


class Ensemble(BaseModel):
    """Trained members plus the normalisation they were trained under"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    members: List[MlpWeights]
    norm: NormStats
    member_seeds: List[int]
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    member_val_rmse: List[float] = Field(default_factory=list)  # °C
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return self.members[0].layer_sizes

    def to_payload(self) -> Dict[str, Any]:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "members": [
                {"seed": seed, **member.to_payload()}
                for seed, member in zip(self.member_seeds, self.members)
            ],
            "norm": self.norm.model_dump(),
            "training": self.training.model_dump(mode="json"),
            "member_val_rmse": self.member_val_rmse,
            "metadata": self.metadata,
        }

    def digest(self) -> str:
        return digest_payload(self.to_payload())

    def save(self, path: PathLike) -> None:
        dump_json(path, self.to_payload())
        logger.info(f"Saved {self.size}-member ensemble to {path}")

    @classmethod
    def load(cls, path: PathLike) -> "Ensemble":
        payload = load_json(path)
        if not isinstance(payload, dict) or payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError(f"Unsupported model file: {path}")
        try:
            members = [MlpWeights.from_payload(m) for m in payload["members"]]
            ensemble = cls(
                members=members,
                norm=NormStats.model_validate(payload["norm"]),
                member_seeds=[int(m["seed"]) for m in payload["members"]],
                training=TrainingConfig.model_validate(payload["training"]),
                member_val_rmse=payload.get("member_val_rmse", []),
                metadata=payload.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Invalid model file {path}: {e}")

        if not members or any(m.layer_sizes != tuple(payload["layer_sizes"]) for m in members):
            raise DataError(f"Model file {path} has inconsistent layer sizes")
        return ensemble


def train_ensemble(
    train: SampleSet,
    val: SampleSet,
    base_seed: int,
    norm: NormStats,
    config: Optional[TrainingConfig] = None,
    n_jobs: int = 1,
    show_progress: bool = False,
) -> Ensemble:
    """Train members with seeds base_seed + i; results do not depend on n_jobs"""
    config = config or TrainingConfig()
    seeds = [base_seed + i for i in range(config.n_members)]
    logger.info(
        f"Training {len(seeds)} members on {len(train)} samples "
        f"({len(val)} validation), layers {config.layer_sizes}"
    )

    if n_jobs > 1:
        results = Parallel(n_jobs=n_jobs)(
            delayed(train_member)(train, val, seed, config, False) for seed in seeds
        )
    else:
        results = [train_member(train, val, seed, config, show_progress) for seed in seeds]

    rmse = [math.sqrt(r.best_val_mse) * norm.target_std for r in results]
    for result, value in zip(results, rmse):
        logger.info(f"Member seed={result.seed}: best epoch {result.best_epoch}, val RMSE {value:.4f} °C")

    return Ensemble(
        members=[r.weights for r in results],
        norm=norm,
        member_seeds=seeds,
        training=config,
        member_val_rmse=rmse,
    )


def member_predictions(ensemble: Ensemble, windows: np.ndarray) -> np.ndarray:
    """(n_members, n_windows) predictions in °C for raw-unit windows"""
    inputs = normalize_inputs(np.atleast_2d(np.asarray(windows, dtype=float)), ensemble.norm)
    return np.stack(
        [denormalize_targets(forward(member, inputs), ensemble.norm) for member in ensemble.members]
    )


def predict(ensemble: Ensemble, windows: np.ndarray):
    """Ensemble mean, sample std (N - 1) and per-member predictions"""
    single = np.ndim(windows) == 1
    preds = member_predictions(ensemble, windows)
    mean = preds.mean(axis=0)
    s = preds.std(axis=0, ddof=1) if ensemble.size > 1 else np.zeros_like(mean)
    if single:
        return float(mean[0]), float(s[0]), preds[:, 0]
    return mean, s, preds


def t_critical(level: float, dof: int) -> float:
    return float(stats.t.ppf((1.0 + level) / 2.0, dof))


def confidence_interval(mean, s, n: int = 10, level: float = 0.99):
    """Two-sided t interval of the ensemble mean, mean ± t·s/√n"""
    if n < 2:
        raise ValueError(f"Need at least 2 members for a confidence interval, got {n}")
    half = t_critical(level, n - 1) * np.asarray(s, dtype=float) / math.sqrt(n)
    lo, hi = mean - half, mean + half
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi
