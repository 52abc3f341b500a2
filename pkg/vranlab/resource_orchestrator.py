"""
Virtualized resource orchestration (omega)

Maps a configuration choice and the stage demand to vDU/vCU allocations.
A single regressor learns the unscaled utilization curve g(demand); the
deployed split's rho factors turn it into per-node allocations. Training
uses an asymmetric loss: overprovisioning costs grow linearly with the
error while underprovisioning costs a flat SLA-style penalty, so the
regressor learns to sit slightly above the true utilization.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cost_model import SPLITS
from .environment import PEAK_DEMAND_MBPS, UtilizationModel
from .errors import ConfigError, ContractViolation, EmptyDatasetError, UnknownSplitError
from .nn_core import MLP, AdamState, adam_step, backward, forward, forward_with_cache, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

OMEGA_HIDDEN = (128, 64, 16)


@dataclass(frozen=True)
class AlphaLossConfig:
    """
    alpha               flat underprovisioning penalty (RC-equivalent)
    width               sigmoid blend width around zero error (RC)
    underprovision_slope  residual slope below zero keeping a gradient alive
    """
    alpha: float = 2.0
    width: float = 0.25
    underprovision_slope: float = 0.01

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive", key="omega.alpha")
        if self.width <= 0:
            raise ConfigError("smoothing width must be positive", key="omega.width")
        # alpha > 2 * width keeps the loss decreasing on e <= 0, so its minimum lies at e > 0
        if self.alpha <= 2.0 * self.width:
            raise ConfigError("alpha must exceed twice the smoothing width", key="omega.alpha")
        if self.underprovision_slope < 0:
            raise ConfigError("underprovision slope must be non-negative", key="omega.underprovision_slope")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def alpha_omc_loss(predicted, actual, cfg: AlphaLossConfig):
    """
    Blend of a linear overprovisioning cost and a flat penalty.

    With e = predicted - actual and s = sigmoid(e / width):
        loss = s * e + (1 - s) * (alpha - slope * e)
    so loss(0) = alpha / 2, loss ~ e for e >> 0 and loss ~ alpha for e << 0.
    """
    e = np.asarray(predicted, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    s = _sigmoid(e / cfg.width)
    loss = s * e + (1.0 - s) * (cfg.alpha - cfg.underprovision_slope * e)
    return loss if loss.ndim else float(loss)


def alpha_omc_gradient(predicted, actual, cfg: AlphaLossConfig):
    """d(loss)/d(predicted)"""
    e = np.asarray(predicted, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    s = _sigmoid(e / cfg.width)
    ds = s * (1.0 - s) / cfg.width
    under = cfg.alpha - cfg.underprovision_slope * e
    grad = s + e * ds - ds * under - (1.0 - s) * cfg.underprovision_slope
    return grad if grad.ndim else float(grad)


@dataclass
class OmegaModel:
    regressor: MLP
    rho_du: Tuple[float, ...] = (1.0, 0.8, 0.65, 0.0)
    rho_cu: Tuple[float, ...] = (0.0, 0.1, 0.175, 0.5)
    vdu_capacity: float = 50.0
    vcu_capacity: float = 50.0
    safety_margin: float = 0.0
    demand_scale: float = PEAK_DEMAND_MBPS

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: Sequence[int] = OMEGA_HIDDEN,
               model: Optional[UtilizationModel] = None, safety_margin: float = 0.0,
               demand_scale: float = PEAK_DEMAND_MBPS) -> "OmegaModel":
        model = model or UtilizationModel()
        regressor = MLP.initialize((1, *hidden, 1), rng)
        return cls(regressor, model.rho_du, model.rho_cu, model.vdu_capacity, model.vcu_capacity,
                   safety_margin, demand_scale)

    def base(self, demands) -> np.ndarray:
        """Raw regressor output (unclamped) for an array of demands"""
        x = np.asarray(demands, dtype=np.float64).reshape(-1, 1) / self.demand_scale
        return forward(self.regressor, x)[:, 0]

    def save(self, path, metadata: Optional[dict] = None):
        meta = {
            "rho_du": list(self.rho_du),
            "rho_cu": list(self.rho_cu),
            "vdu_capacity": self.vdu_capacity,
            "vcu_capacity": self.vcu_capacity,
            "safety_margin": self.safety_margin,
            "demand_scale": self.demand_scale,
        }
        meta.update(metadata or {})
        return save_checkpoint(path, {"omega": self.regressor}, metadata=meta)

    @classmethod
    def load(cls, path) -> "OmegaModel":
        checkpoint = load_checkpoint(path)
        if "omega" not in checkpoint.networks:
            raise ContractViolation(f"{path} holds no omega regressor")
        meta = checkpoint.metadata
        return cls(
            checkpoint.networks["omega"],
            tuple(meta["rho_du"]),
            tuple(meta["rho_cu"]),
            float(meta["vdu_capacity"]),
            float(meta["vcu_capacity"]),
            float(meta["safety_margin"]),
            float(meta["demand_scale"]),
        )


def predict(model: OmegaModel, demand: float, config: int, prev: Tuple[float, float]) -> Tuple[float, float]:
    """
    Allocation (vDU, vCU) for configuration ``config`` at ``demand``.

    config 0 returns ``prev`` untouched; config i scales
    max(0, regressor(demand)) * (1 + safety_margin) by rho_du[i] / rho_cu[i].
    """
    if config == 0:
        return prev
    if config not in SPLITS:
        raise UnknownSplitError(config)
    if demand < 0:
        raise ContractViolation(f"demand must be non-negative, got {demand}")
    base = max(0.0, float(model.base([demand])[0])) * (1.0 + model.safety_margin)
    vdu = min(model.rho_du[config - 1] * base, model.vdu_capacity)
    vcu = min(model.rho_cu[config - 1] * base, model.vcu_capacity)
    return vdu, vcu


@dataclass
class OmegaDataset:
    """Utilization observations: demand, deployed split, vDU and vCU usage"""
    demands: np.ndarray
    splits: np.ndarray
    vdu_used: np.ndarray
    vcu_used: np.ndarray

    def __post_init__(self):
        self.demands = np.asarray(self.demands, dtype=np.float64)
        self.splits = np.asarray(self.splits, dtype=np.int64)
        self.vdu_used = np.asarray(self.vdu_used, dtype=np.float64)
        self.vcu_used = np.asarray(self.vcu_used, dtype=np.float64)
        sizes = {len(self.demands), len(self.splits), len(self.vdu_used), len(self.vcu_used)}
        if len(sizes) != 1:
            raise ContractViolation("dataset columns differ in length")

    def __len__(self):
        return len(self.demands)

    @classmethod
    def from_rows(cls, rows) -> "OmegaDataset":
        rows = list(rows)
        if not rows:
            return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty(0), np.empty(0))
        splits, demands, vdu, vcu = zip(*rows)
        return cls(demands, splits, vdu, vcu)

    def base_targets(self, rho_du: Sequence[float], rho_cu: Sequence[float]) -> np.ndarray:
        """Undo the split scaling: y / rho_du where rho_du > 0, else y_hat / rho_cu"""
        rho_d = np.asarray(rho_du)[self.splits - 1]
        rho_c = np.asarray(rho_cu)[self.splits - 1]
        if np.any((rho_d <= 0) & (rho_c <= 0)):
            raise ContractViolation("a split with zero scale on both nodes carries no target")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rho_d > 0, self.vdu_used / np.where(rho_d > 0, rho_d, 1.0),
                            self.vcu_used / np.where(rho_c > 0, rho_c, 1.0))


def sample_dataset(model: UtilizationModel, size: int, rng: np.random.Generator,
                   peak: float = PEAK_DEMAND_MBPS, noise: bool = True) -> OmegaDataset:
    """Uniform demand over [0, peak], uniform split, utilization from the environment model"""
    demands = rng.uniform(0.0, peak, size=size)
    splits = rng.integers(1, len(SPLITS) + 1, size=size)
    vdu = np.empty(size)
    vcu = np.empty(size)
    noise_rng = rng if noise else None
    for k in range(size):
        vdu[k], vcu[k] = model.utilization(int(splits[k]), float(demands[k]), noise_rng)
    return OmegaDataset(demands, splits, vdu, vcu)


@dataclass
class OmegaTrainingResult:
    model: OmegaModel
    loss_history: List[float] = field(default_factory=list)


def train_omega(model: OmegaModel, dataset: OmegaDataset, cfg: AlphaLossConfig, epochs: int,
                batch_size: int, learning_rate: float, rng: np.random.Generator) -> OmegaTrainingResult:
    """Minibatch Adam on the asymmetric loss; returns the mean loss per epoch"""
    if len(dataset) == 0:
        raise EmptyDatasetError("omega training needs at least one sample")
    if epochs < 1 or batch_size < 1:
        raise ContractViolation("epochs and batch size must be positive")

    x = (dataset.demands / model.demand_scale).reshape(-1, 1)
    targets = dataset.base_targets(model.rho_du, model.rho_cu)
    opt = AdamState.for_network(model.regressor, learning_rate=learning_rate)
    history = []

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            output, cache = forward_with_cache(model.regressor, x[idx])
            predicted = output[:, 0]
            epoch_loss += float(np.sum(alpha_omc_loss(predicted, targets[idx], cfg)))
            upstream = (alpha_omc_gradient(predicted, targets[idx], cfg) / len(idx)).reshape(-1, 1)
            grads = backward(model.regressor, x[idx], upstream, cache)
            adam_step(model.regressor, grads, opt)
        history.append(epoch_loss / len(dataset))
        if (epoch + 1) % max(1, epochs // 10) == 0:
            logger.info("omega epoch %d/%d loss %.4f", epoch + 1, epochs, history[-1])
    return OmegaTrainingResult(model, history)


@dataclass
class OmegaEvaluation:
    mean_absolute_error: float
    curve_range: float
    overprovision_rate: float
    underprovision_rate: float

    @property
    def relative_error(self) -> float:
        return self.mean_absolute_error / self.curve_range if self.curve_range > 0 else float("inf")


def evaluate_omega(model: OmegaModel, truth: UtilizationModel, demands: Sequence[float]) -> OmegaEvaluation:
    """Compare the clamped regressor output with the noise-free base curve on a demand grid"""
    demands = np.asarray(demands, dtype=np.float64)
    predicted = np.maximum(0.0, model.base(demands)) * (1.0 + model.safety_margin)
    if truth.samples is None:
        actual = truth.base_curve(demands)
    else:
        rows = [(1, float(d), *truth.utilization(1, float(d))) for d in demands]
        actual = OmegaDataset.from_rows(rows).base_targets(truth.rho_du, truth.rho_cu)
    error = predicted - actual
    return OmegaEvaluation(
        mean_absolute_error=float(np.mean(np.abs(error))),
        curve_range=float(actual.max() - actual.min()),
        overprovision_rate=float(np.mean(error > 0)),
        underprovision_rate=float(np.mean(error < 0)),
    )
