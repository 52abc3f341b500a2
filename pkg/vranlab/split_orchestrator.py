"""
Functional split orchestration (sigma)

Deep Q-network that picks the configuration o in {0, 1, 2, 3, 4} each stage:
0 keeps the current split and allocations, i deploys split Si and lets the
resource orchestrator reallocate. Plain DQN: online and target networks,
uniform experience replay, epsilon-greedy exploration and the squared TD
error as loss.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .cost_model import CONFIGURATIONS, SPLITS
from .environment import PEAK_DEMAND_MBPS, NetworkState
from .errors import ConfigError, ContractViolation, InsufficientReplayError, UnknownSplitError
from .nn_core import (
    MLP,
    AdamState,
    adam_step,
    backward,
    clone_weights,
    copy_weights_into,
    forward,
    forward_with_cache,
    load_checkpoint,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

STATE_DIM = 6
Q_HIDDEN = (512, 512, 512)

StateLike = Union[NetworkState, np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exponential decay from eps_max at episode 1 towards eps_min"""
    eps_max: float = 0.95
    eps_min: float = 0.02
    decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eps_min <= self.eps_max <= 1.0:
            raise ConfigError("need 0 <= eps_min <= eps_max <= 1", key="dqn.epsilon")
        if self.decay < 0:
            raise ConfigError("decay must be non-negative", key="dqn.epsilon_decay")

    @classmethod
    def for_horizon(cls, episodes: int, eps_max: float = 0.95, eps_min: float = 0.02,
                    settle_fraction: float = 0.6) -> "EpsilonSchedule":
        """
        Decay rate that brings epsilon within 1% of eps_min after settle_fraction
        of the episodes. With eps_min = 0 the remaining gap is 0.1% of eps_max instead.
        """
        span = max(1.0, settle_fraction * episodes - 1.0)
        gap = eps_max - eps_min
        if gap <= 0:
            return cls(eps_max, eps_min, 0.0)
        residual = 0.01 * eps_min if eps_min > 0 else 1e-3 * eps_max
        return cls(eps_max, eps_min, math.log(gap / residual) / span)

    def at(self, episode: int) -> float:
        if episode < 1:
            raise ContractViolation(f"episodes are numbered from 1, got {episode}")
        eps = self.eps_min + (self.eps_max - self.eps_min) * math.exp(-self.decay * (episode - 1))
        return min(self.eps_max, max(self.eps_min, eps))


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    return schedule.at(episode)


def determine_split(config: int, prev_split: int) -> int:
    """Configuration i deploys split i; configuration 0 keeps the previous split"""
    if config not in CONFIGURATIONS:
        raise ContractViolation(f"configuration {config!r} not in {CONFIGURATIONS}")
    if prev_split not in SPLITS:
        raise UnknownSplitError(prev_split)
    return config if config != 0 else prev_split


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    config: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        if not (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.next_state))
                and np.isfinite(self.reward)):
            raise ContractViolation("transition fields must be finite")


@dataclass
class Batch:
    states: np.ndarray
    configs: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer; storage grows on demand up to capacity"""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, initial_size: int = 4096):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive", key="dqn.buffer_capacity")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        size = min(self.capacity, initial_size)
        self._states = np.zeros((size, state_dim))
        self._next_states = np.zeros((size, state_dim))
        self._configs = np.zeros(size, dtype=np.int64)
        self._rewards = np.zeros(size)
        self._terminals = np.zeros(size, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def _grow(self):
        new_size = min(self.capacity, 2 * len(self._rewards))
        pad = new_size - len(self._rewards)
        self._states = np.concatenate([self._states, np.zeros((pad, self.state_dim))])
        self._next_states = np.concatenate([self._next_states, np.zeros((pad, self.state_dim))])
        self._configs = np.concatenate([self._configs, np.zeros(pad, dtype=np.int64)])
        self._rewards = np.concatenate([self._rewards, np.zeros(pad)])
        self._terminals = np.concatenate([self._terminals, np.zeros(pad, dtype=bool)])

    def add(self, transition: Transition):
        if self._cursor >= len(self._rewards) and len(self._rewards) < self.capacity:
            self._grow()
        k = self._cursor
        self._states[k] = transition.state
        self._next_states[k] = transition.next_state
        self._configs[k] = transition.config
        self._rewards[k] = transition.reward
        self._terminals[k] = transition.terminal
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest(self) -> Transition:
        k = self._cursor if self._size == self.capacity else 0
        return self[k]

    def __getitem__(self, k: int) -> Transition:
        if not 0 <= k < self._size:
            raise IndexError(k)
        return Transition(self._states[k].copy(), int(self._configs[k]), float(self._rewards[k]),
                          self._next_states[k].copy(), bool(self._terminals[k]))

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform minibatch, without replacement inside the batch"""
        if batch_size > self._size:
            raise InsufficientReplayError(f"buffer holds {self._size} transitions, batch needs {batch_size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(self._states[idx], self._configs[idx], self._rewards[idx],
                     self._next_states[idx], self._terminals[idx])


class StateNormalizer:
    """Divides each state entry by a fixed scale before it enters the Q-network"""

    def __init__(self, scale: Sequence[float]):
        self.scale = np.asarray(scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise ContractViolation("normalization scales must be positive")

    @classmethod
    def for_environment(cls, peak_mbps: float = PEAK_DEMAND_MBPS, vdu_capacity: float = 50.0,
                        vcu_capacity: float = 50.0) -> "StateNormalizer":
        # split index 1..4 -> 0.25..1.0
        return cls([peak_mbps, peak_mbps, peak_mbps ** 2, vdu_capacity, vcu_capacity, float(len(SPLITS))])

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return states / self.scale


def _as_vector(state: StateLike) -> np.ndarray:
    if isinstance(state, NetworkState):
        return state.as_vector()
    return np.asarray(state, dtype=np.float64)


class DqnAgent:
    """Q-network, target network and their optimizer"""

    def __init__(self, rng: np.random.Generator, state_dim: int = STATE_DIM,
                 num_configs: int = len(CONFIGURATIONS), hidden: Sequence[int] = Q_HIDDEN,
                 gamma: float = 0.9, learning_rate: float = 3e-4, sync_period: int = 10,
                 normalizer: Optional[StateNormalizer] = None):
        # gamma = 0 is accepted here for one-step regression; experiment configs require (0, 1]
        if not 0.0 <= gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]", key="dqn.gamma")
        if sync_period < 1:
            raise ConfigError("target sync period must be positive", key="dqn.sync_period")
        self.gamma = gamma
        self.sync_period = sync_period
        self.normalizer = normalizer
        self.q_net = MLP.initialize((state_dim, *hidden, num_configs), rng)
        self.target_net = clone_weights(self.q_net)
        self.optimizer = AdamState.for_network(self.q_net, learning_rate=learning_rate)
        self.stages_seen = 0
        self.episodes_completed = 0

    @property
    def num_configs(self) -> int:
        return self.q_net.output_dim

    def _prepare(self, states: np.ndarray) -> np.ndarray:
        return self.normalizer(states) if self.normalizer is not None else states

    def q_values(self, state: StateLike) -> np.ndarray:
        return forward(self.q_net, self._prepare(_as_vector(state)))

    def target_values(self, states: np.ndarray) -> np.ndarray:
        return forward(self.target_net, self._prepare(np.asarray(states, dtype=np.float64)))

    def greedy_config(self, state: StateLike) -> int:
        # argmax returns the lowest index among ties
        return int(np.argmax(self.q_values(state)))

    def select_config(self, state: StateLike, epsilon: float, rng: np.random.Generator) -> int:
        """Epsilon-greedy choice of configuration"""
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(self.num_configs))
        return self.greedy_config(state)

    def td_targets(self, rewards: np.ndarray, next_states: np.ndarray, terminals: np.ndarray) -> np.ndarray:
        bootstrap = self.target_values(next_states).max(axis=1)
        return rewards + self.gamma * np.where(terminals, 0.0, bootstrap)

    def td_target(self, transition: Transition) -> float:
        """r + gamma * max_o' Q_target(s', o'); no bootstrap on terminal transitions"""
        targets = self.td_targets(np.array([transition.reward]), np.asarray(transition.next_state)[np.newaxis, :],
                                  np.array([transition.terminal]))
        return float(targets[0])

    def loss_and_gradients(self, batch: Batch):
        """Mean squared TD error over the batch and its gradient w.r.t. the online network"""
        targets = self.td_targets(batch.rewards, batch.next_states, batch.terminals)
        inputs = self._prepare(batch.states)
        q, cache = forward_with_cache(self.q_net, inputs)
        rows = np.arange(len(batch.configs))
        errors = targets - q[rows, batch.configs]
        loss = float(np.mean(errors ** 2))
        upstream = np.zeros_like(q)
        upstream[rows, batch.configs] = -2.0 * errors / len(errors)
        return loss, backward(self.q_net, inputs, upstream, cache)

    def train_step(self, buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator,
                   learning_rate: Optional[float] = None) -> float:
        """Sample a minibatch, take one Adam step on the squared TD error, return the loss"""
        batch = buffer.sample(batch_size, rng)
        if learning_rate is not None:
            self.optimizer.learning_rate = learning_rate
        loss, grads = self.loss_and_gradients(batch)
        adam_step(self.q_net, grads, self.optimizer)
        return loss

    def sync_target(self):
        copy_weights_into(self.target_net, self.q_net)

    def observe_stage(self) -> bool:
        """Count one environment stage; hard-sync the target every sync_period stages"""
        self.stages_seen += 1
        if self.stages_seen % self.sync_period == 0:
            self.sync_target()
            return True
        return False

    def save(self, path, metadata: Optional[dict] = None):
        meta = {
            "gamma": self.gamma,
            "sync_period": self.sync_period,
            "stages_seen": self.stages_seen,
            "episodes_completed": self.episodes_completed,
            "normalizer": None if self.normalizer is None else self.normalizer.scale.tolist(),
        }
        meta.update(metadata or {})
        return save_checkpoint(path, {"q_net": self.q_net, "target_net": self.target_net},
                               {"q_net": self.optimizer}, meta)

    @classmethod
    def load(cls, path) -> "DqnAgent":
        checkpoint = load_checkpoint(path)
        meta = checkpoint.metadata
        q_net = checkpoint.networks["q_net"]
        agent = cls.__new__(cls)
        agent.gamma = float(meta["gamma"])
        agent.sync_period = int(meta["sync_period"])
        agent.normalizer = None if meta.get("normalizer") is None else StateNormalizer(meta["normalizer"])
        agent.q_net = q_net
        agent.target_net = checkpoint.networks["target_net"]
        agent.optimizer = checkpoint.optimizers["q_net"]
        agent.stages_seen = int(meta["stages_seen"])
        agent.episodes_completed = int(meta["episodes_completed"])
        return agent
