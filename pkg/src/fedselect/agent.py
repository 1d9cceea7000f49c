"""Double deep Q-learning agent that picks the top-U clients each round."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .hardware import ClientSystemProfile, RoundConditions, TRUNCATION_FRAC
from .pca import PcaProjector, project

CLIENT_SCALARS = 4  # data size, cores, frequency, bandwidth


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_init: float = 0.9
    eps_end: float = 0.2
    decay_rounds: int = 100

    def __post_init__(self):
        if not 0.0 <= self.eps_end <= self.eps_init <= 1.0:
            raise ValueError(f"need 0 <= eps_end <= eps_init <= 1, got {self}")
        if self.decay_rounds < 0:
            raise ValueError("decay_rounds must be >= 0")


def epsilon_at(s: EpsilonSchedule, t: int) -> float:
    """Linear decay from eps_init at t=0 to eps_end at t=decay_rounds, flat afterwards."""
    if t < 0:
        raise ValueError(f"round must be >= 0, got {t}")
    if t >= s.decay_rounds:
        return s.eps_end
    return s.eps_init + (s.eps_end - s.eps_init) * t / s.decay_rounds


def select_top_u(qvals: np.ndarray, u: int, eps: float, rng: np.random.Generator) -> list[int]:
    """Epsilon-greedy multi-action choice; greedy ties go to the lowest index.

    Exactly one uniform draw decides explore vs exploit; exploration then
    draws U distinct clients. Returned indices are sorted.
    """
    qvals = np.asarray(qvals, dtype=np.float64)
    n = len(qvals)
    if not 1 <= u <= n:
        raise ValueError(f"cannot select {u} of {n} clients")
    if rng.random() < eps:
        chosen = rng.choice(n, size=u, replace=False)
    else:
        chosen = np.argsort(-qvals, kind="stable")[:u]
    return sorted(int(i) for i in chosen)


@dataclass(frozen=True)
class NormStats:
    """Min-max bounds for the per-client scalar state features."""

    max_data_size: float
    cores: tuple[float, float]
    freq_mhz: tuple[float, float]
    bandwidth_mbps: tuple[float, float]

    @classmethod
    def from_profiles(cls, profiles: list[ClientSystemProfile], data_sizes) -> NormStats:
        # frequency/bandwidth bounds cover the sampling floor and a +5 sigma tail
        cores = [p.hardware.cores for p in profiles]
        f_lo = min(TRUNCATION_FRAC * p.hardware.cpu_freq_mhz for p in profiles)
        f_hi = max(p.hardware.cpu_freq_mhz * (1 + 5 * p.freq_stdev_frac) for p in profiles)
        b_lo = min(TRUNCATION_FRAC * p.protocol.bandwidth_mbps for p in profiles)
        b_hi = max(p.protocol.bandwidth_mbps * (1 + 5 * p.bw_stdev_frac) for p in profiles)
        return cls(float(max(data_sizes)), (min(cores), max(cores)), (f_lo, f_hi), (b_lo, b_hi))


def _scale(x: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if hi <= lo:
        return 0.5
    return min(max((x - lo) / (hi - lo), 0.0), 1.0)


def encode_state(
    profiles: list[ClientSystemProfile],
    conditions: list[RoundConditions],
    last_known_weights: list[np.ndarray],
    data_sizes: list[int],
    projector: PcaProjector,
    norm: NormStats,
) -> np.ndarray:
    """Concatenate one block per client in id order: reduced weights then four scalars in [0, 1]."""
    n = len(profiles)
    if not (len(conditions) == len(last_known_weights) == len(data_sizes) == n):
        raise ValueError(
            f"state needs one entry per client: {n} profiles, {len(conditions)} conditions, "
            f"{len(last_known_weights)} weights, {len(data_sizes)} sizes"
        )
    blocks = []
    for prof, cond, w, size in zip(profiles, conditions, last_known_weights, data_sizes):
        scalars = [
            _scale(size, (0.0, norm.max_data_size)),
            _scale(prof.hardware.cores, norm.cores),
            _scale(cond.freq_mhz, norm.freq_mhz),
            _scale(cond.bandwidth_mbps, norm.bandwidth_mbps),
        ]
        blocks.append(np.concatenate([project(projector, w), scalars]))
    state = np.concatenate(blocks)
    if not np.all(np.isfinite(state)):
        raise FloatingPointError("non-finite agent state")
    return state


@dataclass
class QNetwork:
    params: np.ndarray
    spec: nx.ModelSpec

    @classmethod
    def create(cls, state_dim: int, num_clients: int, hidden_dim: int, rng: np.random.Generator) -> QNetwork:
        spec = nx.ModelSpec(state_dim, hidden_dim, num_clients)
        return cls(nx.init_params(spec, rng), spec)

    def copy(self) -> QNetwork:
        return QNetwork(self.params.copy(), self.spec)


def q_forward(net: QNetwork, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (net.spec.input_dim,):
        raise nx.DimensionError("state length", net.spec.input_dim, state.shape)
    out, _ = nx.logits(net.params, net.spec, state)
    return out[0]


@dataclass
class Transition:
    state: np.ndarray
    actions: list[int]
    next_state: np.ndarray
    rewards: np.ndarray
    done: bool

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if len(self.rewards) != len(self.actions):
            raise ValueError("rewards must align with actions")


class ReplayBuffer:
    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def push(self, tr: Transition) -> None:
        self._items.append(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform; with replacement only while the buffer is smaller than the batch."""
        if not self._items:
            raise ValueError("cannot sample from an empty replay buffer")
        replace = len(self._items) < batch_size
        idx = rng.choice(len(self._items), size=batch_size, replace=replace)
        return [self._items[i] for i in idx]


def push_transition(buf: ReplayBuffer, tr: Transition) -> None:
    buf.push(tr)


def sample_batch(buf: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> list[Transition]:
    return buf.sample(batch_size, rng)


def ddql_target(
    tr: Transition, main: QNetwork, target: QNetwork, gamma: float, target_state: str = "next"
) -> np.ndarray:
    """Per-action targets: the main net picks the best action, the target net scores it.

    ``target_state="current"`` evaluates both nets on ``tr.state`` instead of
    ``tr.next_state``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if tr.done or gamma == 0.0:
        return tr.rewards.copy()
    s = tr.next_state if target_state == "next" else tr.state
    best = int(np.argmax(q_forward(main, s)))
    return tr.rewards + gamma * q_forward(target, s)[best]


def ddql_loss_and_grad(
    main: QNetwork,
    target: QNetwork,
    batch: list[Transition],
    gamma: float,
    target_state: str = "next",
) -> tuple[float, np.ndarray]:
    """Mean squared TD error over every (transition, selected action) pair, and its gradient.

    Targets are held fixed, so only the main network's Q(s, a_k) carries gradient.
    """
    if not batch:
        raise ValueError("empty DDQL batch")
    targets = [ddql_target(tr, main, target, gamma, target_state) for tr in batch]
    states = np.stack([tr.state for tr in batch])
    q, cache = nx.logits(main.params, main.spec, states)
    d_out = np.zeros_like(q)
    total = sum(len(tr.actions) for tr in batch)
    sq = 0.0
    for i, (tr, y) in enumerate(zip(batch, targets)):
        err = q[i, tr.actions] - y
        sq += float(err @ err)
        np.add.at(d_out[i], tr.actions, 2.0 * err / total)
    return sq / total, nx.backprop(main.params, main.spec, cache, d_out)


def ddql_update(
    main: QNetwork,
    target: QNetwork,
    batch: list[Transition],
    gamma: float,
    lr: float,
    target_state: str = "next",
) -> float:
    """One plain gradient step on the main network; returns the pre-step batch loss."""
    loss, g = ddql_loss_and_grad(main, target, batch, gamma, target_state)
    main.params = main.params - lr * g
    return loss


def sync_target(main: QNetwork, target: QNetwork, step_counter: int, period: int) -> bool:
    if period < 1:
        raise ValueError("sync period must be >= 1")
    if step_counter % period == 0:
        target.params = main.params.copy()
        return True
    return False


@dataclass
class AgentConfig:
    hidden_dim: int = 128
    k_pca: int = 10
    gamma: float = 0.9
    lr: float = 0.01
    batch_size: int = 50
    sync_period: int = 10
    replay_capacity: int = 1000
    target_state: str = "next"
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)


class FlashAgent:
    """Main/target Q-networks, replay memory and epsilon schedule behind one object."""

    def __init__(self, cfg: AgentConfig, num_clients: int, projector: PcaProjector, rng: np.random.Generator):
        self.cfg = cfg
        self.num_clients = num_clients
        self.projector = projector
        state_dim = num_clients * (projector.k_pca + CLIENT_SCALARS)
        self.main = QNetwork.create(state_dim, num_clients, cfg.hidden_dim, rng)
        self.target = self.main.copy()
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.step_counter = 0

    def epsilon(self, t: int) -> float:
        return epsilon_at(self.cfg.schedule, t)

    def select(self, state: np.ndarray, u: int, t: int, rng: np.random.Generator) -> list[int]:
        return select_top_u(q_forward(self.main, state), u, self.epsilon(t), rng)

    def learn(self, rng: np.random.Generator) -> float:
        batch = self.buffer.sample(self.cfg.batch_size, rng)
        loss = ddql_update(self.main, self.target, batch, self.cfg.gamma, self.cfg.lr, self.cfg.target_state)
        self.step_counter += 1
        sync_target(self.main, self.target, self.step_counter, self.cfg.sync_period)
        return loss

    def checkpoint(self, t: int) -> dict:
        """Field order is fixed; the replay buffer is not saved."""
        s = self.cfg.schedule
        return {
            "main_params": self.main.params.tolist(),
            "target_params": self.target.params.tolist(),
            "q_spec": [self.main.spec.input_dim, self.main.spec.hidden_dim, self.main.spec.num_classes],
            "step_counter": self.step_counter,
            "epsilon": {
                "eps_init": s.eps_init,
                "eps_end": s.eps_end,
                "decay_rounds": s.decay_rounds,
                "round": t,
                "current": self.epsilon(t),
            },
            "projector": self.projector.to_dict(),
        }

    def restore(self, doc: dict) -> None:
        self.main.params = np.asarray(doc["main_params"], dtype=np.float64)
        self.target.params = np.asarray(doc["target_params"], dtype=np.float64)
        self.step_counter = int(doc["step_counter"])
        self.projector = PcaProjector.from_dict(doc["projector"])
