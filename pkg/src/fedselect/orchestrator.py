"""Synchronous federated-learning loop with pluggable client-selection policies."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dmod
from . import numerics as nx
from .agent import AgentConfig, EpsilonSchedule, FlashAgent, NormStats, Transition, encode_state
from .config import FLRunConfig
from .hardware import (
    Catalog,
    RoundConditions,
    assign_profiles,
    builtin_hardware_catalog,
    client_latency,
    model_size_bits,
    sample_round_conditions,
)
from .io import atomic_write_json, atomic_write_text, records_to_csv
from .pca import fit_pca
from .scoring import (
    ReputationLedger,
    ScoreConfig,
    divergence,
    minmax_normalize,
    reputation_update,
    reputation_update_accuracy,
    utility,
)
from .seeding import stream

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class RoundRecord:
    round: int
    selected: list[int]
    global_accuracy: float
    global_macro_f1: float
    round_latency: float
    cumulative_latency: float
    mean_reward: float
    agent_loss: float | None = None
    epsilon: float | None = None


@dataclass
class RoundDetail:
    """Per-client scoring internals for one round, aligned with ``selected``."""

    round: int
    selected: list[int]
    improved: bool
    latencies: list[float]
    divergences: list[float]
    utilities: list[float]
    rewards: list[float]
    state: np.ndarray | None = None
    next_state: np.ndarray | None = None


def aggregate_fedavg(client_params: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    """Data-size weighted mean of client parameter vectors."""
    if not client_params or len(client_params) != len(sizes):
        raise ValueError("need one size per client parameter vector")
    shape = client_params[0].shape
    if any(p.shape != shape for p in client_params):
        raise ValueError("client parameter vectors differ in length")
    if any(s <= 0 for s in sizes):
        raise ValueError("client sizes must be positive")
    total = float(sum(sizes))
    out = np.zeros(shape)
    for p, s in zip(client_params, sizes):
        out += (s / total) * p
    return out


def rounds_to_target(records, target_value: float, metric: str = "global_accuracy") -> int | None:
    """Round number of the first record whose metric reaches the target."""
    for r in records:
        value = r[metric] if isinstance(r, dict) else getattr(r, metric)
        if value >= target_value:
            return r["round"] if isinstance(r, dict) else r.round
    return None


class RandomPolicy:
    name = "random"

    def select(self, sim: Simulation, state, t: int, rng: np.random.Generator) -> list[int]:
        return sorted(int(i) for i in rng.choice(sim.cfg.N, size=sim.cfg.U, replace=False))


class FullParticipation:
    name = "full"

    def select(self, sim: Simulation, state, t: int, rng: np.random.Generator) -> list[int]:
        return list(range(sim.cfg.N))


class FlashRLPolicy:
    name = "flash-rl"

    def select(self, sim: Simulation, state, t: int, rng: np.random.Generator) -> list[int]:
        return sim.agent.select(state, sim.cfg.U, t - 1, rng)


POLICY_CLASSES = {"random": RandomPolicy, "full": FullParticipation, "flash-rl": FlashRLPolicy}


def build_dataset(cfg: FLRunConfig) -> nx.LabeledDataset:
    d = cfg.dataset
    if d["kind"] == "idx":
        return dmod.load_idx(d["images"], d["labels"])
    return dmod.synth_blobs(
        d["num_classes"], d["input_dim"], d["n_per_class"], d["spread"], stream(cfg.seed, "dataset")
    )


def build_partition(ds: nx.LabeledDataset, cfg: FLRunConfig) -> dmod.PartitionPlan:
    p = cfg.partition
    rng = stream(cfg.seed, "partition")
    scheme = p["scheme"]
    if scheme == "hetero_dirichlet":
        plan = dmod.partition_hetero_dirichlet(ds, cfg.N, p["alpha"], rng, p.get("min_size", 10))
    elif scheme == "shards":
        plan = dmod.partition_shards(ds, cfg.N, p.get("shards_per_client", 2), rng)
    elif scheme == "noniid_label":
        plan = dmod.partition_noniid_label(
            ds, cfg.N, p.get("labels_per_client", 2), p.get("size_jitter", 0.5), rng
        )
    elif scheme == "label_skew":
        plan = dmod.label_skew_partition(ds, cfg.N, p["k"], rng)
    else:
        plan = dmod.partition_iid(ds, cfg.N, rng)
    plan.seed = cfg.seed
    plan.validate(len(ds))
    return plan


class Simulation:
    """Owns every piece of run state; ``run_round`` advances it by one synchronous round."""

    def __init__(self, cfg: FLRunConfig, policy=None):
        self.cfg = cfg
        self.policy = policy or POLICY_CLASSES[cfg.policy]()
        source = build_dataset(cfg)
        self.num_classes = int(source.labels.max()) + 1
        perm = stream(cfg.seed, "validation").permutation(len(source))
        n_val = max(1, int(round(cfg.validation_fraction * len(source))))
        self.validation = source.subset(np.sort(perm[:n_val]))
        self.train = source.subset(np.sort(perm[n_val:]))
        self.plan = build_partition(self.train, cfg)
        self.clients = [self.train.subset(a) for a in self.plan.assignments]
        self.sizes = [len(c) for c in self.clients]
        self.spec = nx.ModelSpec(source.input_dim, cfg.hidden_dim, self.num_classes)
        self.model_bits = model_size_bits(self.spec, cfg.bits_per_param)
        hw = cfg.hardware
        catalog = Catalog.from_dict(hw["catalog"]) if hw.get("catalog") else builtin_hardware_catalog()
        self.profiles = assign_profiles(
            cfg.N,
            catalog,
            cfg.hardware_overrides(),
            hw.get("cycles_per_bit", 1.0),
            hw.get("freq_stdev_frac", 0.1),
            hw.get("bw_stdev_frac", 0.1),
        )
        self.global_params = nx.init_params(self.spec, stream(cfg.seed, "init"))
        self.score_cfg = ScoreConfig(cfg.lam, cfg.alpha1, cfg.alpha2, cfg.psi_init)
        self.ledger = ReputationLedger.create(range(cfg.N), cfg.psi_init)
        init_metrics = nx.evaluate(self.global_params, self.spec, self.validation)
        self.prev_accuracy = init_metrics.accuracy
        self.prev_perf = getattr(init_metrics, cfg.perf_metric)
        self.cumulative_latency = 0.0
        self.round = 0
        self.records: list[RoundRecord] = []
        self.details: list[RoundDetail] = []
        self.agent: FlashAgent | None = None
        self._pending_state: np.ndarray | None = None
        self._conditions: dict[int, list[RoundConditions]] = {}
        if isinstance(self.policy, FlashRLPolicy):
            self._warm_up()

    def conditions(self, t: int) -> list[RoundConditions]:
        if t not in self._conditions:
            self._conditions = {
                k: v for k, v in self._conditions.items() if k >= t - 1
            }
            self._conditions[t] = [
                sample_round_conditions(p, stream(self.cfg.seed, "conditions", k, t))
                for k, p in enumerate(self.profiles)
            ]
        return self._conditions[t]

    def _fresh_opt(self) -> nx.OptimizerState:
        return nx.OptimizerState.fresh(self.spec.param_count, self.cfg.lr, self.cfg.momentum)

    def _warm_up(self) -> None:
        # one local epoch on every client, used only to fit the weight projector
        cfg = self.cfg
        rows = [
            nx.local_train(
                self.global_params, self.spec, c, 1, cfg.B, self._fresh_opt(), stream(cfg.seed, "warmup", k)
            )
            for k, c in enumerate(self.clients)
        ]
        k_pca = min(cfg.k_pca, cfg.N - 1, self.spec.param_count)
        projector = fit_pca(np.stack(rows), k_pca, stream(cfg.seed, "pca"))
        agent_cfg = AgentConfig(
            hidden_dim=cfg.q_hidden_dim,
            k_pca=k_pca,
            gamma=cfg.gamma,
            lr=cfg.rl_lr,
            batch_size=cfg.rl_batch_size,
            sync_period=cfg.P,
            replay_capacity=cfg.replay_capacity,
            target_state=cfg.target_state,
            schedule=EpsilonSchedule(cfg.eps_init, cfg.eps_end, cfg.decay_rounds),
        )
        self.agent = FlashAgent(agent_cfg, cfg.N, projector, stream(cfg.seed, "qnet"))
        self.norm = NormStats.from_profiles(self.profiles, self.sizes)
        self.last_known = [self.global_params.copy() for _ in range(cfg.N)]

    def encode(self, t: int) -> np.ndarray:
        return encode_state(
            self.profiles, self.conditions(t), self.last_known, self.sizes, self.agent.projector, self.norm
        )

    def run_round(self) -> RoundRecord:
        cfg = self.cfg
        t = self.round + 1
        conds = self.conditions(t)
        state = None
        eps = None
        if self.agent is not None:
            state = self._pending_state if self._pending_state is not None else self.encode(t)
            eps = self.agent.epsilon(t - 1)
        selected = list(self.policy.select(self, state, t, stream(cfg.seed, "select", -1, t)))
        if len(set(selected)) != len(selected):
            raise SimulationError(f"round {t}: policy selected duplicate clients {selected}")

        local, latency = {}, {}
        for k in selected:
            local[k] = nx.local_train(
                self.global_params,
                self.spec,
                self.clients[k],
                cfg.E,
                cfg.B,
                self._fresh_opt(),
                stream(cfg.seed, "train", k, t),
            )
            latency[k] = client_latency(
                self.profiles[k], conds[k], self.clients[k].total_bits, self.model_bits
            )
        order = sorted(selected)
        new_global = aggregate_fedavg([local[k] for k in order], [self.sizes[k] for k in order])
        if not np.all(np.isfinite(new_global)):
            bad = int(np.sum(~np.isfinite(new_global)))
            raise SimulationError(f"round {t}: {bad} non-finite global weights after aggregation")
        self.global_params = new_global

        metrics = nx.evaluate(new_global, self.spec, self.validation)
        perf = getattr(metrics, cfg.perf_metric)
        improved = perf > self.prev_perf
        lat_norm = dict(zip(order, minmax_normalize([latency[k] for k in order])))
        divs, utils, rewards = [], [], []
        for k in order:
            d = divergence(local[k], new_global, cfg.divergence_eps)
            z = utility(d, improved)
            if cfg.score_mode == "accuracy":
                acc_k = nx.evaluate(local[k], self.spec, self.validation).accuracy
                psi = reputation_update_accuracy(self.ledger, k, acc_k, self.prev_accuracy, cfg.lam)
            elif cfg.score_mode == "utility":
                psi = reputation_update(self.ledger, k, z, 0.0, ScoreConfig(cfg.lam, 1.0, 0.0, cfg.psi_init))
            else:
                psi = reputation_update(self.ledger, k, z, lat_norm[k], self.score_cfg)
            divs.append(d)
            utils.append(z)
            rewards.append(psi)
        self.ledger.history_length += 1
        self.prev_perf = perf
        self.prev_accuracy = metrics.accuracy

        loss = None
        next_state = None
        if self.agent is not None:
            for k in order:
                self.last_known[k] = local[k]
            done = t == cfg.rounds
            next_state = state.copy() if done else self.encode(t + 1)
            self.agent.buffer.push(Transition(state, order, next_state, np.array(rewards), done))
            loss = self.agent.learn(stream(cfg.seed, "replay", -1, t))
            self._pending_state = next_state

        round_latency = max(latency.values())
        self.cumulative_latency += round_latency
        rec = RoundRecord(
            round=t,
            selected=order,
            global_accuracy=metrics.accuracy,
            global_macro_f1=metrics.macro_f1,
            round_latency=round_latency,
            cumulative_latency=self.cumulative_latency,
            mean_reward=float(np.mean(rewards)),
            agent_loss=loss,
            epsilon=eps,
        )
        self.details.append(
            RoundDetail(t, order, improved, [latency[k] for k in order], divs, utils, rewards, state, next_state)
        )
        self.records.append(rec)
        self.round = t
        return rec

    def checkpoint(self) -> dict:
        return {
            "format": 1,
            "round": self.round,
            "policy": self.policy.name,
            "global_params": self.global_params.tolist(),
            "agent": self.agent.checkpoint(self.round) if self.agent is not None else None,
            "ledger": {str(k): v for k, v in sorted(self.ledger.snapshot().items())},
        }


@dataclass
class RunResult:
    records: list[RoundRecord]
    details: list[RoundDetail]
    simulation: Simulation
    out_dir: Path | None = None
    files: dict = field(default_factory=dict)


def run_simulation(cfg: FLRunConfig, out_dir=None, policy=None) -> RunResult:
    """Run ``cfg.rounds`` rounds; with ``out_dir`` also write metrics, manifest and checkpoints."""
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    files: dict[str, str] = {}
    sim = Simulation(cfg, policy)
    out = Path(out_dir) if out_dir is not None else None
    for _ in range(cfg.rounds):
        rec = sim.run_round()
        log.debug("round %d acc=%.4f latency=%.6g", rec.round, rec.global_accuracy, rec.round_latency)
        if out is not None and cfg.checkpoint_every and rec.round % cfg.checkpoint_every == 0:
            path = out / "checkpoints" / f"round_{rec.round:05d}.json"
            atomic_write_json(path, sim.checkpoint())
            files.setdefault("checkpoints", []).append(str(path))
    if out is not None:
        if cfg.rounds > 0:
            metrics_path = out / "metrics.csv"
            atomic_write_text(metrics_path, records_to_csv([asdict(r) for r in sim.records]))
            files["metrics"] = str(metrics_path)
            plan_path = out / "partition.json"
            atomic_write_text(plan_path, sim.plan.to_json() + "\n")
            files["partition"] = str(plan_path)
            final = out / "checkpoint_final.json"
            atomic_write_json(final, sim.checkpoint())
            files["final_checkpoint"] = str(final)
        manifest = {
            "config": cfg.to_dict(),
            "defaulted": cfg.defaulted,
            "seed": cfg.seed,
            "version": f"fedselect {__version__}",
            "started_at": started.isoformat(),
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - t0,
            "outputs": files,
        }
        atomic_write_json(out / "manifest.json", manifest)
    return RunResult(sim.records, sim.details, sim, out, files)
