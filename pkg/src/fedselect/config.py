"""Run configuration: a single JSON document, validated all at once."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

POLICIES = ("flash-rl", "random", "full")
SCORE_MODES = ("utility_latency", "utility", "accuracy")
PERF_METRICS = ("accuracy", "macro_f1")
SCHEMES = ("hetero_dirichlet", "shards", "noniid_label", "label_skew", "iid")
REQUIRED = ("N", "U", "rounds")

DEFAULT_DATASET = {"kind": "blobs", "num_classes": 10, "input_dim": 20, "n_per_class": 300, "spread": 1.0}
DEFAULT_PARTITION = {"scheme": "hetero_dirichlet", "alpha": 0.5, "min_size": 10}
DEFAULT_HARDWARE = {
    "freq_stdev_frac": 0.1,
    "bw_stdev_frac": 0.1,
    "cycles_per_bit": 1.0,
    "overrides": {},
    "catalog": None,
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


@dataclass
class FLRunConfig:
    """Run configuration; defaults are the MNIST-scale settings."""

    N: int
    U: int
    rounds: int
    E: int = 5
    B: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    rl_batch_size: int = 50
    P: int = 10
    rl_lr: float = 0.01
    gamma: float = 0.9
    eps_init: float = 0.9
    eps_end: float = 0.35
    eps_decay_rounds: int | None = None
    psi_init: float = 0.01
    lam: float = 0.6
    alpha1: float = 0.5
    alpha2: float = 0.5
    score_mode: str = "utility_latency"
    perf_metric: str = "accuracy"
    policy: str = "flash-rl"
    seed: int = 0
    hidden_dim: int = 0
    q_hidden_dim: int = 128
    k_pca: int = 10
    replay_capacity: int = 1000
    target_state: str = "next"
    divergence_eps: float = 1e-8
    bits_per_param: int = 32
    validation_fraction: float = 0.1
    checkpoint_every: int = 0
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    partition: dict = field(default_factory=lambda: dict(DEFAULT_PARTITION))
    hardware: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_HARDWARE))
    defaulted: list[str] = field(default_factory=list, compare=False, repr=False)

    @property
    def decay_rounds(self) -> int:
        return self.rounds if self.eps_decay_rounds is None else self.eps_decay_rounds

    def hardware_overrides(self) -> dict[int, tuple[str, str]]:
        return {int(k): (v[0], v[1]) for k, v in (self.hardware.get("overrides") or {}).items()}

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.name != "defaulted"}

    @classmethod
    def from_dict(cls, doc: dict) -> FLRunConfig:
        problems = []
        known = {f.name for f in fields(cls)} - {"defaulted"}
        for key in doc:
            if key not in known:
                problems.append(f"unknown field {key!r}")
        for key in REQUIRED:
            if key not in doc:
                problems.append(f"missing required field {key!r}")
        if problems:
            raise ConfigError(problems)
        defaulted = sorted(known - set(doc))
        resolved = {k: v for k, v in doc.items() if k in known}
        for key, base in (("dataset", DEFAULT_DATASET), ("partition", DEFAULT_PARTITION), ("hardware", DEFAULT_HARDWARE)):
            given = resolved.get(key)
            if given is None:
                continue
            if not isinstance(given, dict):
                problems.append(f"{key} must be an object")
                continue
            if key == "partition" and given.get("scheme", base["scheme"]) != base["scheme"]:
                merged = dict(given)
            elif key == "dataset" and given.get("kind", "blobs") != "blobs":
                merged = dict(given)
            else:
                merged = {**copy.deepcopy(base), **given}
            defaulted += [f"{key}.{k}" for k in merged if k not in given]
            resolved[key] = merged
        if problems:
            raise ConfigError(problems)
        cfg = cls(**resolved)
        cfg.defaulted = sorted(defaulted)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> FLRunConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        if not isinstance(doc, dict):
            raise ConfigError(["config root must be a JSON object"])
        return cls.from_dict(doc)

    def validate(self) -> None:
        p = []

        def need(cond, msg):
            if not cond:
                p.append(msg)

        ints = ("N", "U", "rounds", "E", "B", "rl_batch_size", "P", "seed", "hidden_dim",
                "q_hidden_dim", "k_pca", "replay_capacity", "bits_per_param", "checkpoint_every")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer, got {v!r}")
        if p:
            raise ConfigError(p)
        need(self.N >= 2, f"N must be >= 2, got {self.N}")
        need(1 <= self.U <= self.N, f"U must be in [1, N={self.N}], got {self.U}")
        need(self.rounds >= 0, f"rounds must be >= 0, got {self.rounds}")
        need(self.E >= 1, "E must be >= 1")
        need(self.B >= 1, "B must be >= 1")
        need(self.lr > 0, "lr must be > 0")
        need(0 <= self.momentum < 1, "momentum must be in [0, 1)")
        need(self.rl_batch_size >= 1, "rl_batch_size must be >= 1")
        need(self.P >= 1, "P must be >= 1")
        need(self.rl_lr > 0, "rl_lr must be > 0")
        need(0 <= self.gamma <= 1, "gamma must be in [0, 1]")
        need(0 <= self.eps_end <= self.eps_init <= 1, "need 0 <= eps_end <= eps_init <= 1")
        need(self.eps_decay_rounds is None or self.eps_decay_rounds >= 0, "eps_decay_rounds must be >= 0")
        need(0 <= self.lam <= 1, "lam must be in [0, 1]")
        need(self.alpha1 >= 0 and self.alpha2 >= 0 and self.alpha1 + self.alpha2 > 0,
             "alpha1, alpha2 must be >= 0 with a positive sum")
        need(self.score_mode in SCORE_MODES, f"score_mode must be one of {SCORE_MODES}")
        need(self.perf_metric in PERF_METRICS, f"perf_metric must be one of {PERF_METRICS}")
        need(self.policy in POLICIES, f"policy must be one of {POLICIES}")
        need(self.target_state in ("next", "current"), "target_state must be 'next' or 'current'")
        need(self.hidden_dim >= 0, "hidden_dim must be >= 0")
        need(self.q_hidden_dim >= 1, "q_hidden_dim must be >= 1")
        need(self.k_pca >= 1, "k_pca must be >= 1")
        need(self.replay_capacity >= 1, "replay_capacity must be >= 1")
        need(self.divergence_eps > 0, "divergence_eps must be > 0")
        need(self.bits_per_param >= 1, "bits_per_param must be >= 1")
        need(0 < self.validation_fraction < 1, "validation_fraction must be in (0, 1)")
        need(self.checkpoint_every >= 0, "checkpoint_every must be >= 0")
        kind = self.dataset.get("kind")
        if kind == "blobs":
            for k in ("num_classes", "input_dim", "n_per_class", "spread"):
                need(k in self.dataset, f"dataset.{k} is required for blobs")
        elif kind == "idx":
            for k in ("images", "labels"):
                need(k in self.dataset, f"dataset.{k} is required for idx")
        else:
            p.append(f"dataset.kind must be 'blobs' or 'idx', got {kind!r}")
        scheme = self.partition.get("scheme")
        need(scheme in SCHEMES, f"partition.scheme must be one of {SCHEMES}")
        if scheme == "hetero_dirichlet":
            need(self.partition.get("alpha", 0) > 0, "partition.alpha must be > 0")
        for frac in ("freq_stdev_frac", "bw_stdev_frac"):
            v = self.hardware.get(frac, 0.1)
            need(0 <= v <= 0.5, f"hardware.{frac} must be in [0, 0.5]")
        need(self.hardware.get("cycles_per_bit", 1.0) > 0, "hardware.cycles_per_bit must be > 0")
        for k in (self.hardware.get("overrides") or {}):
            ok = str(k).lstrip("-").isdigit() and 0 <= int(k) < self.N
            need(ok, f"hardware.overrides key {k!r} is not a client id in [0, {self.N})")
        if p:
            raise ConfigError(p)


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Return a copy of ``doc`` with dotted keys (``partition.alpha``) replaced."""
    out = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out
