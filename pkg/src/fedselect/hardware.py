"""Client system heterogeneity: hardware/protocol catalog and the latency model.

Units are fixed everywhere: bits, seconds, MHz = 1e6 cycles/s, Mb/s = 1e6 bits/s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import ModelSpec

MHZ = 1e6
MBPS = 1e6
TRUNCATION_FRAC = 0.1


@dataclass(frozen=True)
class HardwareSpec:
    name: str
    cpu_freq_mhz: float
    cores: int

    def __post_init__(self):
        if self.cpu_freq_mhz <= 0 or self.cores < 1:
            raise ValueError(f"invalid hardware spec {self}")


@dataclass(frozen=True)
class TransferProtocol:
    name: str
    bandwidth_mbps: float

    def __post_init__(self):
        if self.bandwidth_mbps <= 0:
            raise ValueError(f"invalid transfer protocol {self}")


@dataclass(frozen=True)
class ClientSystemProfile:
    hardware: HardwareSpec
    protocol: TransferProtocol
    cycles_per_bit: float = 1.0
    freq_stdev_frac: float = 0.1
    bw_stdev_frac: float = 0.1

    def __post_init__(self):
        if self.cycles_per_bit <= 0:
            raise ValueError("cycles_per_bit must be > 0")
        for frac in (self.freq_stdev_frac, self.bw_stdev_frac):
            if not 0.0 <= frac <= 0.5:
                raise ValueError(f"stdev fraction {frac} outside [0, 0.5]")


@dataclass(frozen=True)
class RoundConditions:
    freq_mhz: float
    bandwidth_mbps: float


@dataclass(frozen=True)
class Catalog:
    hardware: tuple[HardwareSpec, ...]
    protocols: tuple[TransferProtocol, ...]

    def hardware_named(self, name: str) -> HardwareSpec:
        for h in self.hardware:
            if h.name == name:
                return h
        raise KeyError(f"unknown hardware spec {name!r}")

    def protocol_named(self, name: str) -> TransferProtocol:
        for p in self.protocols:
            if p.name == name:
                return p
        raise KeyError(f"unknown transfer protocol {name!r}")

    def to_dict(self) -> dict:
        return {
            "hardware": [
                {"name": h.name, "cpu_freq_mhz": h.cpu_freq_mhz, "cores": h.cores}
                for h in self.hardware
            ],
            "protocols": [
                {"name": p.name, "bandwidth_mbps": p.bandwidth_mbps} for p in self.protocols
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Catalog:
        return cls(
            tuple(HardwareSpec(h["name"], float(h["cpu_freq_mhz"]), int(h["cores"])) for h in doc["hardware"]),
            tuple(TransferProtocol(p["name"], float(p["bandwidth_mbps"])) for p in doc["protocols"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> Catalog:
        return cls.from_dict(json.loads(text))


_HARDWARE_ROWS = [
    (921, 128),
    (1300, 256),
    (800, 384),
    (1100, 384),
    (1377, 384),
    (350, 4),
    (1500, 4),
    (700, 1),
    (3950, 2),
    (4300, 4),
    (4400, 4),
    (4400, 8),
]

_PROTOCOL_ROWS = [("Wi-Fi 1", 6), ("Wi-Fi 3", 33), ("Wi-Fi 4", 336), ("Fast Ethernet", 100)]


def builtin_hardware_catalog() -> Catalog:
    """The 12 simulated edge devices and 4 transfer protocols."""
    return Catalog(
        tuple(
            HardwareSpec(f"Hardware Spec. {i}", float(f), c)
            for i, (f, c) in enumerate(_HARDWARE_ROWS, start=1)
        ),
        tuple(TransferProtocol(name, float(bw)) for name, bw in _PROTOCOL_ROWS),
    )


def assign_profiles(
    num_clients: int,
    catalog: Catalog,
    overrides: dict[int, tuple[str, str]] | None = None,
    cycles_per_bit: float = 1.0,
    freq_stdev_frac: float = 0.1,
    bw_stdev_frac: float = 0.1,
) -> list[ClientSystemProfile]:
    """Round-robin over hardware and protocols; ``overrides`` maps client -> (hardware, protocol) names."""
    overrides = overrides or {}
    profiles = []
    for k in range(num_clients):
        if k in overrides:
            hw_name, proto_name = overrides[k]
            hw, proto = catalog.hardware_named(hw_name), catalog.protocol_named(proto_name)
        else:
            hw = catalog.hardware[k % len(catalog.hardware)]
            proto = catalog.protocols[k % len(catalog.protocols)]
        profiles.append(ClientSystemProfile(hw, proto, cycles_per_bit, freq_stdev_frac, bw_stdev_frac))
    return profiles


def _truncated_normal(mean: float, frac: float, rng: np.random.Generator) -> float:
    return max(float(rng.normal(mean, mean * frac)), TRUNCATION_FRAC * mean)


def sample_round_conditions(profile: ClientSystemProfile, rng: np.random.Generator) -> RoundConditions:
    """Draw this round's frequency then bandwidth; values are floored at 10% of their mean."""
    f = _truncated_normal(profile.hardware.cpu_freq_mhz, profile.freq_stdev_frac, rng)
    b = _truncated_normal(profile.protocol.bandwidth_mbps, profile.bw_stdev_frac, rng)
    return RoundConditions(f, b)


def local_compute_time(data_bits: float, cycles_per_bit: float, cores: int, freq_mhz: float) -> float:
    if data_bits <= 0 or cycles_per_bit <= 0 or cores <= 0 or freq_mhz <= 0:
        raise ValueError(
            f"compute-time inputs must be positive: bits={data_bits}, g={cycles_per_bit}, "
            f"cores={cores}, f={freq_mhz}"
        )
    return data_bits * cycles_per_bit / (cores * freq_mhz * MHZ)


def transmission_time(model_bits: float, bandwidth_mbps: float) -> float:
    if bandwidth_mbps <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_mbps}")
    if model_bits < 0:
        raise ValueError(f"model size must be non-negative, got {model_bits}")
    return model_bits / (bandwidth_mbps * MBPS)


def client_latency(
    profile: ClientSystemProfile,
    conditions: RoundConditions,
    data_bits: float,
    model_bits: float,
) -> float:
    """Local computing time plus upload time for one client in one round."""
    return local_compute_time(
        data_bits, profile.cycles_per_bit, profile.hardware.cores, conditions.freq_mhz
    ) + transmission_time(model_bits, conditions.bandwidth_mbps)


def model_size_bits(spec: ModelSpec, bits_per_param: int = 32) -> int:
    return spec.param_count * bits_per_param
