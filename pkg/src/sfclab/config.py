"""Experiment configuration: dataclasses with defaults, YAML overrides, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


def diurnal_profile(low=0.35, low_hour=4, peak=1.0, peak_hour=20):
    """Piecewise-linear 24-hour load profile: trough at `low_hour`, peak at `peak_hour`."""
    up_len = (peak_hour - low_hour) % 24
    down_len = 24 - up_len
    profile = [0.0] * 24
    for h in range(24):
        since_low = (h - low_hour) % 24
        if since_low <= up_len:
            profile[h] = low + (peak - low) * since_low / up_len
        else:
            since_peak = (h - peak_hour) % 24
            profile[h] = peak - (peak - low) * since_peak / down_len
    return profile


@dataclass
class ScenarioParams:
    n_ru: int = 300
    n_du: int = 10
    n_cu: int = 6
    n_upf: int = 7
    n_transport: int = 110
    n_compute: int = 0        # candidate compute sites; 0 means 1.25x the role counts
    avg_degree: int = 3
    area_km: float = 50.0
    delay_per_km_ms: float = 0.005
    capacity_profile: str = "default"
    # capacity_profile="default" values; override per profile name if needed
    backbone_bw_mbps: float = 2500.0
    access_bw_mbps: float = 1000.0
    compute_cpu: float = 50.0
    compute_proc_delay_ms: float = 0.5
    name: str = "scenario"


@dataclass
class TrafficParams:
    profile: list = field(default_factory=diurnal_profile)
    uplink_fraction: float = 0.5   # split for services with both chain directions
    cpu_demand_factor: float = 0.1  # compute-units per Mbps


@dataclass
class PowerParams:
    p_idle_w: float = 100.0
    p_max_w: float = 250.0
    router_idle_w: float = 30.0
    link_idle_w: float = 2.0
    e_pp_j: float = 1.2e-6        # per-packet processing energy
    e_sf_j_per_byte: float = 8e-9  # per-byte store-and-forward energy
    packet_len_bytes: float = 1500.0
    # per-node overrides keyed by node id (heterogeneous compute sites)
    p_idle_per_node: dict = field(default_factory=dict)
    p_max_per_node: dict = field(default_factory=dict)


@dataclass
class RewardConfig:
    c_shape: float = 1.0
    c_loop: float = 2.0
    c_seg: float = 20.0
    c_hop: float = 1.0
    c_embed_energy: float = 10.0
    c_path_energy: float = 10.0
    c_success: float = 100.0
    c_fail: float = 100.0
    allow_revisit: bool = False


@dataclass
class TrainParams:
    total_steps: int = 1_000_000
    rollout_size: int = 4096
    minibatch: int = 128
    epochs_per_rollout: int = 10
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    # Rewards are scaled by this factor before GAE / value regression so the
    # value-loss gradient does not dwarf the policy gradient in the shared
    # trunk (terminal rewards are O(100)).  Purely a training-side transform;
    # logged episode returns stay in environment units.
    reward_scale: float = 0.01
    grad_clip: float = 0.5
    hidden: int = 64
    emb_dim: int = 8
    checkpoint_every: int = 25  # rollouts between periodic checkpoints
    seed: int = 0

    def __post_init__(self):
        if self.rollout_size % self.minibatch != 0:
            raise ValueError("rollout_size must be divisible by minibatch")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")


@dataclass
class Config:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    power: PowerParams = field(default_factory=PowerParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainParams = field(default_factory=TrainParams)


def _merge(obj, overrides):
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise KeyError(f"unknown config key '{key}' for {type(obj).__name__}")
        setattr(obj, key, value)
    return obj


def load_config(path=None):
    cfg = Config()
    if path is None:
        return cfg
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    for section, overrides in doc.items():
        if not hasattr(cfg, section):
            raise KeyError(f"unknown config section '{section}'")
        _merge(getattr(cfg, section), overrides)
    # re-validate after overrides
    cfg.train.__post_init__()
    return cfg


def config_hash(cfg):
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
