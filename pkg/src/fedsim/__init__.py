"""fedsim: a deterministic federated-learning robustness testbed.

Implements the FedAvg-style training loop, Byzantine and targeted model
poisoning attacks, robust aggregation and malicious-update detection, local
differential privacy for updates, and simulated multi-hop update forwarding.
"""

from .attacks import (
    AttackSpec,
    AttackerState,
    attack_success,
    craft_byzantine_estimated,
    craft_byzantine_exact,
    craft_explicit_boost,
    craft_stealthy,
    estimate_benign_avg,
)
from .common import ClientUpdate, derive_rng
from .config import (
    ConfigError,
    DataConfig,
    ExperimentConfig,
    parse_config,
    preset,
    preset_names,
    serialize_config,
)
from .data import Dataset, load_idx, poison_labels, shard_iid, synth_generate
from .defenses import (
    DefenseSpec,
    DetectionReport,
    FilterSpec,
    agg_fedavg,
    agg_krum,
    agg_median,
    agg_trimmed_mean,
    filter_accuracy,
    filter_distance,
    kl_drift,
)
from .engine import (
    FLConfig,
    RoundMetrics,
    apply_aggregate,
    client_round,
    run_federation,
    sample_clients,
)
from .forwarding import (
    ForwardPolicy,
    ReputationTable,
    SubmissionRecord,
    linkage_advantage,
    route_update,
    update_reputation,
)
from .model import ModelSpec, TrainSpec, evaluate, init_params, loss_and_grad, sgd_train
from .privacy import DPSpec, PrivacyLedger, clip_update, compose, dp_perturb
from .runner import run_experiment

__version__ = "0.1.0"
