"""Reward records and the standardized feature vectors extracted from them."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEATURE_SCHEMA = "v1"
FEATURE_NAMES = (
    "attestation_fill",
    "redundant_fraction",
    "ordered_fraction",
    "reward_norm",
    "mean_inclusion_delay_norm",
    "sync_fraction",
    "unaggregated_fraction",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_UPPER = np.array([1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0])

MAX_ATTESTATIONS = 128
SYNC_COMMITTEE_SIZE = 512
SLOTS_PER_EPOCH = 32
DEFAULT_IDEAL_REWARD = 10_000_000  # Gwei
STD_FLOOR = 1e-12

MODES = ("default", "all_subnets", "proposer_flags")

_ROOT_RE = re.compile(r"^(0x)?[0-9a-fA-F]{64}$")
_BITS_RE = re.compile(r"^[01]+$")


class SchemaError(ValueError):
    """A record violates the reward-record schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class AttestationSummary:
    att_slot: int
    committee_index: int
    aggregation_bits: str  # '0'/'1' characters, one per committee member
    data_root: str

    @property
    def bitmask(self) -> int:
        return int(self.aggregation_bits, 2)

    @property
    def n_set(self) -> int:
        return self.aggregation_bits.count("1")

    @property
    def data_key(self) -> tuple:
        return (self.att_slot, self.committee_index, self.data_root.lower().removeprefix("0x"))

    @property
    def degenerate(self) -> bool:
        return self.n_set == 0


@dataclass(frozen=True)
class SlotRewardsRecord:
    slot: int
    proposer_index: int
    total_reward: int
    attestation_reward: int
    sync_reward: int
    attestations: tuple[AttestationSummary, ...] = ()
    sync_bits_set: int = 0
    label: Optional[str] = None
    mode: Optional[str] = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)


def validate_record(record: SlotRewardsRecord) -> None:
    """Raise :class:`SchemaError` on the first invariant the record breaks."""
    for name in ("slot", "proposer_index", "total_reward", "attestation_reward",
                 "sync_reward", "sync_bits_set"):
        value = getattr(record, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise SchemaError(name, f"expected integer, got {value!r}")
        if value < 0:
            raise SchemaError(name, f"must be >= 0, got {value}")
    if record.attestation_reward + record.sync_reward > record.total_reward:
        raise SchemaError(
            "total_reward",
            f"attestation_reward + sync_reward ({record.attestation_reward} + "
            f"{record.sync_reward}) exceeds total_reward {record.total_reward}",
        )
    if record.sync_bits_set > SYNC_COMMITTEE_SIZE:
        raise SchemaError("sync_bits_set", f"must be <= {SYNC_COMMITTEE_SIZE}")
    if len(record.attestations) > MAX_ATTESTATIONS:
        raise SchemaError("attestations", f"at most {MAX_ATTESTATIONS} allowed, got {len(record.attestations)}")
    if record.mode is not None and record.mode not in MODES:
        raise SchemaError("mode", f"unknown mode {record.mode!r}")
    for i, att in enumerate(record.attestations):
        where = f"attestations[{i}]"
        if isinstance(att.att_slot, bool) or not isinstance(att.att_slot, (int, np.integer)):
            raise SchemaError(f"{where}.att_slot", "expected integer")
        if att.att_slot < 0 or att.att_slot > record.slot:
            raise SchemaError(f"{where}.att_slot", f"{att.att_slot} not in [0, block slot {record.slot}]")
        if isinstance(att.committee_index, bool) or not isinstance(att.committee_index, (int, np.integer)) \
                or att.committee_index < 0:
            raise SchemaError(f"{where}.committee_index", "expected integer >= 0")
        if not isinstance(att.aggregation_bits, str) or not _BITS_RE.match(att.aggregation_bits):
            raise SchemaError(f"{where}.aggregation_bits", "expected a non-empty string of 0/1")
        if not isinstance(att.data_root, str) or not _ROOT_RE.match(att.data_root):
            raise SchemaError(f"{where}.data_root", "expected 32-byte hex digest")


def redundant_count(attestations: Sequence[AttestationSummary]) -> int:
    """Count attestations adding no bits beyond earlier ones with identical data."""
    seen: dict[tuple, int] = {}
    count = 0
    for att in attestations:
        key = att.data_key
        mask = att.bitmask
        union = seen.get(key)
        if union is not None and mask & ~union == 0:
            count += 1
        seen[key] = (union or 0) | mask
    return count


def extract_features(record: SlotRewardsRecord, ideal_reward: float = DEFAULT_IDEAL_REWARD) -> np.ndarray:
    """Map one reward record onto the 7-dimensional v1 feature vector."""
    if not ideal_reward > 0:
        raise ValueError(f"ideal_reward must be > 0, got {ideal_reward}")
    validate_record(record)
    atts = record.attestations
    n = len(atts)

    if n >= 2:
        ordered = sum(atts[i].att_slot >= atts[i + 1].att_slot for i in range(n - 1)) / (n - 1)
    else:
        ordered = 1.0
    if n:
        delay = sum(record.slot - a.att_slot for a in atts) / n
        delay_norm = min(1.0, delay / SLOTS_PER_EPOCH)
    else:
        delay_norm = 0.0

    return np.array([
        n / MAX_ATTESTATIONS,
        redundant_count(atts) / max(1, n),
        ordered,
        min(2.0, record.attestation_reward / ideal_reward),
        delay_norm,
        record.sync_bits_set / SYNC_COMMITTEE_SIZE,
        sum(a.n_set == 1 for a in atts) / max(1, n),
    ], dtype=np.float64)


def check_feature_vector(v) -> None:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (N_FEATURES,):
        raise ValueError(f"feature vector must have shape ({N_FEATURES},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector has non-finite entries")
    if np.any(v < 0) or np.any(v > FEATURE_UPPER):
        raise ValueError(f"feature vector out of range: {v.tolist()}")


@dataclass(frozen=True)
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        if means.ndim != 1 or means.shape != stds.shape:
            raise ValueError("scaler means/stds must be 1-d of equal length")
        if not np.all(stds > 0):
            raise ValueError("scaler stds must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def dim(self) -> int:
        return self.means.shape[0]

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: scaler has {self.dim}, input has {x.shape[-1]}")
        return (x - self.means) / self.stds

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.stds + self.means

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["means"], dtype=np.float64), np.array(d["stds"], dtype=np.float64))


def fit_scaler(vectors) -> Scaler:
    """Per-dimension mean and population std, with stds floored at 1e-12."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("fit_scaler needs a non-empty 2-d array of vectors")
    means = x.mean(axis=0)
    # constant columns: summation rounding would leave a tiny offset that the floor blows up
    constant = np.ptp(x, axis=0) == 0
    means[constant] = x[0, constant]
    stds = x.std(axis=0)
    return Scaler(means, np.maximum(stds, STD_FLOOR))


def apply_scaler(scaler: Scaler, v) -> np.ndarray:
    return scaler.transform(v)
