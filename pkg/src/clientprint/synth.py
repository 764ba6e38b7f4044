"""Seeded synthetic data: per-client Gaussian feature profiles and raw records.

Nothing here is calibrated against real clients. Profiles only encode the
qualitative structure the experiments need: distinct clients, and an
all-subnets shift that pushes the nimbus profile onto grandine's
redundancy/delay signature.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import CLIENTS, LabeledDataset, client_index
from .features import (
    DEFAULT_IDEAL_REWARD, FEATURE_NAMES, FEATURE_UPPER, MAX_ATTESTATIONS, MODES,
    N_FEATURES, SLOTS_PER_EPOCH, SYNC_COMMITTEE_SIZE, AttestationSummary, SlotRewardsRecord,
)

SHIFT_FEATURES = ("redundant_fraction", "mean_inclusion_delay_norm", "ordered_fraction")
_SHIFT_IDX = [FEATURE_NAMES.index(f) for f in SHIFT_FEATURES]


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ClientProfile:
    client: str
    feature_means: tuple[float, ...]
    feature_stds: tuple[float, ...]
    # mode -> additive delta on SHIFT_FEATURES; missing modes are zero
    mode_shift: dict = field(default_factory=dict)

    def __post_init__(self):
        client_index(self.client)
        if len(self.feature_means) != N_FEATURES or len(self.feature_stds) != N_FEATURES:
            raise ProfileError(f"{self.client}: means/stds must have {N_FEATURES} entries")
        if any(s < 0 for s in self.feature_stds):
            raise ProfileError(f"{self.client}: stds must be >= 0")
        for mode, delta in self.mode_shift.items():
            if mode not in MODES:
                raise ProfileError(f"{self.client}: unknown mode {mode!r}")
            if len(delta) != len(SHIFT_FEATURES):
                raise ProfileError(f"{self.client}: shift for {mode} needs {len(SHIFT_FEATURES)} entries")

    def shift_vector(self, mode: str) -> np.ndarray:
        out = np.zeros(N_FEATURES)
        if mode != "default" and mode in self.mode_shift:
            out[_SHIFT_IDX] = self.mode_shift[mode]
        return out


@dataclass(frozen=True)
class GeneratorConfig:
    profiles: tuple[ClientProfile, ...]
    separation: float = 1.0
    per_class: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if len(self.profiles) < 2:
            raise ProfileError("need at least two client profiles")
        if len({p.client for p in self.profiles}) != len(self.profiles):
            raise ProfileError("duplicate client profiles")
        if self.per_class < 1:
            raise ProfileError("per_class must be >= 1")
        if self.separation < 0:
            raise ProfileError("separation must be >= 0")

    def effective_means(self, mode: str = "default") -> dict[str, np.ndarray]:
        """Profile means spread about their centroid by ``separation``, plus the mode shift.

        Shifts scale with ``separation`` too, so a shift landing one client on
        another's mean keeps doing so at any separation.
        """
        base = np.array([p.feature_means for p in self.profiles], dtype=np.float64)
        centroid = base.mean(axis=0)
        out = {}
        for p, mu in zip(self.profiles, base):
            mean = centroid + self.separation * (mu - centroid) + self.separation * p.shift_vector(mode)
            if np.any(mean < 0) or np.any(mean > FEATURE_UPPER):
                raise ProfileError(
                    f"{p.client} ({mode}) mean leaves the feature range at separation {self.separation}: "
                    f"{np.round(mean, 4).tolist()}")
            out[p.client] = mean
        return out


_STD = (0.02, 0.02, 0.02, 0.05, 0.02, 0.02, 0.02)

# fill, redundant, ordered, reward, delay, sync, unaggregated
DEFAULT_PROFILES = (
    ClientProfile("grandine", (0.60, 0.14, 0.60, 1.00, 0.14, 0.80, 0.08), _STD),
    ClientProfile("lighthouse", (0.70, 0.10, 0.50, 1.05, 0.10, 0.85, 0.05), _STD),
    ClientProfile("lodestar", (0.55, 0.11, 0.65, 1.10, 0.11, 0.83, 0.06), _STD),
    # all_subnets lands redundancy/delay on grandine's values; ordering and
    # unaggregated share stay distinct, which is what merged training exploits
    ClientProfile("nimbus", (0.60, 0.06, 0.66, 1.00, 0.06, 0.80, 0.12), _STD,
                  {"all_subnets": (0.08, 0.08, -0.03)}),
    ClientProfile("prysm", (0.50, 0.08, 0.70, 0.95, 0.12, 0.75, 0.10), _STD,
                  {"all_subnets": (0.01, 0.0, 0.0)}),
    ClientProfile("teku", (0.65, 0.12, 0.55, 0.90, 0.08, 0.78, 0.14), _STD),
)


def default_config(per_class: int = 1000, seed: int = 0, separation: float = 1.0,
                   shifts: bool = True) -> GeneratorConfig:
    profiles = DEFAULT_PROFILES
    if not shifts:
        profiles = tuple(ClientProfile(p.client, p.feature_means, p.feature_stds) for p in profiles)
    return GeneratorConfig(profiles, separation, per_class, seed)


def _client_rng(config: GeneratorConfig, client: str, stream: int) -> np.random.Generator:
    # mode is deliberately absent: equal seeds give equal draws in every mode
    return np.random.default_rng([config.seed, client_index(client), stream])


def generate(config: GeneratorConfig, mode: str = "default") -> LabeledDataset:
    """``per_class`` clamped Gaussian feature vectors per client, in registry order."""
    if mode not in MODES:
        raise ProfileError(f"unknown mode {mode!r}")
    means = config.effective_means(mode)
    profiles = sorted(config.profiles, key=lambda p: client_index(p.client))
    vectors, labels = [], []
    for p in profiles:
        rng = _client_rng(config, p.client, 0)
        noise = rng.standard_normal((config.per_class, N_FEATURES))
        x = means[p.client] + noise * np.asarray(p.feature_stds)
        vectors.append(np.clip(x, 0.0, FEATURE_UPPER))
        labels.append(np.full(config.per_class, client_index(p.client)))
    n = config.per_class * len(profiles)
    return LabeledDataset(np.concatenate(vectors), np.concatenate(labels), (mode,) * n)


# ---------------------------------------------------------------- raw records

_COMMITTEE_SIZE = 64


def _root(rng: np.random.Generator) -> str:
    return "0x" + rng.bytes(32).hex()


def _bits(mask: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in mask)


def synthesize_record(target, rng: np.random.Generator, slot: int = 100_000, proposer_index: int = 0,
                      ideal_reward: float = DEFAULT_IDEAL_REWARD, label: Optional[str] = None,
                      mode: Optional[str] = None) -> SlotRewardsRecord:
    """Build a raw record whose extracted features approximate ``target``.

    Counts (attestations, redundant copies, single-bit aggregates, sync bits)
    are rounded from the target, so those features are hit to within one
    unit; delay and ordering are matched approximately.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (N_FEATURES,) or not np.all(np.isfinite(t)):
        raise ProfileError(f"target must be {N_FEATURES} finite values")
    if np.any(t < 0) or np.any(t > FEATURE_UPPER):
        bad = [FEATURE_NAMES[i] for i in np.flatnonzero((t < 0) | (t > FEATURE_UPPER))]
        raise ProfileError(f"infeasible target, out of range: {bad}")
    fill, red, ordered, reward, delay, sync, unagg = t

    n = int(round(fill * MAX_ATTESTATIONS))
    n_red = min(int(round(red * n)), max(n - 1, 0))
    n_src = n - n_red
    n_single = min(int(round(unagg * n)), n)

    # copies hang off the first m sources; sources without copies may be single-bit
    m = min(n_src, n_red) if n_red else 0
    if n_red:
        room = n_src - max(0, n_single - n_red)
        m = max(1, min(m, room))
    copies_per = [0] * n_src
    for i in range(n_red):
        copies_per[i % m] += 1

    single_budget = n_single
    single_copy = [[False] * c for c in copies_per]
    for i in range(n_src):
        for j in range(copies_per[i]):
            if single_budget:
                single_copy[i][j] = True
                single_budget -= 1
    single_src = [False] * n_src
    for i in range(n_src - 1, -1, -1):
        if single_budget and copies_per[i] == 0:
            single_src[i] = True
            single_budget -= 1

    mean_delay = delay * SLOTS_PER_EPOCH
    spread = 2.0
    groups = []
    for i in range(n_src):
        d = int(np.clip(round(rng.normal(mean_delay, spread)), 0, min(SLOTS_PER_EPOCH, slot)))
        committee = int(rng.integers(0, 64))
        root = _root(rng)
        if single_src[i]:
            mask = np.zeros(_COMMITTEE_SIZE, dtype=bool)
            mask[rng.integers(_COMMITTEE_SIZE)] = True
        else:
            mask = rng.random(_COMMITTEE_SIZE) < 0.7
            while mask.sum() < 2:
                mask[rng.integers(_COMMITTEE_SIZE)] = True
        members = [mask]
        on = np.flatnonzero(mask)
        for single in single_copy[i]:
            sub = np.zeros(_COMMITTEE_SIZE, dtype=bool)
            if single:
                sub[rng.choice(on)] = True
            else:
                sub[rng.choice(on, size=max(2, len(on) // 2), replace=False)] = True
            members.append(sub)
        groups.append([d, committee, root, members])

    # nudge delays so the attestation-weighted mean tracks the target
    if groups:
        weights = np.array([len(g[3]) for g in groups])
        target_total = int(round(mean_delay * n))
        for _ in range(4 * len(groups)):
            total = int(sum(g[0] * w for g, w in zip(groups, weights)))
            if total == target_total:
                break
            step = 1 if total < target_total else -1
            gi = int(rng.integers(len(groups)))
            nd = groups[gi][0] + step
            if 0 <= nd <= min(SLOTS_PER_EPOCH, slot):
                groups[gi][0] = nd

    # smallest delay first == newest slot first; then adjacent swaps toward the wanted ascent count
    groups.sort(key=lambda g: g[0])
    pairs_total = max(n - 1, 0)
    want_ascents = pairs_total - int(round(ordered * pairs_total)) if n >= 2 else 0

    def ascents(gs):
        return sum(gs[i][0] > gs[i + 1][0] for i in range(len(gs) - 1))  # delay up == slot down

    current = ascents(groups)
    for _ in range(20 * len(groups)):
        if current == want_ascents or len(groups) < 2:
            break
        i = int(rng.integers(len(groups) - 1))
        groups[i], groups[i + 1] = groups[i + 1], groups[i]
        new = ascents(groups)
        if abs(new - want_ascents) <= abs(current - want_ascents):
            current = new
        else:
            groups[i], groups[i + 1] = groups[i + 1], groups[i]

    attestations = []
    for d, committee, root, members in groups:
        for mask in members:
            attestations.append(AttestationSummary(slot - d, committee, _bits(mask), root))

    sync_bits = int(round(sync * SYNC_COMMITTEE_SIZE))
    att_reward = int(round(reward * ideal_reward))
    sync_reward = sync_bits * 1_000
    total = att_reward + sync_reward + int(rng.integers(0, 50_000))
    return SlotRewardsRecord(slot, proposer_index, total, att_reward, sync_reward,
                             tuple(attestations), sync_bits, label, mode)


def generate_records(config: GeneratorConfig, mode: str = "default",
                     ideal_reward: float = DEFAULT_IDEAL_REWARD) -> list[SlotRewardsRecord]:
    """Raw records whose features follow :func:`generate`'s distribution."""
    ds = generate(config, mode)
    records = []
    for i, (v, c) in enumerate(zip(ds.vectors, ds.labels)):
        client = CLIENTS[c]
        rng = _client_rng(config, client, 1 + i)
        records.append(synthesize_record(v, rng, slot=1_000_000 + i, proposer_index=i,
                                         ideal_reward=ideal_reward, label=client, mode=mode))
    return records


# ---------------------------------------------------------------- profile files

def load_profiles(path) -> tuple[ClientProfile, ...]:
    """Read a profile set from JSON.

    Layout::

        {"profiles": [{"client": "nimbus",
                       "feature_means": [7 floats], "feature_stds": [7 floats],
                       "mode_shift": {"all_subnets": [d_redundant, d_delay, d_ordered]}}]}
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    try:
        return tuple(
            ClientProfile(p["client"], tuple(p["feature_means"]), tuple(p["feature_stds"]),
                          {k: tuple(v) for k, v in p.get("mode_shift", {}).items()})
            for p in doc["profiles"])
    except (KeyError, TypeError) as e:
        raise ProfileError(f"malformed profile file {path}: {e}") from e


def dump_profiles(profiles: Sequence[ClientProfile]) -> dict:
    return {"profiles": [
        {"client": p.client, "feature_means": list(p.feature_means), "feature_stds": list(p.feature_stds),
         "mode_shift": {k: list(v) for k, v in p.mode_shift.items()}}
        for p in profiles]}
