"""Dataset, record and model files, plus the beacon-node reward fetcher.

Dataset file (UTF-8, one JSON object per line)::

    {"format": "clientprint-dataset", "version": 1, "feature_schema": "v1",
     "feature_names": [...], "scheme": "six_class", "class_names": [...]}
    {"label": "lighthouse", "mode": "default", "features": [7 floats]}
    ...

Records file: one :class:`SlotRewardsRecord` per line, field names as in the
dataclass; ``aggregation_bits`` is a string of ``0``/``1``.

Model file: a single JSON document; arrays are stored as base64 little-endian
float64 (exact round trip).
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import requests

from . import knn, mlp
from .dataset import DatasetError, LabeledDataset
from .features import (
    FEATURE_NAMES, FEATURE_SCHEMA, N_FEATURES, AttestationSummary, Scaler, SchemaError,
    SlotRewardsRecord, validate_record,
)

log = logging.getLogger(__name__)

DATASET_FORMAT = "clientprint-dataset"
DATASET_VERSION = 1
MODEL_FORMAT = "clientprint-model"
MODEL_VERSION = 1


class FormatError(ValueError):
    """Malformed or incompatible file."""


# ---------------------------------------------------------------- datasets

def dataset_header(ds: LabeledDataset) -> dict:
    return {"format": DATASET_FORMAT, "version": DATASET_VERSION, "feature_schema": FEATURE_SCHEMA,
            "feature_names": list(FEATURE_NAMES), "scheme": ds.scheme, "class_names": list(ds.class_names)}


def save_dataset(ds: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(dataset_header(ds)) + "\n")
        for vec, label, mode in zip(ds.vectors, ds.labels, ds.modes):
            row = {"label": ds.class_names[label], "mode": mode, "features": [float(x) for x in vec]}
            f.write(json.dumps(row) + "\n")


def _lines(path) -> Iterable[tuple[int, int, str]]:
    """(line number, byte offset, text) for each line of a UTF-8 file."""
    offset = 0
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, 1):
            yield lineno, offset, raw
            offset += len(raw)


def _parse_line(raw: bytes, lineno: int, offset: int, path) -> dict:
    if not raw.endswith(b"\n"):
        # a complete file ends with a newline; anything else was cut short
        where = f"{path}: line {lineno} (byte {offset})"
        try:
            json.loads(raw)
        except ValueError:
            raise FormatError(f"{where}: truncated or malformed final line") from None
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise FormatError(f"{path}: line {lineno} (byte {offset}): malformed JSON: {e}") from None
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: line {lineno} (byte {offset}): expected a JSON object")
    return obj


def load_dataset(path) -> LabeledDataset:
    header = None
    vectors, labels, modes = [], [], []
    for lineno, offset, raw in _lines(path):
        if not raw.strip():
            continue
        obj = _parse_line(raw, lineno, offset, path)
        if header is None:
            header = obj
            _check_header(header, path)
            names = list(header["class_names"])
            index = {n: i for i, n in enumerate(names)}
            continue
        where = f"{path}: line {lineno} (byte {offset})"
        try:
            label, mode, feats = obj["label"], obj["mode"], obj["features"]
        except KeyError as e:
            raise FormatError(f"{where}: missing field {e}") from None
        if label not in index:
            raise FormatError(f"{where}: label {label!r} not in header class_names")
        if not isinstance(feats, list) or len(feats) != N_FEATURES:
            raise FormatError(f"{where}: features must be a list of {N_FEATURES} numbers")
        vectors.append(feats)
        labels.append(index[label])
        modes.append(mode)
    if header is None:
        raise FormatError(f"{path}: empty file, no header")
    try:
        return LabeledDataset(np.array(vectors, dtype=np.float64).reshape(-1, N_FEATURES),
                              np.array(labels, dtype=np.int64), tuple(modes),
                              header["scheme"], tuple(names))
    except (DatasetError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from None


def _check_header(header: dict, path) -> None:
    if header.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: not a dataset file (format={header.get('format')!r})")
    if header.get("version") != DATASET_VERSION:
        raise FormatError(f"{path}: incompatible dataset version {header.get('version')!r}, "
                          f"expected {DATASET_VERSION}")
    if header.get("feature_schema") != FEATURE_SCHEMA:
        raise FormatError(f"{path}: incompatible feature schema {header.get('feature_schema')!r}, "
                          f"expected {FEATURE_SCHEMA!r}")
    names = header.get("class_names")
    if not isinstance(names, list) or not names:
        raise FormatError(f"{path}: header lacks class_names")
    scheme = header.get("scheme")
    if scheme == "twelve_class" and len(names) != 12:
        raise FormatError(f"{path}: twelve_class scheme with {len(names)} class names")
    if scheme == "six_class" and len(names) != 6:
        raise FormatError(f"{path}: six_class scheme with {len(names)} class names")


# ---------------------------------------------------------------- records

def record_to_dict(r: SlotRewardsRecord) -> dict:
    d = {
        "slot": r.slot, "proposer_index": r.proposer_index, "total_reward": r.total_reward,
        "attestation_reward": r.attestation_reward, "sync_reward": r.sync_reward,
        "attestations": [{"att_slot": a.att_slot, "committee_index": a.committee_index,
                          "aggregation_bits": a.aggregation_bits, "data_root": a.data_root}
                         for a in r.attestations],
        "sync_bits_set": r.sync_bits_set, "label": r.label, "mode": r.mode,
    }
    for k, v in r.extra.items():
        d.setdefault(k, v)
    return d


_RECORD_FIELDS = ("slot", "proposer_index", "total_reward", "attestation_reward", "sync_reward",
                  "attestations", "sync_bits_set", "label", "mode")


def record_from_dict(d: dict) -> SlotRewardsRecord:
    """Parse and validate; raises :class:`SchemaError` naming the bad field."""
    if not isinstance(d, dict):
        raise SchemaError("record", "expected a JSON object")
    for name in ("slot", "proposer_index", "total_reward", "attestation_reward", "sync_reward"):
        if name not in d:
            raise SchemaError(name, "missing")
    atts_raw = d.get("attestations", [])
    if not isinstance(atts_raw, list):
        raise SchemaError("attestations", "expected a list")
    atts = []
    for i, a in enumerate(atts_raw):
        if not isinstance(a, dict):
            raise SchemaError(f"attestations[{i}]", "expected an object")
        for name in ("att_slot", "committee_index", "aggregation_bits", "data_root"):
            if name not in a:
                raise SchemaError(f"attestations[{i}].{name}", "missing")
        atts.append(AttestationSummary(a["att_slot"], a["committee_index"], a["aggregation_bits"], a["data_root"]))
    record = SlotRewardsRecord(
        d["slot"], d["proposer_index"], d["total_reward"], d["attestation_reward"], d["sync_reward"],
        tuple(atts), d.get("sync_bits_set", 0), d.get("label"), d.get("mode"),
        {k: v for k, v in d.items() if k not in _RECORD_FIELDS})
    validate_record(record)
    return record


def save_records(records: Iterable[SlotRewardsRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(json.dumps(record_to_dict(r)) + "\n")


def load_records(path) -> list[SlotRewardsRecord]:
    out = []
    for lineno, offset, raw in _lines(path):
        if not raw.strip():
            continue
        obj = _parse_line(raw, lineno, offset, path)
        try:
            out.append(record_from_dict(obj))
        except SchemaError as e:
            raise FormatError(f"{path}: line {lineno} (byte {offset}): {e}") from None
    return out


# ---------------------------------------------------------------- fetching

@dataclass(frozen=True)
class BeaconSourceConfig:
    base_url: str
    slot_range: tuple[int, int]
    path_template: str = "/lighthouse/analysis/block_rewards?start_slot={slot}&end_slot={slot}"
    timeout: float = 10.0
    max_retries: int = 3
    max_requests_per_second: float = 10.0
    backoff_base: float = 0.2
    bearer_token: Optional[str] = None

    def __post_init__(self):
        start, end = self.slot_range
        if start > end:
            raise ValueError(f"slot_range start {start} > end {end}")
        if not self.max_requests_per_second > 0:
            raise ValueError("max_requests_per_second must be > 0")
        if "{slot}" not in self.path_template:
            raise ValueError("path_template needs a {slot} placeholder")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class FetchResult:
    records: list[SlotRewardsRecord] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    failed: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed

    def error_summary(self) -> str:
        if not self.failed:
            return ""
        lines = [f"{len(self.failed)} slot(s) failed:"]
        lines += [f"  slot {s}: {reason}" for s, reason in sorted(self.failed.items())]
        return "\n".join(lines)


class RateLimiter:
    """Spaces call starts at least ``1 / rate`` seconds apart, across threads."""

    def __init__(self, rate: float):
        self.interval = 1.0 / rate
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            time.sleep(start - now)


class _Malformed(Exception):
    pass


def _unwrap(body):
    """Accept a bare record, ``{"data": ...}``, or a list holding at most one record."""
    if isinstance(body, dict) and "data" in body and "slot" not in body:
        body = body["data"]
    if isinstance(body, list):
        if len(body) > 1:
            raise _Malformed(f"expected at most one record, got {len(body)}")
        body = body[0] if body else None
    return body


def _lighthouse_shape(body: dict) -> dict:
    """Map a Lighthouse block-rewards object onto the record schema (no attestation detail)."""
    meta = body.get("meta", {})
    att = body.get("attestation_rewards", {})
    att_total = int(att.get("total", 0)) if isinstance(att, dict) else int(att)
    sync = int(body.get("sync_committee_rewards", 0))
    return {"slot": int(meta["slot"]), "proposer_index": int(body.get("proposer_index", meta.get("proposer_index", 0))),
            "total_reward": int(body.get("total", att_total + sync)), "attestation_reward": att_total,
            "sync_reward": sync, "attestations": body.get("attestations", []),
            "sync_bits_set": int(body.get("sync_bits_set", 0))}


def fetch_rewards(config: BeaconSourceConfig, session: Optional[requests.Session] = None) -> FetchResult:
    """Fetch one reward record per slot, sequentially and rate limited.

    404 or an empty body marks a slot skipped. Connection errors, timeouts and
    5xx responses are retried with exponential backoff; a slot that exhausts
    its retries, or returns an unparseable body, lands in ``failed``.
    Labels are never read from the wire.
    """
    session = session or requests.Session()
    headers = {"Accept": "application/json"}
    if config.bearer_token:
        headers["Authorization"] = f"Bearer {config.bearer_token}"
    limiter = RateLimiter(config.max_requests_per_second)
    result = FetchResult()
    start, end = config.slot_range
    for slot in range(start, end + 1):
        url = config.base_url.rstrip("/") + config.path_template.format(slot=slot)
        attempt = 0
        while True:
            limiter.wait()
            try:
                resp = session.get(url, headers=headers, timeout=config.timeout)
                if resp.status_code >= 500:
                    raise requests.HTTPError(f"HTTP {resp.status_code}")
            except requests.RequestException as e:
                if attempt >= config.max_retries:
                    result.failed[slot] = f"gave up after {attempt + 1} attempt(s): {e}"
                    break
                time.sleep(config.backoff_base * 2 ** attempt)
                attempt += 1
                continue
            if resp.status_code == 404 or not resp.content.strip():
                result.skipped.append(slot)
            elif resp.status_code != 200:
                result.failed[slot] = f"HTTP {resp.status_code}"
            else:
                try:
                    body = _unwrap(resp.json())
                    if body is None:
                        result.skipped.append(slot)
                        break
                    if not isinstance(body, dict):
                        raise _Malformed("expected a JSON object")
                    if "meta" in body and "slot" not in body:
                        body = _lighthouse_shape(body)
                    body = {k: v for k, v in body.items() if k not in ("label", "mode")}
                    result.records.append(record_from_dict(body))
                except (ValueError, KeyError, TypeError, _Malformed) as e:
                    result.failed[slot] = f"malformed body: {e}"
            break
    log.info("fetched %d record(s), %d skipped, %d failed", len(result.records), len(result.skipped),
             len(result.failed))
    return result


# ---------------------------------------------------------------- models

def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"dtype": "<f8", "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict, what: str) -> np.ndarray:
    try:
        if d["dtype"] != "<f8":
            raise FormatError(f"{what}: unsupported dtype {d['dtype']!r}")
        raw = base64.b64decode(d["data"], validate=True)
        shape = tuple(int(s) for s in d["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{what}: malformed array ({e})") from None
    if int(np.prod(shape)) * 8 != len(raw):
        raise FormatError(f"{what}: shape {shape} does not match {len(raw) // 8} stored values")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def model_to_dict(model) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": model.kind,
           "feature_schema": FEATURE_SCHEMA, "class_names": list(model.class_names),
           "scaler": {"means": _encode(model.scaler.means), "stds": _encode(model.scaler.stds)}}
    if model.kind == "knn":
        doc["config"] = {"k": model.config.k, "metric": model.config.metric}
        doc["train_rows"] = int(len(model.train_labels))
        doc["train_vectors"] = _encode(model.train_vectors)
        doc["train_labels"] = [int(x) for x in model.train_labels]
    else:
        cfg = model.config
        doc["config"] = {"hidden_sizes": list(cfg.hidden_sizes), "activation": cfg.activation,
                         "learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size,
                         "max_epochs": cfg.max_epochs, "patience": cfg.patience, "seed": cfg.seed, "l2": cfg.l2}
        doc["weights"] = [_encode(w) for w in model.weights]
        doc["biases"] = [_encode(b) for b in model.biases]
        doc["train_history"] = model.train_history
        doc["training"] = model.meta
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"incompatible model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    if doc.get("feature_schema") != FEATURE_SCHEMA:
        raise FormatError(f"incompatible feature schema {doc.get('feature_schema')!r}")
    kind = doc.get("kind")
    try:
        names = tuple(doc["class_names"])
        scaler = Scaler(_decode(doc["scaler"]["means"], "scaler.means"), _decode(doc["scaler"]["stds"], "scaler.stds"))
        if scaler.dim != N_FEATURES:
            raise FormatError(f"scaler dimension {scaler.dim} != {N_FEATURES}")
        if kind == "knn":
            cfg = knn.KnnConfig(**doc["config"])
            vectors = _decode(doc["train_vectors"], "train_vectors")
            labels = np.array(doc["train_labels"], dtype=np.int64)
            if vectors.ndim != 2 or vectors.shape[1] != N_FEATURES or len(vectors) != len(labels) \
                    or doc.get("train_rows") != len(labels):
                raise FormatError("knn training rows/labels/train_rows disagree")
            if len(labels) and (labels.min() < 0 or labels.max() >= len(names)):
                raise FormatError("knn label out of range")
            return knn.KnnModel(cfg, scaler, vectors, labels, names)
        if kind == "mlp":
            c = dict(doc["config"])
            c["hidden_sizes"] = tuple(c["hidden_sizes"])
            cfg = mlp.MlpConfig(**c)
            weights = [_decode(w, f"weights[{i}]") for i, w in enumerate(doc["weights"])]
            biases = [_decode(b, f"biases[{i}]") for i, b in enumerate(doc["biases"])]
            return mlp.MlpModel(cfg, scaler, weights, biases, names,
                                list(doc.get("train_history", [])), dict(doc.get("training", {})))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"invalid {kind} model: {e}") from None
    raise FormatError(f"unknown classifier kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as e:
        raise FormatError(f"{path}: not valid JSON: {e}") from None
    return model_from_dict(doc)


def model_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
