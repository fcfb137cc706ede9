"""Monitoring datasets: CSV ingestion, chronological splits, z-scoring.

A dataset is a dense array of frames ``(T, V, 23)``: one row of metrics per
VNF per time step, in chain order, plus one binary label per step.

CSV layout: one row per (time, instance) with the columns in
:data:`CSV_COLUMNS`. The chain order comes from a sidecar manifest
``<stem>.manifest.json``::

    {"name": "wsd-like", "vnf_chain": ["FW", "IDS", ...],
     "sla": {"response_time_ms": 250.0, "success_rate": 0.9995}}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ContractError, IntegrityError, ParseError

METRICS = (
    "cpu_idle", "cpu_interrupt", "cpu_nice", "cpu_softirq",
    "cpu_steal", "cpu_system", "cpu_user", "cpu_wait",
    "mem_free", "mem_buffered", "mem_cached", "mem_used",
    "disk_free", "reserved", "disk_used",
    "io_read", "io_write", "io_time",
    "network_rx_bytes", "network_tx_bytes", "network_rx_packets", "network_tx_packets",
    "network_latency",
)
CSV_COLUMNS = ("time", "instance", *METRICS, "label")
D_INPUT = len(METRICS)

DEFAULT_RATIOS = (0.65, 0.10, 0.25)
SPLITS = ("train", "val", "test")


class Record(NamedTuple):
    time: int
    vnf_index: int
    metrics: np.ndarray
    label: int


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def apply(self, frames: np.ndarray) -> np.ndarray:
        scale = np.where(self.constant, 1.0, self.std)
        out = (frames - self.mean) / scale
        out[..., self.constant] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["constant"], dtype=bool))


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    frames: np.ndarray
    labels: np.ndarray
    vnf_names: tuple
    times: np.ndarray
    split_sizes: tuple | None = None
    stats: NormStats | None = None
    manifest: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def V(self) -> int:
        return self.frames.shape[1]

    @property
    def d_input(self) -> int:
        return self.frames.shape[2]

    def bounds(self, which: str) -> tuple[int, int]:
        """Frame index range [start, stop) of a split."""
        if self.split_sizes is None:
            raise ContractError(f"dataset {self.name!r} has not been split")
        n_train, n_val, _ = self.split_sizes
        return {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, self.T)}[which]

    def records(self) -> Iterator[Record]:
        for t in range(self.T):
            for v in range(self.V):
                yield Record(int(self.times[t]), v, self.frames[t, v], int(self.labels[t]))


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: non-numeric value {cell!r}") from None
    if not math.isfinite(x):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return x


def load_csv(path, manifest: dict | None = None) -> Dataset:
    """Read a monitoring CSV into an unsplit, unnormalized dataset.

    Without a manifest (argument or sidecar file) the chain order is the order
    in which instances first appear in the file.
    """
    path = Path(path)
    if manifest is None and manifest_path(path).exists():
        manifest = json.loads(manifest_path(path).read_text())
    manifest = dict(manifest or {})

    steps: dict[int, dict[str, list]] = {}
    step_labels: dict[int, int] = {}
    seen_order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise ParseError(f"{path}: header does not match the expected {len(CSV_COLUMNS)}-column schema")
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"row {rownum}: expected {len(CSV_COLUMNS)} cells, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise ParseError(f"row {rownum}, column 'time': not an integer: {row[0]!r}") from None
            inst = row[1]
            metrics = [_parse_float(c, rownum, col) for c, col in zip(row[2:-1], METRICS)]
            try:
                label = int(row[-1])
            except ValueError:
                raise ParseError(f"row {rownum}, column 'label': not an integer: {row[-1]!r}") from None
            if label not in (0, 1):
                raise ParseError(f"row {rownum}, column 'label': must be 0 or 1, got {label}")
            step = steps.setdefault(t, {})
            if inst in step:
                raise IntegrityError(f"step {t}: duplicate row for instance {inst!r}")
            step[inst] = metrics
            if step_labels.setdefault(t, label) != label:
                raise IntegrityError(f"step {t}: inconsistent labels across VNF rows")
            if inst not in seen_order:
                seen_order.append(inst)

    if not steps:
        raise IntegrityError(f"{path}: no data rows")
    chain = list(manifest.get("vnf_chain") or seen_order)
    unknown = set(seen_order) - set(chain)
    if unknown:
        raise IntegrityError(f"instances {sorted(unknown)} are not in the declared chain {chain}")
    times = np.array(sorted(steps), dtype=np.int64)
    frames = np.empty((len(times), len(chain), D_INPUT))
    for i, t in enumerate(times):
        step = steps[int(t)]
        missing = [c for c in chain if c not in step]
        if missing:
            raise IntegrityError(f"step {int(t)}: missing rows for VNF(s) {missing} ({len(step)} of {len(chain)} present)")
        for v, inst in enumerate(chain):
            frames[i, v] = step[inst]
    labels = np.array([step_labels[int(t)] for t in times], dtype=np.int64)
    name = manifest.get("name") or path.stem
    manifest.setdefault("name", name)
    manifest["vnf_chain"] = chain
    return Dataset(name, frames, labels, tuple(chain), times, manifest=manifest)


def write_csv(dataset: Dataset, path, with_manifest: bool = True) -> Path:
    """Write ``dataset`` in the CSV schema; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in range(dataset.T):
            tt, lab = int(dataset.times[t]), int(dataset.labels[t])
            for v, inst in enumerate(dataset.vnf_names):
                w.writerow([tt, inst, *map(repr, dataset.frames[t, v].tolist()), lab])
    if with_manifest:
        man = dict(dataset.manifest)
        man["name"] = dataset.name
        man["vnf_chain"] = list(dataset.vnf_names)
        manifest_path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def split_sizes(T: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Frame counts per split: floor for train and val, remainder for test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ContractError(f"need three positive split ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must sum to 1, got {sum(ratios)}")
    # the epsilon keeps e.g. 0.1 * 1000 from flooring to 99
    n_train = int(math.floor(ratios[0] * T + 1e-9))
    n_val = int(math.floor(ratios[1] * T + 1e-9))
    return n_train, n_val, T - n_train - n_val


def split(dataset: Dataset, ratios=DEFAULT_RATIOS, window_len: int = 1) -> Dataset:
    """Chronological train/val/test split.

    Windows belong to the split holding their final frame, so a validation
    window may read trailing training frames as context.
    """
    sizes = split_sizes(dataset.T, ratios)
    for name, n in zip(SPLITS, sizes):
        if n < window_len:
            raise ContractError(f"{name} split has {n} frames, fewer than window_len={window_len}")
    return replace(dataset, split_sizes=sizes)


def compute_stats(frames: np.ndarray) -> NormStats:
    flat = frames.reshape(-1, frames.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return NormStats(mean, std, constant)


def normalize(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Z-score every feature with training-split statistics.

    ``stats`` overrides the computed ones, e.g. statistics restored from a
    checkpoint. Constant features become zero.
    """
    if stats is None:
        start, stop = dataset.bounds("train")
        stats = compute_stats(dataset.frames[start:stop])
    return replace(dataset, frames=stats.apply(dataset.frames), stats=stats)


def prepare(dataset: Dataset, window_len: int, ratios=DEFAULT_RATIOS, stats: NormStats | None = None) -> Dataset:
    return normalize(split(dataset, ratios, window_len), stats)
