"""Windows, loss, Adam, batch scheduling and the training loop."""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .data import Dataset
from .errors import ConfigError, ContractError, DimensionError
from .inference import FEEDBACK_SOURCES, predict_stream, predict_windows, rollout_feedback
from .metrics import confusion, scores
from .model import ModelConfig, MonitoringWindow, forward_batch, init_params

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("teacher_forcing", "own_prediction", "scheduled")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 4
    seed: int = 0
    feedback_training_mode: str = "teacher_forcing"
    scheduled_k: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    cold_start_label: float = 0.0
    eval_feedback: str = "own_prediction"
    max_steps: int | None = None
    rollout_segment: int = 100
    lr_decay: float = 1.0  # learning rate multiplier applied after every epoch

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1 or self.rollout_segment < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if self.feedback_training_mode not in FEEDBACK_MODES:
            raise ConfigError(f"feedback_training_mode must be one of {FEEDBACK_MODES}")
        if self.eval_feedback not in FEEDBACK_SOURCES:
            raise ConfigError(f"eval_feedback must be one of {FEEDBACK_SOURCES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# --- loss ------------------------------------------------------------------


def bce_loss(y, y_hat) -> ad.Tensor:
    """Mean binary cross-entropy of probabilities ``y_hat`` against labels ``y``."""
    y_hat = ad.as_tensor(y_hat)
    p = y_hat.data
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ContractError("bce_loss: predictions must lie in [0, 1]")
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), y_hat.shape)
    ll = ad.add(ad.mul(y, ad.log(y_hat)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, y_hat))))
    return ad.neg(ad.mean(ll))


# --- windows ---------------------------------------------------------------


@dataclass
class Windows:
    """Sliding windows over one dataset, addressed by final-frame index."""

    frames: np.ndarray
    ends: np.ndarray
    labels: np.ndarray
    prev_labels: np.ndarray
    window_len: int
    name: str = ""
    all_labels: np.ndarray | None = None

    def __len__(self):
        return len(self.ends)

    @property
    def V(self) -> int:
        return self.frames.shape[1]

    def x(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        rows = self.ends[idx][:, None] - self.window_len + 1 + np.arange(self.window_len)
        return self.frames[rows]

    def window(self, j: int) -> MonitoringWindow:
        return MonitoringWindow(self.x([j])[0], int(self.labels[j]), self.prev_labels[j].copy())


def make_windows(frames: np.ndarray, labels: np.ndarray, window_len: int, start: int = 0,
                 stop: int | None = None, cold_start: float = 0.0, name: str = "") -> Windows:
    """Windows ending at every frame in [start, stop) that has a full history.

    Over a whole series of T frames that gives T - l + 1 windows. Each window
    also carries the labels y_{i-1} paired with its frames; before the first
    frame the ``cold_start`` value stands in.
    """
    T = len(frames)
    stop = T if stop is None else stop
    if T < window_len:
        raise ContractError(f"series of {T} frames is shorter than window_len={window_len}")
    ends = np.arange(max(start, window_len - 1), stop)
    prev_idx = ends[:, None] - window_len + np.arange(window_len)
    lab = np.asarray(labels, dtype=np.float64)
    prev = np.where(prev_idx >= 0, lab[np.maximum(prev_idx, 0)], cold_start)
    return Windows(frames, ends, np.asarray(labels)[ends], prev, window_len, name, np.asarray(labels))


def split_windows(dataset: Dataset, which: str, window_len: int, cold_start: float = 0.0) -> Windows:
    start, stop = dataset.bounds(which)
    return make_windows(dataset.frames, dataset.labels, window_len, start, stop, cold_start, dataset.name)


# --- optimizer -------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params: dict, grads: dict, state: OptimizerState, lr: float,
                beta1=0.9, beta2=0.999, eps=1e-8) -> tuple[dict, OptimizerState]:
    step = state.step + 1
    m, v, new = {}, {}, {}
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for k, p in params.items():
        g = grads[k]
        m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new[k] = p - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
    return new, OptimizerState(m, v, step)


# --- batches ---------------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    prev: np.ndarray
    source: int = 0

    @classmethod
    def from_windows(cls, windows: Sequence[MonitoringWindow]) -> "Batch":
        vs = {w.frames.shape[1] for w in windows}
        if len(vs) != 1:
            raise ContractError(f"batch mixes chain lengths {sorted(vs)}")
        x = np.stack([w.frames for w in windows])
        y = np.array([w.label for w in windows], dtype=np.float64)
        prev = np.stack([np.zeros(x.shape[1]) if w.prev_labels is None else w.prev_labels for w in windows])
        return cls(x, y, prev)


def _stable_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def joint_schedule(window_sets: Sequence[Windows], batch_size: int, seed: int,
                   epoch: int = 0) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(set index, window indices)`` batches for one epoch.

    Batches never mix window sets. Each set is shuffled with a generator
    keyed by (seed, epoch, set name), so reordering the list leaves the batch
    contents unchanged, and the sets are interleaved evenly in proportion to
    their batch counts.
    """
    widths = {w.frames.shape[2] for w in window_sets}
    if len(widths) > 1:
        raise ContractError(f"datasets disagree on d_input: {sorted(widths)}")
    keyed = []
    for s, w in enumerate(window_sets):
        rng = np.random.default_rng([seed, epoch, _stable_key(w.name)])
        perm = rng.permutation(len(w))
        chunks = [perm[i:i + batch_size] for i in range(0, len(w), batch_size)]
        n = len(chunks)
        for j, chunk in enumerate(chunks):
            keyed.append(((j + 0.5) / n, w.name, j, s, chunk))
    keyed.sort(key=lambda item: item[:3])
    for _, _, _, s, chunk in keyed:
        yield s, chunk


def _batch(windows: Windows, idx: np.ndarray, source: int) -> Batch:
    return Batch(windows.x(idx), windows.labels[idx].astype(np.float64), windows.prev_labels[idx], source)


# --- steps -----------------------------------------------------------------


def batch_loss(params: dict, batch: Batch, config: ModelConfig) -> ad.Tensor:
    """Mean BCE of a batch; feedback models read ``batch.prev`` (labels or own predictions)."""
    y_hat = forward_batch(batch.x, config, params, batch.prev if config.feedback else None)
    return bce_loss(batch.y, y_hat)


def with_own_feedback(windows: Windows, config: ModelConfig, params: dict, segment: int = 100,
                      cold_start: float = 0.0) -> Windows:
    """Copy of ``windows`` whose feedback values are the model's own chained predictions."""
    prev = rollout_feedback(windows.frames, windows.all_labels, config, params, windows.ends, segment, cold_start)
    return replace(windows, prev_labels=prev)


def train_step(params: dict, state: OptimizerState, batch: Batch, model_config: ModelConfig,
               train_config: TrainConfig, learning_rate: float | None = None) -> tuple[dict, OptimizerState, float]:
    """One Adam update on the mean batch BCE; returns (params, state, loss)."""
    if batch.x.ndim != 4:
        raise ContractError("a batch holds windows of one chain length, shape (B, l, V, d)")
    if batch.x.shape[-1] != model_config.d_input:
        raise DimensionError(f"batch width {batch.x.shape[-1]} != d_input {model_config.d_input}")
    with ad.GradientTape() as tape:
        loss = batch_loss(tape.watch_all(params), batch, model_config)
    grads = ad.backward(tape, loss)
    lr = train_config.learning_rate if learning_rate is None else learning_rate
    new, state = adam_update(params, grads, state, lr, train_config.beta1, train_config.beta2, train_config.adam_eps)
    return new, state, float(loss.data)


def epoch_mode(train_config: TrainConfig, epoch: int) -> str:
    mode = train_config.feedback_training_mode
    if mode == "scheduled":
        return "teacher_forcing" if epoch < train_config.scheduled_k else "own_prediction"
    return mode


# --- evaluation used during training --------------------------------------


def split_predictions(dataset: Dataset, which: str, config: ModelConfig, params: dict,
                      source: str = "own_prediction", hard: bool = False,
                      cold_start: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, labels) for every step of a split that ends a full window."""
    start, stop = dataset.bounds(which)
    if config.feedback and source == "own_prediction":
        first = max(start, config.window_len - 1)
        probs = predict_stream(dataset.frames, config, params, start, stop, hard, cold_start)
        return probs, dataset.labels[first:stop]
    w = split_windows(dataset, which, config.window_len, cold_start)
    return predict_windows(w, config, params), w.labels


def evaluate_counts(datasets: Sequence[Dataset], which: str, config: ModelConfig, params: dict,
                    train_config: TrainConfig) -> dict:
    total = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for ds in datasets:
        probs, labels = split_predictions(ds, which, config, params, train_config.eval_feedback,
                                          cold_start=train_config.cold_start_label)
        for k, n in confusion(probs, labels, train_config.threshold).items():
            total[k] += n
    return total


# --- fit -------------------------------------------------------------------


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)
    steps: int = 0


def optimize(params: dict, train_sets: Sequence[Windows], loss_fn, val_fn, train_config: TrainConfig,
             log_path=None, on_epoch=None, epoch_sets=None) -> tuple[dict, list, int]:
    """Shared epoch loop: Adam over ``joint_schedule`` batches, early stop on val F1.

    ``loss_fn(params, batch, epoch)`` builds the loss on a tape;
    ``val_fn(params)`` returns confusion counts. ``epoch_sets(params, epoch)``,
    if given, replaces the training windows at the start of each epoch.
    Returns the best parameters, the per-epoch log and the number of steps
    taken.
    """
    state = OptimizerState.zeros_like(params)
    best_f1, best_params, bad = -1.0, params, 0
    history: list[dict] = []
    steps = 0
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(train_config.max_epochs):
            t0 = time.perf_counter()
            losses = []
            lr = train_config.learning_rate * train_config.lr_decay ** epoch
            if epoch_sets is not None:
                train_sets = epoch_sets(params, epoch)
            for s, idx in joint_schedule(train_sets, train_config.batch_size, train_config.seed, epoch):
                batch = _batch(train_sets[s], idx, s)
                with ad.GradientTape() as tape:
                    loss = loss_fn(tape.watch_all(params), batch, epoch)
                grads = ad.backward(tape, loss)
                params, state = adam_update(params, grads, state, lr,
                                            train_config.beta1, train_config.beta2, train_config.adam_eps)
                losses.append(float(loss.data))
                steps += 1
                if train_config.max_steps and steps >= train_config.max_steps:
                    break
            sc = scores(val_fn(params))
            rec = {
                "epoch": epoch + 1,
                "train_loss": float(np.mean(losses)),
                "val_precision": sc["precision"],
                "val_recall": sc["recall"],
                "val_f1": sc["f1"],
                "wall_ms": int(round(1000 * (time.perf_counter() - t0))),
            }
            history.append(rec)
            log.info("epoch %d loss %.5f val F1 %.2f", rec["epoch"], rec["train_loss"], rec["val_f1"])
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(rec)
            if sc["f1"] > best_f1:
                best_f1, best_params, bad = sc["f1"], params, 0
            else:
                bad += 1
                if bad >= train_config.patience:
                    break
            if train_config.max_steps and steps >= train_config.max_steps:
                break
    finally:
        if fh:
            fh.close()
    return best_params, history, steps


def fit(model_config: ModelConfig, datasets: Sequence[Dataset], train_config: TrainConfig,
        log_path=None, init_seed: int | None = None) -> FitResult:
    """Train on the train splits of ``datasets`` (already split and normalized).

    Several datasets train one model jointly; their validation counts are
    pooled for early stopping. The returned checkpoint holds the parameters
    from the epoch with the best validation F1. ``wall_ms`` is the only
    non-deterministic field of the log.
    """
    if not datasets:
        raise ContractError("fit needs at least one dataset")
    for ds in datasets:
        if ds.d_input != model_config.d_input:
            raise DimensionError(f"dataset {ds.name!r} has d_input={ds.d_input}, model expects {model_config.d_input}")
        if ds.split_sizes is None or ds.stats is None:
            raise ContractError(f"dataset {ds.name!r} must be split and normalized before training")
        if any(n == 0 for n in ds.split_sizes[:2]):
            raise ContractError(f"dataset {ds.name!r} has an empty train or validation split")
    l = model_config.window_len
    train_sets = [split_windows(ds, "train", l, train_config.cold_start_label) for ds in datasets]
    if sum(len(w) for w in train_sets) == 0:
        raise ContractError("no training windows")
    seed = train_config.seed if init_seed is None else init_seed
    params = init_params(model_config, seed)

    def loss_fn(p, batch, epoch):
        return batch_loss(p, batch, model_config)

    def val_fn(p):
        return evaluate_counts(datasets, "val", model_config, p, train_config)

    # Own-prediction epochs roll the current model out over the training
    # split and keep every rollout; each window then reads the feedback of
    # one source drawn from {ground truth, rollouts so far}. Drawing from the
    # whole history damps the epoch-to-epoch swings a latest-rollout-only
    # scheme shows.
    history_fb = [[w.prev_labels] for w in train_sets]

    def epoch_sets(p, epoch):
        if not model_config.feedback or epoch_mode(train_config, epoch) != "own_prediction":
            return train_sets
        rng = np.random.default_rng([train_config.seed, epoch, 31337])
        out = []
        for k, w in enumerate(train_sets):
            history_fb[k].append(with_own_feedback(w, model_config, p, train_config.rollout_segment,
                                                   train_config.cold_start_label).prev_labels)
            pick = rng.integers(len(history_fb[k]), size=len(w))
            stacked = np.stack(history_fb[k])
            out.append(replace(w, prev_labels=stacked[pick, np.arange(len(w))]))
        return out

    best, history, steps = optimize(params, train_sets, loss_fn, val_fn, train_config, log_path,
                                    epoch_sets=epoch_sets)
    ckpt = Checkpoint(
        config=model_config,
        params=best,
        normalization={ds.name: ds.stats.to_dict() for ds in datasets},
        seeds={"init": seed, "train": train_config.seed,
               "data": {ds.name: ds.manifest.get("seed") for ds in datasets}},
        train_config=train_config.to_dict(),
    )
    return FitResult(ckpt, history, steps)


def write_log(history: list, path) -> None:
    Path(path).write_text("".join(json.dumps(rec) + "\n" for rec in history))
