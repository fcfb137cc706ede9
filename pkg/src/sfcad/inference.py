"""Batch and streaming prediction over a dataset's windows."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, classify, forward_batch, frame_readouts

FEEDBACK_SOURCES = ("own_prediction", "ground_truth")


def predict_windows(windows, config: ModelConfig, params, batch_size: int = 1024) -> np.ndarray:
    """Independent evaluation of every window; feedback models get ground-truth y_{i-1}."""
    out = np.empty(len(windows))
    for lo in range(0, len(windows), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(windows)))
        fb = windows.prev_labels[idx] if config.feedback else None
        out[idx] = forward_batch(windows.x(idx), config, params, fb).data
    return out


def predict_stream(frames: np.ndarray, config: ModelConfig, params, start: int, stop: int,
                   hard: bool = False, cold_start: float = 0.0) -> np.ndarray:
    """Chain a feedback model's own predictions through steps [start, stop).

    Step ``t`` is classified from frames t-l+1..t; frame i carries the
    prediction made at step i-1. Steps before ``start`` have no prediction
    and contribute ``cold_start``. Each frame's readout is computed once.
    """
    l = config.window_len
    first = max(start, l - 1)
    readouts: dict[int, np.ndarray] = {}
    preds: dict[int, float] = {}
    out = np.empty(stop - first)
    for t in range(first, stop):
        for i in range(t - l + 1, t + 1):
            if i not in readouts:
                fb = preds.get(i - 1, cold_start)
                if hard:
                    fb = float(fb >= 0.5)
                readouts[i] = frame_readouts(frames[i:i + 1], config, params, np.array([fb])).data[0]
        readouts.pop(t - l, None)
        z = np.stack([readouts[i] for i in range(t - l + 1, t + 1)])[None]
        y = float(classify(ad.Tensor(z), config, params).data[0])
        preds[t] = y
        preds.pop(t - l - 1, None)
        out[t - first] = y
    return out


def rollout_feedback(frames: np.ndarray, labels: np.ndarray, config: ModelConfig, params, ends: np.ndarray,
                     segment: int = 100, cold_start: float = 0.0) -> np.ndarray:
    """Feedback values a chained stream would feed each window, for training.

    The window ends are cut into contiguous segments of ``segment`` steps that
    are rolled out side by side. Each segment starts from ground-truth labels
    and then chains the model's own full-window predictions, exactly as
    :func:`predict_stream` does. Returns ``(len(ends), l)`` values: entry
    ``[j, i]`` is paired with frame ``ends[j] - l + 1 + i``. Nothing is
    recorded on a tape.
    """
    l = config.window_len
    ends = np.asarray(ends)
    n = len(ends)
    lab = np.asarray(labels, dtype=np.float64)

    def truth(step):
        return np.where(step >= 0, lab[np.maximum(step, 0)], cold_start)

    if n == 0:
        return np.zeros((0, l))
    seg_of = np.arange(n) // segment
    first = np.arange(0, n, segment)
    n_seg = len(first)
    starts = ends[first]
    pred = np.full(n, np.nan)

    # readouts of the frames preceding each segment's first step, fed ground truth
    ring = np.zeros((n_seg, l, config.d_z))
    if l > 1:
        idx = starts[:, None] - l + 1 + np.arange(l - 1)
        fb = truth(idx - 1)
        if config.hard_feedback:
            fb = (fb >= 0.5).astype(np.float64)
        z = frame_readouts(frames[idx.ravel()], config, params, fb.ravel()).data
        ring[:, 1:] = z.reshape(n_seg, l - 1, config.d_z)

    prev = truth(starts - 1)
    for k in range(segment):
        j = first + k
        live = np.nonzero((j < n) & (seg_of[np.minimum(j, n - 1)] == np.arange(n_seg)))[0]
        if len(live) == 0:
            break
        t = ends[j[live]]
        fb = prev[live]
        if config.hard_feedback:
            fb = (fb >= 0.5).astype(np.float64)
        ring[live] = np.roll(ring[live], -1, axis=1)
        ring[live, -1] = frame_readouts(frames[t], config, params, fb).data
        y = classify(ad.Tensor(ring[live]), config, params).data
        pred[j[live]] = y
        prev[live] = y

    # feedback paired with frame f is the prediction for step f - 1 when that
    # step lies inside the window's own segment, ground truth otherwise
    steps = ends[:, None] - l + np.arange(l)
    seg_start = starts[seg_of][:, None]
    pos = np.searchsorted(ends, steps)
    own = (steps >= seg_start) & (pos < n)
    out = truth(steps)
    out[own] = pred[np.minimum(pos, n - 1)[own]]
    return out
