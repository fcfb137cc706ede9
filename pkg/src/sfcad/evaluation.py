"""Stream evaluation, the flat MLP baseline and grid experiments."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .data import DEFAULT_RATIOS, Dataset, load_csv, normalize, split
from .errors import ConfigError, ContractError, DimensionError
from .metrics import EvalReport, confusion, f1_metrics, scores
from .model import PROB_EPS, ModelConfig
from .synth import generate, preset
from .training import (TrainConfig, bce_loss, fit, make_windows, optimize, split_predictions,
                       split_windows)

log = logging.getLogger(__name__)


# --- checkpoint evaluation -------------------------------------------------


def prepare_for_checkpoint(ckpt: Checkpoint, dataset: Dataset, ratios=DEFAULT_RATIOS) -> Dataset:
    """Split and normalize a raw dataset the way ``ckpt`` expects.

    Statistics stored in the checkpoint under the dataset's name win;
    otherwise the dataset's own training split supplies them.
    """
    if dataset.d_input != ckpt.config.d_input:
        raise DimensionError(f"dataset has d_input={dataset.d_input}, checkpoint expects {ckpt.config.d_input}")
    ds = dataset if dataset.split_sizes else split(dataset, ratios, ckpt.config.window_len)
    return ds if ds.stats is not None else normalize(ds, ckpt.stats_for(ds.name))


def model_id(config: ModelConfig) -> str:
    fb = "+fb" if config.feedback else ""
    return f"{config.encoder_kind}/{config.readout_kind}{fb}"


def eval_stream(ckpt: Checkpoint, dataset: Dataset, which: str = "test", source: str = "own_prediction",
                hard: bool | None = None, threshold: float = 0.5, cold_start: float = 0.0) -> EvalReport:
    """Evaluate a checkpoint on one split of a prepared dataset, in time order.

    Feedback models chain their own previous prediction (``source=
    "own_prediction"``, raw probability unless ``hard``) or read the
    ground-truth previous label (``"ground_truth"``).
    """
    cfg = ckpt.config
    if dataset.d_input != cfg.d_input:
        raise DimensionError(f"dataset has d_input={dataset.d_input}, checkpoint expects {cfg.d_input}")
    if hard is not None and hard != cfg.hard_feedback:
        cfg = replace(cfg, hard_feedback=hard)
    t0 = time.perf_counter()
    probs, labels = split_predictions(dataset, which, cfg, ckpt.params, source, cold_start=cold_start)
    mode = source if cfg.feedback else "n/a"
    if cfg.feedback and source == "own_prediction" and cfg.hard_feedback:
        mode = "own_prediction_hard"
    rep = f1_metrics(probs, labels, threshold, dataset.name, model_id(cfg), mode)
    rep.wall_ms = int(round(1000 * (time.perf_counter() - t0)))
    return rep


def predict_series(ckpt: Checkpoint, dataset: Dataset, hard: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-step probabilities over the whole series (steps l-1 .. T-1)."""
    cfg = ckpt.config if hard is None else replace(ckpt.config, hard_feedback=hard)
    whole = replace(dataset, split_sizes=(0, 0, dataset.T))
    probs, _ = split_predictions(whole, "test", cfg, ckpt.params, "own_prediction")
    return np.arange(cfg.window_len - 1, dataset.T), probs


# --- MLP baseline ----------------------------------------------------------


def mlp_init(input_width: int, hidden=(64, 64), seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    width = input_width
    for j, h in enumerate(list(hidden) + [1]):
        bound = np.sqrt(1.0 / width)
        p[f"W{j}"] = rng.uniform(-bound, bound, size=(width, h))
        p[f"b{j}"] = np.zeros(h)
        width = h
    return p


def mlp_forward(x: np.ndarray, params: dict) -> ad.Tensor:
    """x: (B, V * d_input) flattened frames -> (B,) probabilities."""
    n_layers = len([k for k in params if k.startswith("W")])
    h = ad.Tensor(x)
    for j in range(n_layers):
        y = ad.matmul(h, params[f"W{j}"])
        h = ad.add(y, ad.expand(params[f"b{j}"], y.shape))
        if j < n_layers - 1:
            h = ad.relu(h)
    prob = ad.sigmoid(ad.reshape(h, (h.shape[0],)))
    return ad.clip(prob, PROB_EPS, 1.0 - PROB_EPS)


def _flat(frames: np.ndarray) -> np.ndarray:
    return frames.reshape(frames.shape[0], -1)


def mlp_baseline(datasets, train_config: TrainConfig, hidden=(64, 64), seed: int | None = None,
                 which: str = "test") -> tuple[EvalReport, dict, list]:
    """Train the flat-frame MLP on one prepared dataset and evaluate it.

    The input is the current frame flattened to V * d_input values, so the
    parameter count depends on V and datasets with different chains cannot
    share a model.
    """
    datasets = [datasets] if isinstance(datasets, Dataset) else list(datasets)
    widths = {ds.V * ds.d_input for ds in datasets}
    if len(widths) != 1:
        raise ContractError(f"MLP baseline input widths differ across datasets: {sorted(widths)}")
    seed = train_config.seed if seed is None else seed
    params = mlp_init(widths.pop(), hidden, seed)
    train_sets = [split_windows(ds, "train", 1) for ds in datasets]

    def loss_fn(p, batch, epoch):
        return bce_loss(batch.y, _mlp_call(batch.x[:, -1], p))

    def predict(p, ds, split_name):
        start, stop = ds.bounds(split_name)
        probs = np.concatenate([_mlp_call(ds.frames[lo:min(lo + 4096, stop)], p).data
                                for lo in range(start, stop, 4096)])
        return probs, ds.labels[start:stop]

    def val_fn(p):
        total = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
        for ds in datasets:
            for k, n in confusion(*predict(p, ds, "val"), train_config.threshold).items():
                total[k] += n
        return total

    best, history, _ = optimize(params, train_sets, loss_fn, val_fn, train_config)
    t0 = time.perf_counter()
    probs, labels = zip(*(predict(best, ds, which) for ds in datasets))
    rep = f1_metrics(np.concatenate(probs), np.concatenate(labels), train_config.threshold,
                     "+".join(ds.name for ds in datasets), "mlp", "n/a")
    rep.wall_ms = int(round(1000 * (time.perf_counter() - t0)))
    return rep, best, history


def _mlp_call(frames, params):
    return mlp_forward(_flat(np.asarray(frames)), params)


# --- experiments -----------------------------------------------------------


def load_dataset_entry(entry: dict, base_dir: Path | None = None) -> Dataset:
    if "csv" in entry:
        path = Path(entry["csv"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_csv(path)
    if "preset" in entry:
        kw = {k: entry[k] for k in ("T", "seed", "sla") if k in entry}
        return generate(preset(entry["preset"], **kw))
    raise ConfigError(f"dataset entry needs 'csv' or 'preset': {entry}")


SUMMARY_FIELDS = ("setting", "encoder", "readout", "feedback", "seed", "dataset", "eval_mode",
                  "tp", "fp", "tn", "fn", "precision", "recall", "f1")


def _grid(spec: dict) -> list[dict]:
    grid = spec.get("grid", {})
    keys = ("encoder_kind", "readout_kind", "feedback")
    values = [grid.get(k, [spec.get("model", {}).get(k, ModelConfig.__dataclass_fields__[k].default)])
              for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def run_experiment(spec: dict | str | Path, out_dir) -> dict:
    """Train and evaluate every grid cell; write reports, summary, traces.

    Outputs in ``out_dir``: ``reports.json``, ``summary.csv``,
    ``summary.json``, ``table.txt``, ``baselines.csv`` (when the MLP is
    requested), ``logs/<cell>.jsonl`` and ``traces/<cell>__<dataset>.csv``
    with columns time, label, y_hat. A failing cell is recorded under
    ``failures`` and the rest continue.
    """
    base_dir = None
    if not isinstance(spec, dict):
        base_dir = Path(spec).parent
        spec = json.loads(Path(spec).read_text())
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)

    base_model = dict(spec.get("model", {}))
    train_cfg = TrainConfig.from_dict(spec.get("train", {}))
    ratios = tuple(spec.get("ratios", DEFAULT_RATIOS))
    seeds = spec.get("seeds", [train_cfg.seed])
    eval_modes = spec.get("eval_feedback", ["own_prediction"])
    settings = ["individual"] + (["joint"] if spec.get("joint") else [])
    want_traces = spec.get("traces", True)

    raw = [load_dataset_entry(e, base_dir) for e in spec["datasets"]]
    probe = ModelConfig(**{**base_model, "encoder_kind": "uni_rnn", "feedback": False})
    prepared = [normalize(split(ds, ratios, probe.window_len)) for ds in raw]

    reports, rows, failures = [], [], []
    for cell, seed, setting in itertools.product(_grid(spec), seeds, settings):
        cell_id = f"{setting}__{cell['encoder_kind']}__{cell['readout_kind']}__{'fb' if cell['feedback'] else 'nofb'}__s{seed}"
        groups = [[ds] for ds in prepared] if setting == "individual" else [prepared]
        for group in groups:
            gid = cell_id if setting == "joint" else f"{cell_id}__{group[0].name}"
            try:
                cfg = ModelConfig(**{**base_model, **cell})
                tc = replace(train_cfg, seed=seed)
                res = fit(cfg, group, tc, log_path=out / "logs" / f"{gid}.jsonl")
                for ds in group:
                    modes = eval_modes if cfg.feedback else ["n/a"]
                    for mode in modes:
                        rep = eval_stream(res.checkpoint, ds, "test", "own_prediction" if mode == "n/a" else mode)
                        reports.append({"cell": gid, "setting": setting, "seed": seed, **rep.to_dict()})
                        rows.append({"setting": setting, "encoder": cfg.encoder_kind, "readout": cfg.readout_kind,
                                     "feedback": cfg.feedback, "seed": seed, "dataset": ds.name,
                                     "eval_mode": rep.feedback_mode, "tp": rep.tp, "fp": rep.fp, "tn": rep.tn,
                                     "fn": rep.fn, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1})
                    if want_traces:
                        steps, probs = _split_trace(res.checkpoint, ds)
                        _write_trace(out / "traces" / f"{gid}__{ds.name}.csv", ds, steps, probs)
            except Exception as exc:  # noqa: BLE001 - one bad cell must not sink the grid
                log.exception("cell %s failed", gid)
                failures.append({"cell": gid, "error": type(exc).__name__, "message": str(exc),
                                 "traceback": traceback.format_exc()})

    baselines = []
    if spec.get("mlp_baseline"):
        hidden = tuple(spec["mlp_baseline"].get("hidden", (64, 64))) if isinstance(spec["mlp_baseline"], dict) else (64, 64)
        for ds, seed in itertools.product(prepared, seeds):
            rep, _, _ = mlp_baseline(ds, replace(train_cfg, seed=seed), hidden)
            baselines.append({"seed": seed, **rep.to_dict()})

    _write_outputs(out, reports, rows, failures, baselines)
    return {"reports": reports, "summary": rows, "failures": failures, "baselines": baselines}


def _split_trace(ckpt: Checkpoint, ds: Dataset):
    start, stop = ds.bounds("test")
    probs, _ = split_predictions(ds, "test", ckpt.config, ckpt.params, "own_prediction")
    return np.arange(stop - len(probs), stop), probs


def _write_trace(path: Path, ds: Dataset, steps: np.ndarray, probs: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "label", "y_hat"])
        for t, p in zip(steps, probs):
            w.writerow([int(ds.times[t]), int(ds.labels[t]), repr(float(p))])


def _write_outputs(out: Path, reports, rows, failures, baselines) -> None:
    (out / "reports.json").write_text(json.dumps({"reports": reports, "failures": failures}, indent=2) + "\n")
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if baselines:
        with open(out / "baselines.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "seed", "precision", "recall", "f1"])
            for b in baselines:
                w.writerow([b["dataset"], b["seed"], b["precision"], b["recall"], b["f1"]])
    (out / "table.txt").write_text(format_table(rows, baselines))


def format_table(rows: list[dict], baselines: list[dict] = ()) -> str:
    """Encoder x dataset table with ``max / mean / self_attention`` F1 per cell."""
    lines = []
    datasets = sorted({r["dataset"] for r in rows} | {b["dataset"] for b in baselines})
    for setting, fb in sorted({(r["setting"], r["feedback"]) for r in rows}):
        lines.append(f"[{setting}{', feedback' if fb else ''}]")
        lines.append("encoder".ljust(14) + "".join(d.ljust(28) for d in datasets))
        for enc in ("uni_rnn", "bi_rnn", "transformer"):
            cells = []
            for d in datasets:
                vals = []
                for ro in ("max", "mean", "self_attention"):
                    hit = [r["f1"] for r in rows if (r["setting"], r["feedback"], r["encoder"], r["readout"],
                                                     r["dataset"]) == (setting, fb, enc, ro, d)]
                    vals.append(f"{np.mean(hit):.2f}" if hit else "-")
                cells.append(" / ".join(vals).ljust(28))
            if any(c.strip() != "- / - / -" for c in cells):
                lines.append(enc.ljust(14) + "".join(cells))
        lines.append("")
    if baselines:
        lines.append("[mlp baseline]")
        for d in datasets:
            hit = [b["f1"] for b in baselines if b["dataset"] == d]
            if hit:
                lines.append(f"{d.ljust(14)}{np.mean(hit):.2f}")
    return "\n".join(lines) + "\n"
