"""Feedback-model ablation: training mode x evaluation feedback source.

Trains one encoder/readout pair with feedback under each training mode and
scores it with ground-truth previous labels, chained soft predictions and
chained hard (0/1) predictions.
"""

import argparse
import json
from dataclasses import asdict, dataclass, replace

from sfcad.data import prepare
from sfcad.evaluation import eval_stream
from sfcad.model import ModelConfig
from sfcad.synth import preset, simulate
from sfcad.training import FEEDBACK_MODES, TrainConfig, fit


@dataclass
class Args:
    scenario: str = "wsd-like"
    T: int = 20_000
    seed: int = 0
    encoder: str = "transformer"
    readout: str = "max"
    d_z: int = 16
    window_len: int = 5
    epochs: int = 15
    lr: float = 3e-3
    lr_decay: float = 0.85


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    for name, default in vars(Args()).items():
        ap.add_argument(f"--{name}", type=type(default), default=default)
    args = Args(**vars(ap.parse_args()))
    ds = prepare(simulate(preset(args.scenario, T=args.T, seed=args.seed)).dataset, args.window_len)
    cfg = ModelConfig(d_z=args.d_z, window_len=args.window_len, encoder_kind=args.encoder,
                      readout_kind=args.readout, feedback=True)
    base = TrainConfig(learning_rate=args.lr, lr_decay=args.lr_decay, max_epochs=args.epochs,
                       patience=args.epochs, seed=args.seed)
    for mode in FEEDBACK_MODES:
        res = fit(cfg, [ds], replace(base, feedback_training_mode=mode))
        row = {"train_mode": mode, "epochs": len(res.log)}
        for label, kw in (("ground_truth", {"source": "ground_truth"}), ("chained_soft", {}),
                          ("chained_hard", {"hard": True})):
            row[label] = eval_stream(res.checkpoint, ds, **kw).f1
        print(json.dumps({**asdict(args), **row}))


if __name__ == "__main__":
    main()
