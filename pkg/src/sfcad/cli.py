"""Command line: generate, train, eval, experiment, predict.

Every config is a JSON file. On failure the command exits nonzero and
writes one JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .data import DEFAULT_RATIOS, load_csv, normalize, split
from .errors import SfcadError
from .evaluation import eval_stream, predict_series, prepare_for_checkpoint, run_experiment
from .inference import FEEDBACK_SOURCES
from .model import ModelConfig
from .synth import CHAINS, generate_to_dir, load_scenario, preset
from .training import TrainConfig, fit


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_generate(args) -> dict:
    if args.scenario in CHAINS:
        cfg = preset(args.scenario, seed=args.seed if args.seed is not None else 0,
                     **({"T": args.T} if args.T else {}))
    else:
        cfg = load_scenario(args.scenario)
        if args.seed is not None:
            cfg = type(cfg).from_dict({**cfg.to_dict(), "seed": args.seed})
    path = generate_to_dir(cfg, args.out)
    return {"csv": str(path), "name": cfg.name, "seed": cfg.seed, "T": cfg.T}


def cmd_train(args) -> dict:
    mc = ModelConfig.from_dict(_read_json(args.model_config))
    tc = TrainConfig.from_dict(_read_json(args.train_config))
    datasets = [normalize(split(load_csv(p), DEFAULT_RATIOS, mc.window_len)) for p in args.data]
    log_path = Path(args.out).with_suffix(".log.jsonl")
    res = fit(mc, datasets, tc, log_path=log_path)
    res.checkpoint.save(args.out)
    last = res.log[-1] if res.log else {}
    return {"checkpoint": str(args.out), "log": str(log_path), "epochs": len(res.log), "steps": res.steps,
            "best_val_f1": max((r["val_f1"] for r in res.log), default=None), "last_epoch": last}


def cmd_eval(args) -> dict:
    ckpt = Checkpoint.load(args.ckpt)
    ds = prepare_for_checkpoint(ckpt, load_csv(args.data))
    rep = eval_stream(ckpt, ds, args.split, args.feedback_source, hard=True if args.hard_feedback else None,
                      threshold=args.threshold)
    return rep.to_dict()


def cmd_experiment(args) -> dict:
    bundle = run_experiment(args.spec, args.out)
    return {"out": str(args.out), "reports": len(bundle["reports"]), "failures": len(bundle["failures"])}


def cmd_predict(args) -> dict | None:
    ckpt = Checkpoint.load(args.ckpt)
    ds = prepare_for_checkpoint(ckpt, load_csv(args.data))
    steps, probs = predict_series(ckpt, ds, hard=True if args.hard_feedback else None)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "y_hat"])
        for t, p in zip(steps, probs):
            w.writerow([int(ds.times[t]), repr(float(p))])
    finally:
        if args.out:
            fh.close()
    return {"predictions": str(args.out), "rows": len(probs)} if args.out else None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sfcad", description="Chain-level anomaly detection over VNF telemetry.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scenario as CSV + manifest")
    g.add_argument("--scenario", required=True, help=f"scenario JSON file or preset name ({', '.join(CHAINS)})")
    g.add_argument("--seed", type=int)
    g.add_argument("--T", type=int, help="series length (presets only)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model on one or more CSV datasets")
    t.add_argument("--model-config", required=True)
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--train-config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--hard-feedback", action="store_true", help="chain thresholded 0/1 instead of probabilities")
    e.add_argument("--feedback-source", default="own_prediction", choices=FEEDBACK_SOURCES)
    e.add_argument("--threshold", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a grid experiment from a JSON spec")
    x.add_argument("--spec", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    p = sub.add_parser("predict", help="per-step predictions over a whole CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hard-feedback", action="store_true")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (SfcadError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
