"""Per-configuration gradient check of the full model + BCE loss.

For every encoder x readout x feedback x V case this prints the plain max
relative error (|a - fd| / max(|a|, |fd|, 1e-8)), how many coordinates
exceed 1e-4, and the same error with the float64 rounding floor of the
central difference added to the denominator.
"""

import argparse
import itertools
import json

import numpy as np

from sfcad import autodiff as ad
from sfcad.model import ENCODERS, READOUTS, ModelConfig, forward_batch, init_params
from sfcad.training import bce_loss


def coordinate_errors(loss, params, eps):
    _, grads = ad.value_and_grad(loss, params)
    f0 = abs(loss(params).item())
    floor = 64 * np.finfo(float).eps * f0 / eps
    plain, aware = [], []
    for name, value in params.items():
        flat = value.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss(params).item()
            flat[i] = old - eps
            down = loss(params).item()
            flat[i] = old
            fd = (up - down) / (2 * eps)
            diff = abs(g[i] - fd)
            scale = max(abs(g[i]), abs(fd))
            plain.append(diff / max(scale, 1e-8))
            aware.append(diff / (scale + floor))
    return np.array(plain), np.array(aware)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eps", type=float, default=1e-5)
    args = ap.parse_args()
    for (enc, ro), fb, V in itertools.product(itertools.product(ENCODERS, READOUTS), (False, True), (4, 5)):
        cfg = ModelConfig(d_z=8, window_len=3, encoder_kind=enc, readout_kind=ro, feedback=fb)
        params = init_params(cfg, args.seed)
        rng = np.random.default_rng(args.seed)
        x = rng.normal(size=(4, 3, V, cfg.d_input))
        y = np.array([0.0, 1.0, 0.0, 1.0])
        prev = rng.random((4, 3))
        plain, aware = coordinate_errors(lambda p: bce_loss(y, forward_batch(x, cfg, p, prev if fb else None)),
                                         params, args.eps)
        print(json.dumps({"encoder": enc, "readout": ro, "feedback": fb, "V": V, "coords": int(plain.size),
                          "max_rel_err": float(plain.max()), "coords_over_1e-4": int((plain > 1e-4).sum()),
                          "max_rel_err_noise_aware": float(aware.max())}), flush=True)


if __name__ == "__main__":
    main()
