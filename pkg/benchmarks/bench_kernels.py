"""Compare the compiled and numpy kernel backends.

Times every kernel the compiled module defines on shapes taken from the
default desk configuration, checks the two backends agree, and then times a
full combined update under each backend (each in a fresh interpreter, since
the backend is fixed at import).

    python3 benchmarks/bench_kernels.py [--repeat 200] [--no-update]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from birdrl import kernels

UPDATE_SNIPPET = """
import time, numpy as np
from birdrl import kernels
from birdrl.bird import combined_update
from birdrl.harness.config import RunConfig
from birdrl.harness.loop import Trainer
cfg = RunConfig(batch_size=16, batch_length=24, learn_steps=1, prefill_episodes=2)
t = Trainer(cfg); t.prefill()
rng = np.random.default_rng(0)
batch = t.buffer.sample(cfg.batch_size, cfg.batch_length, rng)
state, _ = combined_update(t.nets, t.state, batch, cfg, rng)
start = time.perf_counter()
for _ in range(5):
    state, _ = combined_update(t.nets, state, batch, cfg, rng)
print(kernels.BACKEND, (time.perf_counter() - start) / 5)
"""


def kernel_cases(rng, n=384, d=64, s=16, horizon=15):
    pos = lambda *shape: np.abs(rng.standard_normal(shape)) + 0.1
    gate = lambda: 1.0 / (1.0 + np.exp(-rng.standard_normal((n, d))))
    return {
        "gru_backward": (rng.standard_normal((n, d)), rng.standard_normal((n, d)), gate(), gate(),
                         np.tanh(rng.standard_normal((n, d))), rng.standard_normal((n, 3 * d))),
        "gauss_logpdf_backward": (rng.standard_normal(n), rng.standard_normal((n, s)),
                                  rng.standard_normal((n, s)), pos(n, s)),
        "gauss_kl_backward": (rng.standard_normal(n), rng.standard_normal((n, s)), pos(n, s),
                              rng.standard_normal((n, s)), pos(n, s)),
        "lambda_return": (rng.random((n, horizon)), rng.standard_normal((n, horizon + 1)), 0.99, 0.95),
        "lambda_return_backward": (rng.standard_normal((n, horizon)), 0.99, 0.95),
        "pendulum_integrate": (3.0, 0.1, 0.5, 2, 0.05, 10.0, 0.0),
    }


def bench(repeat):
    found = kernels.backends()
    if "compiled" not in found:
        print("compiled backend not built; only the numpy backend is available")
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in found) + f"{'speedup':>10s}{'max |diff|':>12s}")
    for name, args in cases.items():
        times, outs = {}, {}
        for backend, mod in found.items():
            fn = getattr(mod, name)
            times[backend] = min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat
            outs[backend] = fn(*args)
        row = f"{name:24s}" + "".join(f"{times[b] * 1e6:10.1f}us" for b in found)
        if len(found) == 2:
            a, b = outs["python"], outs["compiled"]
            a, b = (a, b) if isinstance(a, tuple) else ((a,), (b,))
            diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))
            row += f"{times['python'] / times['compiled']:9.1f}x{diff:12.1e}"
        print(row)


def bench_update():
    print("\ncombined update (B=16, L=24, H=15):")
    for pure in ("0", "1"):
        env = dict(os.environ, BIRDRL_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", UPDATE_SNIPPET], env=env, capture_output=True, text=True,
                             check=True).stdout.split()
        print(f"  {out[0]:10s} {float(out[1]) * 1e3:8.1f} ms/update")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--no-update", action="store_true", help="skip the end-to-end update timing")
    args = ap.parse_args()
    bench(args.repeat)
    if not args.no_update:
        bench_update()


if __name__ == "__main__":
    main()
