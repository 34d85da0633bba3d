"""Compare the numba and numpy kernel families.

Two parts:

* micro: each kernel at a training-sized shape, numpy form against the\n  compiled loop form, in-process;
* step: one optimiser step per model kind, run in a subprocess per backend
  (the backend is fixed at import time through ``PIVOTCAP_NUMBA``).

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N] [--skip-step]``
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from pivotcap import kernels

STEP_SCRIPT = """
import json, time
from pivotcap import kernels
from pivotcap.models import Dims
from pivotcap.synth import SynthWorldConfig, corpus_vocabs, gen_corpora
from pivotcap.trainer import KINDS, Dataset, TrainPlan, build_models, pretrain
c = gen_corpora(SynthWorldConfig(), 0)
v = corpus_vocabs(c)
data = Dataset.encode(c, v)
models = build_models(v, Dims(64, 64, 64, 64), 0)
out = {"backend": kernels.BACKEND}
for kind, m in zip(("captioner", "translator", "autoencoder"), models):
    pretrain(kind, m, data, TrainPlan(KINDS[kind], epochs=1, batch_size=100, max_steps=2))
    t = time.perf_counter()
    pretrain(kind, m, data, TrainPlan(KINDS[kind], epochs=1, batch_size=100, max_steps=STEPS))
    out[kind] = (time.perf_counter() - t) / STEPS
print(json.dumps(out))
"""


def micro_cases(rng: np.random.Generator, B=100, H=64, T=16, A=64, V=50):
    gates = rng.normal(size=(B, 4 * H))
    c_prev = rng.normal(size=(B, H))
    h, c, acts, tc = kernels.lstm_pointwise_fwd_np(gates, c_prev)
    logits = rng.normal(size=(B * T, V))
    targets = rng.integers(V, size=B * T)
    weights = np.full(B * T, 1.0 / (B * T))
    lse = kernels.logsumexp_rows_np(logits)
    q, kp = rng.normal(size=(B, A)), rng.normal(size=(B, T, A))
    v, ann = rng.normal(size=A), rng.normal(size=(B, T, 2 * H))
    mask = np.ones((B, T), dtype=bool)
    ctx, w, t = kernels.attention_fwd_np(q, kp, v, ann, mask)
    state = rng.integers(1, 2**63, size=(4, 64)).astype(np.uint64)
    return {
        "xoshiro_fill": lambda k: k(state.copy(), 64),
        "lstm_pointwise_fwd": lambda k: k(gates, c_prev),
        "lstm_pointwise_bwd": lambda k: k(h, c, acts, tc, c_prev),
        "logsumexp_rows": lambda k: k(logits),
        "xe_fwd": lambda k: k(logits, targets, weights),
        "xe_bwd": lambda k: k(logits, targets, weights, lse, 1.0),
        "attention_fwd": lambda k: k(q, kp, v, ann, mask),
        "attention_bwd": lambda k: k(ctx, w, w, t, v, ann),
    }


def run_micro(repeat: int) -> list[tuple[str, float, float, str]]:
    """Time the numpy kernel and the compiled loop form of each kernel.

    The numba backend only adopts a loop where it wins; the last column says
    which implementation that backend actually runs.
    """
    cases = micro_cases(np.random.default_rng(0))
    rows = []
    for name, call in cases.items():
        fams = [kernels.NUMPY_KERNELS[name]]
        if kernels.HAS_NUMBA:
            loop = kernels.numba.njit(kernels._LOOP_SOURCES[name])
            call(loop)  # compile outside the timer
            fams.append(loop)
        times = [min(timeit.repeat(lambda f=f: call(f), number=20, repeat=repeat)) / 20 for f in fams]
        used = "-"
        if kernels.HAS_NUMBA:
            used = "numpy" if kernels.NUMBA_KERNELS[name] is kernels.NUMPY_KERNELS[name] else "loop"
        rows.append((name, times[0], times[1] if len(times) > 1 else float("nan"), used))
    return rows


def run_step(backend: str, steps: int) -> dict:
    env = dict(os.environ, PIVOTCAP_NUMBA="1" if backend == "numba" else "0")
    proc = subprocess.run([sys.executable, "-c", STEP_SCRIPT.replace("STEPS", str(steps))],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--skip-step", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel':<22}{'numpy us':>12}{'loop us':>12}{'speedup':>10}{'numba backend':>15}")
    for name, t_np, t_nb, used in run_micro(args.repeat):
        print(f"{name:<22}{t_np * 1e6:12.1f}{t_nb * 1e6:12.1f}{t_np / t_nb:10.2f}{used:>15}")

    if not args.skip_step:
        backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
        res = {b: run_step(b, args.steps) for b in backends}
        print(f"\n{'training step (B=100, d=64)':<30}" + "".join(f"{b + ' ms':>12}" for b in backends))
        for kind in ("captioner", "translator", "autoencoder"):
            print(f"{kind:<30}" + "".join(f"{res[b][kind] * 1e3:12.1f}" for b in backends))
    return 0


if __name__ == "__main__":
    sys.exit(main())
