"""Compiled kernels versus the pure-numpy fallback.

Each mode runs in a fresh interpreter (the switch is read at import time):

    python benchmarks/bench_kernels.py [--repeat N]

First-call time includes numba compilation; steady time is the best of the
remaining repeats.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, time
import numpy as np
from pulseshaper.model import builtin_repressilator8, builtin_toxin_antitoxin, Pulse
from pulseshaper.koopman import prepare, EigenfunctionEvaluator
from pulseshaper.switching import eval_r

repeat = int(__import__("sys").argv[1])
out = {}
for build in (builtin_repressilator8, builtin_toxin_antitoxin):
    system = prepare(build())
    ev = EigenfunctionEvaluator.for_target(system)
    pulses = [Pulse(mu, tau) for mu in (6.0, 12.0, 20.0) for tau in (8.0, 14.0, 20.0)]
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        vals = [eval_r(system, p, evaluator=ev).r for p in pulses]
        times.append(time.perf_counter() - t0)
    out[system.model.name] = {
        "first": times[0],
        "steady": min(times[1:]) if len(times) > 1 else times[0],
        "checksum": sum(abs(v) for v in vals if v is not None),
    }
print(json.dumps(out))
"""


def run(mode: str, repeat: int) -> dict:
    env = dict(os.environ, PULSESHAPER_JIT=mode)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=4)
    args = ap.parse_args()
    jit, plain = run("1", args.repeat), run("0", args.repeat)
    print(f"{'model':<18}{'jit first':>11}{'jit steady':>12}{'numpy steady':>14}{'speedup':>9}")
    for name in jit:
        a, b = jit[name], plain[name]
        print(f"{name:<18}{a['first']:>10.3f}s{a['steady']:>11.4f}s{b['steady']:>13.4f}s"
              f"{b['steady'] / a['steady']:>8.1f}x")
        if abs(a["checksum"] - b["checksum"]) > 1e-9 * max(1.0, abs(a["checksum"])):
            print(f"  warning: results differ ({a['checksum']!r} vs {b['checksum']!r})")


if __name__ == "__main__":
    main()
