"""Compare the compiled and numpy kernel backends on a 1024x2048 frame pair.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own interpreter (the backend is picked at import
time), so the full-frame timing reflects what the CLI would see.
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from panodepth import kernels
from panodepth.core import DepthMap, EvalFrame, PanopticMap, PdcqConfig
from panodepth.pdcq import evaluate_frames
from panodepth.synth import DEFAULT_CLASSES, random_instance

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
h, w = 1024, 2048
p, pd, g, gd = random_instance(rng, 64, 64)
up = lambda a: np.kron(a, np.ones((h // 64, w // 64), dtype=a.dtype))
gdep = up(gd.depth) * rng.uniform(0.95, 1.05, size=(h, w))
pdep = gdep * rng.uniform(0.6, 1.4, size=(h, w))
gc, gi, pc, pi = up(g.class_ids), up(g.instance_ids), up(p.class_ids), up(p.instance_ids)
lut = DEFAULT_CLASSES.kind_lut()
lams = np.array([0.1, 0.25, 0.5])

def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1000

gidx, gcodes, _ = kernels.label_segments(gc, gi, lut)
pidx, pcodes, _ = kernels.label_segments(pc, pi, lut)
levels, _ = kernels.depth_pass(pdep, gdep, lams, 0.5, 80.0, True)
frame = EvalFrame("b", 0, 1, PanopticMap(pc, pi), DepthMap(pdep), PanopticMap(gc, gi), DepthMap(gdep))
cfg = PdcqConfig()
out = {
    "backend": kernels.BACKEND,
    "depth_pass_ms": best(lambda: kernels.depth_pass(pdep, gdep, lams, 0.5, 80.0, True)),
    "label_segments_ms": best(lambda: kernels.label_segments(gc, gi, lut)),
    "pair_counts_ms": best(lambda: kernels.pair_counts(np.asarray(gidx), np.asarray(pidx), len(gcodes),
                                                       len(pcodes), np.asarray(levels), 4)),
    "frame_ms": best(lambda: evaluate_frames([frame], DEFAULT_CLASSES, cfg)),
}
print(json.dumps(out))
"""


def run(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    if pure:
        env["PANODEPTH_PURE_PYTHON"] = "1"
    else:
        env.pop("PANODEPTH_PURE_PYTHON", None)
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = [run(False, args.repeat), run(True, args.repeat)]
    keys = ["depth_pass_ms", "label_segments_ms", "pair_counts_ms", "frame_ms"]
    print(f"{'kernel':<20}" + "".join(f"{r['backend']:>12}" for r in rows) + f"{'speedup':>10}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k[:-3]:<20}{a:>11.1f}ms{b:>10.1f}ms{b / a:>9.1f}x")
    if rows[0]["backend"] == rows[1]["backend"]:
        print("note: compiled extension not built; both runs used the numpy fallback")


if __name__ == "__main__":
    main()
