"""Compiled kernels against the numpy fallback on the three hot loops.

    python benchmarks/bench_backends.py [--repeat 3]

Both backends produce identical draws, so each row also reports the largest
difference between their outputs.
"""

import argparse
import time

import numpy as np

from opinionnet import backend, dynamics as dyn, graph as gr, tree_analytics as ta
from opinionnet.signals import MediaLaw, SignalModel

PM1 = MediaLaw.twopoint([-1, 1], [0.5, 0.5])
MODEL = SignalModel.from_mapping(MediaLaw.betashift(1, 8), [("q>0", "betashift(8,1)")])


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases():
    g = gr.assign_equal_weights(gr.generate_er_directed(2000, 0.015, gr.MarkLaw.simple(PM1), 1, 0.5, 0.3))
    spec = gr.GWTreeSpec(gr.OffspringLaw.poisson_positive(3.0), gr.MarkLaw.simple(PM1), 0.5)
    yield ("graph sweep, ER(2000, 0.015), 60 steps",
           lambda b: dyn.run(g, MODEL, 7, 60, init="pm1", backend=b).final.values)
    yield ("tree series, Poisson(3)+, 2000 samples, depth 5, horizon 30",
           lambda b: ta.series_samples(spec, MODEL, 0.3, 30, 7, 2000, max_depth=5, backend=b))
    yield ("tree dynamics, fixed(2), depth 14, 20 trees",
           lambda b: ta.tree_root_trajectories(gr.GWTreeSpec(gr.OffspringLaw.fixed(2), gr.MarkLaw.simple(PM1), 0.5),
                                               MODEL, 0.25, 15, 7, 20, backend=b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = backend.available()
    if "compiled" not in names:
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"{'case':<62}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}{'max diff':>11}")
    for label, fn in cases():
        times, outs = [], []
        for name in names:
            t, out = best_of(lambda: fn(name), args.repeat)
            times.append(t)
            outs.append(np.asarray(out))
        speed = times[-1] / times[0] if len(times) > 1 else 1.0
        diff = float(np.max(np.abs(outs[0] - outs[-1])))
        print(f"{label:<62}" + "".join(f"{t:>11.3f}s" for t in times) + f"{speed:>9.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
