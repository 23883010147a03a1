"""Compare the compiled and numpy trajectory backends on one preset.

    python3 benchmarks/bench_backends.py --preset fig2b --duration-us 10 --repeat 3
"""

import argparse
import time

import numpy as np

from qbeats import params as P
from qbeats.trajectory import available_backends, run_trajectory


def timed(cfg, backend, duration, seed, repeat):
    best, res = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = run_trajectory(cfg, duration=duration, seed=seed, backend=backend, record_events=True)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="fig2b", choices=P.preset_names())
    ap.add_argument("--duration-us", type=float, default=10.0, help="simulated time after warm-up")
    ap.add_argument("--warmup-us", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3, help="best of this many runs")
    args = ap.parse_args(argv)

    cfg = P.load_preset(args.preset).replace(sim__warmup_us=args.warmup_us)
    dur = args.duration_us * 1e-6
    steps = int(round((dur + args.warmup_us * 1e-6) / cfg.sim.dt))
    backends = available_backends()
    print(f"preset {args.preset}, {args.duration_us:g} us + {args.warmup_us:g} us warm-up, "
          f"{steps} steps, backends {', '.join(backends)}")
    results = {}
    for b in backends:
        t, r = timed(cfg, b, dur, args.seed, args.repeat)
        results[b] = (t, r)
        print(f"  {b:7s} {t:9.3f} s  {steps / t / 1e3:9.1f} ksteps/s  {r.n_events} jumps")
    if len(results) == 2:
        (tc, c), (tn, n) = results["cython"], results["numpy"]
        same = np.array_equal(c.events, n.events)
        dtrace = float(np.max(np.abs(c.trace - n.trace)))
        drows = max(float(np.max(np.abs(pc.rows() - pn.rows()))) for pc, pn in zip(c.partials, n.partials))
        print(f"  speed-up {tn / tc:.1f}x; identical jump records: {same}; "
              f"max |trace diff| {dtrace:.1e}; max |accumulator diff| {drows:.1e}")


if __name__ == "__main__":
    main()
