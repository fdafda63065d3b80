"""Compare the compiled and pure-Python SSA kernels on one two-patch year.

    python benchmarks/bench_ssa.py [--repeats 5] [--seed 42]

Both backends consume the same uniform stream, so the trajectories must be
identical; the script checks that before reporting timings.
"""

import argparse
import time

import numpy as np

from spnsurrogate import petri
from spnsurrogate.covariates import compute_basis, synthetic_covariates
from spnsurrogate.model import CoefficientBounds, ModelConfig, build_two_patch_net, make_rate_schedule, \
    sample_coefficients


def run_once(net, schedule, seed):
    t0 = time.perf_counter()
    traj = petri.simulate_horizon(net, schedule, np.random.default_rng(seed), record_events=True)
    return time.perf_counter() - t0, traj


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)

    config = ModelConfig()
    basis = [compute_basis(s) for s in synthetic_covariates(args.seed)]
    net = build_two_patch_net(config.fixed, config.incidence)
    theta = sample_coefficients(CoefficientBounds(), np.random.default_rng(args.seed))
    schedule = make_rate_schedule(theta, basis, config, 365).for_net(net)

    backends = petri.available_backends()
    previous = petri.get_backend()
    results = {}
    try:
        for name in backends:
            petri.set_backend(name)
            times, traj = [], None
            for _ in range(args.repeats):
                dt, traj = run_once(net, schedule, args.seed)
                times.append(dt)
            results[name] = (min(times), float(np.median(times)), traj)
    finally:
        petri.set_backend(previous)

    events = len(next(iter(results.values()))[2].event_ids)
    print(f"two-patch year, {events} events, best/median of {args.repeats}")
    for name, (best, med, _) in results.items():
        print(f"  {name:9s} {best * 1e3:9.2f} ms  {med * 1e3:9.2f} ms  {events / best / 1e6:7.3f} Mevents/s")
    if len(results) == 2:
        a, b = (results[k][2] for k in ("compiled", "python"))
        same = np.array_equal(a.states, b.states) and np.array_equal(a.event_ids, b.event_ids)
        print(f"  identical trajectories: {same}; speedup {results['python'][0] / results['compiled'][0]:.1f}x")
    else:
        print("  compiled kernel not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
