"""Time the compiled and pure-Python likelihood kernels on a simulated
dataset shaped like the leukemia study (n=1043, r=24).

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from megh import MarginalLikelihood, ModelSpec, ParameterVector, SimConfig, simulate_times
from megh._backend import available, use_backend


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    truth = ParameterVector([1.0, 0.08, 0.22, 0.10], [0.96], [0.2, 1.5, 3.0], [1.0])
    cases = [
        ("megh1/pgw/normal", ModelSpec("megh1", "pgw", "normal"), [1.0]),
        ("megh1/pgw/tpn", ModelSpec("megh1", "pgw", "tpn"), [1.0, 0.3]),
        ("megh2/pgw/normal", ModelSpec("megh2", "pgw", "normal"), [1.0]),
        ("megh2/loglogistic/t", ModelSpec("megh2", "loglogistic", "t"), [0.8]),
    ]
    data = simulate_times(SimConfig(ModelSpec("megh1", "pgw", "normal"), truth, seed=3))
    backends = available()
    print(f"{'model':<22}" + "".join(f"{b:>14}" for b in backends) + (f"{'speed-up':>10}" if len(backends) > 1 else ""))
    for label, model, xi in cases:
        theta = [0.2, 1.5, 3.0] if model.baseline.value == "pgw" else [0.0, 1.0]
        eta = ParameterVector(truth.beta, truth.alpha, theta, xi)
        lm = MarginalLikelihood(model, data)
        times, values = [], []
        for b in backends:
            with use_backend(b):
                times.append(_time(lambda: lm(eta), args.repeat))
                values.append(lm(eta))
        row = f"{label:<22}" + "".join(f"{t * 1e3:>11.2f} ms" for t in times)
        if len(backends) > 1:
            row += f"{times[0] / times[1]:>9.1f}x"
            assert abs(values[0] - values[1]) < 1e-9 * max(1.0, abs(values[0]))
        print(row)


if __name__ == "__main__":
    main()
