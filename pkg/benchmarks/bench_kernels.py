"""Compare the compiled and numpy risk-set kernels.

Times ``risk_set_sums`` on random data of several sizes, then a full
semiparametric fit of one Case 1 replicate with each backend swapped in.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from wlfrailty import _kernels_py, kernels
from wlfrailty.em import FitConfig, fit_semiparametric
from wlfrailty.model import Dataset
from wlfrailty.simulation import ScenarioConfig, gen_dataset

try:
    from wlfrailty import _ckernels
except ImportError:
    _ckernels = None


def _random(n, p, rng):
    t = np.ceil(rng.exponential(size=n) * 50) / 50  # some ties
    e = rng.uniform(size=n) < 0.8
    return Dataset(t, e, rng.normal(size=(n, p)), rng.integers(0, n // 2 + 1, n))


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernel(repeat):
    rng = np.random.default_rng(0)
    print(f"{'n':>7}{'p':>4}{'numpy ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for n, p in ((500, 5), (5000, 5), (50000, 5), (5000, 20)):
        data = _random(n, p, rng)
        idx = data.risk_index()
        w = np.exp(rng.normal(size=n))
        args = (w, idx.X_sorted, idx.starts, idx.d, True)
        t_py = _best(lambda: _kernels_py.risk_set_sums(*args), repeat)
        if _ckernels is None:
            print(f"{n:>7}{p:>4}{t_py * 1e3:>12.3f}{'n/a':>12}{'':>10}")
            continue
        t_c = _best(lambda: _ckernels.risk_set_sums(*args), repeat)
        print(f"{n:>7}{p:>4}{t_py * 1e3:>12.3f}{t_c * 1e3:>12.3f}{t_py / t_c:>10.2f}")


def bench_fit(repeat):
    data, _ = gen_dataset(ScenarioConfig(theta=0.5, base_seed=1), 0)
    config = FitConfig(compute_se=False)
    backends = {"numpy": _kernels_py.risk_set_sums}
    if _ckernels is not None:
        backends["cython"] = _ckernels.risk_set_sums
    saved = kernels.risk_set_sums
    try:
        for name, fn in backends.items():
            kernels.risk_set_sums = fn
            t = min(timeit.repeat(lambda: fit_semiparametric(data, config), number=1, repeat=repeat))
            print(f"semiparametric fit, Case 1 replicate, {name:<7}{t:8.3f} s")
    finally:
        kernels.risk_set_sums = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    bench_kernel(args.repeat)
    bench_fit(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
