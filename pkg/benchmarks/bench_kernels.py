"""Compiled vs numpy kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time of each kernel under both backends, and of
``round_kl`` and ``simulate_game`` end to end.
"""

import argparse
import timeit

import numpy as np

from secretprot import _pykernels, accountant, attack, kernels

try:
    from secretprot import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    shifts = np.arange(21, dtype=float)
    log_w = np.log(rng.dirichlet(np.ones(21)))
    x = rng.normal(5.0, 4.0, size=1_000_000)
    probs = rng.uniform(0, 0.05, size=2000)
    group = np.full(850, 0.016)
    game = attack.ReconstructionGame.uniform(100, [0.5, 0.5], 2.0, 2, 50_000)
    return {
        "mixture_log_ratio (1e6 pts, 21 shifts)": lambda impl: impl.mixture_log_ratio(x, shifts, log_w, 1.5),
        "mixture_log_density (1e6 pts, 21 shifts)": lambda impl: impl.mixture_log_density(x, shifts, log_w, 1.5),
        "poisson_binomial_pmf (k=2000)": lambda impl: impl.poisson_binomial_pmf(probs),
        "round_kl (group of 850)": lambda impl: _with_backend(impl, lambda: accountant.round_kl(
            accountant.RoundMechanism(accountant.poisson_binomial(group), 3.0))),
        "simulate_game (5e4 trials, k=100)": lambda impl: _with_backend(impl, lambda: attack.simulate_game(game, 0)),
    }


def _with_backend(impl, fn):
    saved = kernels._impl
    kernels._impl = impl
    try:
        return fn()
    finally:
        kernels._impl = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.insert(0, ("cython", _ckernels))
    else:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'case':<44}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for label, fn in _cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) for _, impl in backends]
        speed = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else ""
        print(f"{label:<44}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
