"""Backend selection for the numerical hot loops.

The compiled extension is used when it imports; otherwise the numpy
versions are used. Set ``SECRETPROT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SECRETPROT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def mixture_log_ratio(x, shifts, log_weights, sigma):
    """Log likelihood ratio of a shifted Gaussian mixture against N(0, sigma^2).

    Evaluates ``log sum_s w_s exp((s*x - s^2/2) / sigma^2)`` elementwise,
    which is ``log P(x) / Q(x)`` for ``P = sum_s w_s N(s, sigma^2)`` and
    ``Q = N(0, sigma^2)``. The weights must sum to 1 and zero-weight shifts
    should be dropped by the caller. Where the ratio is close to 1 the value
    is computed as ``log1p(sum_s w_s expm1(a_s))``, which keeps full relative
    precision for mixtures that barely differ from Q.

    Args:
      x: Array of evaluation points (any shape).
      shifts: 1-D array of mixture shifts.
      log_weights: 1-D array of log mixture weights, aligned with ``shifts``.
      sigma: Gaussian standard deviation.

    Returns:
      Array shaped like ``x``.
    """
    return _impl.mixture_log_ratio(x, shifts, log_weights, float(sigma))


def mixture_log_density(x, shifts, log_weights, sigma):
    """Unnormalised log density ``log sum_s w_s exp(-(x - s)^2 / (2 sigma^2))``.

    Add ``-log(sigma * sqrt(2 pi))`` for the normalised mixture log density.
    """
    return _impl.mixture_log_density(x, shifts, log_weights, float(sigma))


def poisson_binomial_pmf(probs):
    """Probability mass function of a sum of independent Bernoullis."""
    return _impl.poisson_binomial_pmf(probs)
