"""KL accounting for Poisson-sampled DP-SGD on a group of examples.

For a secret whose examples are sampled with probabilities ``rho_1..rho_k``,
one round of DP-SGD is dominated by the pair

    P = N(S, sigma^2),  S ~ sum_i Bern(rho_i)      Q = N(0, sigma^2)

and T rounds by the T-fold products. KL is additive over products, so the
composed divergence is ``T * KL(P || Q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from . import kernels

# Mixture components whose cumulative tail mass is below this are dropped
# before quadrature; the effect on KL is far below the quadrature tolerance.
TAIL_MASS = 1e-30
WINDOW = 10.0  # half-width of each component's integration window, in sigmas
MAX_POINTS = 1 << 22  # quadrature gives up rather than refine past this many points
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class DiscretePMF:
    """Probability mass function over the integer shifts ``0..k``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True).ravel()
        if probs.size == 0:
            raise ValueError("pmf needs at least one entry")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("pmf entries must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf must sum to 1, sums to {probs.sum()!r}")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def second_moment(self) -> float:
        s = np.arange(self.probs.size, dtype=np.float64)
        return float(np.dot(s * s, self.probs))

    def is_zero(self) -> bool:
        """True for the point mass at shift 0."""
        return bool(self.probs[0] == 1.0)


@dataclass(frozen=True)
class RoundMechanism:
    shift_pmf: DiscretePMF
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass(frozen=True)
class PLDDiagnostic:
    """Discretised privacy-loss distribution and its blow-up mass.

    ``loss_values`` are the grid losses (rounded up) and ``probabilities``
    their masses under P. ``total_blowup_mass`` is ``sum e^v p``;
    ``inverse_mass`` is ``sum e^-v p``, which equals 1 for exact losses and
    drops below 1 under upward rounding.
    """

    grid_step: float
    total_blowup_mass: float
    loss_values: np.ndarray
    probabilities: np.ndarray
    inverse_mass: float

    @property
    def support(self):
        return list(zip(self.loss_values.tolist(), self.probabilities.tolist()))


def poisson_binomial(probs: Sequence[float]) -> DiscretePMF:
    """Law of the number of successes among independent Bernoulli trials."""
    arr = np.asarray(probs, dtype=np.float64).ravel()
    if np.any((arr < 0) | (arr > 1)) or not np.all(np.isfinite(arr)):
        raise ValueError("sampling probabilities must lie in [0, 1]")
    pmf = kernels.poisson_binomial_pmf(arr)
    # guard against -0.0 and drift in the last ulp
    pmf = np.clip(pmf, 0.0, None)
    return DiscretePMF(pmf / pmf.sum())


def mixture_components(pmf: DiscretePMF):
    """Shifts and log-weights of the mixture, with negligible tails removed."""
    p = pmf.probs
    nz = np.flatnonzero(p > 0)
    w = p[nz]
    left = np.cumsum(w)
    right = np.cumsum(w[::-1])[::-1]
    keep = (left >= TAIL_MASS) & (right >= TAIL_MASS)
    # keep the mode at least, so a sharply peaked pmf never empties out
    keep[np.argmax(w)] = True
    w = w[keep]
    return nz[keep].astype(np.float64), np.log(w / w.sum())


def kl_bounds(pmf: DiscretePMF, sigma: float) -> tuple[float, float]:
    """Closed-form bracket on the one-round KL.

    Joint convexity gives ``KL <= E[S^2] / (2 sigma^2)``; the linear test
    function ``x -> x E[S] / sigma^2`` in the Donsker-Varadhan formula gives
    ``KL >= E[S]^2 / (2 sigma^2)``.
    """
    two_var = 2.0 * sigma * sigma
    return pmf.mean() ** 2 / two_var, pmf.second_moment() / two_var


def _windows(shifts, sigma):
    lo = shifts - WINDOW * sigma
    hi = shifts + WINDOW * sigma
    merged = []
    a, b = lo[0], hi[0]
    for l, h in zip(lo[1:], hi[1:]):
        if l <= b:
            b = max(b, h)
        else:
            merged.append((a, b))
            a, b = l, h
    merged.append((a, b))
    return merged


def _kl_integrand(x, shifts, log_w, sigma):
    log_ratio = kernels.mixture_log_ratio(x, shifts, log_w, sigma)
    log_p = kernels.mixture_log_density(x, shifts, log_w, sigma) - math.log(sigma) - LOG_SQRT_2PI
    return np.exp(log_p) * log_ratio


def _simpson(f, intervals, panel_width, rtol, max_doublings=24):
    """Composite Simpson on each interval, doubling until the total settles."""
    a = np.array([iv[0] for iv in intervals])
    b = np.array([iv[1] for iv in intervals])
    n = np.maximum(16, 2 * np.ceil((b - a) / (2 * panel_width))).astype(np.int64)
    h = (b - a) / n

    fe = f(np.concatenate([a, b]))
    ends = fe[: a.size] + fe[a.size:]
    abs_ends = np.abs(fe[: a.size]) + np.abs(fe[a.size:])
    def interior(step, count, offset):
        pts = [a[i] + h[i] * (offset + step * np.arange(count[i])) for i in range(a.size)]
        vals = f(np.concatenate(pts))
        bounds = np.cumsum([0] + [len(p) for p in pts])
        return (np.array([vals[bounds[i]:bounds[i + 1]].sum() for i in range(a.size)]),
                np.array([np.abs(vals[bounds[i]:bounds[i + 1]]).sum() for i in range(a.size)]))

    odd, abs_odd = interior(2, n // 2, 1)
    even, abs_even = interior(2, n // 2 - 1, 2)
    total = float(np.sum(h / 3 * (ends + 4 * odd + 2 * even)))
    for _ in range(max_doublings):
        if 2 * n.sum() > MAX_POINTS:
            break
        h = h / 2
        n = n * 2
        even, abs_even = even + odd, abs_even + abs_odd
        odd, abs_odd = interior(2, n // 2, 1)
        new_total = float(np.sum(h / 3 * (ends + 4 * odd + 2 * even)))
        scale = float(np.sum(h / 3 * (abs_ends + 4 * abs_odd + 2 * abs_even)))
        if abs(new_total - total) <= rtol * abs(new_total) + 64 * np.finfo(float).eps * scale:
            return new_total
        total = new_total
    raise QuadratureError("Simpson refinement did not converge")


def round_kl(mech: RoundMechanism, rtol: float = 1e-8) -> float:
    """KL(P || Q) for one round of the shifted-mixture mechanism, in nats."""
    pmf = mech.shift_pmf
    if pmf.is_zero():
        return 0.0
    shifts, log_w = mixture_components(pmf)
    sigma = mech.sigma
    value = _simpson(
        lambda x: _kl_integrand(x, shifts, log_w, sigma),
        _windows(shifts, sigma),
        panel_width=sigma / 4,
        rtol=rtol,
    )
    return max(value, 0.0)


def composed_kl(mech: RoundMechanism, rounds: int) -> float:
    """KL after ``rounds`` independent rounds."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    return rounds * round_kl(mech)


def _interval_masses(edges, shifts, log_w, sigma):
    """P-mass of each interval between consecutive edges, plus the two tails."""
    masses = np.zeros(edges.size - 1)
    left_tail = right_tail = 0.0
    for s, lw in zip(shifts, log_w):
        w = math.exp(lw)
        z = (edges - s) / sigma
        lower = ndtr(z)
        upper = ndtr(-z)
        # difference the CDF below the component mean, the survival function above it
        below = z[:-1] <= 0
        masses += w * np.where(below, lower[1:] - lower[:-1], upper[:-1] - upper[1:])
        left_tail += w * lower[0]
        right_tail += w * upper[-1]
    return np.clip(masses, 0.0, None), left_tail, right_tail


def pld_blowup_diagnostic(mech: RoundMechanism, grid_step: float, max_points: int = 2_000_000) -> PLDDiagnostic:
    """Discretise the privacy loss ``log P(x)/Q(x)``, ``x ~ P``, rounding losses up.

    The loss is nondecreasing in ``x``, so the loss over each ``x`` cell is
    rounded up to the grid value at or above its right edge. The cell count is
    chosen so the loss moves by about ``grid_step`` per cell, capped at
    ``max_points``; past the cap the rounding, and the reported mass, get
    coarser. The right tail beyond ``WINDOW`` sigmas (mass below 1e-23) is
    folded into the top cell.

    ``total_blowup_mass`` is ``sum_i e^{v_i} p_i``; with losses drawn under P
    this is ``E_P[P/Q] = 1 + chi^2(P || Q)`` up to the rounding, so it stays
    near 1 only when P and Q are close.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    pmf = mech.shift_pmf
    if pmf.is_zero():
        one = np.array([1.0])
        return PLDDiagnostic(grid_step, 1.0, np.array([0.0]), one, 1.0)
    shifts, log_w = mixture_components(pmf)
    sigma = mech.sigma
    x_lo = shifts[0] - WINDOW * sigma
    x_hi = shifts[-1] + WINDOW * sigma
    slope = shifts[-1] / sigma**2
    cells = int(min(max(math.ceil((x_hi - x_lo) * slope / grid_step), 1000), max_points))
    edges = np.linspace(x_lo, x_hi, cells + 1)

    loss_right = kernels.mixture_log_ratio(edges[1:], shifts, log_w, sigma)
    masses, left_tail, right_tail = _interval_masses(edges, shifts, log_w, sigma)
    masses[0] += left_tail
    masses[-1] += right_tail

    bucket = np.ceil(loss_right / grid_step).astype(np.int64)
    keys, inverse = np.unique(bucket, return_inverse=True)
    probs = np.bincount(inverse, weights=masses, minlength=keys.size)
    keep = probs > 0
    values = keys[keep] * grid_step
    probs = probs[keep]

    log_probs = np.log(probs)
    log_total = float(logsumexp(values + log_probs))
    total = math.exp(log_total) if log_total < 709.0 else math.inf
    inverse_mass = float(np.exp(logsumexp(-values + log_probs)))
    return PLDDiagnostic(grid_step, total, values, probs, inverse_mass)
