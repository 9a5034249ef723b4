"""Bernoulli KL divergence and the prior/posterior <-> KL budget conversion.

If every pair of output distributions a mechanism can produce on inputs
differing in one secret is within KL divergence ``mu``, an adversary whose
prior puts mass at most ``p`` on each candidate reconstructs the secret with
probability at most the ``r >= p`` solving ``KL(Bern(r) || Bern(p)) = mu``.
All divergences are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .domain import SecretSpec

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class KLBudget:
    secret_id: str
    mu: float


def _check_prior(p):
    if not (0.0 < p < 1.0):
        raise ValueError(f"prior probability must lie in (0, 1), got {p}")


def bern_kl(r: float, p: float) -> float:
    """KL(Bern(r) || Bern(p)) in nats, with 0 * log 0 = 0.

    Written in terms of ``d = r - p`` with ``log1p`` so that the result keeps
    full relative precision both near ``r = p`` and for priors as small as
    1e-10.
    """
    _check_prior(p)
    if not (0.0 <= r <= 1.0):
        raise ValueError(f"r must lie in [0, 1], got {r}")
    d = r - p
    if d == 0.0:
        return 0.0
    q, s = 1.0 - p, 1.0 - r
    # log1p(d / p) loses everything once r << p, where the plain ratio is exact
    if r == 0.0:
        head = 0.0
    elif r < 0.5 * p:
        head = r * math.log(r / p)
    else:
        head = r * math.log1p(d / p)
    if s == 0.0:
        tail = 0.0
    elif s < 0.5 * q:
        tail = s * math.log(s / q)
    else:
        tail = s * math.log1p(-d / q)
    return max(head + tail, 0.0)


def budget_from_targets(spec: SecretSpec) -> KLBudget:
    """KL budget for a secret; a target of r = 1 asks for no protection and gets ``inf``."""
    if spec.posterior_r >= 1.0:
        return KLBudget(spec.id, math.inf)
    return KLBudget(spec.id, bern_kl(spec.posterior_r, spec.prior_p))


def invert_posterior(p: float, mu: float, tol: float = DEFAULT_TOL) -> float:
    """Bisection for the r in [p, 1] with bern_kl(r, p) = mu.

    Returns the upper end of the final bracket, so the result never
    understates the posterior. Saturates at 1 once ``mu >= bern_kl(1, p)``.
    """
    _check_prior(p)
    if mu < 0 or math.isnan(mu):
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if mu == 0.0:
        return p
    if mu >= bern_kl(1.0, p):
        return 1.0
    lo, hi = p, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if bern_kl(mid, p) < mu:
            lo = mid
        else:
            hi = mid
    return hi
