"""Calibration: budgets -> LP weights -> sampling probabilities -> noise.

``calibrate`` turns per-secret (prior, posterior) targets into a sampling
plan and a global noise multiplier such that every secret's KL budget holds
at that noise, and reports the posterior each secret actually gets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import accountant as acct
from . import lp as lpmod
from .divergence import DEFAULT_TOL, budget_from_targets, invert_posterior
from .domain import RunConfig, SecretMap, filter_secretless

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-4
SIGMA_START = 1e-3
# margin used when a closed-form KL bound decides a comparison without quadrature
_BOUND_MARGIN = 1e-6


class SamplingError(ValueError):
    """Sampling probabilities would exceed 1 for the requested batch size."""


@dataclass(frozen=True)
class SamplingPlan:
    weights: lpmod.WeightVector
    probs: np.ndarray
    batch_target: float
    rounds: int
    sigma: float
    clip_norm: float = 1.0
    example_ids: tuple = ()

    def to_dict(self) -> dict:
        return {
            "example_ids": list(self.example_ids),
            "weights": self.weights.w.tolist(),
            "objective": self.weights.objective,
            "probs": self.probs.tolist(),
            "batch_target": self.batch_target,
            "rounds": self.rounds,
            "clip_norm": self.clip_norm,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingPlan":
        w = np.asarray(data["weights"], dtype=np.float64)
        return cls(
            weights=lpmod.WeightVector(w, float(data.get("objective", w.sum()))),
            probs=np.asarray(data["probs"], dtype=np.float64),
            batch_target=float(data["batch_target"]),
            rounds=int(data["rounds"]),
            sigma=float(data["sigma"]),
            clip_norm=float(data.get("clip_norm", 1.0)),
            example_ids=tuple(data.get("example_ids", ())),
        )


@dataclass(frozen=True)
class SecretRecord:
    secret_id: str
    prior: float
    target: float
    mu: float
    sigma: float
    achieved_kl: float
    achieved_posterior: float
    group_size: int
    vacuous: bool = False

    @property
    def slack(self) -> float:
        return self.target - self.achieved_posterior


@dataclass(frozen=True)
class CalibrationReport:
    records: tuple
    sigma: float
    fraction_retained: float
    posterior_tol: float = DEFAULT_TOL

    def violations(self) -> list:
        """Secrets whose achieved posterior exceeds the target."""
        return [r for r in self.records if r.achieved_posterior > r.target + self.posterior_tol]

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "fraction_retained": self.fraction_retained,
            "posterior_tol": self.posterior_tol,
            "secrets": [
                {
                    "id": r.secret_id,
                    "prior": r.prior,
                    "target": r.target,
                    "mu": r.mu,
                    "sigma": r.sigma,
                    "achieved_kl": r.achieved_kl,
                    "achieved_posterior": r.achieved_posterior,
                    "group_size": r.group_size,
                    "vacuous": r.vacuous,
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationReport":
        records = tuple(
            SecretRecord(
                secret_id=e["id"], prior=e["prior"], target=e["target"], mu=e["mu"],
                sigma=e["sigma"], achieved_kl=e["achieved_kl"],
                achieved_posterior=e["achieved_posterior"], group_size=e["group_size"],
                vacuous=e.get("vacuous", False),
            )
            for e in data["secrets"]
        )
        return cls(records, float(data["sigma"]), float(data["fraction_retained"]),
                   float(data.get("posterior_tol", DEFAULT_TOL)))


def sampling_probs(weights: lpmod.WeightVector, batch_target: float) -> np.ndarray:
    """Per-example probabilities ``B * w_i / sum(w)``; they sum to ``B``."""
    w = np.asarray(weights.w, dtype=np.float64)
    total = float(w.sum())
    if not total > 0:
        raise SamplingError("all weights are zero; nothing to sample")
    if w.max() * batch_target > total * (1 + 1e-12):
        raise SamplingError(
            f"batch target {batch_target} too large: largest weight {w.max():.6g} exceeds "
            f"total weight / B = {total / batch_target:.6g}; reduce the batch target"
        )
    return np.minimum(batch_target * w / total, 1.0)


def _composed(pmf, sigma, rounds):
    return acct.composed_kl(acct.RoundMechanism(pmf, sigma), rounds)


def _satisfies(pmf, sigma, rounds, mu):
    """Whether ``rounds`` rounds at ``sigma`` stay within ``mu``.

    The closed-form bracket settles clear-cut cases without quadrature.
    """
    lower, upper = acct.kl_bounds(pmf, sigma)
    if rounds * lower > mu * (1 + _BOUND_MARGIN):
        return False
    if rounds * upper < mu * (1 - _BOUND_MARGIN):
        return True
    return _composed(pmf, sigma, rounds) <= mu


def calibrate_secret_sigma(group_probs: Sequence[float], rounds: int, mu: float,
                           rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Smallest noise multiplier (to ``rel_tol``) keeping the group within ``mu``.

    The bracket is found by doubling from ``SIGMA_START`` and then bisected
    until the two ends are within a factor ``1 - rel_tol``. The upper end is
    returned, so its composed KL never exceeds ``mu``. Returns 0.0 for a
    vacuous group (empty, or every probability 0) and for ``mu = inf``.
    """
    if not mu > 0:
        raise ValueError("KL budget must be positive")
    pmf = acct.poisson_binomial(group_probs)
    if pmf.is_zero() or math.isinf(mu):
        return 0.0
    hi = SIGMA_START
    while not _satisfies(pmf, hi, rounds, mu):
        hi *= 2.0
    lo = hi / 2.0
    if hi == SIGMA_START:
        # already feasible at the start value; walk down to a violating one
        while _satisfies(pmf, lo, rounds, mu):
            hi, lo = lo, lo / 2.0
    while lo < hi * (1.0 - rel_tol):
        mid = 0.5 * (lo + hi)
        if _satisfies(pmf, mid, rounds, mu):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class _GroupCache:
    """Deduplicates groups with identical multisets of probabilities."""

    rounds: int
    rel_tol: float
    sigmas: dict = field(default_factory=dict)

    def sigma(self, probs: np.ndarray, mu: float) -> float:
        key = (tuple(np.sort(probs).tolist()), mu)
        if key not in self.sigmas:
            self.sigmas[key] = calibrate_secret_sigma(probs, self.rounds, mu, self.rel_tol)
        return self.sigmas[key]


def working_map(smap: SecretMap, config: RunConfig) -> SecretMap:
    """The map calibration and training operate on."""
    return filter_secretless(smap) if config.drop_secretless else smap


def calibrate(smap: SecretMap, config: RunConfig, rel_tol: float = DEFAULT_REL_TOL,
              weights: lpmod.WeightVector | None = None):
    """Run budgets, LP, sampling probabilities and noise calibration.

    Returns ``(plan, report)``. The plan is aligned with
    ``working_map(smap, config)``. Passing ``weights`` skips the LP, e.g. to
    evaluate the all-ones baseline.
    """
    smap = working_map(smap, config)
    budgets = {s.id: budget_from_targets(s) for s in smap.secrets}
    if weights is None:
        lp = lpmod.build_lp(smap, budgets, config.lp_constant, config.cap_scale)
        weights = lpmod.solve(lp)
    probs = sampling_probs(weights, config.batch_target)

    cache = _GroupCache(config.rounds, rel_tol)
    per_secret = {}
    for s in smap.secrets:
        group = probs[list(smap.incidence[s.id])]
        mu = budgets[s.id].mu
        per_secret[s.id] = (group, mu, cache.sigma(group, mu))
    sigma = max((v[2] for v in per_secret.values()), default=0.0)

    records = []
    for s in smap.secrets:
        group, mu, sigma_j = per_secret[s.id]
        pmf = acct.poisson_binomial(group)
        vacuous = pmf.is_zero()
        kl = 0.0 if vacuous or sigma == 0.0 else _composed(pmf, sigma, config.rounds)
        records.append(SecretRecord(
            secret_id=s.id, prior=s.prior_p, target=s.posterior_r, mu=mu, sigma=float(sigma_j),
            achieved_kl=float(kl), achieved_posterior=invert_posterior(s.prior_p, kl),
            group_size=len(group), vacuous=bool(vacuous),
        ))

    n = smap.n
    fraction = float(weights.w.sum() / n) if n else 0.0
    plan = SamplingPlan(weights, probs, float(config.batch_target), config.rounds, sigma,
                        float(config.clip_norm), tuple(ex.id for ex in smap.examples))
    report = CalibrationReport(tuple(records), sigma, fraction)
    logger.info("calibrated sigma=%.6g retaining %.4f of %d examples", sigma, fraction, n)
    return plan, report
