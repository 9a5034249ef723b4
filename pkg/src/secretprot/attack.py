"""Monte-Carlo reconstruction game against the group mechanism.

Candidate ``i`` is embedded as the ``i``-th unit vector of ``R^k``. Each round
releases ``s_t e_i + N(0, sigma^2 I_k)`` with ``s_t`` drawn from the group's
Poisson-binomial shift law. The adversary knows everything but ``i`` and
guesses the posterior mode. Since the candidate directions are orthogonal,
the likelihood of candidate ``j`` relative to pure noise only depends on the
``j``-th coordinates, so the log-posterior is

    log prior_j + sum_t log E_S[exp((S y_tj - S^2 / 2) / sigma^2)]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import accountant as acct
from . import kernels
from .divergence import invert_posterior

CHUNK = 4096


@dataclass(frozen=True)
class ReconstructionGame:
    prior: np.ndarray
    group_probs: tuple
    sigma: float
    rounds: int
    trials: int

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=np.float64).ravel()
        if prior.size < 2:
            raise ValueError("need at least two candidates")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a probability vector")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.rounds < 1 or self.trials < 1:
            raise ValueError("rounds and trials must be at least 1")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "group_probs", tuple(float(x) for x in self.group_probs))

    @classmethod
    def uniform(cls, k: int, group_probs, sigma, rounds, trials) -> "ReconstructionGame":
        return cls(np.full(k, 1.0 / k), group_probs, sigma, rounds, trials)

    @property
    def k(self) -> int:
        return self.prior.size

    @property
    def p(self) -> float:
        """Largest prior mass, the adversary's success without observations."""
        return float(self.prior.max())


@dataclass(frozen=True)
class GameResult:
    empirical_success: float
    stderr: float
    certified_bound: float
    baseline_success: float
    trials: int

    def to_dict(self) -> dict:
        return {
            "empirical_success": self.empirical_success,
            "stderr": self.stderr,
            "certified_bound": self.certified_bound,
            "baseline_success": self.baseline_success,
            "trials": self.trials,
        }


def certified_bound(p: float, group_probs: Sequence[float], sigma: float, T: int) -> float:
    """Largest posterior compatible with the composed KL of the group mechanism."""
    if math.isinf(sigma):
        return p
    pmf = acct.poisson_binomial(group_probs)
    kl = acct.composed_kl(acct.RoundMechanism(pmf, sigma), T)
    return invert_posterior(p, kl)


def _play_chunk(game, pmf, shifts, log_w, size, seed_seq):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    k, T, sigma = game.k, game.rounds, game.sigma
    truth = rng.choice(k, size=size, p=game.prior)
    s = rng.choice(pmf.probs.size, size=(size, T), p=pmf.probs).astype(np.float64)
    y = rng.normal(0.0, sigma, size=(size, T, k))
    y[np.arange(size)[:, None], np.arange(T)[None, :], truth[:, None]] += s

    ratios = kernels.mixture_log_ratio(y.ravel(), shifts, log_w, sigma).reshape(size, T, k)
    scores = np.log(game.prior)[None, :] + ratios.sum(axis=1)
    bayes = np.argmax(scores, axis=1)
    # plug-in rule: nearest candidate mean E[S] e_j to the averaged observation
    naive = np.argmax(y.mean(axis=1), axis=1)
    return int(np.sum(bayes == truth)), int(np.sum(naive == truth))


def simulate_game(game: ReconstructionGame, seed: int, chunk: int = CHUNK) -> GameResult:
    """Play ``game.trials`` independent rounds of the game.

    Trials are split into fixed-size chunks, each with its own spawned seed,
    so the result depends only on ``seed`` and ``chunk``.
    """
    pmf = acct.poisson_binomial(game.group_probs)
    bound = certified_bound(game.p, game.group_probs, game.sigma, game.rounds)
    if pmf.is_zero():
        shifts, log_w = np.zeros(1), np.zeros(1)
    else:
        shifts, log_w = acct.mixture_components(pmf)
    n_chunks = -(-game.trials // chunk)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)
    wins = naive_wins = 0
    for c, ss in enumerate(seeds):
        size = min(chunk, game.trials - c * chunk)
        w, nw = _play_chunk(game, pmf, shifts, log_w, size, ss)
        wins += w
        naive_wins += nw
    rate = wins / game.trials
    return GameResult(
        empirical_success=rate,
        stderr=math.sqrt(rate * (1.0 - rate) / game.trials),
        certified_bound=bound,
        baseline_success=naive_wins / game.trials,
        trials=game.trials,
    )
