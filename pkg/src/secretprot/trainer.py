"""Desk-scale DP-SGD with per-example Poisson sampling, plus synthetic data.

Each round includes example i independently with probability ``rho_i``,
sums the clipped per-example gradients, divides by the batch target ``B``
and adds ``N(0, (C sigma / B)^2 I)`` before the optimizer update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import ExampleRecord, SecretMap, SecretSpec


def clip(v, C):
    """Scale ``v`` (or each row of a 2-D ``v``) to l2 norm at most ``C``."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    with np.errstate(divide="ignore"):
        factor = np.minimum(1.0, C / norm)
    return v * factor


class ModelAdapter:
    """Differentiable model: parameters, per-example gradients and an update.

    Subclasses implement ``loss_grad`` and ``losses``; ``batch_grads`` may be
    overridden with a vectorised version.
    """

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=np.float64).copy()

    def loss_grad(self, theta, payload):
        raise NotImplementedError

    def losses(self, theta, payloads):
        raise NotImplementedError

    def batch_grads(self, theta, payloads):
        if len(payloads) == 0:
            return np.zeros((0, theta.size))
        return np.stack([self.loss_grad(theta, p) for p in payloads])

    def loss(self, theta, payloads):
        return float(np.mean(self.losses(theta, payloads)))

    def update(self, theta, grad, lr):
        return theta - lr * grad


def _predict(theta, payloads):
    # one reduction path for a single row and for a batch, so both agree bitwise
    return np.sum(payloads[..., :-1] * theta, axis=-1)


class LinearRegression(ModelAdapter):
    """Squared loss on payloads laid out as ``features ++ [target]``."""

    def __init__(self, dim, theta=None):
        super().__init__(np.zeros(dim) if theta is None else theta)

    def loss_grad(self, theta, payload):
        return self.batch_grads(theta, payload)

    def batch_grads(self, theta, payloads):
        resid = _predict(theta, payloads) - payloads[..., -1]
        return (2.0 * resid)[..., None] * payloads[..., :-1]

    def losses(self, theta, payloads):
        return (_predict(theta, payloads) - payloads[..., -1]) ** 2


class LogisticRegression(ModelAdapter):
    """Log loss with labels in {0, 1} in the last payload column."""

    def __init__(self, dim, theta=None):
        super().__init__(np.zeros(dim) if theta is None else theta)

    def loss_grad(self, theta, payload):
        return self.batch_grads(theta, payload)

    def batch_grads(self, theta, payloads):
        resid = _sigmoid(_predict(theta, payloads)) - payloads[..., -1]
        return resid[..., None] * payloads[..., :-1]

    def losses(self, theta, payloads):
        z = _predict(theta, payloads)
        return np.logaddexp(0.0, z) - payloads[..., -1] * z


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


MODELS = {"linear": LinearRegression, "logistic": LogisticRegression}


@dataclass
class TrainTrace:
    batch_sizes: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    noise_norms: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    theta: np.ndarray = None
    eval_loss: float = math.nan

    def to_dict(self) -> dict:
        return {
            "batch_sizes": self.batch_sizes,
            "grad_norms": self.grad_norms,
            "noise_norms": self.noise_norms,
            "losses": self.losses,
            "theta": self.theta.tolist(),
            "eval_loss": self.eval_loss,
        }


def rng_streams(seed):
    """Independent Philox streams for batch sampling and for noise."""
    sampling, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.Philox(sampling)), np.random.Generator(np.random.Philox(noise))


def train(smap: SecretMap, plan, model: ModelAdapter, config=None, rng_seed: int = 0,
          lr: float = 0.05, eval_payloads=None, record_losses=True) -> TrainTrace:
    """Run ``plan.rounds`` rounds of Poisson-sampled, clipped, noised SGD.

    ``plan`` supplies the per-example probabilities, batch target, rounds and
    noise multiplier. The clip norm comes from ``config`` when given, else from
    the plan. Losses are recorded on ``eval_payloads`` (the full dataset by
    default) after every round when ``record_losses`` is set.
    """
    X = smap.payload_matrix()
    probs = np.asarray(plan.probs, dtype=np.float64)
    if probs.shape != (smap.n,):
        raise ValueError(f"plan has {probs.size} probabilities for {smap.n} examples")
    if plan.example_ids and tuple(plan.example_ids) != tuple(ex.id for ex in smap.examples):
        raise ValueError("plan example ids do not match the dataset")
    if eval_payloads is None:
        eval_payloads = X
    B = float(plan.batch_target)
    C = float(config.clip_norm if config is not None else plan.clip_norm)
    noise_std = C * plan.sigma / B
    sample_rng, noise_rng = rng_streams(rng_seed)

    theta = model.theta.copy()
    trace = TrainTrace()
    for _ in range(plan.rounds):
        idx = np.flatnonzero(sample_rng.random(smap.n) < probs)
        grads = model.batch_grads(theta, X[idx])
        if idx.size:
            # cumsum adds rows strictly in order, keeping runs bit-reproducible
            summed = np.cumsum(clip(grads, C), axis=0)[-1]
        else:
            summed = np.zeros(theta.size)
        g = summed / B
        z = noise_rng.normal(0.0, noise_std, size=theta.size)
        theta = model.update(theta, g + z, lr)
        trace.batch_sizes.append(int(idx.size))
        trace.grad_norms.append(float(np.sqrt(g @ g)))
        trace.noise_norms.append(float(np.sqrt(z @ z)))
        if record_losses:
            trace.losses.append(model.loss(theta, eval_payloads))
    trace.theta = theta
    trace.eval_loss = model.loss(theta, eval_payloads)
    return trace


def power_law_probs(m, skew):
    q = np.arange(1, m + 1, dtype=np.float64) ** (-skew)
    return q / q.sum()


def expected_incidence(n, m, skew, overlap):
    """Expected group size of each secret under ``make_synthetic``'s law."""
    q = power_law_probs(m, skew)
    if m == 1:
        return np.array([float(n)])
    # second secret drawn from q conditioned on differing from the first
    second = q * np.sum(q / (1.0 - q)) - q * q / (1.0 - q)
    return n * (q + overlap * second)


def make_synthetic(n, m, skew, dim, seed, overlap=0.1, noise=0.1,
                   prior=1e-10, r_range=(2e-4, 1e-3)) -> SecretMap:
    """Linear-regression examples tagged with power-law distributed secrets.

    Every example contains one secret drawn with probability proportional to
    ``rank^-skew``; with probability ``overlap`` it contains a second, distinct
    secret from the same law. Payloads are ``features ++ [target]`` with
    ``target = features @ beta + noise * eps``.
    """
    if min(n, m, dim) < 1:
        raise ValueError("n, m and dim must be at least 1")
    rng = np.random.default_rng(seed)
    q = power_law_probs(m, skew)
    primary = rng.choice(m, size=n, p=q)
    extra = rng.random(n) < overlap if m > 1 else np.zeros(n, dtype=bool)
    beta = rng.normal(size=dim)
    X = rng.normal(size=(n, dim))
    y = X @ beta + noise * rng.normal(size=n)
    sids = [f"s{j:04d}" for j in range(m)]

    examples = []
    for i in range(n):
        tags = {sids[primary[i]]}
        if extra[i]:
            cond = q.copy()
            cond[primary[i]] = 0.0
            tags.add(sids[rng.choice(m, p=cond / cond.sum())])
        examples.append(ExampleRecord(f"x{i:06d}", tags, tuple(X[i]) + (y[i],)))
    rs = rng.uniform(*r_range, size=m)
    secrets = [SecretSpec(sids[j], prior, float(rs[j])) for j in range(m)]
    return SecretMap.build(examples, secrets)
