"""Example-weighting linear program.

    maximize    sum_i w_i
    subject to  sum_{i in group(j)} w_i <= cap_j    for every secret j
                0 <= w_i <= 1

solved with a primal revised simplex over bounded variables. Nonbasic
variables sit at one of their bounds, so the returned point is a vertex:
strictly fractional weights only occur among the at most ``m`` basic
variables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import linalg

from .divergence import KLBudget
from .domain import SecretMap

logger = logging.getLogger(__name__)

TOL = 1e-9


@dataclass(frozen=True)
class WeightLP:
    """Packing LP in sparse form.

    ``groups[j]`` lists the example indices constrained by row ``j``.
    Infinite capacities are allowed and mean the row never binds.
    """

    n: int
    groups: tuple
    caps: np.ndarray
    row_ids: tuple = ()

    def __post_init__(self):
        caps = np.asarray(self.caps, dtype=np.float64)
        if caps.shape != (len(self.groups),):
            raise ValueError("one capacity per constraint row is required")
        if np.any(caps < 0) or np.any(np.isnan(caps)):
            raise ValueError("capacities must be nonnegative")
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        for g in groups:
            if any(i < 0 or i >= self.n for i in g):
                raise ValueError("incidence index out of range")
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "groups", groups)

    @property
    def m(self) -> int:
        return len(self.groups)

    def matrix(self) -> sp.csc_matrix:
        rows = [j for j, g in enumerate(self.groups) for _ in g]
        cols = [i for g in self.groups for i in g]
        return sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.m, self.n))


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    objective: float
    iterations: int = 0


def build_lp(smap: SecretMap, budgets: Mapping[str, KLBudget] | Sequence[KLBudget], c: float,
             cap_scale: float = 1.0) -> WeightLP:
    """Capacities ``c * cap_scale * mu_j`` over the map's incidence."""
    if not c > 0:
        raise ValueError("LP constant c must be positive")
    if not isinstance(budgets, Mapping):
        budgets = {b.secret_id: b for b in budgets}
    caps = []
    for s in smap.secrets:
        if s.id not in budgets:
            raise ValueError(f"missing KL budget for secret {s.id!r}")
        mu = budgets[s.id].mu
        caps.append(math.inf if math.isinf(mu) else c * cap_scale * mu)
    groups = tuple(smap.incidence[s.id] for s in smap.secrets)
    return WeightLP(smap.n, groups, np.array(caps), tuple(s.id for s in smap.secrets))


def _presolve(lp: WeightLP):
    """Fix trivially determined weights and drop inert rows.

    Returns the fixed weight vector (NaN where still free), the free column
    indices, and the reduced rows as (cap, [free column positions]).
    """
    w = np.full(lp.n, np.nan)
    zeroed = set()
    for g, cap in zip(lp.groups, lp.caps):
        if g and cap <= TOL:
            zeroed.update(g)
    constrained = set()
    for g, cap in zip(lp.groups, lp.caps):
        if g and math.isfinite(cap):
            constrained.update(g)
    for i in range(lp.n):
        if i in zeroed:
            w[i] = 0.0
        elif i not in constrained:
            w[i] = 1.0
    free = np.flatnonzero(np.isnan(w))
    position = {int(i): k for k, i in enumerate(free)}
    rows = []
    for g, cap in zip(lp.groups, lp.caps):
        if not math.isfinite(cap):
            continue
        cols = [position[i] for i in g if i in position]
        if cols:
            rows.append((float(cap), cols))
    return w, free, rows


def _simplex(A: sp.csc_matrix, b: np.ndarray, max_iter: int):
    """Bounded primal simplex for max 1'x s.t. Ax <= b, 0 <= x <= 1, b >= 0.

    Slack columns are appended with bounds [0, inf). Bland's rule picks the
    lowest-index improving column and, among tied ratio-test limits, the
    lowest-index blocking variable.
    """
    m, n = A.shape
    A = sp.csc_matrix(A)
    A_rows = A.tocsr()
    A_cols = A.T.tocsr()
    upper = np.concatenate([np.ones(n), np.full(m, np.inf)])
    x = np.zeros(n + m)
    basis = list(range(n, n + m))
    is_basic = np.zeros(n + m, dtype=bool)
    is_basic[basis] = True
    B = np.eye(m)

    def column(j):
        col = np.zeros(m)
        if j < n:
            col[A.indices[A.indptr[j]:A.indptr[j + 1]]] = A.data[A.indptr[j]:A.indptr[j + 1]]
        else:
            col[j - n] = 1.0
        return col

    for it in range(max_iter):
        lu = linalg.lu_factor(B, check_finite=False)
        # slacks never sit nonbasic at a nonzero value, so only structural
        # columns contribute to the right-hand side
        x_N = np.where(is_basic[:n], 0.0, x[:n])
        x_B = linalg.lu_solve(lu, b - A_rows @ x_N, check_finite=False)
        x[basis] = x_B
        cost_B = (np.asarray(basis) < n).astype(np.float64)
        y = linalg.lu_solve(lu, cost_B, trans=1, check_finite=False)
        reduced = np.concatenate([1.0 - A_cols @ y, -y])

        at_lower = ~is_basic & (x <= TOL)
        at_upper = ~is_basic & ~at_lower
        eligible = np.flatnonzero((at_lower & (reduced > TOL)) | (at_upper & (reduced < -TOL)))
        if eligible.size == 0:
            return x[:n], it
        j = int(eligible[0])
        direction = 1.0 if at_lower[j] else -1.0

        a_j = column(j)
        alpha = linalg.lu_solve(lu, a_j, check_finite=False)
        step = direction * alpha  # x_B moves by -theta * step
        ub = upper[basis]
        limits = np.full(m, np.inf)
        dec = step > TOL
        limits[dec] = np.maximum(x_B[dec], 0.0) / step[dec]
        inc = (step < -TOL) & np.isfinite(ub)
        limits[inc] = np.maximum(ub[inc] - x_B[inc], 0.0) / -step[inc]

        theta_flip = upper[j]
        theta = min(theta_flip, float(limits.min()) if m else np.inf)
        if not math.isfinite(theta):
            raise RuntimeError("LP unbounded; capacities must be finite")

        candidates = [basis[r] for r in np.flatnonzero(limits <= theta + TOL)]
        if theta_flip <= theta + TOL:
            candidates.append(j)
        leaving = min(candidates)

        x[j] += direction * theta
        x[basis] = x_B - theta * step
        if leaving == j:
            x[j] = 0.0 if direction < 0 else upper[j]
            continue
        r = basis.index(leaving)
        x[leaving] = 0.0 if step[r] > 0 else upper[leaving]
        basis[r] = j
        B[:, r] = a_j
        is_basic[leaving] = False
        is_basic[j] = True
    raise RuntimeError(f"simplex did not terminate in {max_iter} iterations")


def solve(lp: WeightLP, max_iter: int | None = None) -> WeightVector:
    """Optimal vertex of the weighting LP."""
    w, free, rows = _presolve(lp)
    iterations = 0
    if free.size:
        if rows:
            r_idx = [r for r, (_, cols) in enumerate(rows) for _ in cols]
            c_idx = [c for _, cols in rows for c in cols]
            A = sp.csc_matrix((np.ones(len(r_idx)), (r_idx, c_idx)), shape=(len(rows), free.size))
            b = np.array([cap for cap, _ in rows])
            limit = max_iter or 50 * (free.size + len(rows)) + 1000
            x, iterations = _simplex(A, b, limit)
        else:
            x = np.ones(free.size)
        w[free] = np.clip(x, 0.0, 1.0)
    w[np.abs(w) <= TOL] = 0.0
    w[np.abs(w - 1.0) <= TOL] = 1.0
    return WeightVector(w, float(w.sum()), iterations)


def max_violation(lp: WeightLP, w: np.ndarray) -> float:
    """Largest violation of any box or capacity constraint."""
    worst = max(0.0, float(-w.min(initial=0.0)), float(w.max(initial=0.0) - 1.0))
    for g, cap in zip(lp.groups, lp.caps):
        if g and math.isfinite(cap):
            worst = max(worst, float(w[list(g)].sum() - cap))
    return worst
