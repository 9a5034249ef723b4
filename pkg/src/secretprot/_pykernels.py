"""Pure numpy fallbacks for the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

_CHUNK = 1 << 15
_LOG_HALF, _LOG_TWO = -0.6931471805599453, 0.6931471805599453
_EXP_MAX = 700.0


def _mixture_lse(x, shifts, log_weights, sigma, centered):
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    s = np.asarray(shifts, dtype=np.float64)
    lw = np.asarray(log_weights, dtype=np.float64)
    inv_var = 1.0 / (sigma * sigma)
    out = np.empty_like(flat)
    for start in range(0, flat.size, _CHUNK):
        xc = flat[start:start + _CHUNK, None]
        if centered:
            d = xc - s
            e = lw - 0.5 * d * d * inv_var
        else:
            e = lw + s * (xc - 0.5 * s) * inv_var
        m = e.max(axis=1, initial=-np.inf)
        finite = np.isfinite(m)
        with np.errstate(invalid="ignore"):
            acc = np.exp(e - m[:, None]).sum(axis=1)
        res = np.full(m.shape, -np.inf)
        res[finite] = m[finite] + np.log(acc[finite])
        if not centered:
            # ratios near 1 are recomputed as log1p(sum_j w_j expm1(a_j))
            near = np.flatnonzero((res > _LOG_HALF) & (res < _LOG_TWO))
            a = s * (xc[near] - 0.5 * s) * inv_var
            ok = np.all(a <= _EXP_MAX, axis=1)
            with np.errstate(over="ignore"):
                small = (np.exp(lw) * np.expm1(np.minimum(a, _EXP_MAX))).sum(axis=1)
            use = ok & (small > -0.5) & (small < 1.0)
            res[near[use]] = np.log1p(small[use])
        out[start:start + _CHUNK] = res
    return out.reshape(x.shape)


def mixture_log_ratio(x, shifts, log_weights, sigma):
    return _mixture_lse(x, shifts, log_weights, sigma, False)


def mixture_log_density(x, shifts, log_weights, sigma):
    return _mixture_lse(x, shifts, log_weights, sigma, True)


def poisson_binomial_pmf(probs):
    pmf = np.zeros(len(probs) + 1)
    pmf[0] = 1.0
    for i, r in enumerate(probs):
        q = 1.0 - r
        # same operation order as the compiled loop
        pmf[i + 1] = pmf[i] * r
        pmf[1:i + 1] = pmf[1:i + 1] * q + pmf[0:i] * r
        pmf[0] = pmf[0] * q
    return pmf
