"""Multivariate log-gamma distribution kernel.

The base family is the law of ``q = mu + V @ phi`` where the ``phi_i`` are
independent log-gamma variables with shape ``alpha_i`` and rate ``kappa_i``.
It is conjugate to the Poisson log-link likelihood: posteriors take the
conditional form with density proportional to

    exp(alpha' H q - kappa' exp(H q))

for a full-column-rank stacked matrix ``H``. This module provides density
evaluation, exact sampling of the base family, sampling of the conditional
family, and the large-shape normal limit used for prior calibration.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

# Exponent guard: entries of the inner linear predictor are clamped here
# before exponentiation; densities return -inf beyond it. Keeps evaluation
# overflow-free while preserving ordering.
EXP_CLAMP = 700.0

# Independence-Metropolis settings for conditional-family sampling.
CMLG_MH_STEPS = 48
_PROPOSAL_DF = 7.0
_PROPOSAL_INFLATION = 1.15


class ParameterError(ValueError):
    """Raised for invalid distribution parameters."""


class MLGParams:
    """Parameter bundle (mu, V, alpha, kappa) for the base family.

    ``V`` must be invertible (rejected when the reciprocal condition number
    falls below 1e-12); all shapes and rates must be strictly positive.
    The inverse and log-determinant are precomputed; instances are treated
    as immutable.
    """

    def __init__(self, mu, V, alpha, kappa):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        p = mu.shape[0]
        if V.shape != (p, p):
            raise ParameterError(f"V must be {p}x{p}, got {V.shape}")
        if alpha.shape != (p,) or kappa.shape != (p,):
            raise ParameterError("alpha and kappa must match mu in length")
        if np.any(alpha <= 0) or np.any(kappa <= 0):
            raise ParameterError("alpha and kappa entries must be positive")
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(mu))):
            raise ParameterError("mu and V must be finite")

        sv = np.linalg.svd(V, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0] or sv[0] == 0.0:
            raise ParameterError("V is numerically singular")

        self.mu = mu
        self.V = V
        self.alpha = alpha
        self.kappa = kappa
        self.V_inv = np.linalg.inv(V)
        _, self.log_abs_det_V = np.linalg.slogdet(V)
        # Normalizing constant of the density, in log space.
        self.log_norm = float(
            np.sum(alpha * np.log(kappa) - gammaln(alpha)) - self.log_abs_det_V
        )

    @property
    def p(self):
        return self.mu.shape[0]


class CMLGParams:
    """Parameter bundle (H, alpha, kappa) for the conditional family.

    ``H`` is m-by-p with m >= p and full column rank (checked through the
    QR factor with a relative tolerance).
    """

    def __init__(self, H, alpha, kappa):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        m, p = H.shape
        if m < p:
            raise ParameterError(f"H must have m >= p, got shape {H.shape}")
        if alpha.shape != (m,) or kappa.shape != (m,):
            raise ParameterError("alpha and kappa must have one entry per row of H")
        if np.any(alpha <= 0) or np.any(kappa <= 0):
            raise ParameterError("alpha and kappa entries must be positive")
        if not np.all(np.isfinite(H)):
            raise ParameterError("H must be finite")
        r = np.linalg.qr(H, mode="r")
        diag = np.abs(np.diag(r))
        if diag.max() == 0.0 or diag.min() <= 1e-12 * diag.max():
            raise ParameterError("H is rank deficient")

        self.H = H
        self.alpha = alpha
        self.kappa = kappa

    @property
    def m(self):
        return self.H.shape[0]

    @property
    def p(self):
        return self.H.shape[1]


def mlg_log_density(q, params):
    """Log density of the base family at ``q``.

    Returns -inf when any entry of ``V^{-1}(q - mu)`` exceeds the exponent
    guard (the density there is astronomically small anyway).
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    u = params.V_inv @ (q - params.mu)
    if np.any(u > EXP_CLAMP):
        return -math.inf
    return params.log_norm + float(params.alpha @ u - params.kappa @ np.exp(u))


def mlg_sample(params, rng):
    """One exact draw ``mu + V @ phi`` with phi_i = log Gamma(alpha_i, rate kappa_i)."""
    g = rng.gamma(shape=params.alpha, scale=1.0 / params.kappa)
    return params.mu + params.V @ np.log(g)


def mlg_sample_many(params, size, rng):
    """Matrix of ``size`` independent draws, one per row."""
    g = rng.gamma(shape=params.alpha, scale=1.0 / params.kappa,
                  size=(int(size), params.p))
    return params.mu + np.log(g) @ params.V.T


def cmlg_log_kernel(q, params):
    """Unnormalized log density alpha'Hq - kappa'exp(Hq) of the conditional family."""
    w = params.H @ q
    if np.any(w > EXP_CLAMP):
        return -math.inf
    return float(params.alpha @ w - params.kappa @ np.exp(w))


def cmlg_mode(params, tol=1e-9, max_iter=200, start=None):
    """Mode of the conditional density via damped Newton iterations.

    The target is strictly log-concave (H has full column rank), so the
    iteration converges globally with step halving. ``start`` warm-starts
    the iteration; the default is the least-squares fit of
    H q = log(alpha / kappa), the stationary point of the diagonal
    approximation.
    """
    H, alpha, kappa = params.H, params.alpha, params.kappa
    if start is not None:
        q = np.asarray(start, dtype=float).copy()
    else:
        b = H.T @ np.log(alpha / kappa)
        q = np.linalg.solve(H.T @ H, b)
    f = cmlg_log_kernel(q, params)
    for _ in range(max_iter):
        w = np.minimum(H @ q, EXP_CLAMP)
        r = kappa * np.exp(w)
        grad = H.T @ (alpha - r)
        hess = H.T @ (H * r[:, None])
        step = np.linalg.solve(hess, grad)
        decrement = float(grad @ step)
        scale = 1.0
        for _ in range(60):
            f_new = cmlg_log_kernel(q + scale * step, params)
            if f_new >= f:
                break
            scale *= 0.5
        q = q + scale * step
        f = f_new
        if decrement < tol:
            break
    return q


def cmlg_sample(params, rng, init=None, n_steps=CMLG_MH_STEPS):
    """Draw from the conditional family with density ``exp(a'Hq - k'exp(Hq))``.

    When the system is square (m == p) the draw is an exact linear
    change of variables of independent log-gammas. Otherwise the target has
    no direct representation and the draw is produced by an independence
    Metropolis chain whose proposal is a Student-t fit at the mode
    (location = Newton mode, scale = inverse curvature there). The chain
    starts from ``init`` when given (so a sweep of updates leaves the target
    invariant exactly) and from the mode otherwise. Proposals do not depend
    on the current state, so the whole batch is precomputed and the
    accept/reject scan runs on scalars.
    """
    H, alpha, kappa = params.H, params.alpha, params.kappa
    m, p = H.shape
    if m == p:
        w = np.log(rng.gamma(shape=alpha, scale=1.0 / kappa))
        return np.linalg.solve(H, w)

    mode = cmlg_mode(params)
    curv = kappa * np.exp(np.minimum(H @ mode, EXP_CLAMP))
    hess = H.T @ (H * curv[:, None])
    cov = np.linalg.inv(hess)
    L = np.linalg.cholesky(0.5 * (cov + cov.T)) * _PROPOSAL_INFLATION
    df = _PROPOSAL_DF
    K = int(n_steps)

    z = rng.standard_normal((K, p))
    scale = np.sqrt(df / rng.chisquare(df, K))
    log_unif = np.log(rng.random(K))
    props = mode + (z @ L.T) * scale[:, None]

    W = np.minimum(props @ H.T, EXP_CLAMP)
    log_f = W @ alpha - np.exp(W) @ kappa
    # Proposal deviation is L @ (z * scale), so the Mahalanobis norm under
    # the proposal scale is just |z * scale|.
    msq = (z * z).sum(axis=1) * scale * scale
    log_g = -0.5 * (df + p) * np.log1p(msq / df)

    if init is not None:
        cur = np.asarray(init, dtype=float)
        v = np.linalg.solve(L, cur - mode)
        cur_g = -0.5 * (df + p) * math.log1p(float(v @ v) / df)
    else:
        cur = mode
        cur_g = 0.0
    cur_f = cmlg_log_kernel(cur, params)

    chosen = -1
    for j in range(K):
        log_accept = (log_f[j] - cur_f) + (cur_g - log_g[j])
        if log_accept >= 0 or log_unif[j] < log_accept:
            chosen = j
            cur_f = log_f[j]
            cur_g = log_g[j]
    return props[chosen].copy() if chosen >= 0 else np.array(cur, dtype=float, copy=True)


def normal_approx_cov(params):
    """Covariance of the large-shape normal limit of the base family.

    For the calibration family with equal shapes and rates alpha and scale
    matrix ``V = sqrt(alpha) V0``, the distribution tends to a normal with
    mean ``mu`` and covariance ``V0 V0' = V V' / alpha``. Raises when the
    shape/rate entries are not all equal (the limit is undefined then).
    """
    a = params.alpha
    if not (np.allclose(a, a[0], rtol=1e-12, atol=0.0)
            and np.allclose(params.kappa, a[0], rtol=1e-12, atol=0.0)):
        raise ParameterError(
            "normal limit requires equal shapes and rates (alpha = kappa = a * 1)"
        )
    return (params.V @ params.V.T) / a[0]
