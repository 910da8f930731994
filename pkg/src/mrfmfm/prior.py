"""Cluster-count prior machinery and the spatially smoothed urn weights.

The mixture-of-finite-mixtures construction replaces the Chinese-restaurant
new-table rate with a ratio of precomputed series coefficients V_n(t); a
pairwise Markov-random-field factor exp(lam * #{agreeing neighbors}) then
tilts the existing-cluster weights toward spatially contiguous assignments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .graph import SpatialGraph

# Series truncation: stop once the term contributes below this fraction of
# the running sum for _TRUNC_RUN consecutive k.
_TRUNC_REL = 1e-12
_TRUNC_RUN = 5
_K_HARD_CAP = 100_000


class PriorError(ValueError):
    """Raised for invalid prior parameters or out-of-range table queries."""


def shifted_poisson_log_pmf(k, rate=1.0):
    """Log pmf of k where k - 1 is Poisson(rate); support k = 1, 2, ...

    The default prior on the number of mixture components.
    """
    if k < 1:
        return -math.inf
    return -rate + (k - 1) * math.log(rate) - float(gammaln(k))


def log_vn(n, t, gamma, log_pmf=shifted_poisson_log_pmf):
    """Log of the urn coefficient V_n(t).

    V_n(t) sums, over component counts k >= t, the falling factorial
    k(k-1)...(k-t+1) divided by the rising factorial
    (gamma k)(gamma k + 1)...(gamma k + n - 1), weighted by the component
    count pmf. Terms with k < t vanish. Summation runs in log space with a
    running log-sum-exp and a deterministic truncation rule so tables are
    reproducible bit for bit.
    """
    n = int(n)
    t = int(t)
    if n < 1:
        raise PriorError(f"n must be positive, got {n}")
    if t < 1 or t > n + 1:
        raise PriorError(f"t must lie in [1, n + 1] = [1, {n + 1}], got {t}")
    if gamma <= 0:
        raise PriorError(f"gamma must be positive, got {gamma}")

    total = -math.inf
    below = 0
    k = t
    while k < t + _K_HARD_CAP:
        lp = log_pmf(k)
        if lp == -math.inf:
            term = -math.inf
        else:
            falling = gammaln(k + 1) - gammaln(k - t + 1)
            rising = gammaln(gamma * k + n) - gammaln(gamma * k)
            term = float(falling - rising) + lp
        total = np.logaddexp(total, term)
        contribution = math.exp(term - total) if total > -math.inf else 1.0
        if contribution < _TRUNC_REL:
            below += 1
            if below >= _TRUNC_RUN:
                break
        else:
            below = 0
        k += 1
    return float(total)


class MFMPrior:
    """Precomputed V_n(t) table plus the Dirichlet concentration gamma.

    Parameters
    ----------
    n : int
        Sample size the urn operates on; the table covers t = 1 .. n + 1.
    gamma : float
        Dirichlet concentration for the within-component weights.
    log_pmf : callable, optional
        Log pmf of the component count on {1, 2, ...}. Defaults to a
        shifted Poisson(1). Must sum to 1; checked to 1e-12 on a truncated
        support at construction.
    """

    def __init__(self, n, gamma=1.0, log_pmf=None):
        n = int(n)
        if n < 1:
            raise PriorError(f"n must be positive, got {n}")
        if gamma <= 0:
            raise PriorError(f"gamma must be positive, got {gamma}")
        if log_pmf is None:
            log_pmf = shifted_poisson_log_pmf

        mass = 0.0
        for k in range(1, 2001):
            mass += math.exp(log_pmf(k))
        if abs(mass - 1.0) > 1e-12:
            raise PriorError(
                f"component-count pmf sums to {mass!r} on k <= 2000, expected 1"
            )

        self.n = n
        self.gamma = float(gamma)
        self._log_pmf = log_pmf
        self._table = np.array(
            [log_vn(n, t, gamma, log_pmf) for t in range(1, n + 2)]
        )

    def log_vn(self, t):
        """Table lookup of log V_n(t) for t in [1, n + 1]."""
        t = int(t)
        if t < 1 or t > self.n + 1:
            raise PriorError(f"t={t} outside table range [1, {self.n + 1}]")
        return float(self._table[t - 1])


@dataclass(frozen=True)
class MRFSpec:
    """Spatial smoothing specification: graph plus nonnegative strength lam."""

    graph: SpatialGraph
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise PriorError(f"lam must be nonnegative, got {self.lam}")


def urn_weights(i, state, mrf, prior, marginal_log_lik, per_cluster_log_lik):
    """Assignment probabilities for site ``i`` over t existing clusters + 1 new.

    ``state`` must have site ``i`` already detached: cluster sizes exclude it
    and ``state.z[i]`` is the removal marker. For an existing cluster c the
    log weight is

        log(n_c + gamma) + lam * u_c(i) + per_cluster_log_lik[c]

    with u_c(i) the number of neighbors of i currently in c; the new-cluster
    option carries no neighbor factor and gets

        log(gamma) + log V_n(t+1) - log V_n(t) + marginal_log_lik.

    Returns the normalized probability vector of length t + 1. An empty
    state forces a new cluster with probability 1.
    """
    sizes = state.sizes
    t = len(sizes)
    if t == 0:
        return np.ones(1)

    logw = np.empty(t + 1)
    logw[:t] = np.log(sizes + prior.gamma) + per_cluster_log_lik
    if mrf.lam != 0.0:
        nb = mrf.graph.neighbors(i)
        if nb.size:
            u = np.bincount(state.z[nb], minlength=t)
            logw[:t] += mrf.lam * u
    logw[t] = (
        math.log(prior.gamma)
        + prior.log_vn(t + 1)
        - prior.log_vn(t)
        + marginal_log_lik
    )

    shift = logw.max()
    if shift == -math.inf:
        raise PriorError("all assignment weights vanished (log weights all -inf)")
    w = np.exp(logw - shift)
    return w / w.sum()
