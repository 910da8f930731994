"""Post-MCMC summarization: point-estimate clustering, agreement and error
metrics, and the pseudo-marginal-likelihood model score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class InferenceError(ValueError):
    """Raised for empty archives or mismatched metric inputs."""


def membership_matrix(z):
    """Binary co-clustering matrix: entry (i, j) is 1 iff z_i == z_j."""
    z = np.asarray(z)
    return (z[:, None] == z[None, :]).astype(np.int8)


def dahl_select(archive):
    """Index of the record whose co-clustering matrix is least-squares
    closest to the running mean over all records.

    Membership matrices are label-free, so the choice is invariant to
    relabeling of any record. Ties break to the smallest index. The mean is
    accumulated in a single n-by-n buffer streamed over records, and the
    distance pass re-streams them, so memory does not grow with the number
    of records.
    """
    if archive.n_records == 0:
        raise InferenceError("archive has no records")
    n = archive.n
    mean = np.zeros((n, n))
    for z in archive.z_draws:
        mean += z[:, None] == z[None, :]
    mean /= archive.n_records

    best_idx = 0
    best = math.inf
    for idx, z in enumerate(archive.z_draws):
        b = (z[:, None] == z[None, :]).astype(float)
        d = float(((b - mean) ** 2).sum())
        if d < best:
            best = d
            best_idx = idx
    return best_idx


def rand_index(z_a, z_b):
    """Fraction of site pairs on which two partitions agree.

    A pair agrees when it is co-clustered in both partitions or separated
    in both. Symmetric and invariant to relabeling either argument.
    """
    z_a = np.asarray(z_a)
    z_b = np.asarray(z_b)
    if z_a.shape != z_b.shape or z_a.ndim != 1:
        raise InferenceError(
            f"label vectors must have equal length, got {z_a.shape} vs {z_b.shape}"
        )
    n = z_a.shape[0]
    if n < 2:
        raise InferenceError("need at least 2 sites")
    same_a = z_a[:, None] == z_a[None, :]
    same_b = z_b[:, None] == z_b[None, :]
    iu = np.triu_indices(n, k=1)
    return float((same_a[iu] == same_b[iu]).mean())


def lpml(archive):
    """Pseudo-marginal-likelihood score and per-site predictive ordinates.

    The ordinate of site i is the harmonic mean of its likelihood across
    records, computed in log space:

        log CPO_i = log B - logsumexp_t(-loglik[t, i]).

    Returns ``(lpml_value, log_cpo, diagnostics)``. The harmonic mean is
    fragile, so diagnostics report how many sites have more than half of
    their inverse-likelihood mass carried by a single record, and how many
    ordinates collapsed to zero because a record had -inf log likelihood.
    """
    if archive.n_records == 0:
        raise InferenceError("archive has no records")
    L = archive.loglik_draws
    B = L.shape[0]
    neg = -L
    lse = logsumexp(neg, axis=0)
    log_cpo = math.log(B) - lse

    with np.errstate(invalid="ignore"):
        w_max = np.exp(neg.max(axis=0) - lse)
    dominated = int(np.sum(w_max > 0.5))
    collapsed = int(np.sum(~np.isfinite(log_cpo)))
    value = float(log_cpo.sum()) if collapsed == 0 else -math.inf
    return value, log_cpo, {
        "dominated_sites": dominated,
        "collapsed_sites": collapsed,
    }


def amse(estimates, truth):
    """Per-coefficient mean squared error of per-site coefficient estimates."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if estimates.shape != truth.shape:
        raise InferenceError(
            f"shape mismatch: {estimates.shape} vs {truth.shape}"
        )
    return ((estimates - truth) ** 2).mean(axis=0)


@dataclass
class FitSummary:
    """Point estimates and scores extracted from one archive."""

    selected_iteration: int
    z: np.ndarray
    betas: np.ndarray
    k: int
    lpml: float
    diagnostics: dict = field(default_factory=dict)
    rand_index: float | None = None
    amse: np.ndarray | None = None

    def site_betas(self):
        """Per-site coefficient estimates implied by the point clustering."""
        return self.betas[self.z]

    def to_dict(self):
        return {
            "selected_iteration": int(self.selected_iteration),
            "z": self.z.tolist(),
            "betas": self.betas.tolist(),
            "k": int(self.k),
            "lpml": self.lpml,
            "diagnostics": self.diagnostics,
            "rand_index": self.rand_index,
            "amse": None if self.amse is None else np.asarray(self.amse).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            selected_iteration=int(d["selected_iteration"]),
            z=np.asarray(d["z"], dtype=np.int64),
            betas=np.asarray(d["betas"], dtype=float),
            k=int(d["k"]),
            lpml=float(d["lpml"]),
            diagnostics=dict(d.get("diagnostics", {})),
            rand_index=d.get("rand_index"),
            amse=None if d.get("amse") is None else np.asarray(d["amse"]),
        )


def summarize(archive, z_true=None, beta_true=None):
    """Full post-chain summary: point clustering, score, optional accuracy.

    The point estimate is the least-squares-selected record; accuracy
    metrics compare it against simulation truth when provided.
    """
    idx = dahl_select(archive)
    z_hat = archive.z_draws[idx].copy()
    betas_hat = np.asarray(archive.beta_draws[idx], dtype=float).copy()
    value, _, diag = lpml(archive)
    diag = dict(diag)
    diag.update(archive.diagnostics)
    summary = FitSummary(
        selected_iteration=idx,
        z=z_hat,
        betas=betas_hat,
        k=int(len(np.unique(z_hat))),
        lpml=value,
        diagnostics=diag,
    )
    if z_true is not None:
        summary.rand_index = rand_index(z_hat, np.asarray(z_true))
    if beta_true is not None:
        summary.amse = amse(summary.site_betas(), beta_true)
    return summary
