"""Least squares and cluster-robust sandwich pieces shared by the engines."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import RankDeficientError

_COND_LIMIT = 1e12


def collinear_columns(X: np.ndarray, names) -> list[str]:
    """Names of columns that pivoted QR finds to be linearly dependent."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, r, piv = scipy.linalg.qr(X / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max(initial=0.0) * max(X.shape) * np.finfo(float).eps * 1e3
    rank = int(np.sum(diag > tol))
    return [names[k] for k in piv[rank:]]


def check_full_rank(X: np.ndarray, names) -> np.ndarray:
    """Return X'X after confirming full column rank; raise naming offenders."""
    n, p = X.shape
    names = list(names)
    if n < p:
        raise RankDeficientError(f"{n} rows for {p} columns", names)
    zero = [names[k] for k in range(p) if not np.any(X[:, k])]
    if zero:
        raise RankDeficientError(f"all-zero design columns: {', '.join(zero)}", zero)
    xtx = X.T @ X
    d = np.sqrt(np.diag(xtx))
    scaled = xtx / np.outer(d, d)
    eig = np.linalg.eigvalsh(scaled)
    if eig[0] <= eig[-1] / _COND_LIMIT:
        bad = collinear_columns(X, names) or names[-1:]
        raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {', '.join(bad)}", bad)
    return xtx


def ols(X: np.ndarray, Y: np.ndarray, names) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients, residuals and (X'X)^{-1} for one or more responses."""
    xtx = check_full_rank(X, names)
    bread = np.linalg.inv(xtx)
    bread = (bread + bread.T) / 2
    Y = Y.reshape(Y.shape[0], -1)
    coef = np.empty((X.shape[1], Y.shape[1]))
    resid = np.empty_like(Y, dtype=float)
    # one response at a time so a column's result never depends on its neighbours
    for r in range(Y.shape[1]):
        y = np.ascontiguousarray(Y[:, r], dtype=float)
        b = np.linalg.solve(xtx, X.T @ y)
        coef[:, r] = b
        resid[:, r] = y - X @ b
    return coef, resid, bread


def cluster_groups(clusters: np.ndarray) -> list[np.ndarray]:
    order = np.argsort(clusters, kind="stable")
    bounds = np.flatnonzero(np.diff(clusters[order])) + 1
    return np.split(order, bounds)


def cluster_scores(
    X: np.ndarray,
    resid: np.ndarray,
    groups: list[np.ndarray],
    kind: str = "cr0",
    xtx: np.ndarray | None = None,
    labels=None,
) -> np.ndarray:
    """Per-cluster adjusted scores X_c' A_c e_c, shape (clusters, p, responses).

    ``cr0`` uses A_c = I. ``cr3`` uses A_c = (I - H_cc)^{-1}, evaluated with
    the identity X_c'(I - H_cc)^{-1} = (I + G_c (X'X - G_c)^{-1}) X_c' where
    G_c = X_c'X_c, so only p x p systems are solved. When dropping cluster c
    leaves a coefficient unidentified (one treated cluster in a period),
    the pseudo-inverse of I - H_cc is used instead.
    """
    resid = resid.reshape(resid.shape[0], -1)
    p = X.shape[1]
    out = np.empty((len(groups), p, resid.shape[1]))
    if kind == "cr3" and xtx is None:
        xtx = X.T @ X
    elif kind not in ("cr0", "cr3"):
        raise ValueError(f"unknown sandwich kind {kind!r}")
    bread = None
    for c, idx in enumerate(groups):
        Xc = X[idx]
        cho = adjust = None
        if kind == "cr3":
            G = Xc.T @ Xc
            loo = xtx - G
            if not _ill_conditioned(loo):
                try:
                    cho = scipy.linalg.cho_factor(loo)
                except np.linalg.LinAlgError:
                    cho = None
            if cho is None:
                # the other clusters cannot identify some coefficient; residuals are
                # orthogonal to the null space of I - H_cc, so its pseudo-inverse
                # applies. With X_c = U S V', X_c'(I - H_cc)^+ = V S (I - K)^+ U'
                # where K = S V' (X'X)^{-1} V S.
                if bread is None:
                    bread = np.linalg.inv(xtx)
                U, sv, Vt = np.linalg.svd(Xc, full_matrices=False)
                keep = sv > sv.max(initial=0.0) * max(Xc.shape) * np.finfo(float).eps
                U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
                vs = Vt.T * sv
                inner = np.eye(len(sv)) - vs.T @ bread @ vs
                inner = (inner + inner.T) / 2
                adjust = (vs, U, inner, scipy.linalg.pinvh(inner, atol=1e-10, rtol=0.0))
        for r in range(resid.shape[1]):
            e = np.ascontiguousarray(resid[idx, r])
            if adjust is not None:
                vs, U, inner, pinv = adjust
                t = U.T @ e
                w = pinv @ t
                if not np.allclose(inner @ w, t, rtol=1e-6, atol=1e-8 * (1.0 + np.abs(t).max())):
                    name = labels[c] if labels is not None else c
                    raise np.linalg.LinAlgError(f"CR3 adjustment singular for cluster {name}")
                u = vs @ w
            else:
                u = Xc.T @ e
                if cho is not None:
                    u = u + G @ scipy.linalg.cho_solve(cho, u)
            out[c, :, r] = u
    return out


def _ill_conditioned(m: np.ndarray) -> bool:
    d = np.sqrt(np.abs(np.diag(m)))
    if np.any(d == 0):
        return True
    eig = np.linalg.eigvalsh(m / np.outer(d, d))
    return eig[0] <= eig[-1] / _COND_LIMIT


def contrast_scores(bread: np.ndarray, scores: np.ndarray, contrast: np.ndarray) -> np.ndarray:
    """Per-cluster contributions w' B u_c, shape (clusters, responses)."""
    v = bread @ contrast
    return np.column_stack([np.ascontiguousarray(scores[:, :, r]) @ v for r in range(scores.shape[2])])


def sandwich(bread: np.ndarray, scores: np.ndarray, contrast: np.ndarray | None = None) -> np.ndarray:
    """Cluster sandwich for one response; full matrix or a contrast's variance."""
    s = scores[:, :, 0] if scores.ndim == 3 else scores
    if contrast is None:
        meat = s.T @ s
        return bread @ meat @ bread
    proj = s @ (bread @ contrast)
    return float(proj @ proj)
