"""Minimum average variance estimation (MAVE) of dimension-reduction directions.

For a frame ``B`` the criterion is

    L(B) = sum_j sum_i w_ij(B) * (y_i - a_j - b_j^T B^T (x_i - x_j))**2

where ``w_ij`` are Epanechnikov weights computed from the projected inputs
and ``(a_j, b_j)`` are weighted local-linear fits around every anchor
``x_j``. Estimation alternates between the local fits (B fixed) and a
stacked least-squares solve for ``B`` (fits fixed), followed by
re-orthonormalisation.

Weight matrices are stored anchor-major: ``W[j, i]`` is the weight of
sample ``i`` in the fit around anchor ``j``, so every row sums to one.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import (BandwidthTooSmallError, DimensionError, InsufficientDataError,
                     RankDeficiencyError)
from .geometry import orthonormalize, random_orthonormal

_COND_LIMIT = 1e13


@dataclass(frozen=True)
class Dataset:
    """Paired inputs ``x_i`` (rows of ``inputs``) and scalar responses ``y_i``."""

    inputs: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float)
        y = np.array(self.responses, dtype=float).ravel()
        if X.ndim != 2:
            raise DimensionError(f"inputs must be an n x D matrix, got shape {X.shape}")
        if X.shape[0] != y.size:
            raise DimensionError(f"{X.shape[0]} inputs but {y.size} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]


@dataclass(frozen=True)
class MaveConfig:
    """Controls for :func:`estimate_edr`.

    The base bandwidth is ``bandwidth_scale * n**(-1 / (D + 4))``.
    """

    target_dim: int
    bandwidth_scale: float = 2.0
    max_outer_iters: int = 50
    tol: float = 1e-4
    n_restarts: int = 5
    ridge: float = 1e-8
    inflate_factor: float = 1.5
    max_inflations: int = 10

    def __post_init__(self):
        if self.target_dim < 1:
            raise DimensionError(f"target_dim must be >= 1, got {self.target_dim}")
        if not self.bandwidth_scale > 0:
            raise ValueError("bandwidth_scale must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.max_outer_iters < 1 or self.n_restarts < 1:
            raise ValueError("max_outer_iters and n_restarts must be >= 1")

    def bandwidth(self, n, D):
        return self.bandwidth_scale * n ** (-1.0 / (D + 4))


class LocalFit(NamedTuple):
    """Local-linear fit around one anchor: intercept ``a`` and slope ``b``."""

    a: float
    b: np.ndarray


@dataclass(frozen=True)
class EdrEstimate:
    """Fitted frame with its criterion value and convergence record."""

    B_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_history: tuple = field(default=(), repr=False)


def epanechnikov_weights(projected, j, h):
    """Normalised Epanechnikov weights of all points around anchor ``j``.

    Raw kernel values are ``0.75 * h**-d * (1 - ||z_i - z_j||**2 / h**2)^+``.
    """
    Z = np.asarray(projected, dtype=float)
    Z = Z[:, None] if Z.ndim == 1 else Z
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    h = np.float64(h)
    sq = np.sum((Z - Z[j]) ** 2, axis=1)
    with np.errstate(over="ignore", under="ignore"):
        raw = 0.75 * h ** (-Z.shape[1]) * np.maximum(1.0 - sq / h**2, 0.0)
    total = raw.sum()
    if total <= 0:
        raise BandwidthTooSmallError(f"no point within bandwidth {h} of anchor {j}")
    return raw / total


def weight_matrix(projected, h, min_support=None, inflate_factor=1.5, max_inflations=10):
    """Anchor-major weight matrix with per-anchor bandwidth inflation.

    Any anchor with fewer than ``min_support`` points strictly inside its
    window has its bandwidth multiplied by ``inflate_factor``, at most
    ``max_inflations`` times.

    Returns
    -------
    W : (n, n) array
        ``W[j, i]`` is the weight of point ``i`` for anchor ``j``.
    h_used : (n,) array
        Bandwidth finally used for every anchor.
    """
    Z = np.asarray(projected, dtype=float)
    Z = Z[:, None] if Z.ndim == 1 else Z
    n, d = Z.shape
    if min_support is None:
        min_support = d + 2
    min_support = min(min_support, n)
    sq = np.sum(Z**2, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T, 0.0)
    np.fill_diagonal(dist2, 0.0)

    h_used = np.full(n, float(h))
    for _ in range(max_inflations):
        short = np.count_nonzero(dist2 < h_used[:, None] ** 2, axis=1) < min_support
        if not short.any():
            break
        h_used[short] *= inflate_factor

    raw = 0.75 * h_used[:, None] ** (-d) * np.maximum(1.0 - dist2 / h_used[:, None] ** 2, 0.0)
    totals = raw.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise BandwidthTooSmallError("an anchor received no positive kernel weight")
    return raw / totals, h_used


def _solve_local(M, rhs, ridge):
    """Batched (d+1)-dim normal equations with a trace-scaled ridge on the slopes."""
    k = M.shape[-1]
    if ridge > 0:
        lam = ridge * np.trace(M, axis1=-2, axis2=-1) / k
        M = M.copy()
        idx = np.arange(1, k)
        M[..., idx, idx] += lam[..., None]
    else:
        cond = np.linalg.cond(M)
        if np.any(~np.isfinite(cond) | (cond > _COND_LIMIT)):
            raise RankDeficiencyError("singular local design; supply a positive ridge")
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def local_linear_fit(dataset, B_hat, j, weights, ridge=0.0):
    """Weighted local-linear fit of ``y`` on ``B_hat^T (x_i - x_j)`` around anchor ``j``."""
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    w = np.asarray(weights, dtype=float)
    dz = (dataset.inputs - dataset.inputs[j]) @ B_hat
    G = np.column_stack([np.ones(dataset.n), dz])
    M = G.T @ (w[:, None] * G)
    rhs = G.T @ (w * dataset.responses)
    coef = _solve_local(M, rhs, ridge)
    return LocalFit(float(coef[0]), coef[1:])


def fit_all_anchors(dataset, B_hat, W, ridge=0.0):
    """Local-linear fits at every anchor, vectorised.

    Returns
    -------
    a : (n,) array
    b : (n, d) array
    """
    X, y = dataset.inputs, dataset.responses
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    Z = X @ B_hat
    n, d = Z.shape
    s0 = W.sum(axis=1)
    m1 = W @ Z
    m2 = (W @ (Z[:, :, None] * Z[:, None, :]).reshape(n, d * d)).reshape(n, d, d)
    # centred moments around each anchor
    c1 = m1 - s0[:, None] * Z
    c2 = (m2 - Z[:, :, None] * m1[:, None, :] - m1[:, :, None] * Z[:, None, :]
          + s0[:, None, None] * Z[:, :, None] * Z[:, None, :])
    M = np.empty((n, d + 1, d + 1))
    M[:, 0, 0] = s0
    M[:, 0, 1:] = c1
    M[:, 1:, 0] = c1
    M[:, 1:, 1:] = c2
    wy = W @ y
    rhs = np.empty((n, d + 1))
    rhs[:, 0] = wy
    rhs[:, 1:] = W @ (y[:, None] * Z) - wy[:, None] * Z
    coef = _solve_local(M, rhs, ridge)
    return coef[:, 0], coef[:, 1:]


def _criterion(dataset, B_hat, W, a, b):
    Z = dataset.inputs @ B_hat
    pred = a[:, None] + b @ Z.T - np.sum(b * Z, axis=1)[:, None]
    R = dataset.responses[None, :] - pred
    return float(np.sum(W * R**2))


def mave_weights(dataset, B_hat, config):
    """Weight matrix at the configured bandwidth for the projection ``X @ B_hat``."""
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    h = config.bandwidth(dataset.n, dataset.dim)
    W, _ = weight_matrix(dataset.inputs @ B_hat, h, min_support=B_hat.shape[1] + 2,
                         inflate_factor=config.inflate_factor,
                         max_inflations=config.max_inflations)
    return W


def mave_objective(dataset, B_hat, config, weights=None):
    """Value of the MAVE criterion at ``B_hat``.

    Local fits are always recomputed; ``weights`` may be passed to hold the
    kernel weights fixed (otherwise they are derived from ``B_hat``).
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    W = mave_weights(dataset, B_hat, config) if weights is None else weights
    a, b = fit_all_anchors(dataset, B_hat, W, config.ridge)
    return max(_criterion(dataset, B_hat, W, a, b), 0.0)


def update_directions(dataset, fits, weights, d, ridge=1e-10):
    """Least-squares re-estimate of the frame given local fits and weights.

    Minimises the criterion over unconstrained ``D x d`` matrices by solving
    the normal equations in ``vec(B)``, then returns the nearest matrix with
    orthonormal columns.

    Parameters
    ----------
    fits : (a, b) tuple of arrays or sequence of LocalFit
    weights : (n, n) array, anchor-major
    ridge : float
        Relative jitter applied only when the stacked system is
        numerically singular.

    Returns
    -------
    B_new : (D, d) array
    stabilized : bool
        True when the ridge had to be applied.
    """
    X, y = dataset.inputs, dataset.responses
    n, D = X.shape
    if isinstance(fits, tuple) and len(fits) == 2 and np.ndim(fits[0]) == 1 \
            and not isinstance(fits[0], LocalFit):
        a, b = np.asarray(fits[0], float), np.asarray(fits[1], float)
    else:
        a = np.array([f.a for f in fits], dtype=float)
        b = np.array([np.atleast_1d(f.b) for f in fits], dtype=float)
    b = b.reshape(n, d)
    W = np.asarray(weights, dtype=float)

    s0 = W.sum(axis=1)
    mx = W @ X
    P = (W @ (X[:, :, None] * X[:, None, :]).reshape(n, D * D)).reshape(n, D, D)
    S = (P - X[:, :, None] * mx[:, None, :] - mx[:, :, None] * X[:, None, :]
         + s0[:, None, None] * X[:, :, None] * X[:, None, :])
    wy = W @ y
    t = (W @ (y[:, None] * X) - a[:, None] * mx - wy[:, None] * X
         + (a * s0)[:, None] * X)

    # column-major vec(B): entry (k, p) sits at p * D + k
    A = np.einsum("jp,jq,jkl->pkql", b, b, S, optimize=True).reshape(d * D, d * D)
    rhs = np.einsum("jp,jk->pk", b, t).reshape(d * D)

    stabilized = False
    scale = np.trace(A) / (d * D)
    cond = np.linalg.cond(A) if scale > 0 else np.inf
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        stabilized = True
        A = A + max(ridge * scale, 1e-300) * np.eye(d * D)
    vec = np.linalg.solve(A, rhs)
    B_ls = vec.reshape(d, D).T
    if not np.any(B_ls):
        # no information at all; keep a valid frame
        B_ls = np.eye(D, d)
        stabilized = True
    return orthonormalize(B_ls), stabilized


def _projector_change(B1, B2):
    return float(np.linalg.norm(B1 @ B1.T - B2 @ B2.T))


def _opg_start(dataset, config):
    """Top singular directions of per-anchor gradients from a full-dimensional fit."""
    D = dataset.dim
    I = np.eye(D)
    h = config.bandwidth(dataset.n, D)
    W, _ = weight_matrix(dataset.inputs, h, min_support=D + 2,
                         inflate_factor=config.inflate_factor,
                         max_inflations=config.max_inflations)
    _, slopes = fit_all_anchors(dataset, I, W, max(config.ridge, 1e-12))
    _, _, Vt = np.linalg.svd(slopes, full_matrices=False)
    return Vt[: config.target_dim].T.copy()


_STEP_FRACTIONS = (1.0, 0.5, 0.25, 0.125, 0.0625)


def _refine(dataset, B0, config):
    """Alternating minimisation from one starting frame.

    A candidate frame is accepted only if the criterion (with weights
    recomputed at the candidate) does not increase; otherwise the step
    towards it is halved a few times.
    """
    d = config.target_dim
    B = orthonormalize(B0)
    W = mave_weights(dataset, B, config)
    a, b = fit_all_anchors(dataset, B, W, config.ridge)
    obj = _criterion(dataset, B, W, a, b)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        B_cand, _ = update_directions(dataset, (a, b), W, d)
        # align the candidate basis with B before damping
        U, _, Vt = np.linalg.svd(B_cand.T @ B)
        B_cand = B_cand @ (U @ Vt)
        accepted = None
        for frac in _STEP_FRACTIONS:
            Bt = B_cand if frac == 1.0 else orthonormalize(B + frac * (B_cand - B))
            Wt = mave_weights(dataset, Bt, config)
            at, bt = fit_all_anchors(dataset, Bt, Wt, config.ridge)
            obj_t = _criterion(dataset, Bt, Wt, at, bt)
            if obj_t <= obj:
                accepted = (Bt, Wt, at, bt, obj_t)
                break
        if accepted is None:
            converged = _projector_change(B_cand, B) < config.tol
            break
        change = _projector_change(accepted[0], B)
        B, W, a, b, obj = accepted
        history.append(obj)
        if change < config.tol:
            converged = True
            break
    return EdrEstimate(B, max(obj, 0.0), it, converged, tuple(history))


def estimate_edr(dataset, config, rng=None, init=None):
    """Estimate a ``D x target_dim`` orthonormal frame spanning the EDR space.

    Parameters
    ----------
    dataset : Dataset
    config : MaveConfig
    rng : numpy.random.Generator, optional
        Source for the random restarts.
    init : (D, d) array, optional
        Warm start. When given, only this start is refined.

    Returns
    -------
    EdrEstimate
        The restart with the smallest final criterion.
    """
    d = config.target_dim
    n, D = dataset.n, dataset.dim
    if d > D:
        raise DimensionError(f"target_dim {d} exceeds input dimension {D}")
    if n < d + 2:
        raise InsufficientDataError(f"need at least {d + 2} samples for d={d}, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)

    if d == D:
        I = np.eye(D)
        obj = mave_objective(dataset, I, config)
        return EdrEstimate(I, obj, 0, True, (obj,))

    if init is not None:
        starts = [np.asarray(init, dtype=float).reshape(D, d)]
    else:
        starts = [_opg_start(dataset, config)]
        starts += [random_orthonormal(rng, D, d) for _ in range(config.n_restarts - 1)]

    best = None
    for B0 in starts:
        est = _refine(dataset, B0, config)
        if best is None or est.objective < best.objective:
            best = est
    return best


def warm_config(config, max_outer_iters=10):
    """Copy of ``config`` suited to warm-started refits."""
    return replace(config, max_outer_iters=min(config.max_outer_iters, max_outer_iters),
                   n_restarts=1)
