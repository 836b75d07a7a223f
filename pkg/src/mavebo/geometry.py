"""Domains, orthonormal frames and the box/affine alternating projection.

Orthonormal matrices are plain ``(D, d)`` numpy arrays; :func:`check_orthonormal`
validates them where a routine depends on ``B.T @ B == I``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DiagnosticUndefinedError, DimensionError

ORTHONORMAL_TOL = 1e-8

CONVERGED = "converged"
INFEASIBLE = "infeasible-limit"


@dataclass(frozen=True)
class BallDomain:
    """Closed Euclidean ball of ``radius`` centred at the origin of R^dim."""

    dim: int
    radius: float = 1.0

    def __post_init__(self):
        if int(self.dim) < 1:
            raise DimensionError(f"ball dimension must be >= 1, got {self.dim}")
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    def contains(self, x, atol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.linalg.norm(np.atleast_2d(x), axis=1) <= self.radius + atol))

    def sample(self, rng, n):
        return sample_ball_uniform(rng, self, n)


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower_j, upper_j]`` in R^D."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionError("box bounds must be 1-d vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("box requires lower[j] < upper[j] for every coordinate")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, dim, half_width=1.0):
        """The box ``[-half_width, half_width]^dim``."""
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x, atol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class ProjectionResult:
    """Output of :func:`alternating_projection`.

    ``residuals`` holds ``||B^T v_i - z||`` for every box iterate ``v_i``
    visited, so callers can audit the decrease.
    """

    point: np.ndarray
    residual: float
    iterations: int
    status: str
    residuals: tuple = field(default=(), repr=False)

    @property
    def converged(self):
        return self.status == CONVERGED


def sample_ball_uniform(rng, domain, n):
    """Draw ``n`` points uniformly from a :class:`BallDomain`.

    Directions come from normalised Gaussians and radii from
    ``radius * U**(1/D)``, which is exact in any dimension.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    D = domain.dim
    g = rng.standard_normal((n, D))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero but would divide by zero
    norms[norms == 0] = 1.0
    r = domain.radius * rng.uniform(size=(n, 1)) ** (1.0 / D)
    pts = g / norms * r
    # keep the norm bound exact under rounding
    over = np.linalg.norm(pts, axis=1) > domain.radius
    if np.any(over):
        pts[over] *= domain.radius / np.linalg.norm(pts[over], axis=1, keepdims=True)
        pts[over] = np.nextafter(pts[over], 0.0)
    return pts


def random_orthonormal(rng, D, d):
    """Haar-distributed ``D x d`` matrix with orthonormal columns (QR of a Gaussian)."""
    if not 1 <= d <= D:
        raise DimensionError(f"need 1 <= d <= D, got d={d}, D={D}")
    q, r = np.linalg.qr(rng.standard_normal((D, d)))
    # sign fix makes the distribution exactly rotation invariant
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def check_orthonormal(B, tol=ORTHONORMAL_TOL):
    """Return ``B`` as a 2-d float array, raising if ``||B^T B - I||_F > tol``."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[1] > B.shape[0]:
        raise DimensionError(f"expected a D x d matrix with d <= D, got shape {B.shape}")
    err = np.linalg.norm(B.T @ B - np.eye(B.shape[1]))
    if err > tol:
        raise ValueError(f"matrix is not orthonormal: ||B^T B - I||_F = {err:.3e}")
    return B


def orthonormalize(M):
    """Nearest matrix with orthonormal columns (polar factor ``U V^T`` of the SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    return U @ Vt


def _as_frames(B, B_hat):
    B = np.asarray(B, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    B = B[:, None] if B.ndim == 1 else B
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    if B.shape[0] != B_hat.shape[0]:
        raise DimensionError(
            f"frames live in different ambient dimensions: {B.shape[0]} vs {B_hat.shape[0]}"
        )
    return B, B_hat


def subspace_distance(B, B_hat):
    """Frobenius gap ``||B^T (I - B_hat B_hat^T)||_F`` between two spans.

    Zero exactly when ``span(B)`` is contained in ``span(B_hat)``.
    """
    B, B_hat = _as_frames(B, B_hat)
    M = B.T - (B.T @ B_hat) @ B_hat.T
    return float(np.linalg.norm(M))


def subspace_distance_svd(B, B_hat):
    """Same quantity as :func:`subspace_distance` via singular values of ``B^T B_hat``."""
    B, B_hat = _as_frames(B, B_hat)
    psi = np.linalg.svd(B.T @ B_hat, compute_uv=False)
    return float(np.sqrt(max(B.shape[1] - np.sum(psi**2), 0.0)))


def det_lower_bound_check(B, B_hat, slack=1e-10):
    """Compare ``|det(B^T B_hat)|`` against ``sqrt(1 - delta**2)``.

    Returns
    -------
    det_abs, bound, holds : float, float, bool
    """
    B, B_hat = _as_frames(B, B_hat)
    if B.shape[1] != B_hat.shape[1]:
        raise DimensionError("determinant check needs square B^T B_hat (d == d_e)")
    delta = subspace_distance(B, B_hat)
    if delta >= 1:
        raise DiagnosticUndefinedError(f"bound undefined for subspace distance {delta:.4f} >= 1")
    det_abs = float(abs(np.linalg.det(B.T @ B_hat)))
    bound = float(np.sqrt(1.0 - delta**2))
    return det_abs, bound, det_abs >= bound - slack


def clamp_to_box(u, box):
    """Euclidean projection onto a box: clip every coordinate to its bounds."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != box.dim:
        raise DimensionError(f"vector length {u.shape[-1]} does not match box dimension {box.dim}")
    return np.clip(u, box.lower, box.upper)


def project_affine(v, B_hat, z):
    """Euclidean projection of ``v`` onto ``{x : B_hat^T x = z}`` for orthonormal ``B_hat``."""
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != B_hat.shape[1]:
        raise DimensionError(f"z has length {z.size}, B_hat has {B_hat.shape[1]} columns")
    v = np.asarray(v, dtype=float)
    return v - B_hat @ (B_hat.T @ v - z)


def alternating_projection(z, B_hat, box, tol=1e-8, max_iter=10_000, stall_window=10,
                           stall_rtol=1e-12):
    """Find a point of the box whose reduced coordinates ``B_hat^T x`` equal ``z``.

    Starts from ``u = B_hat z`` and alternates clipping to the box with
    projection back onto the affine fibre. If the two sets do not meet, the
    residual stalls; the last box iterate is then returned with status
    ``"infeasible-limit"``.

    Parameters
    ----------
    z : (d,) array
        Target reduced coordinates.
    B_hat : (D, d) array
        Orthonormal frame.
    box : BoxDomain
    tol : float
        Residual ``||B_hat^T x - z||`` accepted as converged.
    max_iter : int
        Maximum number of box projections.
    stall_window, stall_rtol
        Declare infeasibility when the residual shrank by less than
        ``stall_rtol`` (relative) over the last ``stall_window`` iterations.

    Returns
    -------
    ProjectionResult
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if B_hat.shape[0] != box.dim:
        raise DimensionError(f"B_hat has {B_hat.shape[0]} rows, box has dimension {box.dim}")

    u = project_affine(np.zeros(box.dim), B_hat, z)  # = B_hat z
    if np.all(u >= box.lower) and np.all(u <= box.upper):
        res = float(np.linalg.norm(B_hat.T @ u - z))
        return ProjectionResult(u, res, 0, CONVERGED, (res,))

    history = []
    v = u
    for it in range(1, max_iter + 1):
        v = clamp_to_box(u, box)
        gap = B_hat.T @ v - z
        res = float(np.linalg.norm(gap))
        history.append(res)
        if res <= tol:
            return ProjectionResult(v, res, it, CONVERGED, tuple(history))
        if len(history) > stall_window:
            old = history[-1 - stall_window]
            if old - res <= stall_rtol * old:
                break
        u = v - B_hat @ gap
    return ProjectionResult(v, history[-1], len(history), INFEASIBLE, tuple(history))


def _unit_directions(d, n_dirs=20_000):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    g = np.random.default_rng(0).standard_normal((n_dirs, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([g, np.eye(d), -np.eye(d)])


def inscribed_radius(B_hat, box, n_dirs=20_000):
    """Radius of the largest origin-centred ball inside ``{B_hat^T x : x in box}``.

    The image of a box is a zonotope whose support function in direction
    ``u`` is ``sum_j max(lower_j w_j, upper_j w_j)`` with ``w = B_hat u``;
    the radius is its minimum over unit directions (exact for ``d = 1``,
    evaluated on a dense direction set otherwise).
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B_hat = B_hat[:, None] if B_hat.ndim == 1 else B_hat
    W = _unit_directions(B_hat.shape[1], n_dirs) @ B_hat.T
    support = np.sum(np.maximum(W * box.lower, W * box.upper), axis=1)
    radius = float(support.min())
    if radius <= 0:
        raise ValueError("the box must contain the origin in its interior")
    return radius
