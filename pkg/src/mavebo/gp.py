"""Gaussian-process regression with squared-exponential and Matern kernels.

Hyperparameters are fitted by maximum marginal likelihood; the prior mean is
a constant (the training mean unless given explicitly).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import DimensionError, IllConditionedError

SE = "se"
MATERN = "matern"
_MATERN_NUS = (0.5, 1.5, 2.5)

NUGGET_START = 1e-10
NUGGET_MAX = 1e-4

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel ``tau^2 * rho(r)`` with per-axis lengthscales.

    ``r = sqrt(sum(((z_i - z'_i) / theta_i)**2))``. For the Matern family
    only the closed forms ``nu in {1/2, 3/2, 5/2}`` are supported.
    """

    family: str
    signal_variance: float
    lengthscales: tuple
    nu: float = 2.5

    def __post_init__(self):
        family = self.family.lower().replace("é", "e")
        if family not in (SE, MATERN):
            raise ValueError(f"unknown kernel family {self.family!r}")
        ls = tuple(float(t) for t in np.atleast_1d(self.lengthscales))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not ls or min(ls) <= 0:
            raise ValueError("lengthscales must be positive")
        if family == MATERN and float(self.nu) not in _MATERN_NUS:
            raise ValueError(f"Matern smoothness must be one of {_MATERN_NUS}, got {self.nu}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self):
        return len(self.lengthscales)

    def with_params(self, signal_variance, lengthscales):
        return KernelSpec(self.family, signal_variance, tuple(lengthscales), self.nu)


def _scaled_sqdist(spec, A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != spec.dim or B.shape[1] != spec.dim:
        raise DimensionError(
            f"kernel expects {spec.dim}-dim points, got {A.shape[1]} and {B.shape[1]}")
    theta = np.asarray(spec.lengthscales)
    diff = (A[:, None, :] - B[None, :, :]) / theta
    return diff, np.sum(diff**2, axis=-1)


def _profile(spec, r2):
    """Correlation as a function of squared scaled distance."""
    if spec.family == SE:
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if spec.nu == 0.5:
        return np.exp(-r)
    if spec.nu == 1.5:
        s = np.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    s = np.sqrt(5.0) * r
    return (1.0 + s + s**2 / 3.0) * np.exp(-s)


def kernel_matrix(spec, A, B=None):
    """Cross-covariance matrix ``k(A_i, B_j)``."""
    B = A if B is None else B
    _, r2 = _scaled_sqdist(spec, A, B)
    return spec.signal_variance * _profile(spec, r2)


def kernel_eval(spec, z, z_prime):
    """Kernel value for a single pair of points."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zp = np.atleast_1d(np.asarray(z_prime, dtype=float))
    if z.shape != zp.shape:
        raise DimensionError(f"point shapes differ: {z.shape} vs {zp.shape}")
    return float(kernel_matrix(spec, z[None, :], zp[None, :])[0, 0])


def _kernel_and_grads(spec, Z):
    """Kernel matrix and its derivatives w.r.t. log(tau^2) and each log(theta_k)."""
    diff, r2 = _scaled_sqdist(spec, Z, Z)
    tau2 = spec.signal_variance
    K = tau2 * _profile(spec, r2)
    grads = [K]
    # dK/dlog(theta_k) = -(dk/dr) * r * (diff_k^2 / r^2) = g(r) * diff_k^2
    if spec.family == SE:
        g = K
    else:
        r = np.sqrt(r2)
        with np.errstate(divide="ignore", invalid="ignore"):
            if spec.nu == 0.5:
                g = np.where(r > 0, tau2 * np.exp(-r) / r, 0.0)
            elif spec.nu == 1.5:
                g = 3.0 * tau2 * np.exp(-np.sqrt(3.0) * r)
            else:
                s = np.sqrt(5.0) * r
                g = (5.0 / 3.0) * tau2 * (1.0 + s) * np.exp(-s)
    for k in range(spec.dim):
        grads.append(g * diff[..., k] ** 2)
    return K, grads


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float

    @property
    def std(self):
        return float(np.sqrt(self.variance))


@dataclass(frozen=True, eq=False)
class GpModel:
    """A GP conditioned on ``(Z, Y)``; immutable once built by :func:`fit_gp`."""

    kernel: KernelSpec
    prior_mean: float
    train_inputs: np.ndarray
    train_values: np.ndarray
    nugget: float
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def n(self):
        return self.train_inputs.shape[0]

    @property
    def dim(self):
        return self.train_inputs.shape[1]

    def predict(self, Zq):
        """Posterior mean and variance at the rows of ``Zq`` (vectorised)."""
        Zq = np.atleast_2d(np.asarray(Zq, dtype=float))
        Kx = kernel_matrix(self.kernel, Zq, self.train_inputs)
        mean = self.prior_mean + Kx @ self.alpha
        v = solve_triangular(self.chol, Kx.T, lower=True, check_finite=False)
        var = self.kernel.signal_variance - np.sum(v**2, axis=0)
        return mean, np.maximum(var, 0.0)

    def posterior(self, z):
        z = np.asarray(z, dtype=float)
        if z.size != self.dim:
            raise DimensionError(f"query has dimension {z.size}, model has {self.dim}")
        mean, var = self.predict(z.reshape(1, -1))
        return PredictiveDistribution(float(mean[0]), float(var[0]))


def _cholesky_with_nugget(K, tau2, nugget):
    """Lower Cholesky factor of ``K + nugget*I``, escalating ``nugget`` by 10x on failure."""
    n = K.shape[0]
    eye = np.eye(n)
    cap = max(NUGGET_MAX * tau2, nugget)
    current = nugget
    while True:
        try:
            return np.linalg.cholesky(K + current * eye), current
        except np.linalg.LinAlgError:
            pass
        if current >= cap:
            raise IllConditionedError(
                f"covariance not positive definite with nugget up to {current:.3e}")
        current = min(max(current * 10.0, NUGGET_START * tau2), cap)


def fit_gp(kernel, Z, Y, mean=None, nugget=None):
    """Condition a GP prior on training data.

    Parameters
    ----------
    kernel : KernelSpec
    Z : (n, d) array
    Y : (n,) array
    mean : float, optional
        Constant prior mean; defaults to ``mean(Y)``.
    nugget : float, optional
        Starting diagonal jitter; defaults to ``1e-10 * tau^2``. It is
        multiplied by 10 on factorisation failure up to ``1e-4 * tau^2``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if Z.shape[0] != Y.size or Y.size < 1:
        raise DimensionError(f"need matching nonempty Z and Y, got {Z.shape[0]} and {Y.size}")
    if Z.shape[1] != kernel.dim:
        raise DimensionError(f"kernel has {kernel.dim} lengthscales, inputs have dim {Z.shape[1]}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    tau2 = kernel.signal_variance
    mu = float(np.mean(Y)) if mean is None else float(mean)
    nugget = NUGGET_START * tau2 if nugget is None else float(nugget)
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    K = kernel_matrix(kernel, Z)
    L, used = _cholesky_with_nugget(K, tau2, nugget)
    alpha = cho_solve((L, True), Y - mu, check_finite=False)
    Z = Z.copy()
    Y = Y.copy()
    for arr in (Z, Y, L, alpha):
        arr.setflags(write=False)
    return GpModel(kernel, mu, Z, Y, used, L, alpha)


def posterior(model, z):
    return model.posterior(z)


def log_marginal_likelihood(model):
    """Gaussian log-density of ``Y`` under ``N(mu 1, K + nugget I)``."""
    r = model.train_values - model.prior_mean
    return float(-0.5 * r @ model.alpha - np.sum(np.log(np.diag(model.chol)))
                 - 0.5 * model.n * _LOG_2PI)


@dataclass(frozen=True)
class HyperBounds:
    """Box bounds for ``tau^2`` and every lengthscale (natural scale)."""

    signal_variance: tuple = (1e-6, 1e6)
    lengthscale: tuple = (1e-2, 1e2)

    def __post_init__(self):
        for lo, hi in (self.signal_variance, self.lengthscale):
            if not 0 < lo < hi:
                raise ValueError("hyperparameter bounds must be positive intervals")


def _neg_lml_and_grad(logp, template, Z, r, nugget_rel):
    tau2 = np.exp(logp[0])
    spec = template.with_params(tau2, np.exp(logp[1:]))
    K, grads = _kernel_and_grads(spec, Z)
    try:
        L, _ = _cholesky_with_nugget(K, tau2, nugget_rel * tau2)
    except IllConditionedError:
        return 1e25, np.zeros_like(logp)
    alpha = cho_solve((L, True), r, check_finite=False)
    n = r.size
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    inner = np.outer(alpha, alpha) - Kinv
    grad = np.array([0.5 * np.sum(inner * dK) for dK in grads])
    return -lml, -grad


def _median_pairwise_distance(Z):
    n = Z.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    dist = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=-1)[iu]
    dist = dist[dist > 0]
    return float(np.median(dist)) if dist.size else 1.0


def fit_hyperparameters(Z, Y, family=SE, bounds=None, rng=None, nu=2.5, n_starts=8,
                        nugget=NUGGET_START):
    """Maximum-likelihood kernel hyperparameters by multi-start L-BFGS-B.

    One start uses the data variance for ``tau^2`` and the median pairwise
    distance for every lengthscale; the rest are log-uniform in ``bounds``.
    The result is never worse in likelihood than that heuristic start.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    bounds = HyperBounds() if bounds is None else bounds
    rng = np.random.default_rng(0) if rng is None else rng
    d = Z.shape[1]
    r = Y - np.mean(Y)
    log_lo = np.log([bounds.signal_variance[0]] + [bounds.lengthscale[0]] * d)
    log_hi = np.log([bounds.signal_variance[1]] + [bounds.lengthscale[1]] * d)
    box = list(zip(log_lo, log_hi))
    template = KernelSpec(family, 1.0, (1.0,) * d, nu)

    var = float(np.var(Y)) if Y.size > 1 else 1.0
    var = var if var > 0 else 1.0
    heuristic = np.log([var] + [_median_pairwise_distance(Z)] * d)
    heuristic = np.clip(heuristic, log_lo, log_hi)
    starts = [heuristic] + [rng.uniform(log_lo, log_hi) for _ in range(n_starts - 1)]

    best_p = heuristic
    best_f, _ = _neg_lml_and_grad(heuristic, template, Z, r, nugget)
    for x0 in starts:
        try:
            res = minimize(_neg_lml_and_grad, x0, args=(template, Z, r, nugget), jac=True,
                           method="L-BFGS-B", bounds=box)
        except (ValueError, FloatingPointError):
            continue
        if np.isfinite(res.fun) and res.fun < best_f:
            best_f, best_p = float(res.fun), res.x
    if best_f >= 1e25:
        raise IllConditionedError("no hyperparameter start yielded a valid factorisation")
    return template.with_params(float(np.exp(best_p[0])), np.exp(best_p[1:]))
