"""Expected improvement and its maximisation over a ball."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .geometry import sample_ball_uniform

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcqConfig:
    """Inner-loop search controls.

    ``n_candidates`` uniform probes are scored first; the best
    ``n_starts - 1`` of them, plus the incumbent location, seed compass
    searches whose step halves on failure until it drops below
    ``step_tol * radius``.
    """

    n_starts: int = 32
    max_local_iters: int = 200
    step_tol: float = 1e-6
    n_candidates: int = 1024
    initial_step: float = 0.25

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_local_iters < 1 or self.n_candidates < 0:
            raise ValueError("invalid search budget")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")


def _phi(x):
    with np.errstate(over="ignore"):  # huge |x| gives phi = 0
        return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def h_func(x):
    """``h(x) = x * Phi(x) + phi(x)``, the expected positive part of ``N(x, 1)``."""
    x = np.asarray(x, dtype=float)
    out = x * ndtr(x) + _phi(x)
    return float(out) if out.ndim == 0 else out


def expected_improvement(mean, variance, incumbent):
    """Vectorised EI ``E[(g - incumbent)^+]`` for ``g ~ N(mean, variance)``."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    gap = mean - incumbent
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sigma > 0, gap / sigma, 0.0)
    ei = np.where(sigma > 0, gap * ndtr(u) + sigma * _phi(u), np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


def ei_value(pred, incumbent):
    """EI of a single :class:`~mavebo.gp.PredictiveDistribution`."""
    return float(expected_improvement(pred.mean, pred.variance, incumbent))


def _into_ball(P, radius):
    norms = np.linalg.norm(P, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return P * scale


def maximize_ei(model, incumbent, domain, config=None, rng=None):
    """Maximise EI over a :class:`~mavebo.geometry.BallDomain` in reduced space.

    Trial steps leaving the ball are pulled back radially onto its surface.

    Returns
    -------
    z : (d,) array
    ei : float
        EI at ``z``.
    """
    config = AcqConfig() if config is None else config
    rng = np.random.default_rng(0) if rng is None else rng
    d, radius = domain.dim, domain.radius
    if model.dim != d:
        raise ValueError(f"model dimension {model.dim} differs from domain dimension {d}")

    def score(P):
        mean, var = model.predict(P)
        return expected_improvement(mean, var, incumbent)

    best_idx = int(np.argmax(model.train_values))
    seeds = [_into_ball(model.train_inputs[best_idx][None, :], radius)]
    n_random = config.n_starts - 1
    if n_random > 0:
        pool = sample_ball_uniform(rng, domain, max(config.n_candidates, n_random))
        pool_ei = score(pool)
        order = np.argsort(-pool_ei, kind="stable")[:n_random]
        seeds.append(pool[order])
    X = np.vstack(seeds)
    F = score(X)

    m = X.shape[0]
    step = np.full(m, config.initial_step * radius)
    min_step = config.step_tol * radius
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    for _ in range(config.max_local_iters):
        active = step >= min_step
        if not active.any():
            break
        idx = np.flatnonzero(active)
        trials = _into_ball(X[idx, None, :] + step[idx, None, None] * dirs[None], radius)
        T = score(trials.reshape(-1, d)).reshape(idx.size, 2 * d)
        k = np.argmax(T, axis=1)
        gain = T[np.arange(idx.size), k] > F[idx]
        moved = idx[gain]
        X[moved] = trials[gain, k[gain]]
        F[moved] = T[gain, k[gain]]
        step[idx[~gain]] *= 0.5

    j = int(np.argmax(F))
    z = X[j].copy()
    return z, float(score(z[None, :])[0])
