"""Sequential and concurrent MAVE-BO loops plus a random-search baseline.

All runners maximise a black-box ``objective(x) -> float`` and spend exactly
``N`` evaluations. Results are returned as a :class:`RunTrace`.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .acquisition import AcqConfig, maximize_ei
from .errors import IllConditionedError, InsufficientDataError, RunAborted
from .geometry import (BallDomain, BoxDomain, alternating_projection, inscribed_radius,
                       sample_ball_uniform, subspace_distance)
from .gp import SE, HyperBounds, fit_gp, fit_hyperparameters
from .mave import Dataset, MaveConfig, estimate_edr, warm_config

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-10
DUPLICATE_STEP = 1e-3


@dataclass(frozen=True)
class BudgetSplit:
    """Total budget ``N`` of which ``N0`` go to uniform initial sampling."""

    N: int
    N0: int

    def __post_init__(self):
        if not 3 <= self.N0 < self.N:
            raise ValueError(f"budget requires 3 <= N0 < N, got N={self.N}, N0={self.N0}")

    @property
    def n_bo(self):
        return self.N - self.N0


@dataclass(frozen=True)
class TraceRecord:
    """One objective evaluation.

    ``posterior_sd`` is the GP standard deviation at the proposal (BO
    iterations only); it is kept for diagnostics and not serialised.
    """

    iter: int
    x: np.ndarray
    y: float
    best_y: float
    z: Optional[np.ndarray] = None
    simple_regret: Optional[float] = None
    delta_n: Optional[float] = None
    projection_residual: Optional[float] = None
    wall_ms: float = 0.0
    posterior_sd: Optional[float] = None


@dataclass
class RunTrace:
    algorithm: str
    seed: int
    records: list = field(default_factory=list)
    B_hat: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def best_y(self):
        return self.records[-1].best_y

    @property
    def ys(self):
        return np.array([r.y for r in self.records])

    @property
    def xs(self):
        return np.array([r.x for r in self.records])


@dataclass(frozen=True)
class OptimizerConfig:
    budget: BudgetSplit
    mave: MaveConfig
    domain: Union[BallDomain, BoxDomain]
    kernel_family: str = SE
    nu: float = 2.5
    hyper_bounds: HyperBounds = field(default_factory=HyperBounds)
    acq: AcqConfig = field(default_factory=AcqConfig)
    seed: int = 0
    refit_hyperparams_every: int = 5
    cmave_outer_iters: int = 10
    projection_tol: float = 1e-8
    projection_max_iter: int = 10_000

    def __post_init__(self):
        if self.refit_hyperparams_every < 1:
            raise ValueError("refit_hyperparams_every must be >= 1")
        if self.mave.target_dim > self.domain.dim:
            raise ValueError("MAVE target dimension exceeds the input dimension")


def simple_regret(trace, f_max):
    """``f_max`` minus the best observed value."""
    if not len(trace):
        raise ValueError("empty trace")
    return float(f_max - max(r.y for r in trace.records))


class _Recorder:
    """Evaluates the objective and appends trace records."""

    def __init__(self, objective, trace, f_max):
        self.objective = objective
        self.trace = trace
        self.f_max = f_max
        self.best = -np.inf
        self.t0 = time.perf_counter()

    def __call__(self, x, **extra):
        y = float(self.objective(np.array(x, dtype=float)))
        if not np.isfinite(y):
            raise RunAborted(f"objective returned non-finite value {y}", self.trace)
        self.best = max(self.best, y)
        now = time.perf_counter()
        rec = TraceRecord(
            iter=len(self.trace.records) + 1,
            x=np.array(x, dtype=float),
            y=y,
            best_y=self.best,
            simple_regret=None if self.f_max is None else float(self.f_max - self.best),
            wall_ms=(now - self.t0) * 1e3,
            **extra,
        )
        self.t0 = now
        self.trace.records.append(rec)
        return y


def _streams(seed):
    # independent generators for initial design, MAVE restarts, MLE starts, EI search
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def _reduced_domain(domain, B_hat):
    d = B_hat.shape[1]
    if isinstance(domain, BallDomain):
        return BallDomain(d, domain.radius)
    return BallDomain(d, inscribed_radius(B_hat, domain))


def _back_map(z, B_hat, config):
    """Map reduced coordinates to a feasible input; returns ``(x, residual)``."""
    if isinstance(config.domain, BallDomain):
        return B_hat @ z, None
    res = alternating_projection(z, B_hat, config.domain, tol=config.projection_tol,
                                 max_iter=config.projection_max_iter)
    return res.point, res.residual


def _dedupe(z, Z, reduced, rng):
    if np.min(np.linalg.norm(Z - z, axis=1)) > DUPLICATE_TOL:
        return z
    step = sample_ball_uniform(rng, BallDomain(reduced.dim, DUPLICATE_STEP * reduced.radius), 1)[0]
    z = z + step
    norm = np.linalg.norm(z)
    return z if norm <= reduced.radius else z * (reduced.radius / norm)


def _delta(true_B, B_hat, warn=True):
    if true_B is None:
        return None
    delta = subspace_distance(true_B, B_hat)
    if warn and delta >= 1:
        log.warning("estimated subspace is far from the truth (delta=%.3f >= 1)", delta)
    return delta


class _GpState:
    """Holds the current kernel and refits it every ``every`` BO steps."""

    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.spec = None

    def model(self, step, Z, Y):
        if self.spec is None or step % self.config.refit_hyperparams_every == 0:
            self.spec = fit_hyperparameters(Z, Y, self.config.kernel_family,
                                            self.config.hyper_bounds, self.rng,
                                            nu=self.config.nu)
        return fit_gp(self.spec, Z, Y)


def _bo_step(step, B_hat, X, Y, gp_state, config, acq_rng):
    """Propose the next input from the reduced-space GP; returns ``(z, x, residual, sd)``."""
    Z = X @ B_hat
    model = gp_state.model(step, Z, Y)
    reduced = _reduced_domain(config.domain, B_hat)
    z, _ = maximize_ei(model, float(np.max(Y)), reduced, config.acq, acq_rng)
    z = _dedupe(z, Z, reduced, acq_rng)
    sd = float(np.sqrt(model.posterior(z).variance))
    x, residual = _back_map(z, B_hat, config)
    return z, x, residual, sd


def _initial_design(config, rng, record):
    X0 = config.domain.sample(rng, config.budget.N0)
    for x in X0:
        record(x)


def run_smave_bo(objective, config, true_B=None, f_max=None):
    """Sequential MAVE-BO: one MAVE fit on the initial design, then BO with a fixed frame."""
    init_rng, mave_rng, hyper_rng, acq_rng = _streams(config.seed)
    trace = RunTrace("smave", config.seed)
    record = _Recorder(objective, trace, f_max)
    _initial_design(config, init_rng, record)

    X, Y = trace.xs, trace.ys
    try:
        est = estimate_edr(Dataset(X, Y), config.mave, mave_rng)
    except InsufficientDataError as exc:
        raise RunAborted(str(exc), trace) from exc
    B_hat = est.B_hat
    trace.B_hat = B_hat
    delta = _delta(true_B, B_hat)

    gp_state = _GpState(config, hyper_rng)
    for step in range(config.budget.n_bo):
        try:
            z, x, residual, sd = _bo_step(step, B_hat, X, Y, gp_state, config, acq_rng)
        except IllConditionedError as exc:
            raise RunAborted(str(exc), trace) from exc
        record(x, z=z, delta_n=delta if step == 0 else None,
               projection_residual=residual, posterior_sd=sd)
        X, Y = trace.xs, trace.ys
    return trace


def run_cmave_bo(objective, config, true_B=None, f_max=None):
    """Concurrent MAVE-BO: the frame is re-estimated from all data before every proposal.

    Every refit after the first is warm-started from the previous frame.
    """
    init_rng, mave_rng, hyper_rng, acq_rng = _streams(config.seed)
    trace = RunTrace("cmave", config.seed)
    record = _Recorder(objective, trace, f_max)
    _initial_design(config, init_rng, record)

    warm = warm_config(config.mave, config.cmave_outer_iters)
    gp_state = _GpState(config, hyper_rng)
    B_hat = None
    for step in range(config.budget.n_bo):
        X, Y = trace.xs, trace.ys
        try:
            if B_hat is None:
                est = estimate_edr(Dataset(X, Y), config.mave, mave_rng)
            else:
                est = estimate_edr(Dataset(X, Y), warm, mave_rng, init=B_hat)
            B_hat = est.B_hat
            z, x, residual, sd = _bo_step(step, B_hat, X, Y, gp_state, config, acq_rng)
        except (InsufficientDataError, IllConditionedError) as exc:
            raise RunAborted(str(exc), trace) from exc
        record(x, z=z, delta_n=_delta(true_B, B_hat, warn=step == 0),
               projection_residual=residual, posterior_sd=sd)
    trace.B_hat = B_hat
    return trace


def run_random_search(objective, N, domain, seed=0, f_max=None):
    """Uniform random sampling of ``N`` points from ``domain``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = _streams(seed)[0]
    trace = RunTrace("random", seed)
    record = _Recorder(objective, trace, f_max)
    for x in domain.sample(rng, N):
        record(x)
    return trace


def high_uncertainty_count(trace, m, radius, curvature):
    """Number of BO proposals whose posterior sd exceeds ``radius*sqrt(C)*d*m**(-1/d)``.

    A diagnostic for how often the search still meets large uncertainty;
    ``curvature`` plays the role of the smoothness constant ``C``.
    """
    sds = [r.posterior_sd for r in trace.records if r.posterior_sd is not None]
    zs = [r.z for r in trace.records if r.z is not None]
    if not sds:
        return 0
    d = np.size(zs[0])
    threshold = radius * np.sqrt(curvature) * d * m ** (-1.0 / d)
    count = int(np.sum(np.asarray(sds) > threshold))
    log.info("posterior sd above %.4g in %d of %d BO steps (m=%d)", threshold, count,
             len(sds), m)
    return count


def with_seed(config, seed):
    return replace(config, seed=seed)
