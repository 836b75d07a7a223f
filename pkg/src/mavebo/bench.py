"""Embedded synthetic benchmarks, experiment orchestration and trace output.

A benchmark is ``f(x) = g(B^T x)`` for a random orthonormal ``B`` and a
low-dimensional link ``g``. Links with a native box (Branin, Hartmann-3)
are rescaled so that the ball of reduced coordinates reachable from the
input domain maps onto the ellipse inscribed in that native box; reduced
coordinates outside that ball are first pulled back radially onto it, so
the cached maximum is valid everywhere.
"""

import csv
import functools
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .acquisition import AcqConfig
from .errors import DimensionError
from .geometry import BallDomain, BoxDomain, inscribed_radius, random_orthonormal
from .gp import SE
from .mave import MaveConfig
from .optimizer import (BudgetSplit, OptimizerConfig, run_cmave_bo, run_random_search,
                        run_smave_bo)

BALL_RADIUS = 1.05
CSV_COLUMNS = ("seed", "iter", "y", "best_y", "simple_regret", "delta_n",
               "projection_residual", "wall_ms")
FUNCTIONS = ("quadratic-bowl", "branin", "hartmann3")
ALGORITHMS = ("smave", "cmave", "random")

_SCAN_POINTS = 1_000_000


def _quadratic_bowl(z):
    return -np.sum(np.square(z), axis=-1)


def _branin(u):
    x1, x2 = u[..., 0], u[..., 1]
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * np.pi)
    return -(a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s)


_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470],
                         [1091, 8732, 5547], [381, 5743, 8828]])


def _hartmann3(u):
    sq = np.sum(_H3_A * (u[..., None, :] - _H3_P) ** 2, axis=-1)
    return np.sum(_H3_ALPHA * np.exp(-sq), axis=-1)


# name -> (native link to maximise, effective dims allowed, native box or None)
_LINKS = {
    "quadratic-bowl": (_quadratic_bowl, (1, 2), None),
    "branin": (_branin, (2,), (np.array([-5.0, 0.0]), np.array([10.0, 15.0]))),
    "hartmann3": (_hartmann3, (3,), (np.zeros(3), np.ones(3))),
}


def _rescaled_link(name, rho, z):
    """Link evaluated on reduced coordinates ``z`` for a reachable radius ``rho``."""
    g, _, native = _LINKS[name]
    z = np.asarray(z, dtype=float)
    if native is None:
        return g(z)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    z = z * np.minimum(1.0, rho / np.where(norms > 0, norms, 1.0))
    lo, hi = native
    return g((lo + hi) / 2 + (hi - lo) / 2 * z / rho)


@dataclass(frozen=True, eq=False)
class BenchmarkFunction:
    """``f(x) = link(true_B^T x)`` on ``domain`` with known maximum ``f_max``."""

    name: str
    D: int
    d_e: int
    true_B: np.ndarray
    link: functools.partial
    f_max: float
    domain: object
    seed: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.link(x @ self.true_B)
        return float(out) if np.ndim(out) == 0 else out


def _ball_grid(d, rho, n_points):
    # grid over the cube sized so that about n_points land inside the ball
    vol_frac = math.pi ** (d / 2) / math.gamma(d / 2 + 1) / 2**d
    m = int(math.ceil((n_points / vol_frac) ** (1.0 / d)))
    axis = np.linspace(-rho, rho, m)
    G = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return G[np.linalg.norm(G, axis=1) <= rho]


@functools.lru_cache(maxsize=None)
def _scan_max(name, d_e, rho):
    """Maximum of the rescaled link over the reduced ball: dense scan plus local polish."""
    if name == "quadratic-bowl":
        return 0.0
    link = functools.partial(_rescaled_link, name, rho)
    G = _ball_grid(d_e, rho, _SCAN_POINTS)
    vals = link(G)
    best = float(vals.max())
    for i in np.argsort(-vals)[:5]:
        res = minimize(lambda z: -link(z[None, :])[0], G[i], method="L-BFGS-B",
                       bounds=[(-rho, rho)] * d_e, options={"ftol": 1e-15, "gtol": 1e-12})
        # evaluate at the (radially clipped) optimiser so the value is attained
        best = max(best, float(link(res.x[None, :])[0]))
    return best


def make_embedded_function(name, D, seed=0, domain_kind="ball", d_e=None):
    """Build a seeded embedded benchmark.

    Parameters
    ----------
    name : {"quadratic-bowl", "branin", "hartmann3"}
    D : int
        Ambient dimension.
    seed : int
        Seed for the random embedding ``true_B``.
    domain_kind : {"ball", "box"}
        Ball of radius 1.05 or the cube ``[-1, 1]^D``.
    d_e : int, optional
        Effective dimension; only the quadratic bowl accepts a choice (1 or 2,
        default 2).
    """
    if name not in _LINKS:
        raise ValueError(f"unknown benchmark {name!r}; choose from {FUNCTIONS}")
    _, allowed, _ = _LINKS[name]
    d_e = allowed[-1] if d_e is None else int(d_e)
    if d_e not in allowed:
        raise DimensionError(f"{name} supports effective dimension {allowed}, got {d_e}")
    if D < d_e:
        raise DimensionError(f"ambient dimension {D} is below effective dimension {d_e}")
    true_B = random_orthonormal(np.random.default_rng(seed), D, d_e)
    true_B.setflags(write=False)
    if domain_kind == "ball":
        domain = BallDomain(D, BALL_RADIUS)
        rho = BALL_RADIUS
    elif domain_kind == "box":
        domain = BoxDomain.cube(D)
        rho = inscribed_radius(true_B, domain)
    else:
        raise ValueError(f"domain_kind must be 'ball' or 'box', got {domain_kind!r}")
    link = functools.partial(_rescaled_link, name, rho)
    return BenchmarkFunction(name, D, d_e, true_B, link, _scan_max(name, d_e, rho), domain,
                             seed)


@dataclass(frozen=True)
class ExperimentConfig:
    func: str
    D: int
    algorithm: str
    seeds: tuple
    budget: BudgetSplit
    out: str
    fmt: str = "csv"
    d_e: Optional[int] = None
    edr_dim: Optional[int] = None
    kernel: str = SE
    nu: float = 2.5
    domain_kind: str = "ball"
    acq: AcqConfig = field(default_factory=AcqConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.fmt not in ("csv", "json"):
            raise ValueError("format must be 'csv' or 'json'")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def echo(self):
        """JSON-friendly description of the configuration."""
        out = asdict(self)
        out["budget"] = {"N": self.budget.N, "N0": self.budget.N0}
        out["seeds"] = list(self.seeds)
        return out


def _run_seed(config, seed):
    fn = make_embedded_function(config.func, config.D, seed, config.domain_kind, config.d_e)
    if config.algorithm == "random":
        return run_random_search(fn, config.budget.N, fn.domain, seed=seed, f_max=fn.f_max)
    d = config.edr_dim or fn.d_e
    opt = OptimizerConfig(budget=config.budget, mave=MaveConfig(d), domain=fn.domain,
                          kernel_family=config.kernel, nu=config.nu, acq=config.acq,
                          seed=seed)
    runner = run_smave_bo if config.algorithm == "smave" else run_cmave_bo
    return runner(fn, opt, true_B=fn.true_B, f_max=fn.f_max)


def summarize(traces):
    """Median and quartiles of the final simple regret across traces."""
    finals = [t.records[-1].simple_regret for t in traces]
    q1, med, q3 = (float(v) for v in np.percentile(finals, [25, 50, 75]))
    return {"n_seeds": len(traces), "median": med, "q25": q1, "q75": q3,
            "final_regret": {str(t.seed): float(r) for t, r in zip(traces, finals)}}


def _n_workers():
    env = os.environ.get("HDBO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(config):
    """Run every seed, write all traces plus a summary, and return the summary."""
    # fail on an unwritable destination before spending any evaluations
    with open(config.out, "w"):
        pass
    workers = min(_n_workers(), len(config.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_seed, [config] * len(config.seeds), config.seeds))
    else:
        traces = [_run_seed(config, s) for s in config.seeds]
    summary = summarize(traces)
    emit_traces(traces, config.fmt, config.out, config=config.echo(), summary=summary)
    return summary


def _fmt(v):
    return "" if v is None else repr(float(v))


def trace_rows(trace):
    """Flat per-record dictionaries with the serialised columns (``None`` if absent)."""
    for r in trace.records:
        yield {"seed": trace.seed, "iter": r.iter, "y": r.y, "best_y": r.best_y,
               "simple_regret": r.simple_regret, "delta_n": r.delta_n,
               "projection_residual": r.projection_residual, "wall_ms": r.wall_ms}


def _csv_text(traces, summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in traces:
        for row in trace_rows(t):
            w.writerow([row["seed"], row["iter"]]
                       + [_fmt(row[c]) for c in CSV_COLUMNS[2:]])
    if summary is not None:
        # summary row: iter = #seeds, y = q25, best_y = q75, simple_regret = median
        w.writerow(["summary", summary["n_seeds"], _fmt(summary["q25"]), _fmt(summary["q75"]),
                    _fmt(summary["median"]), "", "", ""])
    return buf.getvalue()


def _json_text(traces, config, summary):
    records = [{k: v for k, v in row.items() if v is not None}
               for t in traces for row in trace_rows(t)]
    doc = {"config": config or {}, "records": records}
    if summary is not None:
        doc["summary"] = summary
    return json.dumps(doc, indent=1)


def emit_traces(traces, fmt, path, config=None, summary=None):
    """Write traces as CSV or JSON; raises ``OSError`` naming ``path`` on failure."""
    if fmt == "csv":
        text = _csv_text(traces, summary)
    elif fmt == "json":
        text = _json_text(traces, config, summary)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def emit_trace(trace, fmt, path, config=None):
    emit_traces([trace], fmt, path, config=config)
