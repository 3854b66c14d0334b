"""Stochastic approximation schemes as Dvoretzky processes.

Each scheme is a ``ProcessSpec`` whose transform is the noise-free update and
whose noise is the step-size-scaled observation error, so ``simulate`` runs
the algorithm and the checker can certify it unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import checker as ck
from . import process as pe
from .errors import ConfigError, PreconditionError
from .series import Power, RealSeq, builtin


# -- builtin maps --------------------------------------------------------------

@dataclass(frozen=True)
class Linear:
    """``k x + c``"""

    k: float = 1.0
    c: float = 0.0

    def __call__(self, x):
        return self.k * x + self.c

    def inverse(self, y):
        return (y - self.c) / self.k

    @property
    def inverse_domain(self):
        return (-math.inf, math.inf)

    @property
    def linear_bound(self):
        return abs(self.k), abs(self.c)

    @property
    def root(self):
        return -self.c / self.k


@dataclass(frozen=True)
class Quadratic:
    """Loss ``curv/2 (x - theta)^2``; :meth:`grad` is its derivative."""

    curv: float = 1.0
    theta: float = 0.0

    def __call__(self, x):
        d = x - self.theta
        return 0.5 * self.curv * d * d

    def grad(self, x):
        return self.curv * (x - self.theta)

    @property
    def grad_map(self) -> Linear:
        return Linear(self.curv, -self.curv * self.theta)


@dataclass(frozen=True)
class NegQuadratic:
    """``-scale (x - theta)^2``, maximized at ``theta``."""

    scale: float = 1.0
    theta: float = 0.0

    def __call__(self, x):
        d = x - self.theta
        return -self.scale * d * d


@dataclass(frozen=True)
class Saturating:
    """``k x / (1 + |x|) + c``: bounded and increasing, invertible on ``(c - k, c + k)``."""

    k: float = 1.0
    c: float = 0.0

    def __call__(self, x):
        return self.k * x / (1.0 + np.abs(x)) + self.c

    def inverse(self, y):
        u = (np.asarray(y, dtype=float) - self.c) / self.k
        return u / (1.0 - np.abs(u))

    @property
    def inverse_domain(self):
        # strictly inside the open range
        w = abs(self.k) * (1.0 - 1e-9)
        return (self.c - w, self.c + w)

    @property
    def linear_bound(self):
        return abs(self.k), abs(self.c)

    @property
    def root(self):
        return float(self.inverse(0.0))


MAPS = {"linear": Linear, "quadratic": Quadratic, "neg_quadratic": NegQuadratic, "saturating": Saturating}


def make_map(name: str, params: dict | None = None):
    try:
        return MAPS[name](**(params or {}))
    except KeyError:
        raise ConfigError(f"unknown map {name!r}; known: {sorted(MAPS)}") from None
    except TypeError as exc:
        raise ConfigError(f"bad parameters for map {name!r}: {exc}") from None


# -- transforms ----------------------------------------------------------------

@dataclass(frozen=True)
class RMTransform(pe.MarkovTransform):
    """``x + a_n (b - M(x))``"""

    M: Callable
    b: float
    a: RealSeq

    def step(self, n, x, aux=None):
        return x + self.a.at(n) * (self.b - self.M(x))


@dataclass(frozen=True)
class KWTransform(pe.MarkovTransform):
    """``x + a_n (M(x + c_n) - M(x - c_n)) / (2 c_n)``"""

    M: Callable
    a: RealSeq
    c: RealSeq

    def step(self, n, x, aux=None):
        c = self.c.at(n)
        return x + self.a.at(n) * (self.M(x + c) - self.M(x - c)) / (2.0 * c)


@dataclass(frozen=True)
class BanachTransform(pe.MarkovTransform):
    """``x + a_n (g(x) - x)``"""

    g: Callable
    a: RealSeq

    def step(self, n, x, aux=None):
        return x + self.a.at(n) * (self.g(x) - x)


@dataclass(frozen=True)
class KWGain:
    """``a_n / (2 c_n)``"""

    a: RealSeq
    c: RealSeq

    @property
    def name(self):
        return f"{self.a.name}/(2*{self.c.name})"

    def __call__(self, n):
        return self.a.at(n) / (2.0 * self.c.at(n))


def _noise_or_zero(noise):
    return pe.NoiseModel.zero() if noise is None else noise


# -- problems ------------------------------------------------------------------

@dataclass(frozen=True)
class RootFindingProblem:
    """Find ``x`` with ``M(x) = b`` from observations ``y = M(x) + noise``."""

    M: Callable
    b: float = 0.0
    noise: pe.NoiseModel | None = None
    A: float = 0.0
    B: float = 0.0
    x_star: float | None = None
    M_inverse: Callable | None = None
    inverse_domain: tuple = (-math.inf, math.inf)

    @classmethod
    def from_map(cls, m, b: float = 0.0, noise=None) -> "RootFindingProblem":
        A, B = m.linear_bound
        inv = getattr(m, "inverse", None)
        x_star = float(m.inverse(b)) if inv is not None else None
        return cls(m, b, noise, A, B, x_star, inv, m.inverse_domain)


@dataclass(frozen=True)
class ObjectiveProblem:
    """Maximize ``M`` from noisy evaluations."""

    M: Callable
    noise: pe.NoiseModel | None = None
    x_star: float | None = None


@dataclass(frozen=True)
class MinimizationProblem:
    """Minimize a loss whose gradient is observed with additive noise."""

    grad: Callable
    noise: pe.NoiseModel | None = None
    x_star: float | None = None
    curvature: float | None = None

    @classmethod
    def quadratic(cls, curv: float = 1.0, theta: float = 0.0, noise=None) -> "MinimizationProblem":
        return cls(Quadratic(curv, theta).grad_map, noise, theta, curv)


@dataclass(frozen=True)
class ContractionProblem:
    g: Callable
    gamma_contr: float
    fixed_point: float
    grid: tuple = ()

    def __post_init__(self):
        if not 0 < self.gamma_contr < 1:
            raise PreconditionError("contraction constant must lie in (0, 1)")
        x = np.asarray(self.grid if len(self.grid) else np.linspace(-100.0, 100.0, 201), dtype=float)
        gx = np.asarray(self.g(x), dtype=float)
        lhs = np.abs(gx[:, None] - gx[None, :])
        rhs = self.gamma_contr * np.abs(x[:, None] - x[None, :])
        if np.any(lhs > rhs + 1e-12 * (1.0 + np.abs(gx[:, None]))):
            raise PreconditionError("g is not a contraction with the declared constant on the grid")


# -- algorithms ----------------------------------------------------------------

def slln_estimator(ys, n: int | None = None) -> np.ndarray:
    """Sample-mean recursion ``x_{k+1} = x_k + (y_k - x_k) / (k + 1)`` with ``x_0 = 0``.

    Indices are 0-based here: the result is ``x_0..x_n`` and ``x_k`` is the mean
    of ``y_0..y_{k-1}``.
    """
    ys = np.asarray(ys, dtype=float)
    n = ys.size if n is None else int(n)
    if n < 1 or ys.size == 0:
        raise PreconditionError("empty stream")
    if ys.size < n:
        raise PreconditionError(f"stream has {ys.size} values, need {n}")
    out = np.empty(n + 1)
    x = 0.0
    out[0] = x
    for k in range(n):
        x = x + (ys[k] - x) / (k + 1)
        out[k + 1] = x
    return out


def rm_spec(p: RootFindingProblem, a: RealSeq, x0: float = 0.0, noise_scale: RealSeq | None = None,
            spec_id: str = "robbins-monro") -> pe.ProcessSpec:
    """``T_n = x + a_n (b - M(x))``, ``W_n = a_n (M(x_n) - y_n)``.

    ``noise_scale`` replaces the default per-step noise factor ``a_n``.
    """
    noise = _noise_or_zero(p.noise).rescaled(a if noise_scale is None else noise_scale, negate=True)
    x_star = p.x_star if p.x_star is not None else math.nan
    return pe.ProcessSpec(RMTransform(p.M, float(p.b), a), noise, x_star, float(x0), spec_id=spec_id)


def robbins_monro(p: RootFindingProblem, a: RealSeq, seed: int, horizon: int, x0: float = 0.0) -> pe.Trajectory:
    return pe.simulate(rm_spec(p, a, x0), seed, horizon)


def observations(p: RootFindingProblem, a: RealSeq, tr: pe.Trajectory) -> np.ndarray:
    """Recover ``y_n = M(x_n) - W_n / a_n`` from a trajectory (``nan`` where ``a_n = 0``)."""
    n = np.arange(1, tr.ts.size + 1)
    av = a.at(n)
    with np.errstate(all="ignore"):
        return p.M(tr.xs[:-1]) - tr.ws / av


def default_kw_schedules():
    return (RealSeq(Power(1.0, 0.0, 1.0), vectorized=True, name="inv_n"),
            RealSeq(Power(1.0, 0.0, 1.0 / 3.0), vectorized=True, name="n^-1/3"))


def kw_spec(p: ObjectiveProblem, a: RealSeq | None = None, c: RealSeq | None = None, x0: float = 0.0,
            spec_id: str = "kiefer-wolfowitz") -> pe.ProcessSpec:
    """Two-point symmetric difference with independent evaluation noise."""
    da, dc = default_kw_schedules()
    a = da if a is None else a
    c = dc if c is None else c
    bad = np.flatnonzero(~(c.values(1000) > 0))
    if bad.size:
        raise PreconditionError(f"c_{int(bad[0]) + 1} must be positive")
    gain = RealSeq(KWGain(a, c), vectorized=True)
    noise = _noise_or_zero(p.noise).rescaled(gain, paired=True)
    x_star = p.x_star if p.x_star is not None else math.nan
    return pe.ProcessSpec(KWTransform(p.M, a, c), noise, x_star, float(x0), spec_id=spec_id)


def kiefer_wolfowitz(p: ObjectiveProblem, a: RealSeq | None = None, c: RealSeq | None = None,
                     seed: int = 0, horizon: int = 1000, x0: float = 0.0) -> pe.Trajectory:
    return pe.simulate(kw_spec(p, a, c, x0), seed, horizon)


def sgd_spec(p: MinimizationProblem, a: RealSeq, x0: float = 0.0, spec_id: str = "sgd") -> pe.ProcessSpec:
    """``x_{n+1} = x_n - a_n (grad(x_n) + noise_n)``: Robbins-Monro on the gradient with ``b = 0``."""
    rp = RootFindingProblem(p.grad, 0.0, p.noise, x_star=p.x_star)
    return rm_spec(rp, a, x0, spec_id=spec_id)


def sgd(p: MinimizationProblem, a: RealSeq, seed: int, horizon: int, x0: float = 0.0) -> pe.Trajectory:
    return pe.simulate(sgd_spec(p, a, x0), seed, horizon)


def banach_iterate(p: ContractionProblem, a: RealSeq, x0: float, horizon: int) -> np.ndarray:
    """``x_1 = x0``, ``x_{n+1} = x_n + a_n (g(x_n) - x_n)``; returns ``x_1..x_horizon``."""
    av = a.values(max(horizon - 1, 0))
    bad = np.flatnonzero(~((av >= 0) & (av <= 1)))
    if bad.size:
        raise PreconditionError(f"a_{int(bad[0]) + 1} = {av[bad[0]]!r} is outside [0, 1]")
    out = np.empty(horizon)
    x = float(x0)
    out[0] = x
    for i in range(horizon - 1):
        x = x + av[i] * (float(p.g(x)) - x)
        out[i + 1] = x
    return out


def banach_spec(p: ContractionProblem, a: RealSeq, x0: float, spec_id: str = "banach") -> pe.ProcessSpec:
    return pe.ProcessSpec(BanachTransform(p.g, a), pe.NoiseModel.zero(), float(p.fixed_point), float(x0),
                          spec_id=spec_id)


# -- packaging for the checker ------------------------------------------------------

@dataclass(frozen=True)
class DvoretzkyBundle:
    spec: pe.ProcessSpec
    params: ck.DvoretzkyParams
    n0: int = 1


@dataclass(frozen=True)
class ContractionGamma:
    a: RealSeq
    gamma_contr: float

    @property
    def name(self):
        return f"{self.a.name}*(1-{self.gamma_contr:g})"

    def __call__(self, n):
        return self.a.at(n) * (1.0 - self.gamma_contr)


def as_dvoretzky(problem, a: RealSeq, *, x0: float = 0.0, horizon: int = 100_000,
                 rho: RealSeq | None = None, noise_scale: RealSeq | None = None,
                 spec_id: str | None = None) -> DvoretzkyBundle:
    """ProcessSpec plus a parameter skeleton for :func:`stochapprox.checker.certify`.

    Root-finding and quadratic minimization go through the Blum construction;
    a contraction gets ``alpha = beta = 0``, ``gamma_n = a_n (1 - gamma_contr)`` in weak-bound mode.
    """
    if isinstance(problem, MinimizationProblem):
        if problem.curvature is None or problem.x_star is None:
            raise ConfigError("minimization problem needs a declared curvature and minimizer")
        m = Linear(problem.curvature, -problem.curvature * problem.x_star)
        problem = RootFindingProblem.from_map(m, 0.0, problem.noise)
        spec_id = spec_id or "sgd"
    if isinstance(problem, RootFindingProblem):
        if problem.M_inverse is None or problem.x_star is None:
            raise ConfigError("root-finding problem needs M_inverse and x_star for the Blum construction")
        spec = rm_spec(problem, a, x0, noise_scale, spec_id=spec_id or "robbins-monro")
        bp = ck.BlumProblem(problem.M, problem.M_inverse, problem.inverse_domain, problem.A, problem.B,
                            a, problem.b)
        res = ck.blum_to_dvoretzky(bp, problem.x_star, horizon, rho)
        return DvoretzkyBundle(spec, res.params, res.n0)
    if isinstance(problem, ContractionProblem):
        spec = banach_spec(problem, a, x0, spec_id=spec_id or "banach")
        zero = builtin("zero")
        gamma = RealSeq(ContractionGamma(a, problem.gamma_contr), vectorized=True)
        return DvoretzkyBundle(spec, ck.DvoretzkyParams(zero, zero, gamma, "weak", 1), 1)
    raise ConfigError(f"no Dvoretzky packaging for {type(problem).__name__}")
