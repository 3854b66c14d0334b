"""Dvoretzky-form processes ``X_{n+1} = T_n(X_1, ..., X_n) + W_n``.

Two views of the same process:

* streaming simulation (:func:`simulate`, :func:`monte_carlo_convergence`),
  with per-step noise drawn from a counter-based stream keyed by the seed;
* an exact finite model (:func:`build_exact`) over the product space of a
  finite noise alphabet, on which the conditional-expectation identities of
  the convergence proof are checked with :mod:`stochapprox.finprob`.

Indexing follows the theorem: ``X_1 = x0``; ``T_n`` and ``W_n`` produce
``X_{n+1}``; ``F_n`` is generated by the first ``n - 1`` noise symbols, so
``X_n`` and ``T_n`` are ``F_n``-measurable and ``W_n`` is ``F_{n+1}``-measurable.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import finprob as fp
from .errors import MeasurabilityError, PreconditionError, SizeGuardError
from .rng import AUX_LANE, NOISE_LANE, SECOND_NOISE_LANE, normal_quantile, uniform_stream
from .series import Constant, Product, RealSeq

DIVERGENCE_BOUND = 1e12
MAX_EXACT_OUTCOMES = 2**20
SEED_CHUNK = 64
REPORT_SCHEMA_VERSION = 1


class MarkovTransform:
    """Transform that reads the history only through its last entry.

    Subclasses implement :meth:`step`, vectorized over ``x`` (and ``n`` when it
    is an integer array). Only the batched engine and the grid checks need
    the vectorized form; ``__call__`` is the general history interface.
    """

    def step(self, n, x, aux=None):
        raise NotImplementedError

    def __call__(self, n, history, aux=None):
        return float(self.step(n, np.float64(history[-1]), aux))


@dataclass(frozen=True)
class Identity(MarkovTransform):
    def step(self, n, x, aux=None):
        return x + 0.0


@dataclass(frozen=True)
class AffineStep(MarkovTransform):
    """``T_n(x) = k x + c`` regardless of ``n``."""

    k: float = 1.0
    c: float = 0.0

    def step(self, n, x, aux=None):
        return self.k * x + self.c


def _as_seq(value) -> RealSeq:
    if isinstance(value, RealSeq):
        return value
    return RealSeq(Constant(float(value)), vectorized=True, name=f"constant({float(value):g})")


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Centered per-step noise ``W_n = sign * scale_n * xi_n``.

    ``xi_n`` is standard normal, uniform on [-1, 1], or drawn from a finite
    alphabet recentered to mean zero at construction. ``paired`` models use
    the difference of two independent draws (lanes 0 and 2).
    """

    kind: str
    scale: RealSeq
    values: tuple = ()
    probs: tuple = ()
    sign: float = 1.0
    paired: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "discrete"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        if self.kind == "discrete":
            v = np.asarray(self.values, dtype=float)
            p = np.asarray(self.probs, dtype=float)
            if v.shape != p.shape or v.ndim != 1 or v.size == 0:
                raise ValueError("discrete noise needs matching nonempty values and probs")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("discrete probs must be nonnegative and sum to 1")
            v = v - float(np.dot(p, v))
            object.__setattr__(self, "values", tuple(v.tolist()))
            object.__setattr__(self, "probs", tuple(p.tolist()))

    @classmethod
    def gaussian(cls, sigma=1.0) -> "NoiseModel":
        return cls("gaussian", _as_seq(sigma))

    @classmethod
    def uniform(cls, h=1.0) -> "NoiseModel":
        return cls("uniform", _as_seq(h))

    @classmethod
    def discrete(cls, values, probs, scale=1.0) -> "NoiseModel":
        return cls("discrete", _as_seq(scale), tuple(values), tuple(probs))

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls.gaussian(0.0)

    def rescaled(self, factor: RealSeq, *, negate: bool = False, paired: bool | None = None) -> "NoiseModel":
        """Same law with scale multiplied pointwise by ``factor``."""
        return replace(
            self,
            scale=RealSeq(Product(factor, self.scale), vectorized=True),
            sign=-self.sign if negate else self.sign,
            paired=self.paired if paired is None else paired,
        )

    @property
    def unit_variance(self) -> float:
        if self.kind == "gaussian":
            base = 1.0
        elif self.kind == "uniform":
            base = 1.0 / 3.0
        else:
            v = np.asarray(self.values)
            base = float(np.dot(self.probs, v * v))
        return 2.0 * base if self.paired else base

    def variance_values(self, steps: int) -> np.ndarray:
        """Closed-form ``E[W_n^2]`` for ``n = 1..steps``."""
        s = self.scale.values(steps)
        return s * s * self.unit_variance

    def variance(self, n: int) -> float:
        return float(self.variance_values(n)[n - 1])

    def standardize(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "gaussian":
            return normal_quantile(u)
        if self.kind == "uniform":
            return 2.0 * u - 1.0
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def draw(self, seed: int, steps: int) -> np.ndarray:
        """Realized ``W_1..W_steps`` for one seed."""
        xi = self.standardize(uniform_stream(seed, steps, NOISE_LANE))
        if self.paired:
            xi = xi - self.standardize(uniform_stream(seed, steps, SECOND_NOISE_LANE))
        # + 0.0 folds -0.0 (zero scale times a negative draw) into 0.0
        return (self.sign * self.scale.values(steps)) * xi + 0.0

    def unit_alphabet(self):
        """Finite law of ``xi_n`` (exact for discrete, variance-matched +-1 otherwise)."""
        if self.kind == "discrete":
            vals = np.asarray(self.values)
            probs = np.asarray(self.probs)
        else:
            sd = math.sqrt(1.0 / 3.0) if self.kind == "uniform" else 1.0
            vals = np.array([sd, -sd])
            probs = np.array([0.5, 0.5])
        if self.paired:
            vals = np.subtract.outer(vals, vals).ravel()
            probs = np.multiply.outer(probs, probs).ravel()
        return vals, probs

    def alphabet(self, n: int):
        vals, probs = self.unit_alphabet()
        return (self.sign * self.scale(n)) * vals, probs

    def binary_alphabet(self, n: int):
        """Centered two-point law with the same variance as ``W_n``."""
        sd = math.sqrt(self.variance(n))
        return np.array([sd, -sd]), np.array([0.5, 0.5])


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """``transform(n, history, aux)`` is ``T_n``; ``aux`` is a uniform draw
    from the auxiliary lane for adapted transforms and ``None`` otherwise."""

    transform: Callable
    noise: NoiseModel
    x_star: float
    x0: float
    transform_kind: str = "deterministic"
    spec_id: str = "process"

    def __post_init__(self):
        if self.transform_kind not in ("deterministic", "adapted"):
            raise ValueError("transform_kind must be 'deterministic' or 'adapted'")

    @property
    def adapted(self) -> bool:
        return self.transform_kind == "adapted"

    @property
    def markov(self) -> bool:
        return isinstance(self.transform, MarkovTransform)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Realized path: ``xs = X_1..X_H``, ``ts = T_1..T_{H-1}``, ``ws = W_1..W_{H-1}``.

    If the path left ``|x| <= 1e12`` (or became non-finite) it stops at the
    first offending value and ``diverged_at`` holds that index.
    """

    xs: np.ndarray
    ts: np.ndarray
    ws: np.ndarray
    seed: int
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def write_csv(self, fh) -> None:
        fh.write("n,x,t,w\n")
        for i, x in enumerate(self.xs):
            if i < self.ts.size:
                fh.write(f"{i + 1},{float(x)!r},{float(self.ts[i])!r},{float(self.ws[i])!r}\n")
            else:
                fh.write(f"{i + 1},{float(x)!r},,\n")


def _aux_matrix(spec, seeds, steps):
    if not spec.adapted:
        return None
    return np.stack([uniform_stream(s, steps, AUX_LANE) for s in seeds])


def _run_markov(spec: ProcessSpec, seeds, horizon, *, keep_paths, checkpoints=()):
    m = len(seeds)
    steps = horizon - 1
    # noise rows are generated per seed so a seed's draws never depend on its batch
    W = np.stack([spec.noise.draw(s, steps) for s in seeds]).T.copy() if steps else np.empty((0, m))
    aux = _aux_matrix(spec, seeds, steps)
    auxT = aux.T.copy() if aux is not None else None
    x = np.full(m, float(spec.x0))
    alive = np.ones(m, dtype=bool)
    div_at = np.zeros(m, dtype=np.int64)
    cp_set = set(int(c) for c in checkpoints)
    cp_err = {}
    if 1 in cp_set:
        cp_err[1] = np.abs(x - spec.x_star)
    if keep_paths:
        XS = np.empty((horizon, m))
        TS = np.empty((steps, m))
        XS[0] = x
    transform = spec.transform
    with np.errstate(all="ignore"):
        for n in range(1, horizon):
            a = auxT[n - 1] if auxT is not None else None
            t = transform.step(n, x, a)
            x_next = t + W[n - 1]
            bad = alive & ~(np.abs(x_next) <= DIVERGENCE_BOUND)
            if bad.any():
                div_at[bad] = n + 1
                alive &= ~bad
            if keep_paths:
                TS[n - 1] = t
                XS[n] = x_next
            x = np.where(alive, x_next, 0.0)
            if n + 1 in cp_set:
                cp_err[n + 1] = np.where(alive, np.abs(x - spec.x_star), np.inf)
    terminal = np.where(alive, np.abs(x - spec.x_star), np.inf)
    out = {"terminal": terminal, "diverged_at": np.where(alive, 0, div_at), "checkpoints": cp_err}
    if keep_paths:
        out.update(xs=XS.T, ts=TS.T, ws=W.T)
    return out


def _run_general(spec: ProcessSpec, seed: int, horizon: int) -> Trajectory:
    steps = horizon - 1
    W = spec.noise.draw(seed, steps)
    aux = uniform_stream(seed, steps, AUX_LANE) if spec.adapted else None
    xs = np.empty(horizon)
    ts = np.empty(steps)
    xs[0] = spec.x0
    for n in range(1, horizon):
        a = float(aux[n - 1]) if aux is not None else None
        t = float(spec.transform(n, xs[:n], a))
        x_next = t + W[n - 1]
        ts[n - 1] = t
        xs[n] = x_next
        if not abs(x_next) <= DIVERGENCE_BOUND:
            return Trajectory(xs[: n + 1], ts[:n], W[:n].copy(), seed, n + 1)
    return Trajectory(xs, ts, W, seed, None)


def simulate_batch(spec: ProcessSpec, seeds: Sequence[int], horizon: int) -> list[Trajectory]:
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    seeds = [int(s) for s in seeds]
    if not spec.markov:
        return [_run_general(spec, s, horizon) for s in seeds]
    out = _run_markov(spec, seeds, horizon, keep_paths=True)
    trajs = []
    for i, s in enumerate(seeds):
        d = int(out["diverged_at"][i]) or None
        end = d if d else horizon
        trajs.append(Trajectory(out["xs"][i, :end].copy(), out["ts"][i, : end - 1].copy(),
                                out["ws"][i, : end - 1].copy(), s, d))
    return trajs


def simulate(spec: ProcessSpec, seed: int, horizon: int) -> Trajectory:
    """Pure function of ``(spec, seed, horizon)``."""
    return simulate_batch(spec, [seed], horizon)[0]


# -- Monte Carlo ---------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointStat:
    n: int
    median_err: float
    p90_err: float


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    spec_id: str
    seeds: tuple
    horizon: int
    eps: float
    terminal_errors: np.ndarray
    diverged_at: tuple
    checkpoints: tuple = field(default_factory=tuple)

    @property
    def converged(self) -> np.ndarray:
        return self.terminal_errors < self.eps

    @property
    def fraction_converged(self) -> float:
        return float(np.count_nonzero(self.converged)) / len(self.seeds)

    @property
    def diverged_count(self) -> int:
        return sum(1 for d in self.diverged_at if d)

    def to_dict(self, timestamp: str | None = None) -> dict:
        def num(v):
            return float(v) if math.isfinite(v) else None

        d = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "spec_id": self.spec_id,
            "seeds": {"first": self.seeds[0], "last": self.seeds[-1], "count": len(self.seeds)},
            "horizon": self.horizon,
            "eps": self.eps,
            "fraction_converged": self.fraction_converged,
            "diverged_count": self.diverged_count,
            "checkpoints": [
                {"n": c.n, "median_err": num(c.median_err), "p90_err": num(c.p90_err)}
                for c in self.checkpoints
            ],
            "per_seed": [
                {
                    "seed": s,
                    "terminal_error": num(e),
                    "converged": bool(e < self.eps),
                    "diverged_at": d or None,
                }
                for s, e, d in zip(self.seeds, self.terminal_errors.tolist(), self.diverged_at)
            ],
        }
        if timestamp is not None:
            d["timestamp"] = timestamp
        return d

    def to_json(self, timestamp: str | None = None) -> str:
        return json.dumps(self.to_dict(timestamp), indent=2) + "\n"


def _quantile(values: np.ndarray, q: float) -> float:
    # step-function quantile: no interpolation, so infinite errors stay infinite
    return float(np.quantile(values, q, method="inverted_cdf"))


def _mc_chunk(spec, seeds, horizon, checkpoints):
    if spec.markov:
        out = _run_markov(spec, seeds, horizon, keep_paths=False, checkpoints=checkpoints)
        cps = {n: out["checkpoints"][n] for n in checkpoints}
        return out["terminal"], out["diverged_at"], cps
    terminal, div, cps = [], [], {n: [] for n in checkpoints}
    for s in seeds:
        tr = _run_general(spec, s, horizon)
        err = np.abs(tr.xs - spec.x_star)
        terminal.append(np.inf if tr.diverged else err[-1])
        div.append(tr.diverged_at or 0)
        for n in checkpoints:
            # a diverged path is only meaningful strictly before its offending index
            cps[n].append(err[n - 1] if n < (tr.diverged_at or horizon + 1) else np.inf)
    return np.array(terminal), np.array(div), {n: np.array(v) for n, v in cps.items()}


def monte_carlo_convergence(spec: ProcessSpec, seeds: Iterable[int], horizon: int, eps: float,
                            checkpoints: Sequence[int] = (), jobs: int = 1) -> MonteCarloReport:
    """Empirical convergence over a seed set.

    Seeds are sorted and cut into fixed chunks, so the report is identical for
    any ``jobs``; ``jobs > 1`` needs a picklable spec.
    """
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise PreconditionError("empty seed set")
    cps = sorted(set(int(c) for c in checkpoints))
    if cps and (cps[0] < 1 or cps[-1] > horizon):
        raise PreconditionError("checkpoints must lie in [1, horizon]")
    chunks = [seeds[i:i + SEED_CHUNK] for i in range(0, len(seeds), SEED_CHUNK)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_mc_chunk, [spec] * len(chunks), chunks,
                                  [horizon] * len(chunks), [cps] * len(chunks)))
    else:
        parts = [_mc_chunk(spec, c, horizon, cps) for c in chunks]
    terminal = np.concatenate([p[0] for p in parts])
    div = tuple(int(v) for p in parts for v in p[1])
    stats = []
    for n in cps:
        errs = np.concatenate([p[2][n] for p in parts])
        stats.append(CheckpointStat(n, _quantile(errs, 0.5), _quantile(errs, 0.9)))
    return MonteCarloReport(spec.spec_id, tuple(seeds), int(horizon), float(eps), terminal, div, tuple(stats))


# -- exact finite model ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExactProcess:
    space: fp.FiniteProbSpace
    filtration: fp.Filtration  # level k: outcomes sharing the first k noise symbols
    xs: tuple  # X_1 .. X_{h+1}
    ts: tuple  # T_1 .. T_h
    ws: tuple  # W_1 .. W_h
    horizon: int

    def sigma_field(self, n: int) -> fp.Partition:
        """``F_n``: generated by the first ``n - 1`` noise symbols."""
        if not 1 <= n <= self.horizon + 1:
            raise PreconditionError(f"F_{n} outside 1..{self.horizon + 1}")
        return self.filtration[n - 1]

    def X(self, n: int) -> np.ndarray:
        return self.xs[n - 1]

    def T(self, n: int) -> np.ndarray:
        return self.ts[n - 1]

    def W(self, n: int) -> np.ndarray:
        return self.ws[n - 1]


def _exact_aux(n: int, block_ids: np.ndarray) -> np.ndarray:
    # F_n-measurable pseudo-uniform: a function of (n, first n-1 symbols) only
    return np.modf((block_ids + 1) * 0.6180339887498949 + n * 0.7548776662466927)[0]


def _is_alphabet(obj) -> bool:
    """A single ``(values, probs)`` pair of numeric vectors."""
    if not isinstance(obj, (tuple, list)) or len(obj) != 2:
        return False
    try:
        parts = [np.asarray(p) for p in obj]
    except ValueError:
        return False
    return all(p.ndim == 1 and p.dtype.kind in "fiu" for p in parts)


def build_exact(alphabets, transform: Callable, x0: float, horizon: int,
                transform_kind: str = "deterministic", max_outcomes: int = MAX_EXACT_OUTCOMES) -> ExactProcess:
    """Full product space over per-step noise alphabets.

    ``alphabets`` is a ``(values, probs)`` pair used at every step, a list of
    such pairs (one per step), or a callable ``n -> (values, probs)``. Values
    are used as given (no recentering).
    """
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    if callable(alphabets):
        steps = [alphabets(n) for n in range(1, horizon + 1)]
    elif _is_alphabet(alphabets):
        steps = [alphabets] * horizon
    else:
        steps = list(alphabets)
    if len(steps) != horizon:
        raise PreconditionError(f"need {horizon} alphabets, got {len(steps)}")
    steps = [(np.asarray(v, dtype=float), np.asarray(p, dtype=float)) for v, p in steps]
    radices = [v.size for v, _ in steps]
    size = 1
    for r in radices:
        size *= r
        if size > max_outcomes:
            raise SizeGuardError(f"product space exceeds {max_outcomes} outcomes")
    omega = np.arange(size, dtype=np.int64)
    strides = []
    acc = size
    for r in radices:
        acc //= r
        strides.append(acc)
    syms = [(omega // strides[k]) % radices[k] for k in range(horizon)]
    weights = np.ones(size)
    for k, (_, p) in enumerate(steps):
        weights = weights * p[syms[k]]
    space = fp.FiniteProbSpace(weights)
    levels = [fp.Partition(omega // (size // math.prod(radices[:k])) if k else np.zeros(size, dtype=np.int64),
                           math.prod(radices[:k])) for k in range(horizon + 1)]
    filtration = fp.Filtration(tuple(levels))

    xs = [np.full(size, float(x0))]
    ts, ws = [], []
    adapted = transform_kind == "adapted"
    for n in range(1, horizon + 1):
        block_ids = levels[n - 1].block_of
        aux = _exact_aux(n, block_ids) if adapted else None
        if isinstance(transform, MarkovTransform):
            t = np.asarray(transform.step(n, xs[-1], aux), dtype=float)
            t = np.broadcast_to(t, (size,)).copy()
        else:
            hist = np.stack(xs, axis=1)
            t = np.array([transform(n, hist[i], None if aux is None else float(aux[i])) for i in range(size)])
        w = steps[n - 1][0][syms[n - 1]]
        ts.append(t)
        ws.append(w)
        xs.append(t + w)
    return ExactProcess(space, filtration, tuple(xs), tuple(ts), tuple(ws), horizon)


@dataclass(frozen=True, eq=False)
class Decomposition:
    t_hat: np.ndarray
    w_hat: np.ndarray
    t_residual: float
    w_residual: float


def decompose(ep: ExactProcess, n: int) -> Decomposition:
    """``T_n := E[X_{n+1} | F_n]``, ``W_n := X_{n+1} - T_n``, compared with the tabulated values."""
    if not 1 <= n <= ep.horizon:
        raise PreconditionError(f"step {n} outside 1..{ep.horizon}")
    x_next = ep.X(n + 1)
    t_hat = fp.cond_expectation(ep.space, ep.sigma_field(n), x_next)
    w_hat = x_next - t_hat
    return Decomposition(
        t_hat, w_hat,
        float(np.max(np.abs(t_hat - ep.T(n)))),
        float(np.max(np.abs(w_hat - ep.W(n)))),
    )


def check_martingale_increment(ep: ExactProcess) -> float:
    """``max_n max_omega |E[W_n | F_n]|``."""
    worst = 0.0
    for n in range(1, ep.horizon + 1):
        ce = fp.cond_expectation(ep.space, ep.sigma_field(n), ep.W(n))
        worst = max(worst, float(np.max(np.abs(ce))))
    return worst


def _z_matrix(ep: ExactProcess, signs) -> np.ndarray:
    if len(signs) != ep.horizon:
        raise PreconditionError(f"need {ep.horizon} sign variables, got {len(signs)}")
    rows = []
    for n in range(1, ep.horizon + 1):
        s = ep.space.check(signs[n - 1])
        if not fp.is_measurable(s, ep.sigma_field(n)):
            raise MeasurabilityError(f"sign variable {n} is not F_{n}-measurable")
        rows.append(s * ep.W(n))
    return np.stack(rows)


def _z_gram(ep, signs):
    Z = _z_matrix(ep, signs)
    return (Z * ep.space.weights) @ Z.T


def loeve_orthogonality(ep: ExactProcess, signs) -> float:
    """``max_{i != j} |E[Z_i Z_j]|`` with ``Z_n = signs[n] W_n``."""
    G = _z_gram(ep, signs)
    off = G[~np.eye(G.shape[0], dtype=bool)]
    return float(np.max(np.abs(off))) if off.size else 0.0


def z_second_moments(ep: ExactProcess, signs) -> np.ndarray:
    """Diagonal ``E[Z_n^2]``."""
    return np.diag(_z_gram(ep, signs)).copy()


def sign_of_t(ep: ExactProcess) -> list:
    return [np.sign(ep.T(n)) for n in range(1, ep.horizon + 1)]
