"""Real sequences, finite-horizon series verdicts and the analysis constructions
used around Dvoretzky's theorem (du Bois-Reymond companions, Abel-Dini
rescaling, Abel's descending criterion, the Derman-Sacks recursion).

Sequences are 1-based: ``seq(1)`` is the first term. Every statement about an
infinite series made here is a certificate at a declared horizon and
tolerance, never a proof.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import MonotonicityError, PreconditionError, SignViolation

DEFAULT_TOL = 1e-8
DEFAULT_DIV_THRESHOLD = 10.0
DEFAULT_HORIZON = 100_000


class RealSeq:
    """Lazily evaluated real sequence ``n -> gen(n)`` for ``n = 1, 2, ...``.

    ``gen`` either maps a single int to a float, or (``vectorized=True``) an
    int array to a float array. Evaluated prefixes are memoized; the memo is
    only ever replaced by a longer read-only array under a lock, so concurrent
    readers see consistent values. Sequences declared nonnegative raise
    :class:`SignViolation` when a probed term is negative or NaN.
    """

    def __init__(
        self,
        gen: Callable,
        *,
        nonnegative: bool = True,
        vectorized: bool = False,
        name: str = "",
        length: int | None = None,
    ):
        self._gen = gen
        self.nonnegative = nonnegative
        self.vectorized = vectorized
        self.name = name or getattr(gen, "name", "") or getattr(gen, "__name__", type(gen).__name__)
        self.length = length
        self._memo = np.empty(0)
        self._checked = 0
        self._lock = threading.Lock()

    @classmethod
    def from_array(cls, values, *, nonnegative: bool = True, name: str = "array") -> "RealSeq":
        arr = np.array(values, dtype=float)
        if arr.ndim != 1:
            raise ValueError("sequence values must be one-dimensional")
        return cls(_ArrayGen(arr), nonnegative=nonnegative, vectorized=True, name=name, length=arr.size)

    @property
    def declared_sign(self) -> str:
        return "nonnegative" if self.nonnegative else "unrestricted"

    def __repr__(self):
        return f"RealSeq({self.name!r}, {self.declared_sign})"

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_memo"] = np.empty(0)
        state["_checked"] = 0
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _evaluate(self, idx: np.ndarray) -> np.ndarray:
        if self.vectorized:
            out = np.asarray(self._gen(idx), dtype=float)
            return np.broadcast_to(out, idx.shape).astype(float, copy=True)
        return np.fromiter((self._gen(int(i)) for i in idx), dtype=float, count=idx.size)

    def _grow(self, n: int) -> np.ndarray:
        # caller holds the lock
        memo = self._memo
        if memo.size < n:
            # doubling keeps incremental probing linear overall
            target = max(n, 2 * memo.size)
            if self.length is not None:
                target = min(target, self.length)
            idx = np.arange(memo.size + 1, target + 1)
            memo = np.concatenate([memo, self._evaluate(idx)])
            memo.setflags(write=False)
            self._memo = memo
        return memo

    def unchecked(self, n: int) -> np.ndarray:
        """First ``n`` terms without the sign check (for callers that scan signs themselves)."""
        n = int(n)
        if self.length is not None and n > self.length:
            raise IndexError(f"{self.name}: only {self.length} terms available, asked for {n}")
        memo = self._memo
        if memo.size < n:
            with self._lock:
                memo = self._grow(n)
        return memo[:n]

    def values(self, n: int) -> np.ndarray:
        """Read-only array of the first ``n`` terms ``[s(1), ..., s(n)]``."""
        n = int(n)
        if n < 0:
            raise ValueError("n must be nonnegative")
        if self.length is not None and n > self.length:
            raise IndexError(f"{self.name}: only {self.length} terms available, asked for {n}")
        memo = self._memo
        if memo.size < n or self._checked < n:
            with self._lock:
                memo = self._grow(n)
                if self._checked < n:
                    if self.nonnegative:
                        seg = memo[self._checked:n]
                        bad = np.flatnonzero(~(seg >= 0))
                        if bad.size:
                            k = self._checked + int(bad[0])
                            raise SignViolation(k + 1, memo[k], self.name)
                    self._checked = n
        return memo[:n]

    def __call__(self, n: int) -> float:
        if n < 1:
            raise IndexError("sequences are 1-based")
        return float(self.values(n)[n - 1])

    def at(self, n):
        """Vectorized lookup: ``n`` may be an int or an integer array."""
        n_arr = np.asarray(n)
        if n_arr.size == 0:
            return np.empty(n_arr.shape)
        top = int(n_arr.max())
        if int(n_arr.min()) < 1:
            raise IndexError("sequences are 1-based")
        return self.values(top)[n_arr - 1]


@dataclass(frozen=True)
class _ArrayGen:
    data: np.ndarray

    def __call__(self, idx):
        return self.data[np.asarray(idx) - 1]


# Picklable closed-form families; the CLI and JSON schemas refer to them by name.

@dataclass(frozen=True)
class Power:
    """``scale / (n + shift) ** power``"""

    scale: float = 1.0
    shift: float = 0.0
    power: float = 1.0

    @property
    def name(self):
        return f"power(scale={self.scale:g},shift={self.shift:g},power={self.power:g})"

    def __call__(self, n):
        base = np.asarray(n, dtype=float) + self.shift
        if self.power == 1.0:
            return self.scale / base
        return self.scale / base**self.power


@dataclass(frozen=True)
class Geometric:
    """``scale * ratio ** n``"""

    scale: float = 1.0
    ratio: float = 0.5

    @property
    def name(self):
        return f"geometric(scale={self.scale:g},ratio={self.ratio:g})"

    def __call__(self, n):
        return self.scale * self.ratio ** np.asarray(n, dtype=float)


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    @property
    def name(self):
        return f"constant({self.value:g})"

    def __call__(self, n):
        return np.full(np.shape(n), float(self.value))


@dataclass(frozen=True)
class Alternating:
    """``scale * (-1) ** n / n ** power`` (signed)."""

    scale: float = 1.0
    power: float = 2.0

    @property
    def name(self):
        return f"alternating(scale={self.scale:g},power={self.power:g})"

    def __call__(self, n):
        n = np.asarray(n)
        sign = np.where(n % 2 == 0, 1.0, -1.0)
        return sign * self.scale / n.astype(float) ** self.power


@dataclass(frozen=True)
class Product:
    """Pointwise product of two sequences."""

    left: RealSeq
    right: RealSeq

    @property
    def name(self):
        return f"{self.left.name}*{self.right.name}"

    def __call__(self, n):
        return self.left.at(n) * self.right.at(n)


FAMILIES = {
    "power": Power,
    "geometric": Geometric,
    "constant": Constant,
    "alternating": Alternating,
}

BUILTINS = {
    "harmonic1": lambda: Power(1.0, 1.0, 1.0),  # 1/(n+1)
    "inv_n": lambda: Power(1.0, 0.0, 1.0),
    "inv_sqrt": lambda: Power(1.0, 0.0, 0.5),
    "inv_n2": lambda: Power(1.0, 0.0, 2.0),
    "inv_n1.5": lambda: Power(1.0, 0.0, 1.5),
    "geometric": lambda: Geometric(1.0, 0.5),
    "one": lambda: Constant(1.0),
    "zero": lambda: Constant(0.0),
}


def builtin(name: str, *, nonnegative: bool = True) -> RealSeq:
    try:
        gen = BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin sequence {name!r}; known: {sorted(BUILTINS)}") from None
    return RealSeq(gen, nonnegative=nonnegative, vectorized=True, name=name)


def family(name: str, params: dict | None = None, *, nonnegative: bool = True) -> RealSeq:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise KeyError(f"unknown sequence family {name!r}; known: {sorted(FAMILIES)}") from None
    gen = cls(**(params or {}))
    return RealSeq(gen, nonnegative=nonnegative, vectorized=True, name=gen.name)


def read_csv_sequence(path, *, nonnegative: bool = True) -> RealSeq:
    """One value per line in 1-based index order; a non-numeric header line is skipped."""
    vals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            vals.append(float(line.split(",")[-1]))
        except ValueError:
            if lineno == 0:
                continue
            raise
    return RealSeq.from_array(vals, nonnegative=nonnegative, name=f"csv:{path}")


def parse_sequence(text: str, *, nonnegative: bool = True) -> RealSeq:
    """``NAME`` for a builtin or ``csv:PATH``."""
    if text.startswith("csv:"):
        return read_csv_sequence(text[4:], nonnegative=nonnegative)
    return builtin(text, nonnegative=nonnegative)


def write_csv_sequence(values, fh, start: int = 1) -> None:
    fh.write("n,value\n")
    for i, v in enumerate(values, start=start):
        fh.write(f"{i},{float(v)!r}\n")


def _terms(s, n: int) -> np.ndarray:
    if isinstance(s, RealSeq):
        return s.values(n)
    arr = np.asarray(s, dtype=float)
    if arr.size < n:
        raise IndexError(f"need {n} terms, got {arr.size}")
    return arr[:n]


def partial_sums(s, n: int) -> np.ndarray:
    """``[s(1), s(1)+s(2), ...]`` up to ``n`` terms, accumulated left to right."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.cumsum(_terms(s, n))


@dataclass(frozen=True)
class SeriesVerdict:
    kind: str  # "converges" | "diverges" | "undetermined"
    horizon: int
    partial_sum: float
    residual: float
    tol: float
    threshold: float

    @property
    def converges(self) -> bool:
        return self.kind == "converges"

    @property
    def diverges(self) -> bool:
        return self.kind == "diverges"

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "horizon": self.horizon,
            "partial_sum": self.partial_sum,
            "residual": self.residual,
            "tol": self.tol,
            "threshold": self.threshold,
        }


def tail_cauchy_residual(sums: np.ndarray) -> float:
    """``max_{N/2 <= m < n <= N} |S_n - S_m|`` for the partial sums ``S_1..S_N``."""
    N = sums.size
    lo = N // 2
    window = sums[lo - 1:] if lo >= 1 else np.concatenate([[0.0], sums])
    return float(window.max() - window.min())


def series_verdict(terms, horizon: int, tol: float = DEFAULT_TOL,
                   div_threshold: float = DEFAULT_DIV_THRESHOLD) -> SeriesVerdict:
    """Finite-horizon verdict on ``sum terms``.

    converges if the tail Cauchy residual is below ``tol``; otherwise diverges
    if the partial sum at ``horizon`` exceeds ``div_threshold``; else undetermined.
    """
    S = partial_sums(terms, horizon)
    residual = tail_cauchy_residual(S)
    total = float(S[-1])
    if residual < tol:
        kind = "converges"
    elif total > div_threshold:
        kind = "diverges"
    else:
        kind = "undetermined"
    return SeriesVerdict(kind, int(horizon), total, residual, float(tol), float(div_threshold))


def last_decile_max(values: np.ndarray) -> float:
    k = math.ceil(values.size / 10)
    return float(np.max(np.abs(values[-k:])))


@dataclass(frozen=True)
class RMScheduleCheck:
    tends_to_zero: bool
    last_decile_max: float
    sum_diverges: SeriesVerdict
    sum_sq_converges: SeriesVerdict
    tol: float

    @property
    def ok(self) -> bool:
        return self.tends_to_zero and self.sum_diverges.diverges and self.sum_sq_converges.converges


def validate_rm_schedule(a: RealSeq, horizon: int = DEFAULT_HORIZON, tol: float = DEFAULT_TOL,
                         div_threshold: float = DEFAULT_DIV_THRESHOLD) -> RMScheduleCheck:
    """Check ``a_n -> 0``, ``sum a_n = inf`` and ``sum a_n^2 < inf`` at ``horizon``."""
    if tol <= 0 or div_threshold <= 0:
        raise ValueError("tol and div_threshold must be positive")
    vals = a.values(horizon)
    if not a.nonnegative and np.any(vals < 0):
        k = int(np.flatnonzero(vals < 0)[0])
        raise SignViolation(k + 1, vals[k], a.name)
    ldm = last_decile_max(vals)
    return RMScheduleCheck(
        tends_to_zero=ldm < tol,
        last_decile_max=ldm,
        sum_diverges=series_verdict(vals, horizon, tol, div_threshold),
        sum_sq_converges=series_verdict(vals * vals, horizon, tol, div_threshold),
        tol=float(tol),
    )


@dataclass(frozen=True)
class EventualSign:
    eventually_zero: bool
    switch_index: int | None


def eventually_positive(a, horizon: int) -> EventualSign:
    """Finite-horizon version of the "eventually zero or not" case split."""
    vals = _terms(a, horizon)
    pos = np.flatnonzero(vals > 0)
    if pos.size == 0:
        return EventualSign(True, 1)
    last = int(pos[-1]) + 1
    if last == horizon:
        return EventualSign(False, None)
    return EventualSign(True, last + 1)


def du_bois_reymond_companion(a: RealSeq, horizon: int, tail: Callable | None = None,
                              tol: float = DEFAULT_TOL,
                              div_threshold: float = DEFAULT_DIV_THRESHOLD) -> RealSeq:
    """Multiplier ``b_n -> inf`` keeping ``sum a_n b_n`` finite.

    ``b_n = 1 / sqrt(r_{n-1})`` with tails ``r_n = sum_{k>n} a_k``. Tails come
    from ``tail`` (vectorized ``n -> r_n``) when given, otherwise from backward
    accumulation of the first ``horizon`` terms. Where the tail vanishes (the
    sequence is zero from there on) ``b_n = max(n, last finite b)``.
    Telescoping gives ``sum_{n<=N} a_n b_n <= 2 (sqrt(r_0) - sqrt(r_N))``.
    """
    vals = a.values(horizon)
    if not a.nonnegative and np.any(vals < 0):
        k = int(np.flatnonzero(vals < 0)[0])
        raise SignViolation(k + 1, vals[k], a.name)
    verdict = series_verdict(vals, horizon, tol, div_threshold)
    if verdict.diverges:
        raise PreconditionError(
            f"sum of {a.name} diverges at horizon {horizon} (S_N={verdict.partial_sum:.6g}); "
            "no summable companion exists"
        )
    if tail is None:
        r_prev = np.cumsum(vals[::-1])[::-1]  # r_prev[n-1] = r_{n-1}
    else:
        r_prev = np.asarray(tail(np.arange(0, horizon)), dtype=float)
    n = np.arange(1, horizon + 1, dtype=float)
    with np.errstate(divide="ignore"):
        b = np.where(r_prev > 0, 1.0 / np.sqrt(np.where(r_prev > 0, r_prev, 1.0)), np.nan)
    if np.isnan(b).any():
        prior = np.fmax.accumulate(b)
        prior = np.where(np.isnan(prior), 0.0, prior)
        b = np.where(np.isnan(b), np.maximum(n, prior), b)
    return RealSeq.from_array(b, name=f"dubois[{a.name}]")


def abel_dini_rho(a: RealSeq, horizon: int) -> RealSeq:
    """``rho_n = 1 / S_n`` (``1`` before the first positive partial sum).

    For divergent ``sum a_n``, ``rho_n -> 0`` while ``sum a_n rho_n`` still diverges.
    """
    S = partial_sums(a, horizon)
    if not S[-1] > 0:
        raise PreconditionError(f"partial sum of {a.name} is zero at horizon {horizon}")
    with np.errstate(divide="ignore"):
        rho = np.where(S > 0, 1.0 / np.where(S > 0, S, 1.0), 1.0)
    return RealSeq.from_array(rho, name=f"abel_dini[{a.name}]")


def abel_descending_check(a: RealSeq, b: RealSeq, horizon: int, tol: float = DEFAULT_TOL,
                          div_threshold: float = DEFAULT_DIV_THRESHOLD) -> SeriesVerdict:
    """Verdict on ``sum a_n b_n`` for bounded non-increasing ``a`` and summable ``b``.

    Abel summation bounds every tail block of ``sum a_n b_n`` by
    ``3 max|a| * residual(b)``, so the tolerance used is ``tol * max(1, 3 max|a|)``
    over the tail window.
    """
    av = np.asarray(a.values(horizon), dtype=float)
    if not np.all(np.isfinite(av)):
        k = int(np.flatnonzero(~np.isfinite(av))[0])
        raise PreconditionError(f"{a.name} is unbounded at n={k + 1}")
    up = np.flatnonzero(np.diff(av) > 0)
    if up.size:
        raise MonotonicityError(int(up[0]) + 2)
    bv = b.values(horizon)
    b_verdict = series_verdict(bv, horizon, tol, div_threshold)
    if not b_verdict.converges:
        raise PreconditionError(
            f"sum of {b.name} is not tail-Cauchy at tol {tol:g} (residual {b_verdict.residual:.3g})"
        )
    window = av[horizon // 2 - 1:] if horizon >= 2 else av
    scale = max(1.0, 3.0 * float(np.max(np.abs(window))))
    return series_verdict(av * bv, horizon, tol * scale, div_threshold)


@dataclass(frozen=True)
class DsLemmaInput:
    """Data of the Derman-Sacks recursion ``xi_{n+1} <= max(a_n, (1+b_n) xi_n + delta_n - c_n)``."""

    a: RealSeq
    b: RealSeq
    c: RealSeq
    delta: RealSeq
    xi0: float
    n0: int
    horizon: int

    def __post_init__(self):
        if self.n0 < 1:
            raise PreconditionError("n0 must be a positive integer")
        if self.horizon <= self.n0:
            raise PreconditionError("horizon must exceed n0")
        for label in ("a", "b", "c"):
            seq = getattr(self, label)
            vals = seq.values(self.horizon)
            if np.any(vals < 0):
                k = int(np.flatnonzero(vals < 0)[0])
                raise SignViolation(k + 1, vals[k], label)

    def arrays(self):
        h = self.horizon
        return self.a.values(h), self.b.values(h), self.c.values(h), self.delta.values(h)


def ds_lemma1_envelope(inp: DsLemmaInput) -> np.ndarray:
    """Worst case ``xi_{n0}, ..., xi_{horizon}`` with the recursion taken as equality.

    Entry ``k`` of the result is ``xi_{n0 + k}``.
    """
    a, b, c, d = (x.tolist() for x in inp.arrays())
    out = [float(inp.xi0)]
    xi = float(inp.xi0)
    for n in range(inp.n0, inp.horizon):
        i = n - 1
        xi = max(a[i], (1.0 + b[i]) * xi + d[i] - c[i])
        out.append(xi)
    return np.array(out)


def ds_1_helper_bound(inp: DsLemmaInput, N: int, n: int, xi_N: float | None = None) -> float:
    """Bound on ``xi_{n+1}`` from unrolling the recursion from ``n`` back to ``N``.

    With ``P(j) = prod_{k=j+1..n} (1+b_k)`` and ``D(j) = sum_{k=j+1..n} P(k) (delta_k - c_k)``::

        xi_{n+1} <= max( max_{N<=j<=n} [P(j) a_j + D(j)],  P(N-1) xi_N + D(N-1) )

    ``xi_N`` defaults to the envelope value at ``N``. Because ``x -> (1+b) x + d``
    is increasing, the bound is attained by the envelope itself.
    """
    if not (inp.n0 <= N < n <= inp.horizon):
        raise PreconditionError(f"need n0 <= N < n <= horizon, got N={N}, n={n}")
    if xi_N is None:
        xi_N = float(ds_lemma1_envelope(inp)[N - inp.n0])
    a, b, c, d = inp.arrays()
    P = 1.0
    D = 0.0
    best = -math.inf
    for j in range(n, N - 1, -1):
        i = j - 1
        best = max(best, P * a[i] + D)
        D += P * (d[i] - c[i])
        P *= 1.0 + b[i]
    return max(best, P * xi_N + D)
