"""Exact probability on finite sample spaces.

Outcomes are ``0..size-1``. A sub-sigma-algebra is a :class:`Partition`
(on a finite space every sigma-algebra is generated by its atoms), a random
variable is a plain 1-D float array, and conditional expectation is the
weight-weighted block average, i.e. the orthogonal projection in L2 onto
the block-constant functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import LengthMismatch, MeasurabilityError, PreconditionError, RefinementError
from .series import RealSeq

TOL = 1e-12


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteProbSpace:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, size: int) -> "FiniteProbSpace":
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return self.weights.size

    def check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.size,):
            raise LengthMismatch(f"random variable of shape {X.shape} on a space of size {self.size}")
        return X


@dataclass(frozen=True, eq=False)
class Partition:
    block_of: np.ndarray
    block_count: int

    def __post_init__(self):
        b = _frozen(self.block_of, dtype=np.int64)
        if b.ndim != 1:
            raise ValueError("block_of must be one-dimensional")
        if b.size and (b.min() < 0 or b.max() >= self.block_count):
            raise ValueError("block index out of range")
        if np.bincount(b, minlength=self.block_count).min(initial=1) == 0:
            raise ValueError("every block must be nonempty")
        object.__setattr__(self, "block_of", b)

    @classmethod
    def discrete(cls, size: int) -> "Partition":
        return cls(np.arange(size), size)

    @classmethod
    def trivial(cls, size: int) -> "Partition":
        return cls(np.zeros(size, dtype=np.int64), 1)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Blocks from arbitrary hashable labels, numbered by first appearance."""
        _, first, inverse = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return cls(order[inverse], first.size)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]], size: int | None = None) -> "Partition":
        size = size if size is not None else sum(len(b) for b in blocks)
        block_of = np.full(size, -1, dtype=np.int64)
        for k, blk in enumerate(blocks):
            block_of[list(blk)] = k
        if np.any(block_of < 0):
            raise ValueError("blocks do not cover the space")
        return cls(block_of, len(blocks))

    @property
    def size(self) -> int:
        return self.block_of.size

    def refines(self, coarse: "Partition") -> bool:
        """True iff every block of ``self`` lies inside a single block of ``coarse``."""
        if coarse.size != self.size:
            raise LengthMismatch("partitions of different spaces")
        owner = np.full(self.block_count, -1, dtype=np.int64)
        owner[self.block_of] = coarse.block_of
        return bool(np.all(owner[self.block_of] == coarse.block_of))


@dataclass(frozen=True, eq=False)
class Filtration:
    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        for k in range(1, len(levels)):
            if not levels[k].refines(levels[k - 1]):
                raise RefinementError(f"level {k} does not refine level {k - 1}")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k) -> Partition:
        return self.levels[k]


@dataclass(frozen=True)
class Event:
    members: frozenset

    def indicator(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        idx = np.fromiter(self.members, dtype=np.int64, count=len(self.members))
        if idx.size and (idx.min() < 0 or idx.max() >= size):
            raise ValueError("event members outside the sample space")
        out[idx] = 1.0
        return out

    def probability(self, sp: FiniteProbSpace) -> float:
        return float(np.dot(sp.weights, self.indicator(sp.size)))


def _check_partition(sp: FiniteProbSpace, part: Partition) -> None:
    if part.size != sp.size:
        raise LengthMismatch(f"partition of size {part.size} on a space of size {sp.size}")


def expectation(sp: FiniteProbSpace, X) -> float:
    X = sp.check(X)
    return float(np.dot(sp.weights, X))


def cond_expectation(sp: FiniteProbSpace, part: Partition, X) -> np.ndarray:
    """Block-wise weighted average of ``X``.

    Blocks of zero total weight get the unweighted mean instead; any value is
    almost surely equivalent there, this one keeps the map deterministic.
    """
    X = sp.check(X)
    _check_partition(sp, part)
    k = part.block_count
    mass = np.bincount(part.block_of, weights=sp.weights, minlength=k)
    num = np.bincount(part.block_of, weights=sp.weights * X, minlength=k)
    cnt = np.bincount(part.block_of, minlength=k)
    plain = np.bincount(part.block_of, weights=X, minlength=k) / cnt
    safe = np.where(mass > 0, mass, 1.0)
    avg = np.where(mass > 0, num / safe, plain)
    # blocks on which X is already constant keep that constant bit-for-bit
    lo = np.full(k, np.inf)
    hi = np.full(k, -np.inf)
    np.minimum.at(lo, part.block_of, X)
    np.maximum.at(hi, part.block_of, X)
    avg = np.where(lo == hi, lo, avg)
    return avg[part.block_of]


def is_measurable(X, part: Partition) -> bool:
    X = np.asarray(X, dtype=float)
    if X.shape != (part.size,):
        raise LengthMismatch("random variable and partition sizes differ")
    first = np.full(part.block_count, np.nan)
    # reversed assignment leaves the first occurrence in each block
    first[part.block_of[::-1]] = X[::-1]
    return bool(np.all(X == first[part.block_of]))


def check_universal_property(sp: FiniteProbSpace, part: Partition, X, ce) -> float:
    """``max_B |E[X 1_B] - E[ce 1_B]|`` over the blocks ``B`` of ``part``."""
    X = sp.check(X)
    ce = sp.check(ce)
    _check_partition(sp, part)
    if not is_measurable(ce, part):
        raise MeasurabilityError("candidate conditional expectation is not measurable")
    k = part.block_count
    lhs = np.bincount(part.block_of, weights=sp.weights * X, minlength=k)
    rhs = np.bincount(part.block_of, weights=sp.weights * ce, minlength=k)
    return float(np.max(np.abs(lhs - rhs)))


def check_tower(sp: FiniteProbSpace, coarse: Partition, fine: Partition, X) -> float:
    if not fine.refines(coarse):
        raise RefinementError("fine partition does not refine coarse")
    inner = cond_expectation(sp, fine, X)
    return float(np.max(np.abs(cond_expectation(sp, coarse, inner) - cond_expectation(sp, coarse, X))))


def check_factor_out(sp: FiniteProbSpace, part: Partition, Xm, Y) -> float:
    Xm = sp.check(Xm)
    Y = sp.check(Y)
    if not is_measurable(Xm, part):
        raise MeasurabilityError("factor is not measurable w.r.t. the partition")
    lhs = cond_expectation(sp, part, Xm * Y)
    rhs = Xm * cond_expectation(sp, part, Y)
    return float(np.max(np.abs(lhs - rhs)))


def jensen_check(sp: FiniteProbSpace, part: Partition, X, phi: Callable) -> float:
    """``min [CE(phi(X)) - phi(CE(X))]``; nonnegative for convex ``phi``.

    ``phi`` must be vectorized and convex; convexity is the caller's claim.
    """
    X = sp.check(X)
    gap = cond_expectation(sp, part, phi(X)) - phi(cond_expectation(sp, part, X))
    return float(np.min(gap))


class ChebyshevBound(NamedTuple):
    lhs: float
    rhs: float


def chebyshev_check(sp: FiniteProbSpace, X, a: float) -> ChebyshevBound:
    """``P(|X| >= a)`` against ``E[X^2] / a^2``."""
    if not a > 0:
        raise PreconditionError("a must be positive")
    X = sp.check(X)
    lhs = float(np.dot(sp.weights, np.abs(X) >= a))
    rhs = float(np.dot(sp.weights, X * X)) / (a * a)
    return ChebyshevBound(lhs, rhs)


def borel_cantelli_tail(p: RealSeq, k: int, horizon: int) -> float:
    """``sum_{n=k}^{horizon} p_n``; this must vanish as ``k -> inf`` for ``P(limsup E_n) = 0``."""
    if k < 1:
        raise PreconditionError("k must be >= 1")
    if horizon < k:
        return 0.0
    vals = p.values(horizon)
    over = np.flatnonzero(vals > 1)
    if over.size:
        raise PreconditionError(f"p_{int(over[0]) + 1} = {vals[over[0]]!r} is not a probability")
    return float(np.sum(vals[k - 1:]))


def lp_norm(sp: FiniteProbSpace, X, p: float = 2.0) -> float:
    if p < 1:
        raise PreconditionError("p must be >= 1")
    X = sp.check(X)
    return float(np.dot(sp.weights, np.abs(X) ** p) ** (1.0 / p))
