"""CTC alignment: lattice loss, brute-force oracle, and decoders.

The loss marginalizes over every frame-level path that collapses (repeat
removal, then blank removal) to the target sequence, via forward/backward
dynamic programming over the blank-interleaved label lattice. All lattice
math lives in log space; ``-inf`` is the log of an exactly-zero
probability. The gradient with respect to the input log-probabilities is
the standard alpha*beta posterior, applied analytically (the lattice is
not unrolled into the autodiff graph), and is verified against the
finite-difference oracle in the test suite.

The blank symbol is always the last class column.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, logsumexp_np
from .errors import (
    EmptyTargetError,
    EnumerationTooLargeError,
    InfeasibleTargetError,
    NonFiniteError,
    NotNormalizedError,
    ShapeMismatchError,
    UnknownGlossError,
)

BRUTE_FORCE_LIMIT = 10 ** 6


def collapse(path: Sequence[int], blank: int) -> tuple[int, ...]:
    """Remove adjacent repeats, then blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev:
            out.append(int(sym))
        prev = sym
    return tuple(s for s in out if s != blank)


def _validate_target(num_frames: int, num_classes: int, target: Sequence[int]) -> list[int]:
    target = [int(g) for g in target]
    if not target:
        raise EmptyTargetError("CTC target must contain at least one gloss")
    blank = num_classes - 1
    if any(not 0 <= g < blank for g in target):
        raise UnknownGlossError(f"target ids must lie in 0..{blank - 1}")
    need = len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)
    if num_frames < need:
        raise InfeasibleTargetError(
            f"{num_frames} frames cannot emit {len(target)} glosses "
            f"(needs at least {need})")
    return target


def extended_labels(target: Sequence[int], blank: int) -> np.ndarray:
    """Blank-interleaved label sequence: even slots blank, odd slots glosses."""
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


@dataclass
class CtcLattice:
    """Forward/backward log-probability tables over the extended labels.

    Both tables include the emission at their own frame, so the total path
    mass through frame t is sum_s alpha[t,s] * beta[t,s] / p(label_s at t),
    a constant equal to the sequence likelihood at every t.
    """

    extended: np.ndarray    # (2N+1,)
    log_alpha: np.ndarray   # (T, 2N+1)
    log_beta: np.ndarray    # (T, 2N+1)
    log_probs: np.ndarray   # (T, C)
    log_likelihood: float

    def frame_totals(self) -> np.ndarray:
        emit = self.log_probs[:, self.extended]
        return logsumexp_np(self.log_alpha + self.log_beta - emit, axis=1)

    def consistency_error(self) -> float:
        """Max deviation of per-frame total mass from the likelihood."""
        return float(np.abs(self.frame_totals() - self.log_likelihood).max())


def ctc_lattice(log_probs: np.ndarray, target: Sequence[int]) -> CtcLattice:
    """Run the forward/backward recursions for one sequence."""
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeMismatchError(f"log_probs must be (T, classes), got {lp.shape}")
    t_len, classes = lp.shape
    target = _validate_target(t_len, classes, target)
    blank = classes - 1
    ext = extended_labels(target, blank)
    s_len = ext.size
    emit = lp[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed into non-blank slots with a new label
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    neg = -np.inf
    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        one = np.concatenate(([neg], prev[:-1]))
        two = np.concatenate(([neg, neg], prev[:-2]))
        two = np.where(skip, two, neg)
        alpha[t] = np.logaddexp(np.logaddexp(stay, one), two) + emit[t]

    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = emit[-1, -1]
    if s_len > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        one = np.concatenate((nxt[1:], [neg]))
        two = np.concatenate((nxt[2:], [neg, neg]))
        two = np.where(np.concatenate((skip[2:], [False, False])), two, neg)
        beta[t] = np.logaddexp(np.logaddexp(stay, one), two) + emit[t]

    tail = alpha[-1, -1] if s_len == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    return CtcLattice(extended=ext, log_alpha=alpha, log_beta=beta,
                      log_probs=lp, log_likelihood=float(tail))


def _posterior_grad(lattice: CtcLattice) -> np.ndarray:
    """d(-log likelihood) / d(log_probs), zero where no path mass exists."""
    lp = lattice.log_probs
    grad = np.zeros_like(lp)
    z = lattice.log_alpha + lattice.log_beta  # (T, S)
    for k in np.unique(lattice.extended):
        cols = np.flatnonzero(lattice.extended == k)
        num = logsumexp_np(z[:, cols], axis=1)
        with np.errstate(invalid="ignore"):
            g = -np.exp(num - lattice.log_likelihood - lp[:, k])
        grad[:, k] = np.where(np.isneginf(num), 0.0, g)
    return grad


def ctc_loss(log_probs, target: Sequence[int]) -> Tensor:
    """Negative log-probability of the target under CTC marginalization.

    ``log_probs`` is a (T, classes) tensor of per-frame log-probabilities
    with blank last; rows must be normalized. Differentiable with respect
    to ``log_probs`` through the analytic lattice posterior.
    """
    lp = log_probs if isinstance(log_probs, Tensor) else Tensor(np.asarray(log_probs))
    values = lp.values
    if np.isnan(values).any() or np.isposinf(values).any():
        raise NonFiniteError("log_probs contain NaN or +inf")
    with np.errstate(over="ignore"):
        row_sums = np.exp(values).sum(axis=-1)
    if np.abs(row_sums - 1.0).max() > 1e-3:
        raise NotNormalizedError("exp(log_probs) rows must sum to 1")

    lattice = ctc_lattice(values, target)
    loss_value = -lattice.log_likelihood
    if not np.isfinite(loss_value):
        raise NonFiniteError("target has zero probability under log_probs")

    if not (lp.requires_grad or lp._parents):
        return Tensor._from_op(np.asarray(loss_value), (), None)

    def backward():
        lp._accum(out.grad * _posterior_grad(lattice))

    out = Tensor._from_op(np.asarray(loss_value), (lp,), backward)
    return out


# ---------------------------------------------------------------------------
# brute-force oracle


def enumerate_collapsed(probs: np.ndarray) -> dict[tuple[int, ...], float]:
    """Total probability of every collapsed output, by full path enumeration."""
    p = np.asarray(probs, dtype=np.float64)
    t_len, classes = p.shape
    if classes ** t_len > BRUTE_FORCE_LIMIT:
        raise EnumerationTooLargeError(
            f"{classes}^{t_len} paths exceed the {BRUTE_FORCE_LIMIT} guard")
    blank = classes - 1
    totals: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(classes), repeat=t_len):
        prob = 1.0
        for t, sym in enumerate(path):
            prob *= p[t, sym]
        key = collapse(path, blank)
        totals[key] = totals.get(key, 0.0) + prob
    return totals


def ctc_brute_force(probs: np.ndarray, target: Sequence[int]) -> float:
    """Probability of the target by enumerating every length-T path."""
    p = np.asarray(probs, dtype=np.float64)
    t_len, classes = p.shape
    if classes ** t_len > BRUTE_FORCE_LIMIT:
        raise EnumerationTooLargeError(
            f"{classes}^{t_len} paths exceed the {BRUTE_FORCE_LIMIT} guard")
    blank = classes - 1
    want = tuple(int(g) for g in target)
    total = 0.0
    for path in itertools.product(range(classes), repeat=t_len):
        if collapse(path, blank) != want:
            continue
        prob = 1.0
        for t, sym in enumerate(path):
            prob *= p[t, sym]
        total += prob
    return total


# ---------------------------------------------------------------------------
# decoders


@dataclass
class DecodeResult:
    """Decoded gloss sequence plus its (approximate) log-probability."""

    glosses: list[int]
    score: float


def greedy_decode(log_probs: np.ndarray) -> DecodeResult:
    """Best per-frame symbol, collapsed; score is the argmax path mass."""
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ShapeMismatchError(f"log_probs must be (T>=1, classes), got {lp.shape}")
    path = lp.argmax(axis=1)
    score = float(lp[np.arange(lp.shape[0]), path].sum())
    return DecodeResult(glosses=list(collapse(path, lp.shape[1] - 1)), score=score)


def beam_decode(log_probs: np.ndarray, beam_width: int = 10) -> DecodeResult:
    """CTC prefix beam search.

    Tracks blank/non-blank path mass per collapsed prefix; with an
    unbounded width this enumerates every prefix and therefore returns the
    exact marginal argmax. Ties break toward the lexicographically
    smallest gloss-id sequence.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ShapeMismatchError(f"log_probs must be (T>=1, classes), got {lp.shape}")
    if beam_width < 1:
        raise ShapeMismatchError("beam_width must be >= 1")
    blank = lp.shape[1] - 1
    neg = -np.inf
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, neg]}

    for t in range(lp.shape[0]):
        frame = lp[t]
        grown: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            entry = grown.get(prefix)
            if entry is None:
                entry = [neg, neg]
                grown[prefix] = entry
            return entry

        for prefix, (p_b, p_nb) in beams.items():
            total = np.logaddexp(p_b, p_nb)
            entry = slot(prefix)
            entry[0] = np.logaddexp(entry[0], total + frame[blank])
            if prefix:
                entry[1] = np.logaddexp(entry[1], p_nb + frame[prefix[-1]])
            for sym in range(blank):
                mass = p_b + frame[sym] if prefix and sym == prefix[-1] \
                    else total + frame[sym]
                ext = slot(prefix + (sym,))
                ext[1] = np.logaddexp(ext[1], mass)

        ranked = sorted(grown.items(),
                        key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
        beams = dict(ranked[:beam_width])

    best_prefix, (p_b, p_nb) = min(
        beams.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
    return DecodeResult(glosses=list(best_prefix),
                        score=float(np.logaddexp(p_b, p_nb)))
