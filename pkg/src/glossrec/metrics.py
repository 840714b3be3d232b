"""Word error rate with deletion/insertion/substitution breakdown.

WER here is corpus-level: summed edit operations over summed reference
lengths, not a mean of per-sentence rates. The per-pair alignment is a
standard unit-cost Levenshtein DP; among cost-minimal backtraces the
substitution move is preferred over insertion over deletion so the
DEL/INS columns are deterministic.

Also provides the per-sample cross-modal alignment matrix (cosine
similarity between per-frame visual and textual features) and its CSV /
8-bit PGM exports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyReferenceError, ShapeMismatchError


@dataclass(frozen=True)
class EditBreakdown:
    """Minimal edit-operation counts aligning a hypothesis to a reference."""

    dels: int
    ins: int
    subs: int
    ref_len: int

    @property
    def distance(self) -> int:
        return self.dels + self.ins + self.subs


@dataclass
class WerReport:
    """Corpus WER plus the operation totals it was computed from."""

    wer: float
    dels: int
    ins: int
    subs: int
    ref_len: int
    per_sample: list[EditBreakdown] = field(default_factory=list)


def edit_alignment(ref: Sequence[int], hyp: Sequence[int]) -> EditBreakdown:
    """Align ``hyp`` to ``ref`` with unit costs and count the operations.

    Deletions are reference tokens absent from the hypothesis; insertions
    are hypothesis tokens absent from the reference. Among cost-minimal
    alignments the substitution move is preferred over insertion over
    deletion, which makes the breakdown unique (and symmetric: swapping
    the arguments swaps dels with ins).
    """
    ref = list(ref)
    hyp = list(hyp)
    r, h = len(ref), len(hyp)
    # Lexicographic cost (edit distance, then del+ins count) packed into one
    # integer; preferring fewer del/ins among minimal paths pins the breakdown.
    big = r + h + 2
    step = big + 1  # one insertion or deletion: cost +1, del+ins +1
    dist = np.zeros((r + 1, h + 1), dtype=np.int64)
    dist[0, :] = np.arange(h + 1) * step
    hyp_arr = np.asarray(hyp) if h else np.zeros(0, dtype=np.int64)
    offsets = np.arange(h + 1) * step
    for i in range(1, r + 1):
        prev = dist[i - 1]
        sub = prev[:-1] + np.where(hyp_arr == ref[i - 1], 0, big)
        cand = np.minimum(sub, prev[1:] + step) if h else np.zeros(0, dtype=np.int64)
        # fold in left-to-right insertion chains via a running minimum
        heads = np.concatenate(([i * step], cand - offsets[1:]))
        dist[i] = np.minimum.accumulate(heads) + offsets

    dels = ins = subs = 0
    i, j = r, h
    while i > 0 or j > 0:
        here = dist[i, j]
        if i > 0 and j > 0 and dist[i - 1, j - 1] + big * (ref[i - 1] != hyp[j - 1]) == here:
            subs += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif j > 0 and dist[i, j - 1] + step == here:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return EditBreakdown(dels=dels, ins=ins, subs=subs, ref_len=r)


def wer(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> WerReport:
    """Corpus word error rate over (reference, hypothesis) pairs."""
    if not pairs:
        raise EmptyReferenceError("no (reference, hypothesis) pairs given")
    per_sample = [edit_alignment(ref, hyp) for ref, hyp in pairs]
    ref_len = sum(b.ref_len for b in per_sample)
    if ref_len == 0:
        raise EmptyReferenceError("total reference length is zero")
    dels = sum(b.dels for b in per_sample)
    ins = sum(b.ins for b in per_sample)
    subs = sum(b.subs for b in per_sample)
    return WerReport(
        wer=(dels + ins + subs) / ref_len,
        dels=dels, ins=ins, subs=subs, ref_len=ref_len,
        per_sample=per_sample,
    )


def alignment_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity between two per-frame feature sequences.

    Returns a ``(len(a), len(b))`` matrix; rows follow ``a``. Zero-norm
    frames contribute zero similarity rather than NaN.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(
            f"feature widths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    na[na == 0.0] = 1.0
    nb[nb == 0.0] = 1.0
    return (a / na) @ (b / nb).T


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(f"{v:.12g}" for v in row))
            fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)


def save_matrix_pgm(path, matrix: np.ndarray) -> None:
    """8-bit binary PGM with per-matrix min-max scaling."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lo, hi = matrix.min(), matrix.max()
    if hi > lo:
        scaled = np.round((matrix - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(matrix)
    pixels = scaled.astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
