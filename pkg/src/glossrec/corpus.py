"""Synthetic gloss corpora, annotation/feature file formats, and batching.

A corpus stands in for licensed sign-video data: every gloss owns a random
prototype vector, a sample is a bigram-biased gloss sequence expanded to a
variable number of frames per gloss, and frames are prototypes plus
Gaussian noise. Everything is a pure function of (config, seed).

On-disk formats (all little-endian, shared with the CLI):

* annotations: UTF-8 TSV, one ``id<TAB>split<TAB>gloss tokens`` line per
  sample, LF endings;
* features: binary, magic ``CVTF``, version u32, sample count u32, then per
  sample id (u16 length + UTF-8), T u32, d_in u32, T*d_in float32 values;
* vocabulary: UTF-8 text, one gloss per line, line order defines the ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    AnnotationParseError,
    BadMagicError,
    InvalidConfigError,
    TruncatedFileError,
    UnknownGlossError,
)

FEATURE_MAGIC = b"CVTF"
FEATURE_VERSION = 1

SPLITS = ("train", "dev", "test")
PAD_GLOSS = -1  # target padding sentinel, excluded from every loss


class GlossVocab:
    """Bijection between gloss strings and dense integer ids.

    Real glosses occupy ids ``0..size-1``; the CTC blank is the reserved
    last id ``size`` and never appears in annotations.
    """

    def __init__(self, glosses: Sequence[str]):
        self.id_to_gloss = list(glosses)
        if len(set(self.id_to_gloss)) != len(self.id_to_gloss):
            raise InvalidConfigError("duplicate gloss strings in vocabulary")
        self._gloss_to_id = {g: i for i, g in enumerate(self.id_to_gloss)}

    @property
    def size(self) -> int:
        return len(self.id_to_gloss)

    @property
    def blank_id(self) -> int:
        return len(self.id_to_gloss)

    @property
    def num_classes(self) -> int:
        """Output width of the shared classifier: glosses plus blank."""
        return len(self.id_to_gloss) + 1

    def id_of(self, gloss: str) -> int:
        try:
            return self._gloss_to_id[gloss]
        except KeyError:
            raise UnknownGlossError(f"unknown gloss token {gloss!r}") from None

    def gloss_of(self, gid: int) -> str:
        if not 0 <= gid < self.size:
            raise UnknownGlossError(f"gloss id {gid} outside 0..{self.size - 1}")
        return self.id_to_gloss[gid]

    def __eq__(self, other) -> bool:
        return isinstance(other, GlossVocab) and other.id_to_gloss == self.id_to_gloss


@dataclass
class SignSample:
    """One instance: frame features paired with its gloss annotation."""

    id: str
    glosses: list[int]
    split: str
    frames: np.ndarray | None = None  # (T, d_in) float64, absent for gloss-only use

    @property
    def num_frames(self) -> int:
        return 0 if self.frames is None else self.frames.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic corpus generator."""

    vocab_size: int = 10
    min_glosses: int = 3
    max_glosses: int = 8
    min_frames_per_gloss: int = 2
    max_frames_per_gloss: int = 4
    feature_dim: int = 16
    noise_sigma: float = 0.1
    prototype_seed: int = 7
    train_size: int = 200
    dev_size: int = 40
    test_size: int = 40

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise InvalidConfigError("vocab_size must be at least 2")
        if not 1 <= self.min_glosses <= self.max_glosses:
            raise InvalidConfigError("need 1 <= min_glosses <= max_glosses")
        if not 1 <= self.min_frames_per_gloss <= self.max_frames_per_gloss:
            raise InvalidConfigError("need 1 <= min_frames_per_gloss <= max_frames_per_gloss")
        if self.feature_dim < 1:
            raise InvalidConfigError("feature_dim must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be nonnegative")
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise InvalidConfigError("split sizes must be positive")


def gloss_prototypes(cfg: SynthConfig) -> np.ndarray:
    """Per-gloss feature prototypes, a pure function of the prototype seed."""
    rng = np.random.default_rng(cfg.prototype_seed)
    return rng.normal(size=(cfg.vocab_size, cfg.feature_dim))


def _ctc_min_frames(glosses: Sequence[int]) -> int:
    dups = sum(1 for a, b in zip(glosses, glosses[1:]) if a == b)
    return len(glosses) + dups


def generate_corpus(cfg: SynthConfig, seed: int) -> tuple[GlossVocab, list[SignSample]]:
    """Generate a seeded corpus of gloss sequences with frame features.

    Gloss sequences follow a random per-seed bigram transition matrix so
    sequence statistics are non-uniform; each gloss is expanded to a random
    number of frames equal to its prototype plus isotropic noise. Every
    sample satisfies the CTC feasibility bound (enough frames to emit the
    target with blanks between repeats).
    """
    cfg.validate()
    vocab = GlossVocab([f"G{i:03d}" for i in range(cfg.vocab_size)])
    protos = gloss_prototypes(cfg)

    rng = np.random.default_rng([seed, 0xC0])
    start = rng.dirichlet(np.full(cfg.vocab_size, 1.5))
    trans = rng.dirichlet(np.full(cfg.vocab_size, 0.8), size=cfg.vocab_size)

    samples: list[SignSample] = []
    counter = 0
    for split, count in zip(SPLITS, (cfg.train_size, cfg.dev_size, cfg.test_size)):
        for _ in range(count):
            n = int(rng.integers(cfg.min_glosses, cfg.max_glosses + 1))
            seq = [int(rng.choice(cfg.vocab_size, p=start))]
            for _ in range(n - 1):
                seq.append(int(rng.choice(cfg.vocab_size, p=trans[seq[-1]])))
            frames_per = rng.integers(cfg.min_frames_per_gloss,
                                      cfg.max_frames_per_gloss + 1, size=n)
            # top up repeated glosses until the blank-separated emission fits
            need = _ctc_min_frames(seq)
            i = 1
            while frames_per.sum() < need:
                if seq[i] == seq[i - 1] and frames_per[i] == 1:
                    frames_per[i] += 1
                i = i % (n - 1) + 1 if n > 1 else 1
            rows = []
            for g, k in zip(seq, frames_per):
                noise = rng.normal(scale=cfg.noise_sigma, size=(int(k), cfg.feature_dim)) \
                    if cfg.noise_sigma > 0 else np.zeros((int(k), cfg.feature_dim))
                rows.append(protos[g] + noise)
            sample = SignSample(
                id=f"s{counter:05d}",
                glosses=seq,
                split=split,
                frames=np.concatenate(rows, axis=0),
            )
            samples.append(sample)
            counter += 1
    return vocab, samples


# ---------------------------------------------------------------------------
# file formats


def write_vocab(path, vocab: GlossVocab) -> None:
    Path(path).write_text("".join(g + "\n" for g in vocab.id_to_gloss), encoding="utf-8")


def read_vocab(path) -> GlossVocab:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln]
    return GlossVocab(lines)


def write_annotations(path, samples: Sequence[SignSample], vocab: GlossVocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            tokens = " ".join(vocab.gloss_of(g) for g in s.glosses)
            fh.write(f"{s.id}\t{s.split}\t{tokens}\n")


def read_annotations(path, vocab: GlossVocab) -> list[SignSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise AnnotationParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            sid, split, tokens = fields
            if split not in SPLITS:
                raise AnnotationParseError(f"{path}:{lineno}: unknown split {split!r}")
            glosses = [vocab.id_of(tok) for tok in tokens.split(" ") if tok]
            if not glosses:
                raise AnnotationParseError(f"{path}:{lineno}: empty gloss sequence")
            samples.append(SignSample(id=sid, glosses=glosses, split=split))
    return samples


def write_features(path, features: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", FEATURE_VERSION, len(features)))
        for sid, mat in features.items():
            mat = np.asarray(mat, dtype=np.float32)
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            fh.write(mat.astype("<f4").tobytes())


def read_features(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: expected magic {FEATURE_MAGIC!r}")
    off = 4

    def pull(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise TruncatedFileError(f"{path}: truncated at byte {off}")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    _version, count = pull("<II")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = pull("<H")
        if off + id_len > len(blob):
            raise TruncatedFileError(f"{path}: truncated sample id")
        sid = blob[off:off + id_len].decode("utf-8")
        off += id_len
        t, d = pull("<II")
        nbytes = 4 * t * d
        if off + nbytes > len(blob):
            raise TruncatedFileError(f"{path}: truncated payload for {sid!r}")
        mat = np.frombuffer(blob, dtype="<f4", count=t * d, offset=off).reshape(t, d)
        off += nbytes
        out[sid] = mat.astype(np.float64)
    return out


def attach_features(samples: Sequence[SignSample], features: dict[str, np.ndarray]) -> None:
    for s in samples:
        if s.id in features:
            s.frames = features[s.id]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Zero-padded frame/gloss arrays with validity masks."""

    ids: list[str]
    frames: np.ndarray | None      # (B, T_max, d_in) zero-padded
    frame_mask: np.ndarray | None  # (B, T_max) bool
    glosses: np.ndarray            # (B, N_max) padded with PAD_GLOSS
    gloss_mask: np.ndarray         # (B, N_max) bool
    gloss_lengths: np.ndarray      # (B,)
    frame_lengths: np.ndarray      # (B,)

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(samples: Sequence[SignSample]) -> Batch:
    b = len(samples)
    n_max = max(len(s.glosses) for s in samples)
    glosses = np.full((b, n_max), PAD_GLOSS, dtype=np.int64)
    gloss_mask = np.zeros((b, n_max), dtype=bool)
    for i, s in enumerate(samples):
        glosses[i, :len(s.glosses)] = s.glosses
        gloss_mask[i, :len(s.glosses)] = True

    frames = frame_mask = None
    frame_lengths = np.zeros(b, dtype=np.int64)
    if all(s.frames is not None for s in samples):
        t_max = max(s.num_frames for s in samples)
        d_in = samples[0].frames.shape[1]
        frames = np.zeros((b, t_max, d_in))
        frame_mask = np.zeros((b, t_max), dtype=bool)
        for i, s in enumerate(samples):
            t = s.num_frames
            frames[i, :t] = s.frames
            frame_mask[i, :t] = True
            frame_lengths[i] = t

    return Batch(
        ids=[s.id for s in samples],
        frames=frames,
        frame_mask=frame_mask,
        glosses=glosses,
        gloss_mask=gloss_mask,
        gloss_lengths=np.array([len(s.glosses) for s in samples], dtype=np.int64),
        frame_lengths=frame_lengths,
    )


def iter_batches(samples: Sequence[SignSample], batch_size: int,
                 rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Yield padded batches covering the sample list exactly once.

    With an rng the order is shuffled (one permutation per call, so each
    epoch's order comes from the caller's persistent data-order stream);
    without one the order is as given.
    """
    if batch_size < 1:
        raise InvalidConfigError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    for lo in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[lo:lo + batch_size]]
        yield collate(chunk)


def split_samples(samples: Sequence[SignSample], split: str) -> list[SignSample]:
    return [s for s in samples if s.split == split]
