"""Model components: frame encoder, gloss embedding, self-attention
posterior encoder, Bi-LSTM generative decoder, video-gloss adapter, and
the classifier shared between the visual and textual branches.

All forward passes accept either a single sequence ``(T, d)`` or a padded
batch ``(B, T, d)`` with a boolean validity mask. Padded positions are
kept exactly inert: attention masks zero their weight, LSTM updates freeze
state across them, and downstream losses slice or mask them out.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    CheckpointIncompatibleError,
    EmptySequenceError,
    InvalidConfigError,
    NotNormalizedError,
    ShapeMismatchError,
    UnknownGlossError,
)

ATTN_MASK_BIAS = -1e30  # additive score for padded keys; exp() underflows to exactly 0


class Module:
    """Minimal parameter container with recursive named access."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.values.copy() for k, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                raise CheckpointIncompatibleError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.values.shape:
                raise CheckpointIncompatibleError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape}, model {p.values.shape}")
            p.values = arr.copy()


class ModuleList(Module):
    def __init__(self, modules: Iterable[Module]):
        super().__init__()
        self.items = list(modules)
        for i, m in enumerate(self.items):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


class Linear(Module):
    """Affine map; weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in))."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatchError(
                f"linear expects last dim {self.n_in}, got {x.shape}")
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        centered = x - x.mean(axis=-1, keepdims=True)
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + self.eps) ** -0.5 * self.gain + self.shift


def sinusoid_positions(length: int, width: int) -> np.ndarray:
    """Fixed sin/cos position table; attention has no order sense without it."""
    pos = np.arange(length)[:, None]
    idx = np.arange(width)[None, :]
    angles = pos / np.power(10000.0, 2 * (idx // 2) / width)
    table = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return table


class MultiHeadSelfAttention(Module):
    """One pre-classifier self-attention block with residual + layer norm."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if width % heads != 0:
            raise InvalidConfigError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.wq = Linear(width, width, rng)
        self.wk = Linear(width, width, rng)
        self.wv = Linear(width, width, rng)
        self.wo = Linear(width, width, rng)
        self.norm = LayerNorm(width)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        b, t, d = x.shape
        scale = 1.0 / math.sqrt(self.head_dim)

        def split_heads(m: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(m, (b, t, self.heads, self.head_dim)),
                                (0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * scale
        if mask is not None:
            bias = np.where(mask, 0.0, ATTN_MASK_BIAS)[:, None, None, :]
            scores = scores + Tensor(bias)
        weights = ad.softmax_last(scores)
        ctx = ad.matmul(weights, v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.norm(x + self.wo(merged))


class LstmLayer(Module):
    """Single-direction LSTM; forget-gate bias starts at 1."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.w_ih = Tensor(rng.uniform(-bound, bound, size=(n_in, 4 * hidden)),
                           requires_grad=True)
        hb = 1.0 / math.sqrt(hidden)
        self.w_hh = Tensor(rng.uniform(-hb, hb, size=(hidden, 4 * hidden)),
                           requires_grad=True)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Tensor(bias, requires_grad=True)
        self.hidden = hidden

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        b, t, _ = x.shape
        n = self.hidden
        xw = ad.matmul(x, self.w_ih)  # (B, T, 4H) in one shot
        h = Tensor(np.zeros((b, n)))
        c = Tensor(np.zeros((b, n)))
        outs = []
        for step in range(t):
            gates = xw[:, step] + ad.matmul(h, self.w_hh) + self.bias
            i = ad.sigmoid(gates[:, :n])
            f = ad.sigmoid(gates[:, n:2 * n])
            g = ad.tanh(gates[:, 2 * n:3 * n])
            o = ad.sigmoid(gates[:, 3 * n:])
            c_new = f * c + i * g
            h_new = o * ad.tanh(c_new)
            if mask is None or mask[:, step].all():
                h, c = h_new, c_new
            else:
                m = Tensor(mask[:, step:step + 1].astype(np.float64))
                keep = Tensor(1.0 - mask[:, step:step + 1].astype(np.float64))
                h = h_new * m + h * keep
                c = c_new * m + c * keep
            outs.append(h)
        return ad.stack(outs, axis=1)


class BiLstm(Module):
    """Stack of bidirectional LSTM layers; output width is 2 * hidden."""

    def __init__(self, n_in: int, hidden: int, layers: int, rng: np.random.Generator):
        super().__init__()
        fwd, bwd = [], []
        width = n_in
        for _ in range(layers):
            fwd.append(LstmLayer(width, hidden, rng))
            bwd.append(LstmLayer(width, hidden, rng))
            width = 2 * hidden
        self.fwd = ModuleList(fwd)
        self.bwd = ModuleList(bwd)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        rev = (slice(None), slice(None, None, -1))
        for fwd, bwd in zip(self.fwd, self.bwd):
            left = fwd(x, mask)
            mask_rev = None if mask is None else mask[:, ::-1]
            right = bwd(x[rev], mask_rev)[rev]
            x = ad.concat([left, right], axis=-1)
        return x


def _lift(x) -> tuple[Tensor, bool]:
    """Promote a single sequence to a one-element batch."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 2:
        return ad.reshape(t, (1,) + t.shape), True
    return t, False


def _drop(x: Tensor, lifted: bool) -> Tensor:
    return x[0] if lifted else x


class VisualModule(Module):
    """Per-frame MLP standing in for a pretrained frame-feature CNN.

    Strictly frame-local: no temporal mixing, so permuting input frames
    permutes output rows identically.
    """

    def __init__(self, d_in: int, d: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, frames) -> Tensor:
        x, lifted = _lift(frames)
        if x.shape[1] == 0:
            raise EmptySequenceError("visual encoder needs at least one frame")
        out = self.fc2(ad.relu(self.fc1(x)))
        return _drop(out, lifted)


class GlossEmbedding(Module):
    """Gloss id -> vector table; also the adapter's output-space anchor."""

    def __init__(self, vocab_size: int, d: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(d)
        self.table = Tensor(rng.uniform(-bound, bound, size=(vocab_size, d)),
                            requires_grad=True)
        self.vocab_size = vocab_size

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise UnknownGlossError(
                f"gloss ids must lie in 0..{self.vocab_size - 1}")
        return ad.take_rows(self.table, ids)


class PosteriorEncoder(Module):
    """Self-attention trunk with mean / log-variance heads.

    The heads emit log sigma^2, so sigma = exp(half of it) is positive by
    construction for any head output.
    """

    def __init__(self, d: int, d_z: int, heads: int, layers: int,
                 rng: np.random.Generator):
        super().__init__()
        self.layers = ModuleList(
            [MultiHeadSelfAttention(d, heads, rng) for _ in range(layers)])
        self.mu_head = Linear(d, d_z, rng)
        self.logvar_head = Linear(d, d_z, rng)
        self.d = d

    def __call__(self, h, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        x, lifted = _lift(h)
        if x.shape[1] == 0:
            raise EmptySequenceError("posterior encoder needs at least one step")
        x = x + Tensor(sinusoid_positions(x.shape[1], x.shape[2]))
        for layer in self.layers:
            x = layer(x, mask)
        mu = self.mu_head(x)
        sigma = ad.exp(self.logvar_head(x) * 0.5)
        return _drop(mu, lifted), _drop(sigma, lifted)


def reparameterize(mu: Tensor, sigma: Tensor, mode: str = "sample",
                   rng: np.random.Generator | None = None) -> Tensor:
    """Draw z from N(mu, diag(sigma^2)) or collapse to the mean.

    ``sample`` composes mu + sigma * eps with standard Gaussian eps so the
    draw stays differentiable; ``deterministic`` removes the noise term
    entirely and returns mu itself.
    """
    if mode == "deterministic":
        return mu
    if mode != "sample":
        raise InvalidConfigError(f"unknown reparameterization mode {mode!r}")
    if mu.shape != sigma.shape:
        raise ShapeMismatchError(f"mu {mu.shape} vs sigma {sigma.shape}")
    if rng is None:
        raise InvalidConfigError("sample mode needs an rng")
    eps = Tensor(rng.standard_normal(mu.shape))
    return mu + sigma * eps


class GenerativeDecoder(Module):
    """Bi-LSTM stack mapping latent sequences back to feature space.

    Non-autoregressive: one output per latent position, each depending on
    the whole sequence through both directions.
    """

    def __init__(self, d_z: int, hidden: int, d: int, layers: int,
                 rng: np.random.Generator):
        super().__init__()
        self.lstm = BiLstm(d_z, hidden, layers, rng)
        self.proj = Linear(2 * hidden, d, rng)

    def __call__(self, z, mask: np.ndarray | None = None) -> Tensor:
        x, lifted = _lift(z)
        if x.shape[1] == 0:
            raise EmptySequenceError("decoder needs at least one latent step")
        out = self.proj(self.lstm(x, mask))
        return _drop(out, lifted)


class SharedClassifier(Module):
    """Single linear map to gloss-plus-blank logits, shared by both branches."""

    def __init__(self, d: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.linear = Linear(d, num_classes, rng)
        self.num_classes = num_classes

    def __call__(self, feats) -> Tensor:
        x, lifted = _lift(feats)
        return _drop(self.linear(x), lifted)


class VideoGlossAdapter(Module):
    """MLP from classifier probability rows into gloss-embedding space.

    Two hidden layers; the final layer has weight shape (vocab, d) and is
    overwritten with the pretrained embedding table when one is available,
    so a one-hot gloss probability maps straight onto that gloss's vector.
    """

    def __init__(self, num_classes: int, hidden: int, vocab_size: int, d: int,
                 rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(num_classes, hidden, rng)
        self.fc2 = Linear(hidden, vocab_size, rng)
        self.out = Linear(vocab_size, d, rng)
        self.num_classes = num_classes

    def init_from_embedding(self, table: np.ndarray) -> None:
        if table.shape != self.out.weight.values.shape:
            raise CheckpointIncompatibleError(
                f"embedding table {table.shape} vs adapter output "
                f"{self.out.weight.values.shape}")
        self.out.weight.values = np.array(table, dtype=np.float64)
        self.out.bias.values = np.zeros_like(self.out.bias.values)

    def __call__(self, probs) -> Tensor:
        x, lifted = _lift(probs)
        sums = x.values.sum(axis=-1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise NotNormalizedError(
                "adapter input rows must be probability vectors")
        out = self.out(ad.relu(self.fc2(ad.relu(self.fc1(x)))))
        return _drop(out, lifted)


# ---------------------------------------------------------------------------
# assembled models


class VaeModel(Module):
    """Gloss-to-gloss VAE: embed, encode, sample, decode, classify."""

    def __init__(self, vocab_size: int, d: int, d_z: int, heads: int,
                 lstm_hidden: int, rng: np.random.Generator,
                 attn_layers: int = 2, lstm_layers: int = 2):
        super().__init__()
        self.embedding = GlossEmbedding(vocab_size, d, rng)
        self.encoder = PosteriorEncoder(d, d_z, heads, attn_layers, rng)
        self.decoder = GenerativeDecoder(d_z, lstm_hidden, d, lstm_layers, rng)
        self.classifier = SharedClassifier(d, vocab_size + 1, rng)
        self.vocab_size = vocab_size

    def forward(self, ids: np.ndarray, mask: np.ndarray | None,
                mode: str = "sample", rng: np.random.Generator | None = None):
        """Returns (gloss logits without the blank column, mu, sigma)."""
        safe_ids = np.where(np.asarray(ids) < 0, 0, ids)  # padded slots, masked downstream
        h = self.embedding(safe_ids)
        mu, sigma = self.encoder(h, mask)
        z = reparameterize(mu, sigma, mode, rng)
        feats = self.decoder(z, mask)
        logits = self.classifier(feats)
        return logits[..., :self.vocab_size], mu, sigma


class SlrModel(Module):
    """Recognition stack: frames -> visual features -> shared classifier ->
    adapter -> posterior encoder (noise removed) -> decoder -> shared
    classifier -> frame logits."""

    def __init__(self, vocab_size: int, d_in: int, d: int, d_z: int, heads: int,
                 lstm_hidden: int, visual_hidden: int, adapter_hidden: int,
                 rng: np.random.Generator,
                 attn_layers: int = 2, lstm_layers: int = 2):
        super().__init__()
        self.visual = VisualModule(d_in, d, visual_hidden, rng)
        self.classifier = SharedClassifier(d, vocab_size + 1, rng)
        self.adapter = VideoGlossAdapter(vocab_size + 1, adapter_hidden,
                                         vocab_size, d, rng)
        self.encoder = PosteriorEncoder(d, d_z, heads, attn_layers, rng)
        self.decoder = GenerativeDecoder(d_z, lstm_hidden, d, lstm_layers, rng)
        self.vocab_size = vocab_size

    def forward(self, frames, mask: np.ndarray | None = None) -> dict[str, Tensor]:
        v_feats = self.visual(frames)
        visual_logits = self.classifier(v_feats)
        visual_probs = ad.softmax_last(visual_logits)
        adapted = self.adapter(visual_probs)
        mu, sigma = self.encoder(adapted, mask)
        z = reparameterize(mu, sigma, "deterministic")
        s_feats = self.decoder(z, mask)
        logits = self.classifier(s_feats)
        return {
            "visual_features": v_feats,
            "visual_logits": visual_logits,
            "visual_probs": visual_probs,
            "mu": mu,
            "sigma": sigma,
            "textual_features": s_feats,
            "logits": logits,
        }


def transfer_pretrained(slr: SlrModel, vae_state: dict[str, np.ndarray]) -> None:
    """Copy pretrained encoder/decoder/classifier weights into the
    recognition model and seed the adapter's final layer from the gloss
    embedding table."""
    wanted = {}
    slr_params = slr.named_parameters()
    for name in slr_params:
        if name.startswith(("encoder.", "decoder.", "classifier.")):
            if name not in vae_state:
                raise CheckpointIncompatibleError(f"pretrained state lacks {name!r}")
            wanted[name] = vae_state[name]
    for name, arr in wanted.items():
        p = slr_params[name]
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != p.values.shape:
            raise CheckpointIncompatibleError(
                f"shape mismatch for {name!r}: pretrained {arr.shape}, model {p.values.shape}")
        p.values = arr.copy()
    if "embedding.table" not in vae_state:
        raise CheckpointIncompatibleError("pretrained state lacks 'embedding.table'")
    slr.adapter.init_from_embedding(np.asarray(vae_state["embedding.table"]))
