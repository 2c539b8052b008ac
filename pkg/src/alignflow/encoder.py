"""Transformer text encoder with speaker conditioning at the third block.

Produces the token-aligned hidden representation consumed by the duration
model plus the per-token prior statistics (mu, sigma) the alignment search
scores frames against. In multi-speaker mode a learned speaker embedding is
projected and added to the hidden states at the input of block 3 — blocks 1
and 2 are provably speaker-independent, which the tests pin down bit-exactly.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from .numerics import Rng, Tensor

MASK_BIAS = -1e30  # additive attention bias; exp underflows to exactly 0


class SpeakerTable:
    """Learnable speaker embeddings, one row per speaker id."""

    def __init__(self, n_speakers: int, dim: int, rng: Rng):
        self.n_speakers = n_speakers
        self.dim = dim
        self.table = nm.init_uniform(rng, (n_speakers, dim), dim)

    def lookup(self, speaker_id: int) -> Tensor:
        if not (0 <= speaker_id < self.n_speakers):
            raise IndexError(
                f"speaker id {speaker_id} outside [0, {self.n_speakers})"
            )
        return nm.take_rows(self.table, [speaker_id])[0]

    def named_params(self):
        return [("speakers.table", self.table)]

    def params(self):
        return [self.table]


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Classic fixed position encoding, (length, dim)."""
    pe = np.zeros((length, dim))
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-math.log(10000.0) / dim))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: dim // 2])
    return pe


class EncoderBlock:
    """Post-norm transformer block: self-attention and a position-wise FFN,
    each wrapped in residual + layer norm."""

    def __init__(self, width: int, n_heads: int, ff_width: int, rng: Rng):
        if width % n_heads != 0:
            raise ValueError(f"width {width} not divisible by {n_heads} heads")
        self.width = width
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        self.heads = []
        for h in range(n_heads):
            r = rng.child(h)
            self.heads.append(
                (
                    nm.init_uniform(r, (width, self.head_dim), width),
                    nm.init_uniform(r, (width, self.head_dim), width),
                    nm.init_uniform(r, (width, self.head_dim), width),
                )
            )
        r = rng.child(n_heads)
        self.wo = nm.init_uniform(r, (width, width), width)
        self.w1 = nm.init_uniform(r, (width, ff_width), width)
        self.b1 = nm.zeros((ff_width,), requires_grad=True)
        self.w2 = nm.init_uniform(r, (ff_width, width), ff_width)
        self.b2 = nm.zeros((width,), requires_grad=True)

    def named_params(self):
        out = []
        for h, (wq, wk, wv) in enumerate(self.heads):
            out += [(f"head{h}.wq", wq), (f"head{h}.wk", wk), (f"head{h}.wv", wv)]
        out += [("wo", self.wo), ("ffn.w1", self.w1), ("ffn.b1", self.b1),
                ("ffn.w2", self.w2), ("ffn.b2", self.b2)]
        return out

    def forward(self, x: Tensor, attn_bias: np.ndarray | None = None) -> Tensor:
        parts = []
        scale = 1.0 / math.sqrt(self.head_dim)
        for wq, wk, wv in self.heads:
            q = x @ wq
            k = x @ wk
            v = x @ wv
            scores = (q @ k.T) * scale
            if attn_bias is not None:
                scores = scores + attn_bias
            parts.append(nm.softmax(scores, axis=1) @ v)
        x = nm.layer_norm(x + nm.concat(parts, axis=1) @ self.wo, axis=1)
        ff = nm.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        return nm.layer_norm(x + ff, axis=1)


class TextEncoder:
    """Token ids -> (h_text, mu, sigma), all length-aligned with the input.

    n_blocks >= 3 so the speaker injection point exists. sigma comes from an
    exp of a clamped log-scale head, so it is always strictly positive.
    """

    SPEAKER_BLOCK = 2  # speaker vector enters at the input of this block

    def __init__(
        self,
        vocab: int,
        width: int = 32,
        out_channels: int = 2,
        n_blocks: int = 4,
        n_heads: int = 2,
        ff_width: int = 64,
        speaker_dim: int | None = None,
        rng: Rng | None = None,
    ):
        if n_blocks < 3:
            raise ValueError(f"need at least 3 blocks for speaker injection, got {n_blocks}")
        rng = rng if rng is not None else Rng(0)
        self.vocab = vocab
        self.width = width
        self.out_channels = out_channels
        self.n_blocks = n_blocks
        self.speaker_dim = speaker_dim
        self.embedding = nm.init_uniform(rng.child(1000), (vocab, width), width)
        self.blocks = [
            EncoderBlock(width, n_heads, ff_width, rng.child(b)) for b in range(n_blocks)
        ]
        r = rng.child(2000)
        self.w_speaker = (
            nm.init_uniform(r, (speaker_dim, width), speaker_dim)
            if speaker_dim is not None
            else None
        )
        self.w_mu = nm.init_uniform(r, (width, out_channels), width)
        self.b_mu = nm.zeros((out_channels,), requires_grad=True)
        self.w_logsigma = nm.init_uniform(r, (width, out_channels), width)
        self.b_logsigma = nm.zeros((out_channels,), requires_grad=True)

    def named_params(self):
        out = [("embedding", self.embedding)]
        for b, block in enumerate(self.blocks):
            out.extend((f"block{b}.{n}", t) for n, t in block.named_params())
        if self.w_speaker is not None:
            out.append(("speaker_proj", self.w_speaker))
        out += [("mu.w", self.w_mu), ("mu.b", self.b_mu),
                ("logsigma.w", self.w_logsigma), ("logsigma.b", self.b_logsigma)]
        return out

    def params(self):
        return [t for _, t in self.named_params()]

    def _attn_bias(self, n: int, mask: np.ndarray | None) -> np.ndarray | None:
        if mask is None:
            return None
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise nm.ShapeError(f"mask shape {mask.shape} does not match {n} tokens")
        bias = np.zeros((n, n))
        bias[:, ~mask] = MASK_BIAS
        return bias

    def hidden_states(
        self,
        tokens,
        speaker: Tensor | None = None,
        mask: np.ndarray | None = None,
    ) -> list[Tensor]:
        """Hidden state after each block (used by tests to pin locality)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise ValueError("tokens must be a non-empty 1-D id sequence")
        if (tokens < 0).any() or (tokens >= self.vocab).any():
            raise IndexError(f"token ids outside [0, {self.vocab})")
        if speaker is not None and self.w_speaker is None:
            raise ValueError("encoder was built without speaker conditioning")
        bias = self._attn_bias(tokens.size, mask)
        x = nm.take_rows(self.embedding, tokens)
        x = x + sinusoidal_encoding(tokens.size, self.width)
        states = []
        for b, block in enumerate(self.blocks):
            if b == self.SPEAKER_BLOCK and speaker is not None:
                x = x + nm.reshape(speaker, (1, -1)) @ self.w_speaker
            x = block.forward(x, bias)
            states.append(x)
        return states

    def encode(
        self,
        tokens,
        speaker: Tensor | None = None,
        mask: np.ndarray | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (h_text, mu, sigma), each length-I along the token axis."""
        h = self.hidden_states(tokens, speaker, mask)[-1]
        mu = h @ self.w_mu + self.b_mu
        log_sigma = nm.clamp(h @ self.w_logsigma + self.b_logsigma, -6.0, 6.0)
        return h, mu, nm.exp(log_sigma)
