"""Synthetic corpora with known ground-truth alignments.

Each vocabulary token owns a prototype frame vector and an integer duration
law; an instance is a token sequence, per-token durations drawn from the
laws, and a frame matrix built by repeating prototypes (plus optional
Gaussian observation noise). Because the true alignment is known by
construction, alignment search and the end-to-end trainer can be scored
objectively instead of by listening tests.

Prototypes sit on a circle (or a line for 1-channel corpora), so tokens are
separated by construction; in multi-speaker mode each speaker adds a fixed
offset to every prototype. Adjacent repeated tokens are resampled away:
identical neighbouring prototypes make the optimal alignment non-unique,
which would put a floor on exact-match scores through no fault of a model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng


@dataclass
class CorpusSpec:
    vocab: int = 3
    channels: int = 2
    n_train: int = 16
    n_eval: int = 8
    seq_min: int = 3
    seq_max: int = 6
    dur_min: int = 2
    dur_max: int = 5
    noise: float = 0.0
    prototype_radius: float = 0.8
    speakers: int = 1
    speaker_shift: float = 0.0
    duration_laws: list[tuple[int, int]] | None = None  # per-token (lo, hi) override

    def law(self, token: int) -> tuple[int, int]:
        if self.duration_laws is not None:
            return self.duration_laws[token]
        return (self.dur_min, self.dur_max)

    def validate(self):
        if self.vocab < 2:
            raise ValueError(f"vocab must be >= 2, got {self.vocab}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.seq_min < 1 or self.seq_max < self.seq_min:
            raise ValueError(f"bad sequence length range ({self.seq_min}, {self.seq_max})")
        if self.n_train < 1 or self.n_eval < 0:
            raise ValueError("need at least one training instance")
        if self.speakers < 1:
            raise ValueError(f"speakers must be >= 1, got {self.speakers}")
        if self.noise < 0:
            raise ValueError("observation noise must be >= 0")
        for v in range(self.vocab):
            lo, hi = self.law(v)
            if lo < 1 or hi < lo:
                raise ValueError(f"token {v} has a bad duration law ({lo}, {hi})")


@dataclass
class Instance:
    tokens: np.ndarray  # (I,) int ids
    durations: np.ndarray  # (I,) ground-truth frames per token
    frames: np.ndarray  # (J, C), J = sum(durations)
    speaker: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if int(self.durations.sum()) != self.frames.shape[0]:
            raise ValueError(
                f"durations sum to {self.durations.sum()} but there are "
                f"{self.frames.shape[0]} frames"
            )


@dataclass
class ToyCorpus:
    spec: CorpusSpec
    prototypes: np.ndarray  # (V, C)
    speaker_offsets: np.ndarray  # (S, C)
    train: list[Instance] = field(default_factory=list)
    eval: list[Instance] = field(default_factory=list)


def token_prototypes(vocab: int, channels: int, radius: float) -> np.ndarray:
    """Evenly spread prototype vectors: a circle in the first two channels,
    or evenly spaced points on a line for single-channel corpora."""
    protos = np.zeros((vocab, channels))
    if channels == 1:
        protos[:, 0] = np.linspace(-radius, radius, vocab)
        return protos
    angles = 2.0 * math.pi * np.arange(vocab) / vocab
    protos[:, 0] = radius * np.cos(angles)
    protos[:, 1] = radius * np.sin(angles)
    return protos


def _speaker_offsets(speakers: int, channels: int, shift: float) -> np.ndarray:
    offsets = np.zeros((speakers, channels))
    if speakers == 1 or shift == 0.0:
        return offsets
    if channels == 1:
        offsets[:, 0] = np.linspace(0.0, shift, speakers)
        return offsets
    angles = 2.0 * math.pi * (np.arange(speakers) + 0.5) / speakers
    offsets[:, 0] = shift * np.cos(angles)
    offsets[:, 1] = shift * np.sin(angles)
    offsets[0] = 0.0
    return offsets


def _sample_instance(spec: CorpusSpec, protos: np.ndarray, offsets: np.ndarray,
                     rng: Rng) -> Instance:
    length = rng.integers(spec.seq_min, spec.seq_max + 1)
    tokens = np.empty(length, dtype=np.int64)
    for i in range(length):
        t = rng.integers(0, spec.vocab)
        while i > 0 and t == tokens[i - 1]:  # adjacent repeats make ties
            t = rng.integers(0, spec.vocab)
        tokens[i] = t
    durations = np.array(
        [rng.integers(*[spec.law(t)[0], spec.law(t)[1] + 1]) for t in tokens],
        dtype=np.int64,
    )
    speaker = rng.integers(0, spec.speakers) if spec.speakers > 1 else 0
    frames = np.repeat(protos[tokens], durations, axis=0) + offsets[speaker]
    if spec.noise > 0:
        frames = frames + spec.noise * rng.normal(frames.shape)
    return Instance(tokens=tokens, durations=durations, frames=frames, speaker=speaker)


def generate_corpus(spec: CorpusSpec, rng: Rng) -> ToyCorpus:
    """Deterministic given (spec, rng seed): same seed, same corpus, bit for bit."""
    spec.validate()
    protos = token_prototypes(spec.vocab, spec.channels, spec.prototype_radius)
    offsets = _speaker_offsets(spec.speakers, spec.channels, spec.speaker_shift)
    train = [_sample_instance(spec, protos, offsets, rng) for _ in range(spec.n_train)]
    held = [_sample_instance(spec, protos, offsets, rng) for _ in range(spec.n_eval)]
    return ToyCorpus(spec=spec, prototypes=protos, speaker_offsets=offsets,
                     train=train, eval=held)


# --- on-disk form: plain JSON, so files are diffable and byte-stable --------


def _spec_to_dict(spec: CorpusSpec) -> dict:
    d = {
        "vocab": spec.vocab,
        "channels": spec.channels,
        "n_train": spec.n_train,
        "n_eval": spec.n_eval,
        "seq_min": spec.seq_min,
        "seq_max": spec.seq_max,
        "dur_min": spec.dur_min,
        "dur_max": spec.dur_max,
        "noise": spec.noise,
        "prototype_radius": spec.prototype_radius,
        "speakers": spec.speakers,
        "speaker_shift": spec.speaker_shift,
    }
    if spec.duration_laws is not None:
        d["duration_laws"] = [list(law) for law in spec.duration_laws]
    return d


def _instance_to_dict(inst: Instance) -> dict:
    return {
        "tokens": inst.tokens.tolist(),
        "durations": inst.durations.tolist(),
        "frames": inst.frames.tolist(),
        "speaker": inst.speaker,
    }


def save_corpus(corpus: ToyCorpus, path):
    payload = {
        "spec": _spec_to_dict(corpus.spec),
        "prototypes": corpus.prototypes.tolist(),
        "speaker_offsets": corpus.speaker_offsets.tolist(),
        "train": [_instance_to_dict(i) for i in corpus.train],
        "eval": [_instance_to_dict(i) for i in corpus.eval],
    }
    with open(path, "w") as f:
        json.dump(payload, f, separators=(",", ":"), sort_keys=True)


def load_corpus(path) -> ToyCorpus:
    with open(path) as f:
        payload = json.load(f)
    sd = dict(payload["spec"])
    if "duration_laws" in sd:
        sd["duration_laws"] = [tuple(law) for law in sd["duration_laws"]]
    spec = CorpusSpec(**sd)
    return ToyCorpus(
        spec=spec,
        prototypes=np.asarray(payload["prototypes"], dtype=np.float64),
        speaker_offsets=np.asarray(payload["speaker_offsets"], dtype=np.float64),
        train=[Instance(**d) for d in payload["train"]],
        eval=[Instance(**d) for d in payload["eval"]],
    )
