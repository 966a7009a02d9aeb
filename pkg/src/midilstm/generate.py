"""Seeded generation, the two baselines, and rendering tokens back to MIDI."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import midi_io
from .encoding import (
    UnknownToken,
    Vocabulary,
    decode_chord_token,
    message_detokenize,
)
from .midi_io import OFF, ON, NoteEvent
from .model import ModelConfig, Parameters, forward, init_params, softmax, zero_state

GREEDY = "greedy"
SAMPLED = "sampled"
MIXED = "mixed"


class UnknownSeedToken(UnknownToken):
    pass


@dataclass(frozen=True)
class SamplingPolicy:
    mode: str = MIXED
    greedy_prob: float = 0.5  # only used by MIXED
    temperature: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in (GREEDY, SAMPLED, MIXED):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if not 0.0 <= self.greedy_prob <= 1.0:
            raise ValueError("greedy_prob must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def sample_next(logits: np.ndarray, policy: SamplingPolicy, rng: np.random.Generator) -> int:
    """Pick one token id from a single logits row."""
    greedy = policy.mode == GREEDY or (policy.mode == MIXED and rng.random() < policy.greedy_prob)
    if greedy:
        # np.argmax returns the first maximum, i.e. the lowest id on ties
        return int(np.argmax(logits))
    probs = softmax(np.asarray(logits, dtype=np.float64) / policy.temperature)
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def generate(
    params: Parameters,
    vocab: Vocabulary,
    seed_tokens: Sequence[str],
    length: int,
    policy: SamplingPolicy = SamplingPolicy(),
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Prime the model on ``seed_tokens`` then extend by ``length`` tokens."""
    if not seed_tokens:
        raise ValueError("seed must contain at least one token")
    if length < 0:
        raise ValueError("length must be non-negative")
    missing = [t for t in seed_tokens if t not in vocab]
    if missing:
        raise UnknownSeedToken(f"seed token not in vocabulary: {missing[0]!r}")
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)

    out = list(seed_tokens)
    ids = vocab.encode(seed_tokens)
    state = zero_state(params, 1)
    logits, state, _ = forward(params, state, ids[None, :])
    last = logits[0, -1]
    for _ in range(length):
        nxt = sample_next(last, policy, rng)
        out.append(vocab.tokens[nxt])
        logits, state, _ = forward(params, state, np.array([[nxt]]))
        last = logits[0, -1]
    return out


def baseline_untrained(
    config: ModelConfig,
    vocab: Vocabulary,
    seed_tokens: Sequence[str],
    length: int,
    policy: SamplingPolicy = SamplingPolicy(mode=SAMPLED),
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Generate from freshly initialised weights."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    params = init_params(config, rng)
    return generate(params, vocab, seed_tokens, length, policy, rng)


def baseline_weighted_chords(vocab: Vocabulary, length: int, rng: np.random.Generator) -> list[str]:
    """I.i.d. draws with probability proportional to corpus frequency."""
    counts = np.asarray(vocab.counts, dtype=np.float64)
    idx = rng.choice(len(counts), size=length, p=counts / counts.sum())
    return [vocab.tokens[i] for i in idx]


# -- rendering -----------------------------------------------------------------

def close_dangling(events: list[NoteEvent]) -> list[NoteEvent]:
    """Append zero-delta note-offs for notes still sounding at the end."""
    sounding: dict[int, int] = {}
    for ev in events:
        if ev.kind == ON:
            sounding[ev.pitch] = sounding.get(ev.pitch, 0) + 1
        elif sounding.get(ev.pitch):
            sounding[ev.pitch] -= 1
    tail = [NoteEvent(OFF, p, 0) for p in sorted(sounding) for _ in range(sounding[p])]
    return events + tail


def render_message_tokens(tokens: Sequence[str], ticks_per_beat: int = midi_io.DEFAULT_TPB) -> bytes:
    return midi_io.write_midi(close_dangling(message_detokenize(tokens)), ticks_per_beat)


def chord_events(tokens: Sequence[str], ticks_per_eighth: int = 240) -> tuple[list[NoteEvent], int]:
    """Note events for a chord-token sequence plus the trailing silence in ticks."""
    if ticks_per_eighth <= 0:
        raise ValueError("ticks_per_eighth must be positive")
    events = []
    pending = 0
    for tok in tokens:
        pitches = sorted(decode_chord_token(tok))
        if not pitches:
            pending += ticks_per_eighth
            continue
        for k, p in enumerate(pitches):
            events.append(NoteEvent(ON, p, pending if k == 0 else 0))
        for k, p in enumerate(pitches):
            events.append(NoteEvent(OFF, p, ticks_per_eighth if k == 0 else 0))
        pending = 0
    return events, pending


def render_chord_tokens(tokens: Sequence[str], ticks_per_eighth: int = 240) -> bytes:
    """One eighth-note slot per token; repeated pitches are re-struck each slot."""
    events, tail = chord_events(tokens, ticks_per_eighth)
    return midi_io.write_midi(events, 2 * ticks_per_eighth, end_delta=tail)

