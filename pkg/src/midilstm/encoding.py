"""Token representations: MIDI message tokens and piano-roll chord tokens.

Message tokens look like ``note-on-60-0``; chord tokens are ascending pitch
lists like ``60-64-67``, with ``rest`` for an empty time step.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .midi_io import ON, MidiFile, NoteEvent, iter_track_notes, track_length

REST = "rest"
MAX_POLYPHONY = 4
CAPPED_POLYPHONY = 3

_MESSAGE_RE = re.compile(r"note-(on|off)-(0|[1-9][0-9]*)-(0|[1-9][0-9]*)")
_PITCH_RE = re.compile(r"0|[1-9][0-9]*")


class EncodingError(ValueError):
    pass


class MalformedToken(EncodingError):
    pass


class UnknownToken(EncodingError):
    pass


class UnknownId(EncodingError):
    pass


class EmptyCorpus(EncodingError):
    pass


# -- message tokens ------------------------------------------------------------

def message_token(ev: NoteEvent) -> str:
    return f"note-{ev.kind}-{ev.pitch}-{ev.delta}"


def message_tokenize(events: Iterable[NoteEvent]) -> list[str]:
    return [message_token(ev) for ev in events]


def parse_message_token(token: str) -> tuple[str, int, int]:
    """Return ``(kind, pitch, delta)``; raises :class:`MalformedToken`."""
    m = _MESSAGE_RE.fullmatch(token)
    if m is None:
        raise MalformedToken(f"not a message token: {token!r}")
    pitch = int(m.group(2))
    if pitch > 127:
        raise MalformedToken(f"pitch out of range in {token!r}")
    return m.group(1), pitch, int(m.group(3))


def message_detokenize(tokens: Iterable[str]) -> list[NoteEvent]:
    events = []
    for tok in tokens:
        kind, pitch, delta = parse_message_token(tok)
        events.append(NoteEvent(kind, pitch, delta, 0))
    return events


def is_message_token(token: str) -> bool:
    try:
        parse_message_token(token)
    except MalformedToken:
        return False
    return True


# -- piano roll ------------------------------------------------------------------

def note_intervals(midi: MidiFile) -> list[tuple[int, int, int]]:
    """``(start_tick, end_tick, pitch)`` for every sounding note in the file.

    Note-offs with no open note are dropped; notes still open when their
    track ends are closed at the track's last tick. Repeated note-ons of one
    pitch are matched first-in first-out.
    """
    out = []
    for track in midi.tracks:
        open_notes: dict[int, list[int]] = {}
        for tick, kind, pitch in iter_track_notes(track):
            if kind == ON:
                open_notes.setdefault(pitch, []).append(tick)
            elif open_notes.get(pitch):
                out.append((open_notes[pitch].pop(0), tick, pitch))
        end = track_length(track)
        for pitch, starts in open_notes.items():
            out.extend((s, max(s, end), pitch) for s in starts)
    return out


def sample_pianoroll(midi: MidiFile) -> list[frozenset[int]]:
    """Sample the file on an eighth-note grid.

    Pitch p is active at step k when one of its notes overlaps the half-open
    interval ``[k*step, (k+1)*step)`` with positive length; touching the
    boundary is not enough. Trailing silent steps are trimmed.
    """
    intervals = note_intervals(midi)
    if not intervals:
        return []
    # work in doubled ticks so an odd ticks_per_beat gives an exact grid
    step = midi.ticks_per_beat
    nsteps = max(-(-2 * end // step) for _, end, _ in intervals)
    steps: list[set[int]] = [set() for _ in range(nsteps)]
    for start, end, pitch in intervals:
        s2, e2 = 2 * start, 2 * end
        k_lo = s2 // step
        for k in range(k_lo, nsteps):
            if k * step >= e2:
                break
            if s2 < (k + 1) * step and e2 > k * step:
                steps[k].add(pitch)
    while steps and not steps[-1]:
        steps.pop()
    return [frozenset(s) for s in steps]


def encode_timestep(pitches: Iterable[int], rng: np.random.Generator | None = None) -> str:
    pitches = sorted(set(pitches))
    for p in pitches:
        if not 0 <= p <= 127:
            raise MalformedToken(f"pitch {p} outside 0..127")
    if not pitches:
        return REST
    if len(pitches) > MAX_POLYPHONY:
        if rng is None:
            raise ValueError("an rng is required to cap polyphony")
        idx = rng.choice(len(pitches), size=CAPPED_POLYPHONY, replace=False)
        pitches = sorted(pitches[i] for i in idx)
    return "-".join(str(p) for p in pitches)


def decode_chord_token(token: str) -> frozenset[int]:
    if token == REST:
        return frozenset()
    parts = token.split("-")
    if not 1 <= len(parts) <= MAX_POLYPHONY or not all(_PITCH_RE.fullmatch(p) for p in parts):
        raise MalformedToken(f"not a chord token: {token!r}")
    pitches = [int(p) for p in parts]
    if any(p > 127 for p in pitches):
        raise MalformedToken(f"pitch out of range in {token!r}")
    if any(a >= b for a, b in zip(pitches, pitches[1:])):
        raise MalformedToken(f"chord pitches must be strictly increasing: {token!r}")
    return frozenset(pitches)


def is_chord_token(token: str) -> bool:
    try:
        decode_chord_token(token)
    except MalformedToken:
        return False
    return True


def pianoroll_tokenize(midi: MidiFile, rng: np.random.Generator) -> list[str]:
    return [encode_timestep(step, rng) for step in sample_pianoroll(midi)]


# -- vocabulary ----------------------------------------------------------------

@dataclass
class Vocabulary:
    """Dense token ids, most frequent token first."""

    tokens: list[str]
    counts: list[int]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.counts):
            raise ValueError("tokens and counts differ in length")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def id_to_token(self) -> list[str]:
        return self.tokens

    def count(self, token: str) -> int:
        return self.counts[self.token_to_id[token]]

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return encode_ids(self, tokens)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return decode_ids(self, ids)

    def to_text(self) -> str:
        return "".join(f"{t}\t{c}\n" for t, c in zip(self.tokens, self.counts))

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        tokens, counts = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            try:
                tok, cnt = line.split("\t")
                counts.append(int(cnt))
            except ValueError:
                raise EncodingError(f"bad vocabulary line {lineno}: {line!r}") from None
            tokens.append(tok)
        return cls(tokens, counts)


def build_vocab(corpus: Iterable[Iterable[str]]) -> Vocabulary:
    tally: Counter[str] = Counter()
    for seq in corpus:
        tally.update(seq)
    if not tally:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    ordered = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ordered], [c for _, c in ordered])


def encode_ids(vocab: Vocabulary, tokens: Iterable[str]) -> np.ndarray:
    ids = []
    for t in tokens:
        try:
            ids.append(vocab.token_to_id[t])
        except KeyError:
            raise UnknownToken(f"token not in vocabulary: {t!r}") from None
    return np.asarray(ids, dtype=np.int64)


def decode_ids(vocab: Vocabulary, ids: Iterable[int]) -> list[str]:
    out = []
    n = len(vocab.tokens)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise UnknownId(f"id {i} outside vocabulary of size {n}")
        out.append(vocab.tokens[i])
    return out


def vocab_kind(vocab: Vocabulary) -> str | None:
    """'messages', 'pianoroll', or None when the tokens fit neither grammar."""
    if all(is_message_token(t) for t in vocab.tokens):
        return "messages"
    if all(is_chord_token(t) for t in vocab.tokens):
        return "pianoroll"
    return None


# -- corpus files ------------------------------------------------------------------

def corpus_to_text(pieces: Sequence[Sequence[str]]) -> str:
    return "".join(" ".join(p) + "\n" for p in pieces)


def corpus_from_text(text: str) -> list[list[str]]:
    return [line.split() for line in text.splitlines()]


def read_corpus(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return corpus_from_text(fh.read())


def read_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        return Vocabulary.from_text(fh.read())
