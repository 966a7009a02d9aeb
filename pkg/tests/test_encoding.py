import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from midilstm.encoding import (
    REST,
    EmptyCorpus,
    MalformedToken,
    UnknownId,
    UnknownToken,
    Vocabulary,
    build_vocab,
    corpus_from_text,
    corpus_to_text,
    decode_chord_token,
    decode_ids,
    encode_ids,
    encode_timestep,
    message_detokenize,
    message_tokenize,
    pianoroll_tokenize,
    sample_pianoroll,
    vocab_kind,
)
from midilstm.midi_io import OFF, ON, MidiEvent, MidiFile, NoteEvent, normalize_ticks, read_midi_file

pitch_sets = st.frozensets(st.integers(0, 127), max_size=10)


# -- message tokens -------------------------------------------------------------------

def test_message_tokens_middle_c():
    evs = [NoteEvent(ON, 60, 0), NoteEvent(OFF, 60, 480)]
    assert message_tokenize(evs) == ["note-on-60-0", "note-off-60-480"]
    assert message_detokenize(["note-on-60-0", "note-off-60-480"]) == evs


def test_message_tokenize_empty():
    assert message_tokenize([]) == []


@pytest.mark.parametrize("tok", [
    "note-on-200-0", "note-on-128-0", "note-up-60-0", "note-on-60", "note-on-060-0",
    "note-on-60-00", "note-on--1-0", "note-on-60-0 ", "60-64-67", "",
])
def test_message_detokenize_rejects(tok):
    with pytest.raises(MalformedToken):
        message_detokenize([tok])


@given(st.lists(st.builds(NoteEvent, kind=st.sampled_from([ON, OFF]), pitch=st.integers(0, 127),
                          delta=st.integers(0, 10**6), track_index=st.just(0)), max_size=50))
def test_message_roundtrip(evs):
    assert message_detokenize(message_tokenize(evs)) == evs


# -- piano roll sampling ----------------------------------------------------------------

def notes_file(notes, tpb=480):
    """notes: (start, end, pitch); one track per note keeps it simple."""
    tracks = []
    for start, end, pitch in notes:
        tracks.append([MidiEvent(start, 0x90, bytes([pitch, 64])),
                       MidiEvent(end - start, 0x80, bytes([pitch, 64]))])
    return MidiFile(1, tpb, tracks)


def test_pianoroll_empty():
    assert sample_pianoroll(MidiFile(0, 480, [[]])) == []


def test_pianoroll_quarter_note_is_two_steps():
    assert sample_pianoroll(notes_file([(0, 480, 60)])) == [{60}, {60}]


def test_pianoroll_triad_grid():
    # bar 1: C E G entering one eighth apart and held to the end of the bar;
    # bar 2: quarter rest, then C major triad for two beats;
    # grid worked out by hand on 240-tick eighths
    notes = [
        (0, 1920, 60), (240, 1920, 64), (480, 1920, 67),
        (1920 + 480, 1920 + 1440, 60), (1920 + 480, 1920 + 1440, 64), (1920 + 480, 1920 + 1440, 67),
    ]
    expected = (
        [{60}, {60, 64}] + [{60, 64, 67}] * 6
        + [set(), set()] + [{60, 64, 67}] * 4
    )
    assert sample_pianoroll(notes_file(notes)) == expected


def test_pianoroll_boundary_touching_note_inactive():
    # note ends exactly at the start of step 1 and the next begins there
    roll = sample_pianoroll(notes_file([(0, 240, 60), (240, 480, 62)]))
    assert roll == [{60}, {62}]


def test_pianoroll_trailing_silence_trimmed_leading_kept():
    roll = sample_pianoroll(notes_file([(480, 720, 60)]))
    assert roll == [set(), set(), {60}]


def test_pianoroll_dangling_and_unmatched():
    track = [
        MidiEvent(0, 0x80, bytes([50, 0])),       # off with no matching on: ignored
        MidiEvent(0, 0x90, bytes([60, 64])),      # never closed
        MidiEvent(480, 0xFF, b"\x2f"),            # track ends at tick 480
    ]
    assert sample_pianoroll(MidiFile(0, 480, [track])) == [{60}, {60}]


def test_pianoroll_odd_resolution():
    # tpb 3: eighth = 1.5 ticks; note [0, 3) covers steps 0 and 1 exactly
    assert sample_pianoroll(notes_file([(0, 3, 60)], tpb=3)) == [{60}, {60}]


# -- chord tokens ---------------------------------------------------------------------

def test_c_major_token():
    assert encode_timestep({67, 60, 64}) == "60-64-67"


def test_rest_token():
    assert encode_timestep(set()) == REST
    assert decode_chord_token(REST) == frozenset()


def test_polyphony_four_kept():
    assert encode_timestep({60, 64, 67, 72}) == "60-64-67-72"


def test_cap_picks_a_subset():
    rng = np.random.default_rng(42)
    src = {60, 62, 64, 65, 67}
    tok = encode_timestep(src, rng)
    got = decode_chord_token(tok)
    assert len(got) == 3 and got <= src


def test_cap_uniform_over_subsets():
    src = (60, 62, 64, 65, 67)
    subsets = {frozenset(c) for c in itertools.combinations(src, 3)}
    assert len(subsets) == 10
    rng = np.random.default_rng(42)
    n = 100_000
    tally = Counter(decode_chord_token(encode_timestep(src, rng)) for _ in range(n))
    assert set(tally) == subsets
    for s in subsets:
        assert abs(tally[s] / n - 0.1) <= 0.01


@pytest.mark.parametrize("tok", ["64-60", "60-60", "60-62-64-65-67", "60-", "-60", "128",
                                 "60-064", "x", "", "note-on-60-0"])
def test_chord_decode_rejects(tok):
    with pytest.raises(MalformedToken):
        decode_chord_token(tok)


@given(pitch_sets)
def test_encode_timestep_subset_and_size(pitches):
    tok = encode_timestep(pitches, np.random.default_rng(0))
    got = decode_chord_token(tok)
    assert got <= pitches
    assert len(got) == (len(pitches) if len(pitches) <= 4 else 3)
    if tok != REST:
        values = [int(p) for p in tok.split("-")]
        assert values == sorted(set(values))


def test_fixture_pianoroll_tokens_strictly_increasing(corpus_dir):
    rng = np.random.default_rng(0)
    toks = []
    for f in sorted(corpus_dir.glob("*.mid")):
        toks += pianoroll_tokenize(normalize_ticks(read_midi_file(f)), rng)
    assert toks
    for t in toks:
        decode_chord_token(t)


# -- vocabulary -----------------------------------------------------------------------

def test_build_vocab_ordering():
    v = build_vocab([["a", "b", "a"]])
    assert v.tokens == ["a", "b"] and v.counts == [2, 1]
    assert v.token_to_id == {"a": 0, "b": 1}


def test_build_vocab_ties_lexicographic():
    v = build_vocab([["c", "b", "a", "b", "c"]])
    assert v.tokens == ["b", "c", "a"]


def test_single_token_vocab():
    assert len(build_vocab([["x"] * 5])) == 1


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])
    with pytest.raises(EmptyCorpus):
        build_vocab([[], []])


def test_vocab_counts_match_tally():
    rng = np.random.default_rng(7)
    alphabet = [f"t{i}" for i in range(300)]
    corpus = [list(rng.choice(alphabet, size=rng.integers(0, 40), p=None)) for _ in range(1000)]
    v = build_vocab(corpus)
    tally = {}
    for seq in corpus:
        for t in seq:
            tally[t] = tally.get(t, 0) + 1
    assert dict(zip(v.tokens, v.counts)) == tally
    assert sum(v.counts) == sum(len(s) for s in corpus)
    assert all(c >= 1 for c in v.counts)
    assert sorted(v.token_to_id.values()) == list(range(len(v)))


@given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=20), min_size=1, max_size=10)
       .filter(lambda c: any(c)))
def test_vocab_deterministic_and_bijective(corpus):
    v1, v2 = build_vocab(corpus), build_vocab([list(s) for s in corpus])
    assert v1.to_text() == v2.to_text()
    for i, t in enumerate(v1.tokens):
        assert v1.token_to_id[t] == i
    assert sum(v1.counts) == sum(map(len, corpus))


def test_encode_decode_ids():
    v = build_vocab([["a", "b", "a", "c"]])
    ids = encode_ids(v, ["c", "a", "b"])
    assert list(ids) == [2, 0, 1]
    assert decode_ids(v, ids) == ["c", "a", "b"]
    with pytest.raises(UnknownToken):
        encode_ids(v, ["zz"])
    with pytest.raises(UnknownId):
        decode_ids(v, [3])
    with pytest.raises(UnknownId):
        decode_ids(v, [-1])


def test_fixture_vocab_roundtrip(corpus_dir):
    from midilstm.midi_io import extract_note_events, flatten_tracks
    pieces = [message_tokenize(flatten_tracks(extract_note_events(normalize_ticks(read_midi_file(f)))))
              for f in sorted(corpus_dir.glob("*.mid"))]
    v = build_vocab(pieces)
    assert decode_ids(v, encode_ids(v, v.tokens)) == v.tokens
    for p in pieces:
        assert decode_ids(v, encode_ids(v, p)) == p
    assert vocab_kind(v) == "messages"


def test_vocab_text_roundtrip():
    v = build_vocab([["60-64-67", "rest", "60-64-67"]])
    assert v.to_text() == "60-64-67\t2\nrest\t1\n"
    assert Vocabulary.from_text(v.to_text()) == v
    assert vocab_kind(v) == "pianoroll"


def test_corpus_text_roundtrip():
    pieces = [["a", "b"], [], ["c"]]
    text = corpus_to_text(pieces)
    assert text == "a b\n\nc\n"
    assert corpus_from_text(text) == pieces
