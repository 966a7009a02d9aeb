"""Write the small deterministic MIDI corpus used by the tests (tests/data/corpus).

The files are assembled by hand rather than with midilstm.midi_io.write_midi so
that the reader gets exercised on things the writer never produces: format 1,
several tracks, running status, velocity-0 note-offs, tempo and controller
messages, and ticks-per-beat other than 480.
"""

import argparse
import struct
from pathlib import Path

import numpy as np

C_MAJOR = [0, 2, 4, 5, 7, 9, 11]


def vlq(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    return bytes(reversed(out))


def track_bytes(notes, channel, running_status, tempo=None, program=None):
    """notes: list of (start_tick, duration, pitch)."""
    timeline = []
    for start, dur, pitch in notes:
        timeline.append((start, 1, pitch))
        timeline.append((start + dur, 0, pitch))
    timeline.sort(key=lambda e: (e[0], e[1], e[2]))  # offs before ons at equal ticks

    body = bytearray()
    if tempo is not None:
        body += b"\x00\xff\x51\x03" + tempo.to_bytes(3, "big")
    if program is not None:
        body += vlq(0) + bytes([0xC0 | channel, program])
    body += vlq(0) + bytes([0xB0 | channel, 7, 100])  # channel volume
    last_tick = 0
    last_status = None
    for tick, is_on, pitch in timeline:
        body += vlq(tick - last_tick)
        last_tick = tick
        if running_status:
            # note-off as note-on velocity 0 keeps one status byte for the whole track
            status = 0x90 | channel
            data = bytes([pitch, 80 if is_on else 0])
        else:
            status = (0x90 if is_on else 0x80) | channel
            data = bytes([pitch, 80 if is_on else 64])
        if status != last_status or not running_status:
            body += bytes([status])
        last_status = status
        body += data
    body += b"\x00\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def smf(tracks, tpb):
    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(tracks), tpb)
    return header + b"".join(tracks)


def scale_pitch(degree, base=60):
    octave, step = divmod(degree, 7)
    return base + 12 * octave + C_MAJOR[step]


def piece(rng, tpb, bars):
    """Two-voice invention-like texture: eighth-note melody over a quarter-note bass."""
    eighth = tpb // 2
    melody, bass = [], []
    degree = int(rng.integers(0, 7))
    for k in range(bars * 8):
        degree = int(np.clip(degree + rng.choice([-2, -1, 1, 2]), -3, 10))
        dur = eighth if rng.random() > 0.2 else 2 * eighth
        if k * eighth + dur <= bars * 8 * eighth:
            melody.append((k * eighth, dur, scale_pitch(degree, 72)))
    for k in range(bars * 4):
        root = [0, 3, 4, 0][(k // 4) % 4]
        chord = [root, root + 2, root + 4]
        bass.append((k * tpb, tpb, scale_pitch(chord[k % 3], 48)))
    # occasional block chord to give the piano roll some polyphony > 4
    if rng.random() > 0.5:
        start = int(rng.integers(0, bars)) * 4 * tpb
        for d in (0, 2, 4, 7, 9):
            bass.append((start, tpb, scale_pitch(d, 48)))
    return melody, bass


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests/data/corpus"))
    ap.add_argument("--pieces", type=int, default=6)
    ap.add_argument("--seed", type=int, default=1685)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.pieces):
        tpb = [96, 240, 480][i % 3]
        melody, bass = piece(rng, tpb, bars=4 + i % 3)
        tracks = [
            track_bytes([], 0, False, tempo=500_000),  # conductor track
            track_bytes(melody, 0, running_status=i % 2 == 0, program=6),
            track_bytes(bass, 1, running_status=i % 2 == 1, program=6),
        ]
        (out / f"invention_{i:02d}.mid").write_bytes(smf(tracks, tpb))
    print(f"wrote {args.pieces} files to {out}")


if __name__ == "__main__":
    main()
