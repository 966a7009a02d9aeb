"""Character-level LSTM language modelling of symbolic music (MIDI and piano roll)."""

__version__ = "0.1.0"
