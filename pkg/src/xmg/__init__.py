"""Expressive piano MIDI generation with a perceptual note codec, five
chain-rule LSTMs and entropy-based screening of generated candidates."""

from .codec import (CLASS_COUNTS, FIELDS, BinSpec, CodecConfig, NoteToken, calibrate_config,
                    decode, encode)
from .midi import NoteEvent, read_midi, write_midi

__all__ = ["CLASS_COUNTS", "FIELDS", "BinSpec", "CodecConfig", "NoteToken", "NoteEvent",
           "calibrate_config", "decode", "encode", "read_midi", "write_midi"]
__version__ = "0.1.0"
