"""Readers for MIT-BIH style WFDB records (.hea / format-212 .dat / .atr) and CSV beat files."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .beat import Beat, parse_csv_beats

log = logging.getLogger(__name__)

# WFDB annotation codes (annot.c); index = code
ANNOTATION_SYMBOLS = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S", 10: "E",
    11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T", 20: "*", 21: "D", 22: '"',
    23: "=", 24: "p", 25: "B", 26: "^", 27: "t", 28: "+", 29: "u", 30: "?", 31: "!", 32: "[",
    33: "]", 34: "e", 35: "n", 36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {s: c for c, s in ANNOTATION_SYMBOLS.items()}

# the 15 beat types occurring in the MIT-BIH arrhythmia database
BEAT_SYMBOLS = frozenset("NLRAaJSVFejE/fQ")

SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63

SUPPORTED_CLASSES = frozenset("PALNRfj")
SYMBOL_TO_CLASS = {"/": "P"}


class ParseError(ValueError):
    pass


@dataclass
class ChannelInfo:
    file_name: str
    fmt: int
    gain: float
    baseline: int
    units: str = "mV"
    description: str = ""


@dataclass
class HeaderInfo:
    record_id: str
    n_signals: int
    sampling_rate: float
    n_samples: int
    channels: list[ChannelInfo]


@dataclass
class SignalRecord:
    record_id: str
    sampling_rate: float
    gains: list[float]
    baselines: list[int]
    samples: np.ndarray  # [n_channels, n_samples], integer ADC units

    def __post_init__(self):
        if self.sampling_rate <= 0:
            raise ValueError("sampling_rate must be positive")
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.int64))
        if not (len(self.gains) == len(self.baselines) == self.samples.shape[0]):
            raise ValueError("gain/baseline count must match channel count")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def physical(self, channel: int = 0) -> np.ndarray:
        """Channel in physical units: (adc - baseline) / gain."""
        return (self.samples[channel] - self.baselines[channel]) / self.gains[channel]


@dataclass
class AnnotationStream:
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    symbols: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64).reshape(-1)
        if len(self.samples) != len(self.symbols):
            raise ValueError("annotation samples and symbols differ in length")
        if np.any(np.diff(self.samples) < 0):
            bad = int(np.argmax(np.diff(self.samples) < 0)) + 1
            raise ParseError(f"annotation indices decrease at entry {bad}")

    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.samples) > 0))

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(zip(self.samples.tolist(), self.symbols))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, str]]) -> AnnotationStream:
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs], dtype=np.int64), [p[1] for p in pairs])


# -- header ------------------------------------------------------------------

_FS_RE = re.compile(r"^([0-9.eE+-]+)")
_GAIN_RE = re.compile(r"^([0-9.eE+-]+)(?:\(([-0-9]+)\))?(?:/(\S+))?$")


def parse_header(text: str, allow_formats: Sequence[int] = (212,)) -> HeaderInfo:
    lines = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), start=1)]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ParseError("line 1: empty header")
    line_no, record_line = lines[0]
    parts = record_line.split()
    if len(parts) < 2:
        raise ParseError(f"line {line_no}: record line needs a name and a signal count")
    record_id = parts[0].split("/")[0]
    try:
        n_signals = int(parts[1])
        fs = float(_FS_RE.match(parts[2]).group(1)) if len(parts) > 2 else 250.0
        n_samples = int(parts[3]) if len(parts) > 3 else 0
    except (ValueError, AttributeError):
        raise ParseError(f"line {line_no}: malformed record line {record_line!r}") from None
    if fs <= 0:
        raise ParseError(f"line {line_no}: sampling frequency must be positive")
    signal_lines = lines[1:]
    if len(signal_lines) < n_signals:
        raise ParseError(
            f"line {signal_lines[-1][0] if signal_lines else line_no}: header declares {n_signals} "
            f"signals but has {len(signal_lines)} signal lines"
        )
    channels = []
    for line_no, ln in signal_lines[:n_signals]:
        fields = ln.split()
        if len(fields) < 2:
            raise ParseError(f"line {line_no}: signal line needs file name and format")
        fmt_match = re.match(r"^(\d+)", fields[1])
        if not fmt_match:
            raise ParseError(f"line {line_no}: malformed format field {fields[1]!r}")
        fmt = int(fmt_match.group(1))
        if fmt not in allow_formats:
            raise ParseError(f"line {line_no}: unsupported signal format {fmt} (only {list(allow_formats)})")
        gain, baseline, units = 200.0, None, "mV"
        if len(fields) > 2:
            m = _GAIN_RE.match(fields[2])
            if not m:
                raise ParseError(f"line {line_no}: malformed gain field {fields[2]!r}")
            gain = float(m.group(1)) or 200.0
            baseline = int(m.group(2)) if m.group(2) is not None else None
            units = m.group(3) or units
        adc_zero = int(fields[4]) if len(fields) > 4 else 0
        channels.append(ChannelInfo(
            file_name=fields[0], fmt=fmt, gain=gain,
            baseline=adc_zero if baseline is None else baseline, units=units,
            description=" ".join(fields[8:]) if len(fields) > 8 else "",
        ))
    return HeaderInfo(record_id, n_signals, fs, n_samples, channels)


# -- format 212 --------------------------------------------------------------

def decode_212(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Split 3-byte groups into two sign-extended 12-bit sample streams."""
    if len(raw) % 3:
        offset = len(raw) - len(raw) % 3
        raise ParseError(f"truncated format-212 triplet at byte offset {offset}")
    b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    s1 = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    s2 = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    s1 = np.where(s1 >= 2048, s1 - 4096, s1)
    s2 = np.where(s2 >= 2048, s2 - 4096, s2)
    return s1, s2


def encode_212(s1: np.ndarray, s2: np.ndarray) -> bytes:
    """Inverse of :func:`decode_212` (used to build fixtures)."""
    s1 = np.asarray(s1, dtype=np.int64) & 0xFFF
    s2 = np.asarray(s2, dtype=np.int64) & 0xFFF
    out = np.empty((len(s1), 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | (((s2 >> 8) & 0x0F) << 4)
    out[:, 2] = s2 & 0xFF
    return out.tobytes()


def decode_signals_212(raw: bytes, n_signals: int, n_samples: int | None = None) -> np.ndarray:
    """Interleaved multi-channel 212 data -> [n_signals, n_samples]."""
    usable = len(raw) - len(raw) % 3
    if n_samples is not None:
        needed = -(-n_samples * n_signals // 2) * 3
        if needed > len(raw):
            raise ParseError(f"signal file holds {len(raw)} bytes, header needs {needed}")
        usable = needed
    s1, s2 = decode_212(raw[:usable])
    flat = np.empty(2 * len(s1), dtype=np.int64)
    flat[0::2], flat[1::2] = s1, s2
    total = (n_samples * n_signals) if n_samples is not None else (len(flat) // n_signals) * n_signals
    return flat[:total].reshape(-1, n_signals).T.copy()


# -- annotations -------------------------------------------------------------

def parse_annotations(raw: bytes, beats_only: bool = True) -> AnnotationStream:
    """Decode an MIT-format annotation file into (sample, symbol) pairs.

    SKIP/NUM/SUB/CHN/AUX words are consumed without emitting annotations.
    With ``beats_only`` only the beat codes in :data:`BEAT_SYMBOLS` are kept.
    """
    if len(raw) % 2:
        raise ParseError(f"annotation stream has odd length {len(raw)}")
    words = np.frombuffer(raw, dtype="<u2")
    i, t = 0, 0
    samples, symbols = [], []
    while True:
        if i >= len(words):
            raise ParseError(f"annotation stream ends without EOF word (byte {2 * i})")
        w = int(words[i])
        code, delta = w >> 10, w & 0x3FF
        if code == 0 and delta == 0:
            break
        if code == SKIP:
            if i + 2 >= len(words):
                raise ParseError(f"truncated SKIP at byte {2 * i}")
            hi, lo = int(words[i + 1]), int(words[i + 2])
            skip = (hi << 16) | lo
            if skip >= 1 << 31:
                skip -= 1 << 32
            t += skip
            i += 3
        elif code in (NUM, SUB, CHN):
            i += 1
        elif code == AUX:
            i += 1 + (delta + 1) // 2
        else:
            t += delta
            if t < 0:
                raise ParseError(f"negative cumulative time {t} at byte {2 * i}")
            symbol = ANNOTATION_SYMBOLS.get(code, f"[{code}]")
            if not beats_only or symbol in BEAT_SYMBOLS:
                samples.append(t)
                symbols.append(symbol)
            i += 1
        if t < 0:
            raise ParseError(f"negative cumulative time {t} at byte {2 * i}")
    stream = AnnotationStream(np.array(samples, dtype=np.int64), symbols)
    if beats_only and not stream.strictly_increasing():
        raise ParseError("two beat annotations share a sample index")
    return stream


def encode_annotations(pairs: Iterable[tuple[int, str]]) -> bytes:
    """Minimal writer for beat annotations (fixtures only): SKIP for long gaps, then EOF."""
    words: list[int] = []
    last = 0
    for sample, symbol in pairs:
        delta = sample - last
        if delta < 0:
            raise ValueError("annotations must be sorted")
        if delta > 0x3FF:
            words += [SKIP << 10, (delta >> 16) & 0xFFFF, delta & 0xFFFF]
            delta = 0
        words.append((SYMBOL_CODES[symbol] << 10) | delta)
        last = sample
    words.append(0)
    return np.array(words, dtype="<u2").tobytes()


# -- records -----------------------------------------------------------------

def load_record(directory: str | Path, record_id: str, annotator: str = "atr") -> tuple[SignalRecord, AnnotationStream]:
    directory = Path(directory)
    header = parse_header((directory / f"{record_id}.hea").read_text())
    files = {ch.file_name for ch in header.channels}
    if len(files) != 1:
        raise ParseError(f"{record_id}: multi-file records are not supported")
    raw = (directory / files.pop()).read_bytes() if header.n_samples else b""
    samples = (decode_signals_212(raw, header.n_signals, header.n_samples)
               if header.n_samples else np.zeros((header.n_signals, 0), dtype=np.int64))
    record = SignalRecord(
        record_id=header.record_id, sampling_rate=header.sampling_rate,
        gains=[ch.gain for ch in header.channels], baselines=[ch.baseline for ch in header.channels],
        samples=samples,
    )
    ann_path = directory / f"{record_id}.{annotator}"
    stream = parse_annotations(ann_path.read_bytes()) if ann_path.exists() else AnnotationStream()
    if len(stream) and stream.samples[-1] >= record.n_samples:
        raise ParseError(f"{record_id}: annotation at {stream.samples[-1]} beyond record length {record.n_samples}")
    return record, stream


def discover_records(directory: str | Path) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.hea"))


def load_csv_beats(path: str | Path) -> list[Beat]:
    return parse_csv_beats(Path(path).read_text())


def map_symbols(stream: AnnotationStream, selected: Iterable[str]) -> AnnotationStream:
    """Keep annotations whose canonical class is selected ('/' becomes 'P')."""
    selected = set(selected)
    unknown = selected - SUPPORTED_CLASSES
    if unknown:
        raise ValueError(f"unsupported classes {sorted(unknown)}; choose from {sorted(SUPPORTED_CLASSES)}")
    kept = [(s, SYMBOL_TO_CLASS.get(sym, sym)) for s, sym in stream]
    return AnnotationStream.from_pairs((s, c) for s, c in kept if c in selected)
