"""The fixed-length labeled beat and its on-disk CSV + manifest form."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import BEAT_LENGTH
from .engine.checkpoint import atomic_write_bytes

PROVENANCES = ("real", "generated", "screened")


class BeatFormatError(ValueError):
    pass


@dataclass(eq=False)
class Beat:
    samples: np.ndarray
    label: str
    provenance: str = "real"
    source: tuple[str, int] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size != BEAT_LENGTH:
            raise BeatFormatError(f"beat must have {BEAT_LENGTH} samples, got {self.samples.size}")
        if not np.all(np.isfinite(self.samples)):
            raise BeatFormatError("beat samples must be finite")
        if self.provenance not in PROVENANCES:
            raise BeatFormatError(f"unknown provenance {self.provenance!r}")

    def with_provenance(self, provenance: str) -> Beat:
        return Beat(self.samples, self.label, provenance, self.source)


@dataclass
class BeatSet:
    """Beats of several classes, kept in insertion order."""

    beats: list[Beat] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.beats)

    def __iter__(self):
        return iter(self.beats)

    def counts(self) -> dict[str, int]:
        return dict(Counter(b.label for b in self.beats))

    def by_class(self) -> dict[str, list[Beat]]:
        out: dict[str, list[Beat]] = {}
        for b in self.beats:
            out.setdefault(b.label, []).append(b)
        return out

    def arrays(self, classes: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(X [n, 256], y [n]) with labels encoded by position in ``classes``."""
        index = {c: i for i, c in enumerate(classes)}
        x = np.stack([b.samples for b in self.beats]) if self.beats else np.zeros((0, BEAT_LENGTH))
        y = np.array([index[b.label] for b in self.beats], dtype=np.int64)
        return x, y


def stack(beats: Iterable[Beat]) -> np.ndarray:
    beats = list(beats)
    return np.stack([b.samples for b in beats]) if beats else np.zeros((0, BEAT_LENGTH))


def beats_to_csv(beats: Iterable[Beat]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for b in beats:
        writer.writerow([b.label] + [repr(float(v)) for v in b.samples])
    return buf.getvalue()


def parse_csv_beats(text: str, provenance: str = "real") -> list[Beat]:
    beats = []
    for row_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != BEAT_LENGTH + 1:
            raise BeatFormatError(f"row {row_no}: expected label + {BEAT_LENGTH} values, got {len(row) - 1} values")
        label = row[0].strip()
        if len(label) != 1:
            raise BeatFormatError(f"row {row_no}: label must be one character, got {label!r}")
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise BeatFormatError(f"row {row_no}: non-numeric cell ({exc})") from None
        try:
            beats.append(Beat(np.array(values), label, provenance))
        except BeatFormatError as exc:
            raise BeatFormatError(f"row {row_no}: {exc}") from None
    return beats


def write_beat_set(path: str | Path, beats: Sequence[Beat], seed: int | None = None, extra: dict | None = None) -> Path:
    """Write ``<path>`` (CSV) plus ``<path>.json`` manifest with counts, seed and provenance."""
    path = Path(path)
    atomic_write_bytes(path, beats_to_csv(beats).encode())
    manifest = {
        "n_beats": len(beats),
        "beat_length": BEAT_LENGTH,
        "class_counts": dict(sorted(Counter(b.label for b in beats).items())),
        "provenance_counts": dict(sorted(Counter(b.provenance for b in beats).items())),
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    atomic_write_bytes(path.with_suffix(path.suffix + ".json"), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    return json.loads(path.with_suffix(path.suffix + ".json").read_text())
