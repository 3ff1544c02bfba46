"""Annotated records -> fixed-length beats, and the stratified train/test split."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import BEAT_LENGTH
from .beat import Beat
from .ingest import AnnotationStream, SignalRecord, map_symbols
from .engine.optim import derive_seed

log = logging.getLogger(__name__)

RR_RATIO = 0.75


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def beat_boundaries(rpeaks: Sequence[int], i: int, ratio: float = RR_RATIO,
                    record_length: int | None = None) -> tuple[int, int] | None:
    """Inclusive (start, end) sample window around peak ``i``.

    The window reaches ``ratio`` of the RR interval to each neighbour; the first
    and last peaks mirror their single available interval. Returns ``None`` when
    fewer than two peaks exist.
    """
    n = len(rpeaks)
    if n < 2:
        return None
    if not 0 <= i < n:
        raise IndexError(f"peak index {i} out of range for {n} peaks")
    peak = rpeaks[i]
    before = rpeaks[i] - rpeaks[i - 1] if i > 0 else rpeaks[1] - rpeaks[0]
    after = rpeaks[i + 1] - rpeaks[i] if i < n - 1 else rpeaks[-1] - rpeaks[-2]
    start = peak - round_half_away(ratio * before)
    end = peak + round_half_away(ratio * after)
    start = max(start, 0)
    if record_length is not None:
        end = min(end, record_length - 1)
    return start, end


def resample_to_256(window: Sequence[float], length: int = BEAT_LENGTH) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.size < 2:
        raise ValueError(f"cannot resample a window of {window.size} sample(s)")
    src = np.linspace(0.0, 1.0, window.size)
    dst = np.linspace(0.0, 1.0, length)
    out = np.interp(dst, src, window)
    out[0], out[-1] = window[0], window[-1]
    return out


def normalize_amplitude(samples: Sequence[float]) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    out = 2.0 * (x - lo) / (hi - lo) - 1.0
    return np.clip(out, -1.0, 1.0)


def segment_record(record: SignalRecord, stream: AnnotationStream, selected: Iterable[str] | None = None,
                   channel: int = 0, ratio: float = RR_RATIO) -> list[Beat]:
    """Cut every annotated beat of one record into a normalized 256-sample beat.

    All beat annotations anchor the RR intervals; ``selected`` (canonical class
    letters) filters which beats are emitted. ``None`` keeps raw symbols.
    """
    signal = record.physical(channel)
    peaks = stream.samples
    if len(peaks) < 2:
        return []
    keep = None
    if selected is not None:
        keep = {int(s): c for s, c in map_symbols(stream, selected)}
    beats = []
    for i, (peak, symbol) in enumerate(stream):
        if keep is not None and peak not in keep:
            continue
        start, end = beat_boundaries(peaks, i, ratio, record.n_samples)
        window = signal[start:end + 1]
        if window.size < 2:
            log.warning("%s: beat at %d has a degenerate window, skipped", record.record_id, peak)
            continue
        label = keep[peak] if keep is not None else symbol
        beats.append(Beat(normalize_amplitude(resample_to_256(window)), label, "real", (record.record_id, int(peak))))
    return beats


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.1
    train_usage: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("test_fraction", "train_usage"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int]:
    """(train, test) sizes for a class of ``n`` beats: test = ceil(f*n), train = floor(u*(n - test))."""
    if n < 2:
        return n, 0
    n_test = math.ceil(round(spec.test_fraction * n, 9))
    n_train = math.floor(spec.train_usage * (n - n_test))
    return n_train, n_test


def split(beats: Iterable[Beat], spec: SplitSpec) -> tuple[list[Beat], list[Beat]]:
    """Stratified, seeded split; per class each beat lands in at most one side."""
    by_class: dict[str, list[Beat]] = {}
    for b in beats:
        by_class.setdefault(b.label, []).append(b)
    train, test = [], []
    for label in sorted(by_class):
        members = by_class[label]
        n_train, n_test = split_counts(len(members), spec)
        if len(members) < 2:
            log.warning("class %r has %d beat(s); kept wholly in training", label, len(members))
            train.extend(members)
            continue
        rng = np.random.default_rng(derive_seed(spec.seed, "split", label))
        order = rng.permutation(len(members))
        test.extend(members[j] for j in order[:n_test])
        train.extend(members[j] for j in order[n_test:n_test + n_train])
    return train, test


def class_counts(beats: Iterable[Beat]) -> dict[str, int]:
    return dict(sorted(Counter(b.label for b in beats).items()))
