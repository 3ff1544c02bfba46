"""DTW distance, class templates, threshold screening and the template-distance quality table."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .beat import Beat
from .engine.optim import derive_seed

DEFAULT_THRESHOLD = 1.75
DEFAULT_THRESHOLDS = {"L": 5.0}
QUALITY_CLASSES = ("P", "A", "L", "R", "f", "j")


@numba.njit(cache=True)
def _dtw_kernel(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            if prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = abs(ai - b[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True)
def _dtw_many(series, template):
    out = np.empty(series.shape[0])
    for k in range(series.shape[0]):
        out[k] = _dtw_kernel(series[k], template)
    return out


def dtw(a: Sequence[float], b: Sequence[float]) -> float:
    """Unnormalized DTW with |a_i - b_j| cost and steps (1,0), (0,1), (1,1)."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw needs two non-empty series")
    return float(_dtw_kernel(a, b))


def dtw_to_template(beats: np.ndarray, template: np.ndarray) -> np.ndarray:
    """DTW of every row of ``beats`` against one template."""
    beats = np.ascontiguousarray(np.atleast_2d(beats), dtype=np.float64)
    if beats.shape[0] == 0:
        return np.zeros(0)
    return _dtw_many(beats, np.ascontiguousarray(template, dtype=np.float64))


@dataclass
class Template:
    label: str
    samples: np.ndarray
    selection: str  # "medoid" or "expert-index"
    index: int


def _series(b) -> np.ndarray:
    return np.asarray(getattr(b, "samples", b), dtype=np.float64).reshape(-1)


def select_template(beats: Sequence, strategy: str = "medoid", index: int | None = None,
                    max_candidates: int | None = 200, seed: int = 0) -> Template:
    """Class template: the DTW medoid, or an explicitly chosen (expert) beat.

    For classes larger than ``max_candidates`` the medoid is taken over a seeded
    subsample of that size (pairwise DTW is quadratic in class size).
    """
    if len(beats) == 0:
        raise ValueError("cannot select a template from an empty class")
    label = getattr(beats[0], "label", "")
    if strategy == "expert-index":
        if index is None or not 0 <= index < len(beats):
            raise IndexError(f"expert index {index} out of range for {len(beats)} beats")
        return Template(label, _series(beats[index]), strategy, index)
    if strategy != "medoid":
        raise ValueError(f"unknown template strategy {strategy!r}")
    pool = np.arange(len(beats))
    if max_candidates is not None and len(beats) > max_candidates:
        rng = np.random.default_rng(derive_seed(seed, "template", label))
        pool = np.sort(rng.choice(len(beats), max_candidates, replace=False))
    x = np.stack([_series(beats[i]) for i in pool])
    totals = np.zeros(len(pool))
    for k in range(len(pool)):
        d = dtw_to_template(x[k + 1:], x[k])
        totals[k] += d.sum()
        totals[k + 1:] += d
    best = int(pool[int(np.argmin(totals))])
    return Template(label, _series(beats[best]), "medoid", best)


@dataclass
class ScreenResult:
    kept: list[Beat]
    discarded: list[Beat]
    distances: np.ndarray
    kept_mask: np.ndarray = field(repr=False)


def screen(beats: Sequence[Beat], template: Template | Beat | np.ndarray, threshold: float) -> ScreenResult:
    """Keep beats whose DTW distance to the template is <= threshold (order preserved)."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    ref = _series(template)
    dist = dtw_to_template(np.stack([b.samples for b in beats]) if beats else np.zeros((0, 1)), ref)
    mask = dist <= threshold
    kept = [b.with_provenance("screened") for b, k in zip(beats, mask) if k]
    discarded = [b for b, k in zip(beats, mask) if not k]
    return ScreenResult(kept, discarded, dist, mask)


@dataclass
class ScreenConfig:
    default: float = DEFAULT_THRESHOLD
    per_class: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def __post_init__(self):
        for c, t in [("default", self.default), *self.per_class.items()]:
            if not t > 0:
                raise ValueError(f"threshold for {c} must be positive, got {t}")

    def threshold(self, label: str) -> float:
        return self.per_class.get(label, self.default)


def screening_report_csv(beats: Sequence[Beat], result: ScreenResult, ids: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beat_id", "class", "distance", "kept"])
    for i, (b, d, k) in enumerate(zip(beats, result.distances, result.kept_mask)):
        w.writerow([ids[i] if ids else i, b.label, f"{d:.6f}", int(bool(k))])
    return buf.getvalue()


def mean_template_distance(beats: Sequence[Beat], template: Template) -> float:
    if not beats:
        return math.nan
    return float(np.mean(dtw_to_template(np.stack([b.samples for b in beats]), template.samples)))


def quality_report(sets: Mapping[str, Mapping[str, Sequence[Beat]]], templates: Mapping[str, Template],
                   classes: Sequence[str] = QUALITY_CLASSES, include_n: bool = False) -> dict[str, dict[str, float]]:
    """Mean DTW distance to the class template, rows = classes, columns = the keys of ``sets``.

    Missing (case, class) combinations are NaN.
    """
    rows = list(classes)
    if include_n and "N" not in rows:
        rows.append("N")
    if not include_n:
        rows = [c for c in rows if c != "N"]
    table: dict[str, dict[str, float]] = {}
    for c in rows:
        if c not in templates:
            continue
        table[c] = {case: mean_template_distance(list(by_class.get(c, [])), templates[c])
                    for case, by_class in sets.items()}
    return table


def quality_csv(table: Mapping[str, Mapping[str, float]]) -> str:
    columns = list(next(iter(table.values())).keys()) if table else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class"] + columns)
    for c, row in table.items():
        w.writerow([c] + ["" if math.isnan(row[k]) else f"{row[k]:.4f}" for k in columns])
    return buf.getvalue()
