"""Confusion matrices, precision/recall/F1, PR curves and net improvement in true positives."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import CLASSES, MINOR_CLASSES


@dataclass
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows = true, columns = predicted
    empty_rows: list[str] = field(default_factory=list)

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def percent(self) -> np.ndarray:
        """Row-normalized percentages; rows without support are all zero."""
        rows = self.support.astype(np.float64)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(rows > 0, 100.0 * self.counts / np.where(rows > 0, rows, 1.0), 0.0)
        return pct

    def to_csv(self, percent: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(self.classes))
        values = self.percent if percent else self.counts
        for c, row in zip(self.classes, values):
            w.writerow([c] + ([f"{v:.2f}" for v in row] if percent else [int(v) for v in row]))
        return buf.getvalue()


def confusion(y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str] = CLASSES) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted labels")
    if len(y_true) == 0:
        raise ValueError("confusion matrix of an empty label set is undefined")
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted({str(v) for v in list(y_true) + list(y_pred)} - set(index))
    if unknown:
        raise ValueError(f"labels not in class order {list(classes)}: {unknown}")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(counts, ([index[v] for v in y_true], [index[v] for v in y_pred]), 1)
    empty = [c for c, n in zip(classes, counts.sum(axis=1)) if n == 0]
    return ConfusionMatrix(tuple(classes), counts, empty)


def _safe_div(num: float, den: float, flags: list[str], what: str) -> float:
    if den == 0:
        flags.append(what)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def prf_report(matrix: ConfusionMatrix) -> dict:
    """Per-class precision/recall/F1/support plus accuracy and macro/micro/weighted averages.

    Zero denominators give 0 and are listed under ``"undefined"``.
    """
    c = matrix.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    support = c.sum(axis=1)
    flags: list[str] = []
    per_class = {}
    for k, name in enumerate(matrix.classes):
        p = _safe_div(tp[k], tp[k] + fp[k], flags, f"precision:{name}")
        r = _safe_div(tp[k], tp[k] + fn[k], flags, f"recall:{name}")
        per_class[name] = {"precision": p, "recall": r, "f1": _f1(p, r), "support": int(support[k])}
    total = c.sum()
    names = list(matrix.classes)
    macro = {key: float(np.mean([per_class[n][key] for n in names])) for key in ("precision", "recall", "f1")}
    mp = _safe_div(tp.sum(), tp.sum() + fp.sum(), flags, "precision:micro")
    mr = _safe_div(tp.sum(), tp.sum() + fn.sum(), flags, "recall:micro")
    micro = {"precision": mp, "recall": mr, "f1": _f1(mp, mr)}
    weights = support / total if total else np.zeros_like(support)
    weighted = {key: float(sum(w * per_class[n][key] for w, n in zip(weights, names)))
                for key in ("precision", "recall", "f1")}
    return {
        "per_class": per_class,
        "accuracy": _safe_div(tp.sum(), total, flags, "accuracy"),
        "macro": macro,
        "micro": micro,
        "weighted": weighted,
        "support": int(total),
        "undefined": flags,
    }


@dataclass
class PRCurve:
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    average_precision: float
    defined: bool = True


def pr_curve(is_positive: np.ndarray, scores: np.ndarray) -> PRCurve:
    """One-vs-rest precision/recall at every distinct score threshold (descending).

    Average precision is the step-wise sum of precision times recall increments.
    """
    is_positive = np.asarray(is_positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(is_positive.sum())
    if n_pos == 0:
        return PRCurve(np.zeros(0), np.zeros(0), np.zeros(0), float("nan"), defined=False)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], is_positive[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps, fps, thresholds = tps[last], fps[last], s[last]
    precision = tps / (tps + fps)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PRCurve(precision, recall, thresholds, ap)


def pr_curves(y_true: Sequence[str], probs: np.ndarray, classes: Sequence[str] = CLASSES) -> dict[str, PRCurve]:
    """Per-class one-vs-rest curves plus a ``"micro"`` curve over pooled (sample, class) pairs."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != (len(y_true), len(classes)):
        raise ValueError(f"probability rows must be [{len(y_true)}, {len(classes)}], got {probs.shape}")
    truth = np.array([[t == c for c in classes] for t in y_true], dtype=bool).reshape(len(y_true), len(classes))
    curves = {c: pr_curve(truth[:, k], probs[:, k]) for k, c in enumerate(classes)}
    curves["micro"] = pr_curve(truth.reshape(-1), probs.reshape(-1))
    return curves


def _diagonal(m) -> tuple[tuple[str, ...], np.ndarray]:
    if isinstance(m, ConfusionMatrix):
        return m.classes, np.diag(m.percent)
    classes, pct = m
    return tuple(classes), np.diag(np.asarray(pct, dtype=np.float64))


def net_improvement(case, reference, minor: Sequence[str] = MINOR_CLASSES) -> tuple[float, float]:
    """Sum of row-% diagonal differences (case - reference): over all classes and over ``minor``.

    ``case``/``reference`` are ConfusionMatrix objects or ``(class_order, percent_matrix)`` pairs.
    """
    c_classes, c_diag = _diagonal(case)
    r_classes, r_diag = _diagonal(reference)
    if c_classes != r_classes:
        raise ValueError(f"class order mismatch: {c_classes} vs {r_classes}")
    diff = c_diag - r_diag
    idx = [c_classes.index(m) for m in minor if m in c_classes]
    return float(diff.sum()), float(diff[idx].sum())


def report_dict(matrix: ConfusionMatrix, curves: dict[str, PRCurve] | None = None) -> dict:
    """JSON-ready report: scores, counts, row-% matrix and average precisions."""
    out = prf_report(matrix)
    out["classes"] = list(matrix.classes)
    out["confusion_counts"] = matrix.counts.tolist()
    out["confusion_percent"] = np.round(matrix.percent, 6).tolist()
    out["empty_rows"] = list(matrix.empty_rows)
    if curves is not None:
        out["average_precision"] = {k: (None if not v.defined else round(v.average_precision, 12))
                                    for k, v in curves.items()}
    return out


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"]


def pr_curves_svg(curves: dict[str, PRCurve], title: str = "Precision-Recall") -> str:
    """Standalone SVG: axes 0-1, one step curve per class, legend with class letters and AP."""
    w, h, m = 480, 400, 50
    pw, ph = w - 2 * m, h - 2 * m

    def xy(r, p):
        return m + r * pw, h - m - p * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        x, _ = xy(t, 0)
        _, y = xy(0, t)
        parts.append(f'<text x="{x:.1f}" y="{h - m + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:.1f}</text>')
        parts.append(f'<text x="{m - 6}" y="{y + 3:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.1f}</text>')
    parts.append(f'<text x="{w / 2}" y="{h - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">Recall</text>')
    parts.append(f'<text x="14" y="{h / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 14 {h / 2})">Precision</text>')
    legend_y = m + 14
    for k, (name, curve) in enumerate(curves.items()):
        colour = _PALETTE[k % len(_PALETTE)]
        if curve.defined:
            pts = [xy(0.0, curve.precision[0])]
            for r, p in zip(curve.recall, curve.precision):
                pts.append(xy(r, p))
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            dash = ' stroke-dasharray="4 3"' if name == "micro" else ""
            parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{path}"/>')
            label = f"{name} (AP={curve.average_precision:.2f})"
        else:
            label = f"{name} (undefined)"
        parts.append(f'<line x1="{w - m - 130}" y1="{legend_y - 4}" x2="{w - m - 112}" y2="{legend_y - 4}" stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{w - m - 106}" y="{legend_y}" font-family="sans-serif" font-size="10">{label}</text>')
        legend_y += 14
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
