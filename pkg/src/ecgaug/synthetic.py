"""Bundled synthetic beat dataset: parameterized P-QRS-T waveform families with jitter and noise.

Three classes by default: a majority "N" family and two minor families ("f",
"j") that differ from it in QRS width, a pacing-like spike or a missing P
wave. Per-beat jitter and additive noise make the families overlap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import BEAT_LENGTH
from .beat import Beat
from .segment import normalize_amplitude


@dataclass(frozen=True)
class Wave:
    center: float
    amplitude: float
    width: float


@dataclass(frozen=True)
class Family:
    waves: tuple[Wave, ...]


NORMAL = (
    Wave(0.28, 0.15, 0.030),  # P
    Wave(0.46, -0.12, 0.010),  # Q
    Wave(0.50, 1.00, 0.012),  # R
    Wave(0.54, -0.25, 0.012),  # S
    Wave(0.74, 0.30, 0.050),  # T
)

FAMILIES: dict[str, Family] = {
    "N": Family(NORMAL),
    # fusion of paced and normal: pacing spike before a wider QRS, flattened T
    "f": Family((
        Wave(0.28, 0.10, 0.030), Wave(0.44, 0.45, 0.004), Wave(0.50, 0.85, 0.022),
        Wave(0.56, -0.30, 0.020), Wave(0.74, 0.12, 0.060),
    )),
    # junctional escape: no P wave, small retrograde deflection after the QRS
    "j": Family((
        Wave(0.46, -0.12, 0.010), Wave(0.50, 1.00, 0.013), Wave(0.54, -0.25, 0.012),
        Wave(0.62, -0.08, 0.020), Wave(0.76, 0.30, 0.055),
    )),
}


def render(family: Family, rng: np.random.Generator, noise: float, length: int = BEAT_LENGTH) -> np.ndarray:
    t = np.linspace(0.0, 1.0, length)
    x = np.zeros(length)
    shift = rng.normal(0.0, 0.01)
    for w in family.waves:
        c = w.center + shift + rng.normal(0.0, 0.008)
        a = w.amplitude * (1.0 + rng.normal(0.0, 0.12))
        s = w.width * np.exp(rng.normal(0.0, 0.12))
        x += a * np.exp(-0.5 * ((t - c) / s) ** 2)
    x += 0.08 * np.sin(2 * np.pi * (rng.uniform(0.2, 1.0) * t + rng.uniform(0, 1)))  # baseline wander
    x += rng.normal(0.0, noise, length)
    return normalize_amplitude(x)


def make_dataset(per_class: Mapping[str, int], seed: int = 0, noise: float = 0.12) -> list[Beat]:
    """Beats in class order of ``per_class``; deterministic per seed."""
    unknown = set(per_class) - set(FAMILIES)
    if unknown:
        raise ValueError(f"no synthetic family for classes {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    beats = []
    for label, n in per_class.items():
        fam = FAMILIES[label]
        beats.extend(Beat(render(fam, rng, noise), label, "real", ("synthetic", i)) for i in range(n))
    return beats
