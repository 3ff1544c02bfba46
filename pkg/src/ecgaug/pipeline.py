"""End-to-end experiment: reference classifier plus four augmentation cases.

Case I   conditional GAN, raw generated beats
Case II  conditional GAN, DTW-screened beats
Case III per-class unconditional GANs, raw generated beats
Case IV  per-class unconditional GANs, DTW-screened beats

Every case is evaluated on the same held-out test set. A failing stage aborts
only the cases that depend on it.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import gan, synthetic
from .beat import Beat, beats_to_csv
from .clf import Classifier, ResNetSpec, predict, train_classifier
from .config import ExperimentConfig
from .engine.checkpoint import atomic_write_bytes
from .engine.optim import derive_seed
from .evaluate import ConfusionMatrix, confusion, net_improvement, pr_curves, pr_curves_svg, report_dict
from .ingest import discover_records, load_csv_beats, load_record
from .screen import Template, dtw_to_template, quality_csv, quality_report, screen, select_template
from .segment import class_counts, segment_record, split

log = logging.getLogger(__name__)

CASES = ("reference", "I", "II", "III", "IV")
CASE_DIRS = {"reference": "reference", "I": "case_I", "II": "case_II", "III": "case_III", "IV": "case_IV"}
CASE_TITLES = {"reference": "Reference", "I": "Case I", "II": "Case II", "III": "Case III", "IV": "Case IV"}
CONDITIONAL_CASES = ("I", "II")
SCREENED_CASES = ("II", "IV")


class BalanceError(ValueError):
    def __init__(self, label: str, deficit: int, available: int):
        super().__init__(f"class {label!r}: deficit {deficit} but only {available} synthetic beats available "
                         f"(shortfall {deficit - available})")
        self.label, self.deficit, self.available = label, deficit, available


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for the structured case error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage, self.cause = stage, cause


def parse_case(name: str) -> str:
    key = str(name).strip()
    for prefix in ("case_", "case-", "case "):
        if key.lower().startswith(prefix):
            key = key[len(prefix):]
    if key.lower() in ("ref", "reference"):
        return "reference"
    if key.upper() in CASES:
        return key.upper()
    raise ValueError(f"unknown case {name!r}; expected one of {list(CASES)}")


# -- data ------------------------------------------------------------------

def load_beats(config: ExperimentConfig) -> list[Beat]:
    d = config.data
    if d.source == "synthetic":
        beats = synthetic.make_dataset(d.synthetic_per_class, derive_seed(config.seed, "synthetic"),
                                       d.synthetic_noise)
    elif d.source == "csv":
        if not d.path:
            raise ValueError("csv data source needs data.path")
        beats = load_csv_beats(d.path)
    else:
        if not d.path:
            raise ValueError("wfdb data source needs data.path (or --data-dir)")
        beats = []
        for rid in discover_records(d.path):
            record, stream = load_record(d.path, rid)
            beats.extend(segment_record(record, stream, config.classes, d.channel))
    keep = set(config.classes)
    return [b for b in beats if b.label in keep]


def make_split(beats: Sequence[Beat], config: ExperimentConfig) -> tuple[list[Beat], list[Beat]]:
    spec = dataclasses.replace(config.split, seed=derive_seed(config.seed, "split", config.split.seed))
    return split(beats, spec)


def resolve_target(config: ExperimentConfig, train: Sequence[Beat]) -> int:
    counts = class_counts(train)
    target = config.balance_target
    biggest = max(counts.values())
    if target < biggest:
        log.warning("balance target %d is below the largest real class (%d); larger classes are left as-is",
                    target, biggest)
    return target


def deficits(train: Sequence[Beat], classes: Sequence[str], target: int) -> dict[str, int]:
    counts = class_counts(train)
    return {c: max(0, target - counts.get(c, 0)) for c in classes}


def balance(train: Sequence[Beat], pool: dict[str, Sequence[Beat]], target: int,
            classes: Sequence[str] | None = None) -> list[Beat]:
    """All real beats (order kept), then per class the first ``target - count`` pool beats."""
    classes = list(classes) if classes is not None else sorted({b.label for b in train} | set(pool))
    out = list(train)
    for c, deficit in deficits(train, classes, target).items():
        if deficit == 0:
            continue
        available = list(pool.get(c, []))
        if len(available) < deficit:
            raise BalanceError(c, deficit, len(available))
        out.extend(available[:deficit])
    return out


def digest_beats(test: Sequence[Beat]) -> str:
    return hashlib.sha256(beats_to_csv(test).encode()).hexdigest()


# -- templates and screening -----------------------------------------------

def build_templates(train: Sequence[Beat], config: ExperimentConfig) -> dict[str, Template]:
    s = config.screen
    by_class: dict[str, list[Beat]] = {}
    for b in train:
        by_class.setdefault(b.label, []).append(b)
    out = {}
    for c in config.classes:
        if c not in by_class:
            continue
        strategy = "expert-index" if (s.template == "expert-index" and c in s.expert_index) else "medoid"
        out[c] = select_template(by_class[c], strategy, s.expert_index.get(c), s.max_candidates,
                                 derive_seed(config.seed, "template", c))
    return out


def thresholds(train: Sequence[Beat], templates: dict[str, Template], config: ExperimentConfig) -> dict[str, float]:
    s = config.screen
    out = {}
    for c, t in templates.items():
        if s.real_quantile is None:
            out[c] = float(s.per_class.get(c, s.default))
        else:
            real = np.stack([b.samples for b in train if b.label == c])
            out[c] = float(np.quantile(dtw_to_template(real, t.samples), s.real_quantile))
    return out


# -- results ---------------------------------------------------------------

@dataclass
class CaseResult:
    case: str
    matrix: ConfusionMatrix | None = None
    curves: dict | None = None
    report: dict | None = None
    error: dict | None = None
    synthetic: dict[str, list[Beat]] = field(default_factory=dict)  # appended beats per class

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunBundle:
    config: ExperimentConfig
    results: dict[str, CaseResult]
    test_digest: str
    templates: dict[str, Template]
    train: list[Beat]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())


def _clean(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- the experiment ----------------------------------------------------------

class Experiment:
    """Shared state for one run: data split, templates, GAN models and generation pools."""

    def __init__(self, config: ExperimentConfig, out: str | Path | None = None,
                 data: tuple[list[Beat], list[Beat]] | None = None):
        self.config = config
        self.out = Path(out if out is not None else config.out)
        self.train, self.test = data if data is not None else make_split(load_beats(config), config)
        if not self.test:
            raise ValueError("empty test set")
        self.target = resolve_target(config, self.train)
        self.deficit = deficits(self.train, config.classes, self.target)
        self.templates = build_templates(self.train, config)
        self.thresholds = thresholds(self.train, self.templates, config)
        self._pools: dict[str, dict[str, list[Beat]] | BaseException] = {}
        self._screen_stats: dict[str, dict] = {}

    def pool_size(self, label: str) -> int:
        return int(math.ceil(self.config.pool_factor * self.deficit[label]))

    def needy(self) -> list[str]:
        return [c for c in self.config.classes if self.deficit[c] > 0]

    # GAN stages are cached so Cases I/II (and III/IV) share one trained model and one pool
    def pool(self, kind: str) -> dict[str, list[Beat]]:
        cached = self._pools.get(kind)
        if isinstance(cached, BaseException):
            raise cached
        if cached is not None:
            return cached
        try:
            pool = self._conditional_pool() if kind == "conditional" else self._unconditional_pool()
        except StageError as exc:
            self._pools[kind] = exc
            raise
        self._pools[kind] = pool
        return pool

    def _conditional_pool(self) -> dict[str, list[Beat]]:
        cfg = self.config
        gcfg = dataclasses.replace(cfg.gan_conditional, seed=derive_seed(cfg.seed, "gan", "conditional"),
                                   checkpoint_dir=str(self.out / "gan" / "conditional"))
        try:
            model = gan.new_model(True, gcfg, classes=cfg.classes)
            save_gan_meta(model, gcfg.checkpoint_dir)
            gan.train(model, self.train, gcfg)
        except Exception as exc:
            raise StageError("train-gan (conditional)", exc) from exc
        try:
            return {c: gan.generate(model.generator, self.pool_size(c), c,
                                    seed=derive_seed(cfg.seed, "generate", "conditional", c))
                    for c in self.needy()}
        except Exception as exc:
            raise StageError("generate (conditional)", exc) from exc

    def _unconditional_pool(self) -> dict[str, list[Beat]]:
        cfg = self.config
        pool = {}
        for c in self.needy():
            gcfg = dataclasses.replace(cfg.gan_unconditional, seed=derive_seed(cfg.seed, "gan", "unconditional", c),
                                       checkpoint_dir=str(self.out / "gan" / "unconditional" / c))
            real = [b for b in self.train if b.label == c]
            try:
                model = gan.new_model(False, gcfg, classes=cfg.classes, label=c)
                save_gan_meta(model, gcfg.checkpoint_dir)
                gan.train(model, real, gcfg)
            except Exception as exc:
                raise StageError(f"train-gan (unconditional {c})", exc) from exc
            try:
                pool[c] = gan.generate(model.generator, self.pool_size(c),
                                       seed=derive_seed(cfg.seed, "generate", "unconditional", c))
            except Exception as exc:
                raise StageError(f"generate (unconditional {c})", exc) from exc
        return pool

    def screened(self, kind: str) -> dict[str, list[Beat]]:
        pool = self.pool(kind)
        out, stats = {}, {}
        try:
            for c, beats in pool.items():
                res = screen(beats, self.templates[c], self.thresholds[c])
                out[c] = res.kept
                stats[c] = {"pool": len(beats), "kept": len(res.kept), "threshold": self.thresholds[c],
                            "mean_kept_distance": float(res.distances[res.kept_mask].mean()) if res.kept else None}
        except Exception as exc:
            raise StageError("screen", exc) from exc
        self._screen_stats[kind] = stats
        return out

    def synthetic_for(self, case: str) -> dict[str, list[Beat]]:
        if case == "reference":
            return {}
        kind = "conditional" if case in CONDITIONAL_CASES else "unconditional"
        return self.screened(kind) if case in SCREENED_CASES else self.pool(kind)

    def run_case(self, case: str) -> CaseResult:
        cfg = self.config
        result = CaseResult(case)
        try:
            if case == "reference":
                train_set = list(self.train)
            else:
                try:
                    train_set = balance(self.train, self.synthetic_for(case), self.target, cfg.classes)
                except BalanceError as exc:
                    raise StageError("balance", exc) from exc
            n_real = len(self.train)
            appended = train_set[n_real:]
            for b in appended:
                result.synthetic.setdefault(b.label, []).append(b)
            ccfg = dataclasses.replace(cfg.classifier, classes=cfg.classes, seed=derive_seed(cfg.seed, "clf"),
                                       checkpoint_dir=str(self.out / CASE_DIRS[case] / "classifier"))
            try:
                model = train_classifier(train_set, ccfg)
                save_clf_meta(model, ccfg.checkpoint_dir)
            except Exception as exc:
                raise StageError("train-clf", exc) from exc
            try:
                result.matrix, result.curves, result.report = evaluate_model(model, self.test)
            except Exception as exc:
                raise StageError("eval", exc) from exc
            result.report.update({
                "case": case,
                "title": CASE_TITLES[case],
                "seed": cfg.seed,
                "balance_target": self.target,
                "test_set_sha256": digest_beats(self.test),
                "train_composition": {c: {"real": sum(b.label == c for b in self.train),
                                          "synthetic": len(result.synthetic.get(c, []))} for c in cfg.classes},
                "final_train_accuracy": model.history[-1]["train_accuracy"] if model.history else None,
            })
            if case in SCREENED_CASES:
                kind = "conditional" if case in CONDITIONAL_CASES else "unconditional"
                result.report["screening"] = self._screen_stats.get(kind, {})
        except StageError as exc:
            log.error("case %s failed at %s", case, exc)
            result.error = {"case": case, "stage": exc.stage, "type": type(exc.cause).__name__,
                            "message": str(exc.cause)}
        return result


def evaluate_model(model: Classifier, test: Sequence[Beat]):
    probs = predict(model, test)
    y_true = [b.label for b in test]
    y_pred = [model.classes[k] for k in np.argmax(probs, axis=1)]
    matrix = confusion(y_true, y_pred, model.classes)
    curves = pr_curves(y_true, probs, model.classes)
    return matrix, curves, report_dict(matrix, curves)


def save_gan_meta(model: gan.GanModel, directory: str) -> None:
    spec = model.generator.spec
    meta = {"conditional": spec.conditional, "classes": list(spec.classes), "label": spec.label,
            "width": spec.width}
    Path(directory).mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(Path(directory) / "model.json", to_json(meta).encode())


def load_gan(directory: str | Path) -> gan.GanModel:
    meta = json.loads((Path(directory) / "model.json").read_text())
    cfg = gan.GanTrainConfig(width=meta["width"])
    model = gan.new_model(meta["conditional"], cfg, classes=meta["classes"], label=meta["label"])
    return gan.restore(model, directory)


def save_clf_meta(model: Classifier, directory: str | None) -> None:
    if not directory:
        return
    spec = model.net.spec
    meta = {"classes": list(model.classes), "desk_scale": spec.desk_scale,
            "stages": [list(s) for s in spec.plan]}
    Path(directory).mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(Path(directory) / "model.json", to_json(meta).encode())


def load_classifier(directory: str | Path) -> Classifier:
    from .clf import build_resnet
    from .engine.checkpoint import load as load_checkpoint

    meta = json.loads((Path(directory) / "model.json").read_text())
    spec = ResNetSpec(n_classes=len(meta["classes"]), desk_scale=meta["desk_scale"],
                      stages=tuple(tuple(s) for s in meta["stages"]))
    net = build_resnet(spec)
    net.load_state_dict(load_checkpoint(Path(directory) / "classifier.ckpt"))
    net.eval()
    return Classifier(net, tuple(meta["classes"]))


def run(config: ExperimentConfig, cases: Iterable[str] = CASES, out: str | Path | None = None,
        emit: bool = True) -> RunBundle:
    """Run the requested cases (reference is always evaluated first when requested) and emit reports."""
    wanted = [parse_case(c) for c in cases]
    order = [c for c in CASES if c in wanted]
    exp = Experiment(config, out)
    results = {c: exp.run_case(c) for c in order}
    bundle = RunBundle(config, results, digest_beats(exp.test), exp.templates, exp.train)
    if emit:
        emit_reports(bundle, exp.out)
    return bundle


# -- reports -----------------------------------------------------------------

def net_improvement_csv(results: dict[str, CaseResult], minor: Sequence[str]) -> str | None:
    ref = results.get("reference")
    cols = [c for c in CASES[1:] if c in results and results[c].ok]
    if ref is None or not ref.ok or not cols:
        return None
    values = {c: net_improvement(results[c].matrix, ref.matrix, minor) for c in cols}
    lines = ["," + ",".join(CASE_TITLES[c] for c in cols)]
    lines.append("Total," + ",".join(f"{values[c][0]:.2f}" for c in cols))
    lines.append("Minor-Classes," + ",".join(f"{values[c][1]:.2f}" for c in cols))
    return "\n".join(lines) + "\n"


def emit_reports(bundle: RunBundle, outdir: str | Path) -> list[Path]:
    """Write the fixed report layout; every file goes through write-temp-then-rename."""
    outdir = Path(outdir)
    written: list[Path] = []

    def put(rel: str, text: str) -> None:
        path = outdir / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            atomic_write_bytes(path, text.encode())
        except OSError as exc:
            raise OSError(f"cannot write report file {path}: {exc}") from exc
        written.append(path)

    for case, res in bundle.results.items():
        d = CASE_DIRS[case]
        if not res.ok:
            put(f"{d}/error.json", to_json(res.error))
            continue
        put(f"{d}/report.json", to_json(res.report))
        put(f"{d}/confusion.csv", res.matrix.to_csv(percent=True))
        put(f"{d}/pr_curves.svg", pr_curves_svg(res.curves, CASE_TITLES[case]))
    ni = net_improvement_csv(bundle.results, bundle.config.minor_classes)
    if ni is not None:
        put("summary/net_improvement.csv", ni)
    sets = {CASE_TITLES[c]: r.synthetic for c, r in bundle.results.items() if c != "reference" and r.ok}
    if sets:
        real: dict[str, list[Beat]] = {}
        for b in bundle.train:
            real.setdefault(b.label, []).append(b)
        sets["Real"] = real
        classes = [c for c in bundle.config.classes if c != "N"]
        table = quality_report(sets, bundle.templates, classes)
        put("summary/quality.csv", quality_csv(table))
    return written
