"""Command-line entry point.

Stage verbs exchange files under ``--out``:

    data/inventory.json                      ingest
    data/beats.csv, data/train.csv, data/test.csv (+ .json manifests)   segment
    gan/conditional/, gan/unconditional/<class>/                         train-gan
    pools/<kind>.csv                                                     generate
    pools/<kind>_screened.csv, pools/<kind>_screening.csv                screen
    <case>/classifier/                                                   train-clf
    <case>/report.json, confusion.csv, pr_curves.svg, summary/*.csv      eval / run
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections import Counter
from pathlib import Path

from .beat import parse_csv_beats, write_beat_set
from .config import ExperimentConfig, dump_config, load_config
from .engine.checkpoint import atomic_write_bytes
from .engine.optim import derive_seed
from .ingest import discover_records, load_record
from .pipeline import (
    CASE_DIRS, CASES, CONDITIONAL_CASES, SCREENED_CASES, CaseResult, Experiment, RunBundle, StageError, balance,
    digest_beats, emit_reports, evaluate_model, load_beats, load_classifier, load_gan, make_split, parse_case, run,
    save_clf_meta, save_gan_meta, to_json,
)
from . import gan
from .clf import train_classifier
from .screen import screen, screening_report_csv

log = logging.getLogger("ecgaug")

VERBS = ("ingest", "segment", "train-gan", "generate", "screen", "train-clf", "eval", "run")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecgaug", description="ECG beat augmentation experiments")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--case", action="append", help="reference, I, II, III or IV; repeatable (default: all)")
    p.add_argument("--data-dir", help="WFDB record directory, or a beats CSV file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out = args.out
    if args.data_dir:
        source = "csv" if args.data_dir.endswith(".csv") else "wfdb"
        config.data = dataclasses.replace(config.data, source=source, path=args.data_dir)
    return config


def _cases(args) -> list[str]:
    return [parse_case(c) for c in (args.case or CASES)]


def _kinds(cases) -> list[str]:
    kinds = []
    if any(c in CONDITIONAL_CASES for c in cases):
        kinds.append("conditional")
    if any(c in ("III", "IV") for c in cases):
        kinds.append("unconditional")
    return kinds


def _read_split(out: Path):
    train_path, test_path = out / "data" / "train.csv", out / "data" / "test.csv"
    if not train_path.exists() or not test_path.exists():
        raise FileNotFoundError(f"{train_path} / {test_path} missing; run `ecgaug segment` first")
    return parse_csv_beats(train_path.read_text()), parse_csv_beats(test_path.read_text())


def _experiment(config: ExperimentConfig) -> Experiment:
    out = Path(config.out)
    return Experiment(config, out, _read_split(out))


def cmd_ingest(config: ExperimentConfig) -> int:
    out = Path(config.out) / "data"
    out.mkdir(parents=True, exist_ok=True)
    d = config.data
    if d.source == "wfdb":
        if not d.path:
            raise ValueError("ingest needs --data-dir (WFDB directory)")
        records = []
        for rid in discover_records(d.path):
            record, stream = load_record(d.path, rid)
            records.append({"record": rid, "sampling_rate": record.sampling_rate,
                            "n_signals": int(record.samples.shape[0]), "n_samples": int(record.samples.shape[1]),
                            "beat_symbols": dict(sorted(Counter(stream.symbols).items()))})
        inventory = {"source": "wfdb", "records": records}
    else:
        beats = load_beats(config)
        inventory = {"source": d.source, "n_beats": len(beats),
                     "class_counts": dict(sorted(Counter(b.label for b in beats).items()))}
    atomic_write_bytes(out / "inventory.json", to_json(inventory).encode())
    print(f"wrote {out / 'inventory.json'}")
    return 0


def cmd_segment(config: ExperimentConfig) -> int:
    out = Path(config.out) / "data"
    out.mkdir(parents=True, exist_ok=True)
    beats = load_beats(config)
    train, test = make_split(beats, config)
    write_beat_set(out / "beats.csv", beats, config.seed)
    write_beat_set(out / "train.csv", train, config.seed)
    write_beat_set(out / "test.csv", test, config.seed, {"sha256": digest_beats(test)})
    print(f"{len(beats)} beats -> {len(train)} train / {len(test)} test under {out}")
    return 0


def _train_gans(exp: Experiment, kind: str) -> None:
    cfg = exp.config
    if kind == "conditional":
        gcfg = dataclasses.replace(cfg.gan_conditional, seed=derive_seed(cfg.seed, "gan", "conditional"),
                                   checkpoint_dir=str(exp.out / "gan" / "conditional"))
        model = gan.new_model(True, gcfg, classes=cfg.classes)
        save_gan_meta(model, gcfg.checkpoint_dir)
        gan.train(model, exp.train, gcfg)
        return
    for c in exp.needy():
        gcfg = dataclasses.replace(cfg.gan_unconditional, seed=derive_seed(cfg.seed, "gan", "unconditional", c),
                                   checkpoint_dir=str(exp.out / "gan" / "unconditional" / c))
        model = gan.new_model(False, gcfg, classes=cfg.classes, label=c)
        save_gan_meta(model, gcfg.checkpoint_dir)
        gan.train(model, [b for b in exp.train if b.label == c], gcfg)


def cmd_train_gan(config: ExperimentConfig, cases) -> int:
    exp = _experiment(config)
    for kind in _kinds(cases):
        _train_gans(exp, kind)
        print(f"trained {kind} GAN(s) under {exp.out / 'gan' / kind}")
    return 0


def cmd_generate(config: ExperimentConfig, cases) -> int:
    exp = _experiment(config)
    pools = exp.out / "pools"
    pools.mkdir(parents=True, exist_ok=True)
    for kind in _kinds(cases):
        beats = []
        for c in exp.needy():
            seed = derive_seed(config.seed, "generate", kind, c)
            if kind == "conditional":
                model = load_gan(exp.out / "gan" / "conditional")
                beats += gan.generate(model.generator, exp.pool_size(c), c, seed=seed)
            else:
                model = load_gan(exp.out / "gan" / "unconditional" / c)
                beats += gan.generate(model.generator, exp.pool_size(c), seed=seed)
        write_beat_set(pools / f"{kind}.csv", beats, config.seed)
        print(f"wrote {len(beats)} generated beats to {pools / f'{kind}.csv'}")
    return 0


def _read_pool(out: Path, kind: str, screened: bool = False) -> dict:
    path = out / "pools" / (f"{kind}_screened.csv" if screened else f"{kind}.csv")
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run `ecgaug {'screen' if screened else 'generate'}` first")
    pool: dict = {}
    for b in parse_csv_beats(path.read_text(), "screened" if screened else "generated"):
        pool.setdefault(b.label, []).append(b)
    return pool


def cmd_screen(config: ExperimentConfig, cases) -> int:
    exp = _experiment(config)
    for kind in _kinds([c for c in cases if c in SCREENED_CASES]):
        pool = _read_pool(exp.out, kind)
        kept, report = [], ""
        for c, beats in pool.items():
            res = screen(beats, exp.templates[c], exp.thresholds[c])
            kept += res.kept
            text = screening_report_csv(beats, res, [f"{c}-{i}" for i in range(len(beats))])
            report += text if not report else text.split("\n", 1)[1]
        write_beat_set(exp.out / "pools" / f"{kind}_screened.csv", kept, config.seed,
                       {"thresholds": exp.thresholds})
        atomic_write_bytes(exp.out / "pools" / f"{kind}_screening.csv", report.encode())
        print(f"{kind}: kept {len(kept)} of {sum(len(v) for v in pool.values())} generated beats")
    return 0


def _case_pool(exp: Experiment, case: str) -> dict:
    if case == "reference":
        return {}
    kind = "conditional" if case in CONDITIONAL_CASES else "unconditional"
    return _read_pool(exp.out, kind, screened=case in SCREENED_CASES)


def cmd_train_clf(config: ExperimentConfig, cases) -> int:
    exp = _experiment(config)
    for case in cases:
        train_set = exp.train if case == "reference" else balance(exp.train, _case_pool(exp, case), exp.target,
                                                                  config.classes)
        ccfg = dataclasses.replace(config.classifier, classes=config.classes, seed=derive_seed(config.seed, "clf"),
                                   checkpoint_dir=str(exp.out / CASE_DIRS[case] / "classifier"))
        save_clf_meta(train_classifier(train_set, ccfg), ccfg.checkpoint_dir)
        print(f"{case}: classifier trained on {len(train_set)} beats")
    return 0


def cmd_eval(config: ExperimentConfig, cases) -> int:
    exp = _experiment(config)
    results = {}
    for case in [c for c in CASES if c in cases]:
        res = CaseResult(case)
        try:
            model = load_classifier(exp.out / CASE_DIRS[case] / "classifier")
            res.matrix, res.curves, res.report = evaluate_model(model, exp.test)
            res.report.update({"case": case, "test_set_sha256": digest_beats(exp.test), "seed": config.seed})
            if case != "reference":
                appended = balance(exp.train, _case_pool(exp, case), exp.target, config.classes)[len(exp.train):]
                for b in appended:
                    res.synthetic.setdefault(b.label, []).append(b)
        except Exception as exc:  # one case failing must not stop the others
            res.error = {"case": case, "stage": "eval", "type": type(exc).__name__, "message": str(exc)}
        results[case] = res
    bundle = RunBundle(config, results, digest_beats(exp.test), exp.templates, exp.train)
    emit_reports(bundle, exp.out)
    return _summarize(bundle)


def _summarize(bundle: RunBundle) -> int:
    for case, res in bundle.results.items():
        if res.ok:
            print(f"{case}: accuracy {res.report['accuracy']:.4f}")
        else:
            print(f"{case}: FAILED at {res.error['stage']}: {res.error['type']}: {res.error['message']}")
    return 0 if bundle.ok else 1


def cmd_run(config: ExperimentConfig, cases) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "config.yaml", dump_config(config).encode())
    return _summarize(run(config, cases, out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        cases = _cases(args)
        verb = args.verb
        if verb == "ingest":
            return cmd_ingest(config)
        if verb == "segment":
            return cmd_segment(config)
        handler = {"train-gan": cmd_train_gan, "generate": cmd_generate, "screen": cmd_screen,
                   "train-clf": cmd_train_clf, "eval": cmd_eval, "run": cmd_run}[verb]
        return handler(config, cases)
    except (OSError, ValueError, StageError, FloatingPointError) as exc:
        print(f"ecgaug {args.verb}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
