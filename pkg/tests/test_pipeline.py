import json

import numpy as np
import pytest

from ecgaug.beat import Beat
from ecgaug.cli import main
from ecgaug.config import dump_config, from_dict, load_config
from ecgaug.pipeline import (
    BalanceError, CaseResult, balance, digest_beats, net_improvement_csv, parse_case, run,
)
from ecgaug.evaluate import confusion
from ecgaug.synthetic import make_dataset

TINY = {
    "data": {"source": "synthetic", "synthetic_per_class": {"N": 60, "f": 24, "j": 20}},
    "classes": ["N", "f", "j"],
    "balance_target": 27,
    "gan_conditional": {"epochs": 2, "width": 0.0625, "batch_size": 4, "n_critic": 2},
    "gan_unconditional": {"epochs": 2, "width": 0.0625, "batch_size": 4, "n_critic": 2},
    "screen": {"default": 1e6, "per_class": {}},  # 2-epoch GANs are far from any template
    "pool_factor": 3.0,
    "classifier": {"epochs": 2, "batch_size": 16},
    "seed": 5,
}


def beats(label, n, value=0.0, provenance="real"):
    return [Beat(np.full(256, value + i * 1e-3), label, provenance) for i in range(n)]


def test_balance_appends_in_generation_order():
    train = beats("N", 5) + beats("f", 2)
    pool = {"f": beats("f", 6, 0.5, "generated")}
    out = balance(train, pool, 5, ["N", "f"])
    assert out[:7] == train
    assert [b.samples[0] for b in out[7:]] == [b.samples[0] for b in pool["f"][:3]]
    assert sum(b.label == "f" for b in out) == 5


def test_balance_example_counts():
    train = beats("f", 441)
    out = balance(train, {"f": beats("f", 20_000, 0.2, "generated")}, 10_000, ["f"])
    assert len(out) == 10_000 and sum(b.provenance == "generated" for b in out) == 9559


def test_balance_at_target_and_shortfall():
    train = beats("N", 4)
    assert balance(train, {}, 4, ["N"]) == train
    assert balance(train, {}, 3, ["N"]) == train  # larger classes are never trimmed
    with pytest.raises(BalanceError, match="'j'.*deficit 100"):
        balance(train, {"j": beats("j", 10)}, 100, ["j"])


def test_parse_case():
    assert [parse_case(c) for c in ("reference", "ref", "I", "ii", "case_IV", "Case III")] == \
        ["reference", "reference", "I", "II", "IV", "III"]
    with pytest.raises(ValueError):
        parse_case("V")


def test_net_improvement_csv_layout():
    ref = CaseResult("reference", matrix=confusion(list("NNfj"), list("NNNN"), "Nfj"))
    better = confusion(list("NNfj"), list("NNfj"), "Nfj")
    results = {"reference": ref, **{c: CaseResult(c, matrix=better) for c in ("I", "II", "III", "IV")}}
    lines = net_improvement_csv(results, ("f", "j")).splitlines()
    assert lines[0] == ",Case I,Case II,Case III,Case IV"
    assert lines[1] == "Total,200.00,200.00,200.00,200.00"
    assert lines[2].startswith("Minor-Classes,200.00")
    assert net_improvement_csv({"reference": ref}, ("f", "j")) is None


def test_config_roundtrip(tmp_path):
    cfg = from_dict(TINY)
    assert cfg.classifier.classes == ("N", "f", "j")
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again == cfg
    with pytest.raises(ValueError, match="unknown key"):
        from_dict({"gan_conditional": {"epoch": 3}})
    with pytest.raises(ValueError):
        from_dict({"classes": ["N"]})


def test_synthetic_dataset_deterministic_and_valid():
    a = make_dataset({"N": 5, "j": 3}, seed=1)
    b = make_dataset({"N": 5, "j": 3}, seed=1)
    assert [x.label for x in a] == list("NNNNNjjj")
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert all(np.abs(x.samples).max() == 1.0 for x in a)
    with pytest.raises(ValueError):
        make_dataset({"V": 1})


def test_reference_only_run_layout_and_determinism(tmp_path):
    cfg = from_dict(TINY)
    bundles = [run(cfg, ["reference"], tmp_path / k) for k in ("a", "b")]
    assert bundles[0].ok
    files = sorted(p.relative_to(tmp_path / "a").as_posix() for p in (tmp_path / "a").rglob("*") if p.is_file())
    reports = [f for f in files if not f.startswith("reference/classifier/")]
    assert reports == ["reference/confusion.csv", "reference/pr_curves.svg", "reference/report.json"]
    ja = (tmp_path / "a" / "reference" / "report.json").read_bytes()
    assert ja == (tmp_path / "b" / "reference" / "report.json").read_bytes()
    report = json.loads(ja)
    assert report["train_composition"]["f"]["synthetic"] == 0
    assert report["confusion_counts"] and report["classes"] == ["N", "f", "j"]


@pytest.fixture(scope="module")
def full_tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    return out, run(from_dict(TINY), ["reference", "I", "II", "III", "IV"], out)


def test_full_tiny_run(full_tiny):
    out, bundle = full_tiny
    assert bundle.ok, {c: r.error for c, r in bundle.results.items()}
    digests = {json.loads((out / d / "report.json").read_text())["test_set_sha256"]
               for d in ("reference", "case_I", "case_II", "case_III", "case_IV")}
    assert digests == {bundle.test_digest}
    lines = (out / "summary" / "net_improvement.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].count(",") == 4
    quality = (out / "summary" / "quality.csv").read_text().splitlines()
    assert quality[0] == "class,Case I,Case II,Case III,Case IV,Real"
    for case in ("I", "II", "III", "IV"):
        comp = bundle.results[case].report["train_composition"]
        assert all(v["real"] + v["synthetic"] >= 27 for v in comp.values())
        assert comp["N"]["real"] == bundle.results["reference"].report["train_composition"]["N"]["real"]


def test_screening_only_discards(full_tiny):
    _, bundle = full_tiny
    for case in ("II", "IV"):
        for c, s in bundle.results[case].report["screening"].items():
            assert s["kept"] <= s["pool"]
            assert s["mean_kept_distance"] is None or s["mean_kept_distance"] <= s["threshold"]


def test_failed_stage_marks_case_and_exit_code(tmp_path, capsys):
    cfg = dict(TINY, pool_factor=1.0, screen={"default": 1e-9, "per_class": {}})
    config = tmp_path / "c.yaml"
    config.write_text(dump_config(from_dict(cfg)))
    code = main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--case", "reference",
                 "--case", "II"])
    assert code == 1
    err = json.loads((tmp_path / "o" / "case_II" / "error.json").read_text())
    assert err["stage"] == "balance" and err["type"] == "BalanceError"
    assert (tmp_path / "o" / "reference" / "report.json").exists()
    assert "FAILED" in capsys.readouterr().out


def test_cli_stage_verbs(tmp_path):
    config = tmp_path / "c.yaml"
    config.write_text(dump_config(from_dict(TINY)))
    out = str(tmp_path / "o")
    common = ["--config", str(config), "--out", out]
    assert main(["ingest", *common]) == 0
    assert main(["segment", *common]) == 0
    for verb in ("train-gan", "generate", "screen", "train-clf"):
        assert main([verb, *common, "--case", "reference", "--case", "II"]) == 0, verb
    assert main(["eval", *common, "--case", "reference", "--case", "II"]) == 0
    assert (tmp_path / "o" / "summary" / "net_improvement.csv").read_text().startswith(",Case II")
    manifest = json.loads((tmp_path / "o" / "data" / "test.csv.json").read_text())
    report = json.loads((tmp_path / "o" / "case_II" / "report.json").read_text())
    assert manifest["sha256"] == report["test_set_sha256"]


def test_cli_errors(tmp_path, capsys):
    assert main(["train-clf", "--out", str(tmp_path)]) == 2
    assert "run `ecgaug segment` first" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_digest_depends_on_content():
    assert digest_beats(beats("N", 2)) != digest_beats(beats("N", 3))
