"""End-to-end and error-path tests for the command-line pipeline.

The happy path runs once per module (extract -> split -> augment -> train ->
evaluate -> bench -> bias -> audit) against the generated fixture tree;
individual tests then assert on the artifacts.
"""
import hashlib
import json
import subprocess
import sys
from pathlib import Path
from types import SimpleNamespace

import pytest

from namecountry import fixtures
from namecountry.cli import main
from namecountry.core import NameRecord, write_records


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_chain")
    fx = root / "fx"
    out = root / "out"
    fixtures.write_fixture_tree(fx)

    def run(*args):
        return main(["--config", str(fx / "pipeline.json"),
                     "--out-dir", str(out), *args])

    assert run("extract", "--input", str(fx / "affiliations.jsonl"),
               "--taxonomy", str(fx / "taxonomy_fixture4.txt"),
               "--aliases", str(fx / "aliases_fixture.tsv")) == 0
    assert run("split", "--input", str(out / "corpus.jsonl")) == 0
    assert run("augment") == 0
    assert run("train", "--taxonomy", str(fx / "taxonomy_fixture4.txt")) == 0

    names = [json.loads(l)["name"] for l in
             (out / "splits" / "train_aug.jsonl").read_text().splitlines()]
    (out / "bench_names.txt").write_text("\n".join(names) + "\n",
                                         encoding="utf-8")

    assert run("evaluate", "--model", str(out / "model.bin"),
               "--input", str(out / "splits" / "test_filter_aug.jsonl"),
               "--train-split", str(out / "splits" / "train_aug.jsonl"),
               "--bucket-threshold", "200",
               "--table", str(out / "eval_table.txt")) == 0
    assert run("evaluate", "--model", str(out / "model.bin"),
               "--input", str(out / "splits" / "test_gold.jsonl"),
               "--mapping", str(fx / "mapping_fixture4_to_fixture3.tsv"),
               "--target-taxonomy", str(fx / "taxonomy_fixture3.txt"),
               "--output", str(out / "eval_gold.json")) == 0
    assert run("bench", "--model", str(out / "model.bin"),
               "--names", str(out / "bench_names.txt"),
               "--table", str(out / "bench_table.txt")) == 0
    assert run("bias", "--model", str(out / "model.bin"),
               "--records", str(fx / "bias_records.jsonl"),
               "--mapping", str(fx / "mapping_fixture4_to_fixture2.tsv"),
               "--target-taxonomy", str(fx / "taxonomy_fixture2.txt")) == 0
    assert run("audit") == 0
    return SimpleNamespace(fx=fx, out=out, run=run)


def test_extract_artifacts(chain):
    stats = json.loads((chain.out / "extract_stats.json").read_text())
    assert stats["raw"] == 600
    assert stats["retained"] == 600
    corpus = (chain.out / "corpus.jsonl").read_text().splitlines()
    assert len(corpus) == 600


def test_split_artifacts(chain):
    splits_dir = chain.out / "splits"
    manifest = json.loads((splits_dir / "manifest.json").read_text())
    assert manifest["audit_clean"] is True
    sizes = manifest["sizes"]
    assert sizes["train_oag"] == 480
    assert sizes["val_oag"] == 60
    assert sizes["test_oag"] == 60
    assert 0 < sizes["test_filter"] <= 60


def test_augment_artifacts(chain):
    manifest = json.loads(
        (chain.out / "splits" / "manifest.json").read_text())
    sizes = manifest["sizes"]
    # 4 countries x budget 120 split 3:1:1
    assert sizes["train_aug"] == sizes["train_oag"] + 288
    assert sizes["val_aug"] == sizes["val_oag"] + 96
    assert sizes["test_filter_aug"] == sizes["test_filter"] + 96
    assert sizes["test_gold"] == 80
    gold = [json.loads(l) for l in
            (chain.out / "splits" / "test_gold.jsonl").read_text().splitlines()]
    assert all(r["provenance"] == "synthetic" for r in gold)


def test_train_artifacts(chain):
    log_lines = (chain.out / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 3  # max_epochs in the fixture config
    entry = json.loads(log_lines[0])
    assert set(entry) == {"epoch", "train_loss", "val_accuracy",
                          "val_macro_f1", "lr"}
    assert (chain.out / "model.bin").stat().st_size > 0


def test_evaluate_artifacts(chain):
    report = json.loads((chain.out / "eval_report.json").read_text())
    assert report["taxonomy"] == "taxonomy_fixture4"
    assert 0 < report["accuracy"] <= 1
    assert report["buckets"]["threshold"] == 200
    assert report["buckets"]["tail_labels"] == ["cascadia", "dorvania"]
    assert report["buckets"]["head_labels"] == ["arcadia", "borelia"]
    table = (chain.out / "eval_table.txt").read_text()
    assert table.splitlines()[0].split() == ["Model", "Taxonomy", "Acc",
                                             "W-F1", "M-F1"]

    mapped = json.loads((chain.out / "eval_gold.json").read_text())
    assert mapped["taxonomy"] == "taxonomy_fixture3"
    assert set(mapped["per_class"]) == {"group-east", "group-south",
                                        "group-west"}


def test_bench_artifacts(chain):
    report = json.loads((chain.out / "bench_report.json").read_text())
    assert [row["batch_size"] for row in report["rows"]] == [1, 16, 64]
    for row in report["rows"]:
        product = (row["throughput_names_per_second"]
                   * row["latency_ms_per_name"])
        assert abs(product - 1000.0) < 1e-6


def test_bias_artifacts(chain):
    report = json.loads((chain.out / "bias_report.json").read_text())
    assert report["n_records"] == 40
    assert report["n_incorrect"] == 16
    assert set(report["groups"]) == {"north", "south"}
    for stats in report["groups"].values():
        assert stats["ci_lower"] <= stats["accuracy"] <= stats["ci_upper"]


def test_audit_artifacts(chain):
    report = json.loads((chain.out / "audit_report.json").read_text())
    assert report["clean"] is True
    assert all(v == [] for v in report["violations"].values())


def test_manifests_record_real_digests(chain):
    manifests_dir = chain.out / "manifests"
    names = {p.name for p in manifests_dir.iterdir()}
    assert {"extract.json", "split.json", "augment.json", "train.json",
            "bench.json", "bias.json", "audit.json"} <= names
    manifest = json.loads((manifests_dir / "train.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 7  # from the fixture config
    for key, digest in manifest["outputs"].items():
        assert not key.startswith("/")  # relative keys only
        actual = hashlib.sha256(
            (chain.out / key).read_bytes()).hexdigest()
        assert digest == actual


def test_missing_input_exits_2_without_partial_output(chain, tmp_path, capsys):
    out = tmp_path / "fresh"
    code = main(["--out-dir", str(out), "split",
                 "--input", str(tmp_path / "nope.jsonl")])
    assert code == 2
    assert "error:" in capsys.readouterr().err
    assert not (out / "splits").exists()


def test_invalid_config_exits_2(chain, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken", encoding="utf-8")
    code = main(["--config", str(bad), "--out-dir", str(tmp_path), "audit"])
    assert code == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_unknown_oracle_kind_exits_2(chain, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"oracle": {"kind": "psychic"}}),
                      encoding="utf-8")
    corpus = tmp_path / "corpus.jsonl"
    write_records(corpus, [NameRecord(f"Name{i} Alfa", "alfa")
                           for i in range(10)])
    code = main(["--config", str(config), "--out-dir", str(tmp_path),
                 "split", "--input", str(corpus)])
    assert code == 2
    assert "psychic" in capsys.readouterr().err


def test_split_no_filter_skips_test_filter(chain, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    write_records(corpus, [NameRecord(f"Name{i} Alfa", "alfa")
                           for i in range(20)])
    code = main(["--out-dir", str(tmp_path), "split",
                 "--input", str(corpus), "--no-filter"])
    assert code == 0
    assert not (tmp_path / "splits" / "test_filter.jsonl").exists()
    assert (tmp_path / "splits" / "train_oag.jsonl").exists()


def test_audit_exits_1_on_leaky_splits(chain, tmp_path, capsys):
    leaky = tmp_path / "splits"
    leaky.mkdir()
    write_records(leaky / "train_oag.jsonl", [NameRecord("Shared Name", "alfa")])
    write_records(leaky / "val_oag.jsonl", [NameRecord("shared  name", "alfa")])
    code = main(["--out-dir", str(tmp_path), "audit",
                 "--splits-dir", str(leaky)])
    assert code == 1
    assert "shared name" in capsys.readouterr().err
    report = json.loads((tmp_path / "audit_report.json").read_text())
    assert report["clean"] is False
    assert report["violations"]["train_oag_vs_val_oag"] == ["shared name"]


def test_audit_missing_dir_exits_2(chain, tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "audit",
                 "--splits-dir", str(tmp_path / "absent")])
    assert code == 2
    capsys.readouterr()


def test_evaluate_unknown_gold_label_exits_2(chain, tmp_path, capsys):
    bad = tmp_path / "bad_eval.jsonl"
    write_records(bad, [NameRecord("Aba Dab", "atlantis")])
    code = chain.run("evaluate", "--model", str(chain.out / "model.bin"),
                     "--input", str(bad),
                     "--output", str(tmp_path / "report.json"))
    assert code == 2
    assert "atlantis" in capsys.readouterr().err
    assert not (tmp_path / "report.json").exists()


def test_evaluate_incomplete_mapping_exits_2(chain, tmp_path, capsys):
    partial = tmp_path / "partial.tsv"
    partial.write_text("arcadia\tgroup-west\n", encoding="utf-8")
    code = chain.run("evaluate", "--model", str(chain.out / "model.bin"),
                     "--input", str(chain.out / "splits" / "test_gold.jsonl"),
                     "--mapping", str(partial),
                     "--target-taxonomy",
                     str(chain.fx / "taxonomy_fixture3.txt"),
                     "--output", str(tmp_path / "report.json"))
    assert code == 2
    assert "borelia" in capsys.readouterr().err  # first unmapped label


def test_evaluate_mapping_requires_target_taxonomy(chain, tmp_path, capsys):
    code = chain.run("evaluate", "--model", str(chain.out / "model.bin"),
                     "--input", str(chain.out / "splits" / "test_gold.jsonl"),
                     "--mapping",
                     str(chain.fx / "mapping_fixture4_to_fixture3.tsv"),
                     "--output", str(tmp_path / "report.json"))
    assert code == 2
    assert "target-taxonomy" in capsys.readouterr().err


def test_bench_insufficient_names_exits_2(chain, tmp_path, capsys):
    few = tmp_path / "few.txt"
    few.write_text("Aba Dab\nLad Mab\n", encoding="utf-8")
    code = chain.run("bench", "--model", str(chain.out / "model.bin"),
                     "--names", str(few),
                     "--output", str(tmp_path / "bench.json"))
    assert code == 2
    assert "need at least" in capsys.readouterr().err


def test_seed_flag_overrides_config(chain, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    write_records(corpus, [NameRecord(f"Name{i} Alfa", "alfa")
                           for i in range(30)])
    for seed, out_name in ((3, "a"), (3, "b"), (4, "c")):
        main(["--out-dir", str(tmp_path / out_name), "--seed", str(seed),
              "split", "--input", str(corpus), "--no-filter"])
    read = lambda name: (tmp_path / name / "splits"
                         / "train_oag.jsonl").read_text()
    assert read("a") == read("b")
    assert read("a") != read("c")
    manifest = json.loads(
        (tmp_path / "a" / "manifests" / "split.json").read_text())
    assert manifest["seed"] == 3


def test_console_script_help():
    result = subprocess.run([sys.executable, "-m", "namecountry.cli",
                             "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    for command in ("extract", "split", "augment", "train", "evaluate",
                    "bench", "bias", "audit"):
        assert command in result.stdout
