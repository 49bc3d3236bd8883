"""Manifest execution, stage caching, comparison tables, and the CLI."""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from adaptembed.cli import main as cli_main
from adaptembed.manifest import Manifest
from adaptembed.pipeline import (
    compare,
    corpus_hash,
    load_model_npz,
    read_metrics_tsv,
    run,
    save_model_npz,
)
from adaptembed.synthetic import make_cluster_docs
from adaptembed.trainer import TrainConfig
from conftest import make_corpus, make_model


def _write_docs(path: Path, docs) -> Path:
    path.write_text("\n".join(" ".join(d) for d in docs) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpora")
    tgt = _write_docs(
        root / "target.txt",
        make_cluster_docs(n_clusters=6, words_per_cluster=8, n_docs=120,
                          doc_len=15, seed=0),
    )
    src = _write_docs(
        root / "source.txt",
        make_cluster_docs(n_clusters=6, words_per_cluster=8, n_docs=80,
                          doc_len=15, seed=1),
    )
    return tgt, src


@pytest.fixture(autouse=True)
def _isolated_cache(monkeypatch):
    monkeypatch.delenv("ADAPTEMBED_CACHE", raising=False)


def _manifest(corpora, out: Path, mode="tgt", **kw) -> Manifest:
    tgt, src = corpora
    base = dict(
        mode=mode,
        target=str(tgt),
        source=str(src) if mode != "tgt" else None,
        output=str(out),
        min_count=1,
        train=TrainConfig(dim=16, window=3, negatives=3, epochs=2),
    )
    base.update(kw)
    return Manifest(**base)


def _snapshot(out: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(out)): p.read_bytes()
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "stages.log"
    }


# ---------------------------------------------------------------------------
# run()


def test_run_tgt_produces_artifacts_and_reproduces_bytes(corpora, tmp_path):
    out = tmp_path / "out"
    m = _manifest(corpora, out)
    artifacts = run(m)
    for name in ("manifest", "vocab", "embeddings", "report", "report_figure"):
        assert artifacts[name].exists(), name
    first = _snapshot(out)
    # Wipe the cache so the second run actually retrains, then compare bytes.
    shutil.rmtree(out / "cache")
    (out / "stages.log").unlink()
    run(m)
    assert _snapshot(out) == first


def test_run_rerun_hits_cache(corpora, tmp_path):
    out = tmp_path / "out"
    m = _manifest(corpora, out)
    run(m)
    n_lines = len((out / "stages.log").read_text().splitlines())
    run(m)
    lines = (out / "stages.log").read_text().splitlines()[n_lines:]
    assert lines, "second run logged no stages"
    assert all("\tHIT\t" in line for line in lines)


def test_run_srcsel_empty_retention_equals_tgt(corpora, tmp_path):
    tgt_out = tmp_path / "tgt"
    run(_manifest(corpora, tgt_out))
    sel_out = tmp_path / "sel"
    # An unsatisfiable vote threshold empties the retained set.
    run(_manifest(corpora, sel_out, mode="srcsel", min_votes=10_000))
    assert (sel_out / "embeddings.txt").read_bytes() == (
        tgt_out / "embeddings.txt"
    ).read_bytes()
    assert (sel_out / "awpp.tsv").read_bytes() == (tgt_out / "awpp.tsv").read_bytes()


def test_run_srcsel_r_manifest_differs_only_in_mode(corpora, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run(_manifest(corpora, out_a, mode="srcsel"))
    run(_manifest(corpora, out_b, mode="srcsel-r"))
    lines_a = (out_a / "manifest.resolved").read_text().splitlines()
    lines_b = (out_b / "manifest.resolved").read_text().splitlines()
    diff = [
        (la, lb) for la, lb in zip(lines_a, lines_b) if la != lb
    ]
    # Only the mode and the output path differ; weighting is implied by mode.
    assert {la.split(" = ")[0] for la, _ in diff} == {"mode", "output"}


def test_run_src_mode_evaluates_with_model_vocabulary(corpora, tmp_path):
    out = tmp_path / "src"
    artifacts = run(_manifest(corpora, out, mode="src"))
    metrics = read_metrics_tsv(artifacts["report"])
    assert 0 < metrics["awpp"] < 1
    assert metrics["awpp_perplexity"] > 1


def test_run_reg_sense_writes_drift_report(corpora, tmp_path):
    out = tmp_path / "reg"
    m = _manifest(
        corpora, out, mode="reg-sense",
        train=TrainConfig(dim=16, window=3, negatives=3, epochs=2, reg_weight=1.0),
    )
    artifacts = run(m)
    assert artifacts["drift"].exists()
    assert artifacts["drift_figure"].exists()


def test_run_reg_mode_requires_reg_weight(corpora, tmp_path):
    m = _manifest(corpora, tmp_path / "bad", mode="reg-freq")
    with pytest.raises(ValueError, match="reg_weight"):
        run(m)


def test_cache_env_var_redirects_cache(corpora, tmp_path, monkeypatch):
    shared = tmp_path / "shared-cache"
    monkeypatch.setenv("ADAPTEMBED_CACHE", str(shared))
    out = tmp_path / "out"
    run(_manifest(corpora, out))
    assert shared.exists() and any(shared.glob("*.npz"))
    assert not (out / "cache").exists()


# ---------------------------------------------------------------------------
# model npz cache and corpus hashing


def test_model_npz_round_trip(tmp_path):
    model = make_model([f"w{i}" for i in range(6)], dim=4, seed=2)
    model.vocab_hash = "abc123"
    p = tmp_path / "m.npz"
    save_model_npz(model, p)
    loaded = load_model_npz(p)
    assert loaded.words == model.words
    assert loaded.vocab_hash == "abc123"
    np.testing.assert_array_equal(loaded.focus, model.focus)
    np.testing.assert_array_equal(loaded.context, model.context)


def test_model_npz_round_trip_without_context(tmp_path):
    model = make_model(["a", "b"], dim=3, seed=1)
    model.context = None
    p = tmp_path / "m.npz"
    save_model_npz(model, p)
    assert load_model_npz(p).context is None


def test_corpus_hash_sensitive_to_content():
    a = make_corpus([["x", "y"], ["y", "z"]])
    b = make_corpus([["x", "y"], ["z", "y"]])
    c = make_corpus([["x", "y"], ["y", "z"]])
    assert corpus_hash(a) == corpus_hash(c)
    assert corpus_hash(a) != corpus_hash(b)


# ---------------------------------------------------------------------------
# compare()


def _write_report(path: Path, metrics: dict[str, float]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("metric\tvalue\n")
        for k in sorted(metrics):
            fh.write(f"{k}\t{metrics[k]:.6f}\n")
    return path


def test_compare_single_report_identity(tmp_path):
    p = _write_report(tmp_path / "methodA" / "awpp.tsv", {"awpp": 0.25, "ppl": 4.0})
    table = compare([p])
    assert table.labels == ("methodA",)
    assert table.metrics == ("awpp", "ppl")
    np.testing.assert_allclose(table.mean[0], [0.25, 4.0])
    np.testing.assert_allclose(table.std[0], [0.0, 0.0])
    assert table.runs == {"methodA": 1}


def test_compare_three_seeds_stddev_matches_numpy(tmp_path):
    vals = [0.21, 0.25, 0.29]
    paths = [
        _write_report(tmp_path / f"s{i}" / "awpp.tsv", {"awpp": v})
        for i, v in enumerate(vals)
    ]
    table = compare(paths, labels=["m", "m", "m"])
    assert table.runs == {"m": 3}
    assert table.mean[0, 0] == pytest.approx(np.mean(vals))
    assert table.std[0, 0] == pytest.approx(np.std(vals, ddof=1))


def test_compare_schema_mismatch_raises(tmp_path):
    a = _write_report(tmp_path / "a" / "r.tsv", {"awpp": 0.2})
    b = _write_report(tmp_path / "b" / "r.tsv", {"other": 0.3})
    with pytest.raises(ValueError, match="schema"):
        compare([a, b])


def test_compare_rejects_label_misalignment(tmp_path):
    a = _write_report(tmp_path / "a" / "r.tsv", {"awpp": 0.2})
    with pytest.raises(ValueError):
        compare([a], labels=["x", "y"])


def test_read_metrics_rejects_foreign_tsv(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("word\tcount\nfoo\t3\n")
    with pytest.raises(ValueError):
        read_metrics_tsv(p)


def test_comparison_table_outputs(tmp_path):
    paths = [
        _write_report(tmp_path / f"m{i}" / "r.tsv", {"awpp": 0.2 + i / 10})
        for i in range(2)
    ]
    table = compare(paths)
    out = tmp_path / "cmp.tsv"
    table.save_tsv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "method\truns\tawpp"
    assert "±" in lines[1]
    md = table.to_markdown()
    assert md.startswith("| method | runs | awpp |")


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture()
def runner():
    return CliRunner()


def test_cli_vocab(corpora, tmp_path, runner):
    tgt, _ = corpora
    out = tmp_path / "vocab.tsv"
    result = runner.invoke(cli_main, ["vocab", str(tgt), "-o", str(out),
                                      "--min-count", "1"])
    assert result.exit_code == 0, result.output
    assert out.exists()
    assert "words" in result.output


def test_cli_train_and_eval_and_drift(corpora, tmp_path, runner):
    tgt, src = corpora
    out_t = tmp_path / "t"
    args = ["--dim", "16", "--window", "3", "--negatives", "3",
            "--epochs", "2", "--min-count", "1"]
    result = runner.invoke(
        cli_main, ["train", "--mode", "tgt", "--target", str(tgt),
                   "-o", str(out_t)] + args,
    )
    assert result.exit_code == 0, result.output
    out_s = tmp_path / "s"
    result = runner.invoke(
        cli_main, ["train", "--mode", "src", "--target", str(tgt),
                   "--source", str(src), "-o", str(out_s)] + args,
    )
    assert result.exit_code == 0, result.output

    drift_out = tmp_path / "drift.tsv"
    result = runner.invoke(
        cli_main,
        ["drift", "--source-embeddings", str(out_s / "embeddings.txt"),
         "--target-embeddings", str(out_t / "embeddings.txt"),
         "-o", str(drift_out), "--k", "5"],
    )
    assert result.exit_code == 0, result.output
    assert drift_out.exists() and drift_out.with_suffix(".png").exists()

    eval_out = tmp_path / "eval"
    result = runner.invoke(
        cli_main,
        ["eval", "--embeddings", str(out_t / "embeddings.txt"),
         "--probes", "c00w000,c01w000", "-o", str(eval_out)],
    )
    assert result.exit_code == 0, result.output
    assert (eval_out / "neighbors.txt").exists()


def test_cli_select(corpora, tmp_path, runner):
    tgt, src = corpora
    out = tmp_path / "sel.tsv"
    result = runner.invoke(
        cli_main,
        ["select", "--target", str(tgt), "--source", str(src),
         "-o", str(out), "--min-count", "1"],
    )
    assert result.exit_code == 0, result.output
    assert out.exists() and out.with_suffix(".png").exists()
    assert "retained" in result.output


def test_cli_run_manifest_and_compare(corpora, tmp_path, runner):
    tgt, _ = corpora
    out = tmp_path / "run-out"
    manifest = tmp_path / "exp.ini"
    manifest.write_text(
        f"""[experiment]
mode = tgt
target = {tgt}
output = {out}
min_count = 1

[train]
dim = 16
window = 3
negatives = 3
epochs = 2
""",
        encoding="utf-8",
    )
    result = runner.invoke(cli_main, ["run", str(manifest)])
    assert result.exit_code == 0, result.output
    assert (out / "awpp.tsv").exists()

    cmp_out = tmp_path / "cmp.tsv"
    result = runner.invoke(
        cli_main,
        ["compare", str(out / "awpp.tsv"), "-o", str(cmp_out), "--markdown"],
    )
    assert result.exit_code == 0, result.output
    assert cmp_out.exists() and "| method |" in result.output


def test_cli_seed_override_changes_resolved_manifest(corpora, tmp_path, runner):
    tgt, _ = corpora
    out = tmp_path / "seeded"
    result = runner.invoke(
        cli_main,
        ["--seed", "9", "train", "--mode", "tgt", "--target", str(tgt),
         "-o", str(out), "--dim", "16", "--epochs", "1", "--min-count", "1",
         "--window", "3", "--negatives", "3"],
    )
    assert result.exit_code == 0, result.output
    assert "seed = 9" in (out / "manifest.resolved").read_text()


def test_cli_calibrate(corpora, tmp_path, runner):
    tgt, _ = corpora
    out = tmp_path / "cal.tsv"
    result = runner.invoke(
        cli_main,
        ["calibrate", "--target", str(tgt), "-o", str(out),
         "--lambda-grid", "1,10", "--alpha-grid", "1",
         "--min-heldout-docs", "10", "--dim", "16", "--epochs", "2",
         "--window", "3", "--negatives", "3", "--min-count", "1"],
    )
    assert result.exit_code == 0, result.output
    assert "selected lambda=" in result.output
    assert out.exists() and out.with_suffix(".png").exists()
