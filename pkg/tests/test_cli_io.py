import json
import math
import subprocess
import sys

import numpy as np
import pytest

from gmnb import io
from gmnb.cli import NORMALIZE_REFUSAL, main
from gmnb.errors import ValidationError
from gmnb.model import CountTensor

SMALL = ["--genes", "12", "--de-frac", "0.25", "--reps", "2", "--times", "0,12,24"]
FAST = ["--iters", "60", "--burn-in", "30"]


def run(*argv):
    return main([str(a) for a in argv])


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", *SMALL, "--seed", 3, "--out", out) == 0
    return out


def de_args(sim, out, *extra):
    return ["de", "--counts1", sim / "cond1.counts.tsv", "--meta1", sim / "cond1.meta.tsv",
            "--counts2", sim / "cond2.counts.tsv", "--meta2", sim / "cond2.meta.tsv",
            "--out", out, *FAST, *extra]


def test_simulate_thousand_genes_labels(tmp_path):
    assert run("simulate", "--generator", "gmnb", "--genes", 1000, "--de-frac", 0.1,
               "--reps", 4, "--seed", 7, "--out", tmp_path) == 0
    truth = io.read_truth(tmp_path / "truth.tsv")
    assert len(truth) == 1000 and sum(truth.values()) == 100
    d = io.read_counts(tmp_path / "cond1.counts.tsv", tmp_path / "cond1.meta.tsv")
    assert d.n_genes == 1000 and d.n_samples == 20


def test_ten_genes_one_label(tmp_path):
    assert run("simulate", "--genes", 10, "--de-frac", 0.1, "--out", tmp_path) == 0
    assert sum(io.read_truth(tmp_path / "truth.tsv").values()) == 1


@pytest.mark.parametrize("gen", ["gmnb", "gp", "nbar1"])
def test_simulate_rerun_is_byte_identical(tmp_path, gen):
    out = tmp_path / "o"
    assert run("simulate", *SMALL, "--generator", gen, "--seed", 5, "--out", out) == 0
    first = files(out)
    assert run("simulate", *SMALL, "--generator", gen, "--seed", 5, "--out", out) == 0
    assert files(out) == first
    assert set(first) == {"cond1.counts.tsv", "cond1.meta.tsv", "cond2.counts.tsv",
                          "cond2.meta.tsv", "truth.tsv", "params.json"}


def test_headers_record_version_config_and_seed(small_sim):
    for name in ("cond1.counts.tsv", "cond2.meta.tsv", "truth.tsv"):
        lines = (small_sim / name).read_text().splitlines()
        assert lines[0].startswith("# gmnb ")
        cfg = json.loads(lines[1].removeprefix("# config: "))
        assert cfg["sim"]["seed"] == 3 and cfg["sim"]["n_genes"] == 12
        assert lines[2] == "# seed: 3"
    header = (small_sim / "cond1.counts.tsv").read_text().splitlines()[3].split("\t")
    assert header == ["gene_id", "t0_r1", "t0_r2", "t1_r1", "t1_r2", "t2_r1", "t2_r2"]
    meta = (small_sim / "cond2.meta.tsv").read_text().splitlines()[3].split("\t")
    assert meta == ["column_name", "time_value", "condition", "replicate"]
    params = json.loads((small_sim / "params.json").read_text())
    assert len(params["truth"]) == 12


def test_count_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = CountTensor(rng.integers(0, 10**9, size=(5, 6)), list("abcde"), [0.0, 2.5, 30.0],
                    [0, 0, 1, 1, 2, 2], 2, [1, 2, 1, 2, 1, 2])
    io.write_counts(d, tmp_path / "c.tsv", tmp_path / "m.tsv", {"seed": 1})
    assert io.read_counts(tmp_path / "c.tsv", tmp_path / "m.tsv") == d


@pytest.mark.parametrize("bad", ["", "NA", "nan", "1.5", "-2"])
def test_missing_or_invalid_counts_rejected(small_sim, tmp_path, bad):
    lines = (small_sim / "cond1.counts.tsv").read_text().splitlines()
    cells = lines[4].split("\t")
    cells[2] = bad
    lines[4] = "\t".join(cells)
    (tmp_path / "c.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        io.read_counts(tmp_path / "c.tsv", small_sim / "cond1.meta.tsv")


def test_de_eval_pipeline(small_sim, tmp_path):
    assert run(*de_args(small_sim, tmp_path / "de")) == 0
    rows = io.read_bf_report(tmp_path / "de" / "bf_report.tsv")
    assert sorted(r["rank"] for r in rows) == list(range(1, 13))
    for r in rows:
        assert r["log_bf"] == pytest.approx(r["log_ml_m1"] + r["log_ml_m2"] - r["log_ml_m0"])
    summary = (tmp_path / "de" / "posterior_m1.tsv").read_text().splitlines()
    assert summary[3].split("\t")[:2] == ["gene_id", "time_index"]
    assert len(summary) == 4 + 12 * 3
    assert run("eval", "--report", tmp_path / "de" / "bf_report.tsv",
               "--truth", small_sim / "truth.tsv", "--out", tmp_path / "ev") == 0
    _, auc_rows, _ = io.read_table(tmp_path / "ev" / "auc.tsv")
    assert [r[0] for r in auc_rows] == ["ROC", "PR"]
    assert all(0 <= float(r[1]) <= 1 for r in auc_rows)
    assert (tmp_path / "ev" / "roc.tsv").exists() and (tmp_path / "ev" / "pr.tsv").exists()


def test_de_rerun_is_byte_identical_across_workers(small_sim, tmp_path):
    outs = {}
    for name, extra in (("a", ()), ("a2", ()), ("b", ("--workers", 3))):
        assert run(*de_args(small_sim, tmp_path / name, "--seed", 4, *extra)) == 0
        outs[name] = files(tmp_path / name)
    assert outs["a"] == outs["a2"] == outs["b"]
    assert len(outs["a"]) == 4


def test_single_gene_report(tmp_path):
    assert run("simulate", "--genes", 2, "--de-frac", 0.5, "--reps", 2, "--times", "0,1",
               "--out", tmp_path / "s") == 0
    for c in (1, 2):
        p = tmp_path / "s" / f"cond{c}.counts.tsv"
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:5]) + "\n")
    assert run(*de_args(tmp_path / "s", tmp_path / "de")) == 0
    assert len(io.read_bf_report(tmp_path / "de" / "bf_report.tsv")) == 1


def test_all_zero_gene_flagged(small_sim, tmp_path):
    for c in (1, 2):
        lines = (small_sim / f"cond{c}.counts.tsv").read_text().splitlines()
        cells = lines[5].split("\t")
        lines[5] = "\t".join([cells[0]] + ["0"] * (len(cells) - 1))
        (tmp_path / f"cond{c}.counts.tsv").write_text("\n".join(lines) + "\n")
        (tmp_path / f"cond{c}.meta.tsv").write_bytes((small_sim / f"cond{c}.meta.tsv").read_bytes())
    assert run(*de_args(tmp_path, tmp_path / "de")) == 0
    rows = io.read_bf_report(tmp_path / "de" / "bf_report.tsv")
    flagged = [r["gene_id"] for r in rows if r["all_zero"] == "1"]
    assert len(rows) == 12 and len(flagged) == 1


def test_fit_writes_summary_and_trace(small_sim, tmp_path):
    assert run("fit", "--counts", small_sim / "cond1.counts.tsv",
               "--meta", small_sim / "cond1.meta.tsv", "--out", tmp_path, *FAST) == 0
    _, trace, _ = io.read_table(tmp_path / "loglik_trace.tsv")
    assert len(trace) == 60 and all(math.isfinite(float(r[1])) for r in trace)
    header, rows, _ = io.read_table(tmp_path / "posterior_summary.tsv")
    assert header[3:] == ["r_mean", "r_q0.005", "r_q0.995"]
    assert len(rows) == 12 * 3
    for r in rows:
        assert float(r[4]) <= float(r[3]) <= float(r[5])


def test_bench_tiny(tmp_path):
    argv = ["bench", *SMALL, "--runs", 2, *FAST, "--out", tmp_path / "b",
            "--timing", tmp_path / "timing.tsv"]
    assert run(*argv) == 0
    header, rows, _ = io.read_table(tmp_path / "b" / "auc_summary.tsv")
    assert header == ["method", "generator", "metric", "mean", "sd", "n_runs"]
    assert [r[2] for r in rows] == ["ROC", "PR"] and rows[0][5] == "2"
    _, runs, _ = io.read_table(tmp_path / "b" / "auc_runs.tsv")
    assert len(runs) == 2
    _, timing, _ = io.read_table(tmp_path / "timing.tsv")
    assert all(float(r[1]) > 0 for r in timing)
    first = files(tmp_path / "b")
    assert run(*argv) == 0
    assert files(tmp_path / "b") == first


def test_normalize_is_refused(small_sim, tmp_path, capsys):
    code = run(*de_args(small_sim, tmp_path, "--normalize"))
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error=validation exit=2 detail=")
    assert "raw counts" in NORMALIZE_REFUSAL


@pytest.mark.parametrize("argv, code", [
    (["simulate", "--genes", "0", "--out", "x"], 2),
    (["simulate", "--de-frac", "1.5", "--out", "x"], 2),
    (["simulate", "--bogus"], 2),
    (["de", "--counts1", "nope.tsv", "--meta1", "nope.tsv", "--counts2", "nope.tsv",
      "--meta2", "nope.tsv", "--out", "x"], 4),
])
def test_exit_codes(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error=") and f"exit={code}" in err[-1]


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", "--genes", 10, "--out", blocker / "sub") == 4


def test_mismatched_inputs_rejected(small_sim, tmp_path):
    assert run("simulate", "--genes", 13, "--de-frac", 0.25, "--reps", 2, "--times", "0,12,24",
               "--out", tmp_path / "other") == 0
    argv = de_args(small_sim, tmp_path / "de")
    argv[argv.index("--counts2") + 1] = tmp_path / "other" / "cond2.counts.tsv"
    assert run(*argv) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gmnb", "simulate", "--genes", "0",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("error=validation")
