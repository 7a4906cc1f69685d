"""End-to-end pipelines behind the command line: simulate, fit, de, eval, bench."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .bayes_factor import ESTIMATORS, differential_expression
from .errors import ValidationError
from .evaluation import aggregate_runs, pr_curve, roc_curve
from .gibbs import GibbsConfig, run_gibbs, throughput
from .model import GmnbHyper, pool
from .synthetic import SimSpec, simulate

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Fully resolved settings of one command; embedded in every output header."""

    subcommand: str
    out: str
    hyper: GmnbHyper = field(default_factory=GmnbHyper)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    sim: SimSpec | None = None
    estimator: str = "harmonic-mean"
    inputs: dict = field(default_factory=dict)
    runs: int = 20

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {self.estimator!r}")
        if self.runs < 1:
            raise ValidationError("runs must be positive")

    def record(self) -> dict:
        """Settings that determine the results.

        The output directory and worker count are left out so that reruns
        elsewhere or with another thread count give byte-identical files.
        """
        d = {"subcommand": self.subcommand,
             "inputs": {k: str(v) for k, v in self.inputs.items()}}
        if self.subcommand in ("fit", "de", "bench"):
            gibbs = asdict(self.gibbs)
            for k in ("workers", "parallel_genes"):
                gibbs.pop(k)
            d.update(hyper=asdict(self.hyper), gibbs=gibbs, seed=self.gibbs.seed)
        if self.subcommand in ("de", "bench"):
            d["estimator"] = self.estimator
        if self.sim is not None:
            d["sim"] = asdict(self.sim)
            d["seed"] = self.sim.seed
        if self.subcommand == "bench":
            d["runs"] = self.runs
        return d


def write_dataset(ds, out: Path, record: dict) -> dict:
    out = Path(out)
    paths = {
        "counts1": out / "cond1.counts.tsv", "meta1": out / "cond1.meta.tsv",
        "counts2": out / "cond2.counts.tsv", "meta2": out / "cond2.meta.tsv",
        "truth": out / "truth.tsv", "params": out / "params.json",
    }
    io.write_counts(ds.data_cond1, paths["counts1"], paths["meta1"], record)
    io.write_counts(ds.data_cond2, paths["counts2"], paths["meta2"], record)
    io.write_truth(ds, paths["truth"], record)
    io.write_json(paths["params"], {"config": record, "truth": ds.truth,
                                    "params": ds.generator_params})
    return paths


def cmd_simulate(cfg: RunConfig) -> dict:
    ds = simulate(cfg.sim)
    paths = write_dataset(ds, Path(cfg.out), cfg.record())
    log.info("simulated %d genes (%d DE) with %s", cfg.sim.n_genes, int(ds.truth.sum()),
             cfg.sim.generator)
    return paths


def cmd_fit(cfg: RunConfig) -> dict:
    data = io.read_counts(cfg.inputs["counts"], cfg.inputs["meta"])
    smp = run_gibbs(data, cfg.hyper, cfg.gibbs)
    out = Path(cfg.out)
    rec = cfg.record()
    paths = {"summary": out / "posterior_summary.tsv", "trace": out / "loglik_trace.tsv"}
    io.write_posterior_summary(smp, data, paths["summary"], rec)
    io.write_table(paths["trace"], ["iteration", "loglik"],
                   enumerate(smp.loglik_trace.tolist()), rec)
    log.info("fit: %.0f gene*time*iter/s", throughput(smp))
    return paths


def cmd_de(cfg: RunConfig) -> dict:
    d1 = io.read_counts(cfg.inputs["counts1"], cfg.inputs["meta1"])
    d2 = io.read_counts(cfg.inputs["counts2"], cfg.inputs["meta2"])
    report, fits = differential_expression(d1, d2, cfg.hyper, cfg.gibbs, cfg.estimator,
                                           return_fits=True)
    out = Path(cfg.out)
    rec = cfg.record()
    paths = {"report": out / "bf_report.tsv"}
    io.write_bf_report(report, paths["report"], rec)
    for name, fit, data in (("m0", fits[0], pool(d1, d2)), ("m1", fits[1], d1),
                            ("m2", fits[2], d2)):
        paths[name] = out / f"posterior_{name}.tsv"
        io.write_posterior_summary(fit, data, paths[name], rec)
    n_zero = int(report.all_zero.sum())
    if n_zero:
        log.warning("%d genes have all-zero counts in both conditions (flagged)", n_zero)
    log.info("de: %.0f gene*time*iter/s", np.mean([throughput(f) for f in fits]))
    return paths


def evaluate_report(report_rows, truth: dict):
    ids = [r["gene_id"] for r in report_rows]
    missing = [g for g in ids if g not in truth]
    if missing:
        raise ValidationError(f"no truth label for genes {missing[:5]}")
    scores = np.array([r["log_bf"] for r in report_rows])
    labels = np.array([truth[g] for g in ids])
    return roc_curve(scores, labels), pr_curve(scores, labels)


def cmd_eval(cfg: RunConfig) -> dict:
    rows = io.read_bf_report(cfg.inputs["report"])
    truth = io.read_truth(cfg.inputs["truth"])
    roc, pr = evaluate_report(rows, truth)
    out = Path(cfg.out)
    rec = cfg.record()
    paths = {"roc": out / "roc.tsv", "pr": out / "pr.tsv", "auc": out / "auc.tsv"}
    io.write_curve(roc, paths["roc"], "roc", rec)
    io.write_curve(pr, paths["pr"], "pr", rec)
    io.write_table(paths["auc"], ["metric", "auc", "n_positives", "n_negatives"],
                   [["ROC", roc.auc, roc.n_positives, roc.n_negatives],
                    ["PR", pr.auc, pr.n_positives, pr.n_negatives]], rec)
    return paths


@dataclass
class BenchResult:
    roc: list
    pr: list
    throughput: list

    def summary(self):
        return {"ROC": aggregate_runs(self.roc) if len(self.roc) > 1 else (self.roc[0].auc, 0.0),
                "PR": aggregate_runs(self.pr) if len(self.pr) > 1 else (self.pr[0].auc, 0.0)}


def run_bench(sim: SimSpec, hyper: GmnbHyper, gibbs: GibbsConfig, runs: int,
              estimator: str = "harmonic-mean", progress=None) -> BenchResult:
    """Simulate -> fit -> rank -> score, once per seed ``base + i``."""
    res = BenchResult([], [], [])
    for i in range(runs):
        ds = simulate(replace(sim, seed=sim.seed + i))
        report, fits = differential_expression(
            ds.data_cond1, ds.data_cond2, hyper, replace(gibbs, seed=gibbs.seed + i),
            estimator, return_fits=True)
        res.roc.append(roc_curve(report.log_bf, ds.truth))
        res.pr.append(pr_curve(report.log_bf, ds.truth))
        res.throughput.append(float(np.mean([throughput(f) for f in fits])))
        if progress is not None:
            progress(i, res)
    return res


def cmd_bench(cfg: RunConfig, timing_path=None) -> dict:
    def progress(i, res):
        log.info("bench %s run %d/%d: AUC-ROC %.3f AUC-PR %.3f", cfg.sim.generator, i + 1,
                 cfg.runs, res.roc[-1].auc, res.pr[-1].auc)

    res = run_bench(cfg.sim, cfg.hyper, cfg.gibbs, cfg.runs, cfg.estimator, progress)
    out = Path(cfg.out)
    rec = cfg.record()
    paths = {"summary": out / "auc_summary.tsv", "runs": out / "auc_runs.tsv"}
    rows = [["GMNB", cfg.sim.generator, metric, mean, sd, cfg.runs]
            for metric, (mean, sd) in res.summary().items()]
    io.write_table(paths["summary"], ["method", "generator", "metric", "mean", "sd", "n_runs"],
                   rows, rec)
    io.write_table(paths["runs"], ["run", "sim_seed", "auc_roc", "auc_pr"],
                   ([i, cfg.sim.seed + i, r.auc, p.auc]
                    for i, (r, p) in enumerate(zip(res.roc, res.pr))), rec)
    # wall-clock numbers are kept out of the deterministic outputs
    log.info("bench throughput: %.0f gene*time*iter/s (mean over fits)", np.mean(res.throughput))
    if timing_path is not None:
        io.write_table(timing_path, ["run", "gene_time_iter_per_s"],
                       enumerate(res.throughput), None)
        paths["timing"] = Path(timing_path)
    return paths
