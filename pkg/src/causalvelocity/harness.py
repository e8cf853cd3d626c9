"""Benchmark orchestration: dataset-parallel discovery sweeps, score-quality
evaluation against the Gaussian-noise oracles, and artifact emission.

Determinism contract: every result depends only on (configuration, master
seed, dataset index). Workers regenerate their own datasets from the index,
and rows are aggregated in index order, so worker count never changes the
report bytes.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import (
    DataPair,
    PreprocessConfig,
    TuebingenFilter,
    load_pair,
    load_tuebingen,
    save_pair,
    standardize,
    trim_indices,
)
from .gof import GofConfig, discover, estimate_fields
from .metrics import MetricsReport, RowOutcome, build_report, dumps
from .scores import KernelConfig, ScoreSource, effect_marginal_score, reverse_field
from .synth import BenchmarkSpec, generate_dataset, generate_gaussian_oracle


@dataclass(frozen=True)
class RunConfig:
    estimator: str = "stein"
    family: str = "b-quad"
    benchmark: Optional[BenchmarkSpec] = None
    data_dir: Optional[str] = None
    tuebingen: bool = False
    tuebingen_filter: TuebingenFilter = TuebingenFilter.Standard
    gof: GofConfig = field(default_factory=GofConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    kernel: Optional[KernelConfig] = None
    workers: int = 1
    weighted: bool = True
    mc_draws: int = 100_000
    out_dir: Optional[str] = None
    master_seed: int = 0

    def describe(self) -> dict:
        d = {
            "estimator": self.estimator,
            "family": self.family,
            "master_seed": self.master_seed,
            "weighted": self.weighted,
            "trim_fraction": self.preprocess.trim_fraction,
            "standardize": self.preprocess.standardize,
            "subsample_to": self.preprocess.subsample_to,
            "penalty_weight": self.gof.penalty_weight,
            "max_iters": self.gof.max_iters,
        }
        if self.benchmark is not None:
            d["benchmark"] = self.benchmark.to_dict()
        if self.data_dir is not None:
            d["data_dir"] = str(self.data_dir)
            d["tuebingen"] = self.tuebingen
            if self.tuebingen:
                d["tuebingen_filter"] = self.tuebingen_filter.value
        return d


def _dataset_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _discover_row(rc: RunConfig, pair: DataPair, index: int, oracle=None) -> RowOutcome:
    seed = _dataset_seed(rc.master_seed, index)
    pre = replace(rc.preprocess, rng_seed=seed)
    try:
        res = discover(
            pair,
            estimator=rc.estimator,
            family=rc.family,
            config=rc.gof,
            seed=seed,
            preprocess=pre,
            kernel_config=rc.kernel,
            oracle=oracle,
            mc_draws=rc.mc_draws,
        )
        return RowOutcome(
            id=pair.id,
            decision=res.decision.value,
            truth=pair.truth.value if pair.truth is not None else None,
            confidence=res.confidence,
            weight=pair.weight,
            loss_xy=res.loss_xy,
            loss_yx=res.loss_yx,
        )
    except Exception as exc:
        return RowOutcome(
            id=pair.id,
            truth=pair.truth.value if pair.truth is not None else None,
            weight=pair.weight,
            error=f"{type(exc).__name__}: {exc}",
        )


def _generated_task(args) -> RowOutcome:
    rc, index = args
    spec = rc.benchmark
    if rc.estimator == "analytic":
        pair, oracle = generate_gaussian_oracle(spec, index)
    else:
        pair, oracle = generate_dataset(spec, index), None
    return _discover_row(rc, pair, index, oracle)


def _loaded_task(args) -> RowOutcome:
    rc, index, pair = args
    return _discover_row(rc, pair, index)


def _map_tasks(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _load_input_pairs(rc: RunConfig) -> list:
    root = Path(rc.data_dir)
    if rc.tuebingen:
        return load_tuebingen(root, rc.tuebingen_filter)
    return [load_pair(p) for p in sorted(root.glob("*.csv"))]


def run_benchmark(rc: RunConfig) -> MetricsReport:
    """Preprocess -> scores -> two-direction fit for every dataset; aggregate."""
    if rc.benchmark is not None:
        tasks = [(rc, i) for i in range(rc.benchmark.n_datasets)]
        rows = _map_tasks(_generated_task, tasks, rc.workers)
    elif rc.data_dir is not None:
        if rc.estimator == "analytic":
            raise ValueError("analytic scores need generated oracle benchmarks")
        pairs = _load_input_pairs(rc)
        tasks = [(rc, i, p) for i, p in enumerate(pairs)]
        rows = _map_tasks(_loaded_task, tasks, rc.workers)
    else:
        raise ValueError("run_benchmark needs a benchmark spec or a data directory")

    report = build_report(rows, rc.describe())
    if rc.out_dir is not None:
        write_report(report, rc.out_dir)
    return report


def write_report(report: MetricsReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    with open(report_path, "w") as fh:
        fh.write(dumps(report.to_dict()))
        fh.write("\n")
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "decision", "truth", "confidence", "loss_xy", "loss_yx", "weight", "error"])
        for r in report.rows:
            writer.writerow([
                r.id,
                r.decision or "",
                r.truth or "",
                _fmt(r.confidence),
                _fmt(r.loss_xy),
                _fmt(r.loss_yx),
                _fmt(r.weight),
                r.error or "",
            ])
    return report_path


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def generate_benchmark_files(spec: BenchmarkSpec, out_dir) -> Path:
    """Write every dataset of a benchmark as CSV plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.n_datasets):
        pair = generate_dataset(spec, i)
        save_pair(pair, out)
        entries.append({
            "id": pair.id,
            "truth": pair.truth.value,
            "weight": pair.weight,
            "dataset_index": i,
        })
    manifest = {"spec": spec.to_dict(), "datasets": entries}
    path = out / "manifest.json"
    with open(path, "w") as fh:
        fh.write(dumps(manifest))
        fh.write("\n")
    return path


def _score_eval_task(args) -> dict:
    rc, index = args
    spec = rc.benchmark
    seed = _dataset_seed(rc.master_seed, index)
    pair, oracle = generate_gaussian_oracle(spec, index)
    work, stats = standardize(pair) if rc.preprocess.standardize else (pair, None)
    if stats is None:
        from .dataset import StandardizeStats

        stats = StandardizeStats(0.0, 1.0, 0.0, 1.0)

    est_fwd, est_rev = estimate_fields(
        work, rc.estimator, rc.kernel, oracle, stats, rc.mc_draws, mc_seed=seed
    )
    ref_fwd, ref_rev = estimate_fields(
        work, "analytic", None, oracle, stats, rc.mc_draws, mc_seed=seed
    )
    keep = trim_indices(work, rc.preprocess.trim_fraction)

    def mse(a, b):
        return float(np.mean((a[keep] - b[keep]) ** 2))

    return {
        "index": index,
        "n": work.n,
        "estimator": rc.estimator,
        "mse_cause_marg": mse(est_fwd.sx_marg, ref_fwd.sx_marg),
        "mse_joint_x": mse(est_fwd.sx_joint, ref_fwd.sx_joint),
        "mse_joint_y": mse(est_fwd.sy_joint, ref_fwd.sy_joint),
        "mse_effect_marg": mse(est_rev.sx_marg, ref_rev.sx_marg),
    }


MSE_COLUMNS = ("mse_cause_marg", "mse_joint_x", "mse_joint_y", "mse_effect_marg")


def score_eval(rc: RunConfig):
    """Estimated-score error against the oracle, per dataset plus quartiles."""
    if rc.benchmark is None or rc.benchmark.family not in ("anm-gauss", "lsnm-gauss"):
        raise ValueError("score evaluation needs an anm-gauss or lsnm-gauss benchmark")
    tasks = [(rc, i) for i in range(rc.benchmark.n_datasets)]
    rows = _map_tasks(_score_eval_task, tasks, rc.workers)
    summary = {}
    for col in MSE_COLUMNS:
        vals = np.array([r[col] for r in rows])
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        summary[col] = {"median": float(med), "q1": float(q1), "q3": float(q3)}
    if rc.out_dir is not None:
        out = Path(rc.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scores.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "estimator", *MSE_COLUMNS])
            for r in rows:
                writer.writerow([r["n"], r["estimator"], *(_fmt(r[c]) for c in MSE_COLUMNS)])
        with open(out / "scores_summary.json", "w") as fh:
            fh.write(dumps({"config": rc.describe(), "summary": summary}))
            fh.write("\n")
    return rows, summary
