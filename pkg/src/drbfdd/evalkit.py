"""Bootstrap evaluation protocol, ROC-AUC, grid search and rank tables.

Protocol per iteration: draw ``floor(0.8 * n_normal)`` normal instances
without replacement for training; the remaining normals plus every anomalous
instance form the test set; record the test ROC-AUC. Iteration AUCs are then
averaged.

Grid search keeps the configuration with the best mean AUC. Selecting on the
test AUC makes that number an optimistic estimate; it is meant for relative
comparison of methods evaluated the same way.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from drbfdd.data import Scenario
from drbfdd.errors import DataError
from drbfdd.optim import TrainConfig

log = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]
FitFn = Callable[[np.ndarray, TrainConfig, str], Scorer]


@dataclass
class SplitPlan:
    train: np.ndarray  # indices into scenario.normal
    test_normal: np.ndarray  # indices into scenario.normal
    test_anomalous: np.ndarray  # indices into scenario.anomalous
    seed: int
    iteration: int

    def test_set(self, scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
        X = np.concatenate([scenario.normal[self.test_normal], scenario.anomalous[self.test_anomalous]])
        truth = np.concatenate(
            [np.zeros(self.test_normal.size, dtype=np.int64), np.ones(self.test_anomalous.size, dtype=np.int64)]
        )
        return X, truth


@dataclass
class EvalReport:
    scenario: str
    method: str
    aucs: list[float]
    config: dict = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))


@dataclass
class RankTable:
    methods: list[str]
    scenarios: list[str]
    aucs: np.ndarray  # (M, S)
    ranks: np.ndarray  # (M, S), 1 = best
    average_rank: np.ndarray  # (M,)


def iteration_seed(seed: int, iteration: int) -> int:
    """Distinct, reproducible seed for one bootstrap iteration."""
    return int(np.random.SeedSequence([int(seed), int(iteration)]).generate_state(1)[0])


def bootstrap_split(scenario: Scenario, train_fraction: float = 0.8, seed: int = 0, iteration: int = 0) -> SplitPlan:
    n = len(scenario.normal)
    if n < 2:
        raise DataError(f"scenario {scenario.name!r} needs at least 2 normal instances, has {n}")
    n_train = int(Fraction(str(train_fraction)) * n)
    if not 1 <= n_train < n:
        raise DataError(f"train fraction {train_fraction} leaves no train or no test normals (n={n})")
    rng = np.random.default_rng(iteration_seed(seed, iteration))
    perm = rng.permutation(n)
    return SplitPlan(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:]),
        np.arange(len(scenario.anomalous)),
        seed,
        iteration,
    )


def average_ranks(values) -> np.ndarray:
    """1-based ascending ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    start = 0
    while start < values.size:
        end = start
        while end + 1 < values.size and sorted_vals[end + 1] == sorted_vals[start]:
            end += 1
        ranks[order[start : end + 1]] = (start + end) / 2.0 + 1.0
        start = end + 1
    return ranks


def roc_auc(scores, truth) -> float:
    """Area under the ROC curve, with 1 marking the anomalous (positive) class.

    Computed as the Mann-Whitney statistic from average ranks, so a tie
    between an anomaly and a normal counts one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise ValueError(f"{scores.size} scores but {truth.size} labels")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    pos = truth == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both anomalous and normal instances")
    rank_sum = average_ranks(scores)[pos].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# detectors


def fit_detector(train_x: np.ndarray, config: TrainConfig, modality: str = "vector") -> Scorer:
    """Train the detector named by ``config.model`` and return its scoring function."""
    if config.model == "iforest":
        from drbfdd import iforest

        forest = iforest.fit(
            np.asarray(train_x).reshape(len(train_x), -1), config.n_estimators, config.subsample, config.seed
        )
        return lambda X: iforest.score(forest, np.asarray(X).reshape(len(X), -1))

    from drbfdd.deep import build_model
    from drbfdd.optim import train

    model = build_model(config.model, np.shape(train_x)[1:], config.H, config.seed, modality=modality)
    report = train(model, train_x, config)
    return report.model.score


def _run_iteration(scenario, config, seed, it, train_fraction, fit):
    plan = bootstrap_split(scenario, train_fraction, seed, it)
    cfg = config.replace(seed=iteration_seed(seed, it))
    try:
        scorer = fit(scenario.normal[plan.train], cfg, scenario.modality)
        X, truth = plan.test_set(scenario)
        return roc_auc(scorer(X), truth)
    except Exception as exc:
        try:
            annotated = type(exc)(f"iteration {it}: {exc}")
        except Exception:
            raise exc
        raise annotated from exc


def evaluate(
    scenario: Scenario,
    config: TrainConfig,
    iterations: int = 10,
    seed: int | None = None,
    train_fraction: float = 0.8,
    fit: FitFn | None = None,
) -> EvalReport:
    """Mean test AUC over ``iterations`` bootstrap splits."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    fit = fit or fit_detector
    seed = config.seed if seed is None else seed
    aucs = []
    for it in range(iterations):
        aucs.append(_run_iteration(scenario, config, seed, it, train_fraction, fit))
        log.info("%s %s iteration %d: AUC %.4f", scenario.name, config.model, it, aucs[-1])
    return EvalReport(scenario.name, config.model, aucs, config.to_dict())


def _evaluate_cell(args):
    scenario, config, iterations, train_fraction, fit = args
    return evaluate(scenario, config, iterations, None, train_fraction, fit)


def grid_search(
    scenario: Scenario,
    grid: list[TrainConfig],
    iterations: int = 10,
    train_fraction: float = 0.8,
    fit: FitFn | None = None,
    workers: int = 1,
) -> tuple[TrainConfig, list[EvalReport]]:
    """Evaluate every configuration; the best mean AUC wins, earlier cells win ties."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")
    jobs = [(scenario, cfg, iterations, train_fraction, fit) for cfg in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_evaluate_cell, jobs))
    else:
        reports = [_evaluate_cell(job) for job in jobs]
    best = 0
    for i, rep in enumerate(reports):
        if rep.mean_auc > reports[best].mean_auc:
            best = i
    return grid[best], reports


def rank_table(results) -> RankTable:
    """Rank methods within each scenario (1 = highest AUC) and average the ranks.

    ``results`` maps method name -> {scenario name -> AUC}. Every method must
    have a value for every scenario.
    """
    methods = list(results)
    if not methods:
        raise ValueError("no methods given")
    scenarios: list[str] = []
    for m in methods:
        for s in results[m]:
            if s not in scenarios:
                scenarios.append(s)
    aucs = np.empty((len(methods), len(scenarios)))
    for i, m in enumerate(methods):
        for j, s in enumerate(scenarios):
            if s not in results[m] or results[m][s] is None:
                raise ValueError(f"missing AUC for method {m!r} in scenario {s!r}")
            aucs[i, j] = float(results[m][s])
    ranks = np.column_stack([average_ranks(-aucs[:, j]) for j in range(len(scenarios))])
    return RankTable(methods, scenarios, aucs, ranks, ranks.mean(axis=1))


# ---------------------------------------------------------------------------
# CSV output


def _config_string(config: dict) -> str:
    return ";".join(f"{k}={config[k]}" for k in sorted(config))


def reports_to_csv(reports: list[EvalReport]) -> str:
    """``scenario,method,mean_auc,n_iterations,aucs,config``; AUCs ';'-joined."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "method", "mean_auc", "n_iterations", "aucs", "config"])
    for r in reports:
        w.writerow(
            [r.scenario, r.method, repr(r.mean_auc), len(r.aucs), ";".join(repr(a) for a in r.aucs), _config_string(r.config)]
        )
    return buf.getvalue()


def rank_table_to_csv(table: RankTable) -> str:
    """``method,scenario,auc,rank`` rows, then one ``method,AVERAGE,,avg_rank`` row per method."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "scenario", "auc", "rank"])
    for i, m in enumerate(table.methods):
        for j, s in enumerate(table.scenarios):
            w.writerow([m, s, repr(float(table.aucs[i, j])), repr(float(table.ranks[i, j]))])
    for i, m in enumerate(table.methods):
        w.writerow([m, "AVERAGE", "", repr(float(table.average_rank[i]))])
    return buf.getvalue()
