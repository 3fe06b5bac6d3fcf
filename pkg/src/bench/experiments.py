"""
Experiment Suite
Seeded benchmarks, theory-versus-simulation density matching, phase diagrams,
proportion robustness, runtime comparison and labeled-size sweeps
"""

import math
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from src.bench.stats import mann_whitney
from src.core.config import RunConfig, derive_seeds
from src.core.errors import QLDSError, ValidationError, error_handler
from src.core.structured_logging import get_structured_logger, timed_operation
from src.core.workers import run_parallel
from src.data.dataset import Dataset, center, class_counts, largest_remainder
from src.data.loaders import resplit
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.selection import Grid, SelectionMethod, fit_with_selection
from src.qlds.self_training import SelfTrainConfig, self_train
from src.qlds.solver import (
    HyperParams, LambdaSource, decision_scores, default_lambda, fit_counter, fit_qlds, transductive_error
)
from src.qlds.theory import (
    ProportionMode, TheoryVariant, exact_gram, solve_fixed_point, theory_statistics
)

logger = get_structured_logger(__name__)

METHODS = ("th", "cv", "or", "ls-svm", "gb-ssl", "qlds11", "st")
FIXED_PAIRS = {"ls-svm": (1.0, 0.0), "gb-ssl": (0.0, 1.0), "qlds11": (1.0, 1.0)}
SIGNIFICANCE_LEVEL = 0.01
HISTOGRAM_BINS = 64

# Published transductive errors (percent, mean and std over 20 splits) of the seven real datasets
REFERENCE_ERRORS: Dict[str, Dict[str, Tuple[float, float]]] = {
    "books": {"ls-svm": (37.47, 2.25), "gb-ssl": (26.47, 0.72), "qlds11": (49.13, 0.65), "st": (35.83, 2.48),
              "cv": (27.91, 3.32), "th": (26.03, 0.79), "or": (25.7, 0.93)},
    "dvd": {"ls-svm": (38.33, 1.72), "gb-ssl": (29.12, 1.35), "qlds11": (49.25, 0.68), "st": (36.46, 1.94),
            "cv": (29.53, 3.48), "th": (28.53, 1.33), "or": (26.94, 1.47)},
    "electronics": {"ls-svm": (34.15, 3.25), "gb-ssl": (19.4, 0.29), "qlds11": (48.67, 1.05),
                    "st": (31.69, 3.56), "cv": (20.1, 1.03), "th": (19.41, 0.46), "or": (19.11, 0.58)},
    "kitchen": {"ls-svm": (32.39, 3.02), "gb-ssl": (19.31, 0.16), "qlds11": (49.07, 0.64), "st": (29.62, 3.03),
                "cv": (19.98, 2.28), "th": (19.11, 0.32), "or": (18.67, 0.43)},
    "splice": {"ls-svm": (39.81, 2.93), "gb-ssl": (35.48, 0.86), "qlds11": (44.36, 2.3), "st": (39.36, 3.12),
               "cv": (37.02, 3.04), "th": (35.35, 1.26), "or": (33.63, 1.75)},
    "adult": {"ls-svm": (33.35, 0.68), "gb-ssl": (36.28, 0.06), "qlds11": (32.55, 1.47), "st": (35.45, 0.75),
              "cv": (32.25, 1.92), "th": (32.88, 2.46), "or": (31.9, 1.74)},
    "mushrooms": {"ls-svm": (6.55, 2.07), "gb-ssl": (11.33, 0.04), "qlds11": (33.94, 10.67), "st": (6.62, 2.39),
                  "cv": (2.57, 1.86), "th": (8.49, 3.63), "or": (1.75, 1.31)},
}


@dataclass(frozen=True)
class BenchOptions:
    """Parameters shared by every experiment"""
    grid: Grid = field(default_factory=Grid.default)
    folds: int = 10
    lambda_source: LambdaSource = LambdaSource.WHOLE
    lambda_inflation: float = 1e-3
    proportion_mode: ProportionMode = ProportionMode.MATCHED
    theory_variant: TheoryVariant = TheoryVariant.CORRECTED
    jobs: Optional[int] = 1
    self_training: SelfTrainConfig = field(default_factory=SelfTrainConfig)

    @classmethod
    def from_run_config(cls, cfg: RunConfig, grid: Optional[Grid] = None) -> "BenchOptions":
        return cls(
            grid=grid or Grid.default(),
            folds=cfg.folds,
            lambda_source=LambdaSource(cfg.lambda_source),
            lambda_inflation=cfg.lambda_inflation,
            proportion_mode=ProportionMode(cfg.proportion_mode),
            theory_variant=TheoryVariant(cfg.theory_variant),
            jobs=cfg.jobs,
        )


@dataclass(frozen=True)
class GmmSource:
    """Fresh centered mixture draw per trial seed"""
    spec: GmmSpec
    name: str = "gmm"

    def dataset(self, seed: int) -> Dataset:
        return center(generate_gmm(self.spec.with_seed(seed), name=self.name))

    def describe(self) -> Dict[str, Any]:
        return {"kind": "gmm", **self.spec.to_dict()}


@dataclass(frozen=True)
class FileSource:
    """Fixed fully-labeled dataset resampled into a labeled/unlabeled split per trial seed"""
    data: Dataset
    n_labeled: int
    name: str = "file"

    def dataset(self, seed: int) -> Dataset:
        return center(resplit(self.data, self.n_labeled, seed))

    def describe(self) -> Dict[str, Any]:
        return {"kind": "file", "name": self.name, "n_labeled": self.n_labeled,
                "fingerprint": self.data.fingerprint}


Source = Union[GmmSource, FileSource]


@dataclass(frozen=True)
class TrialResult:
    seed: int
    method: str
    error: float
    timing: float
    selection: Dict[str, Any] = field(default_factory=dict)
    failure: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def run_method(ds: Dataset, method: str, options: BenchOptions, seed: int) -> Tuple[float, Dict[str, Any]]:
    """Transductive error of one method on one dataset, with its selection summary"""
    if method in FIXED_PAIRS:
        model, result = fit_with_selection(
            ds, SelectionMethod.FIXED, alpha_pair=FIXED_PAIRS[method],
            lambda_source=options.lambda_source, inflation=options.lambda_inflation)
        return transductive_error(model, ds), {"alpha_l": result.chosen[0], "alpha_u": result.chosen[1]}
    if method == "st":
        st_config = replace(options.self_training, seed=int(seed) % 2 ** 32)
        model, history = self_train(ds, st_config,
                                    lambda_source=options.lambda_source, inflation=options.lambda_inflation)
        return transductive_error(model, ds), {"rounds": len(history)}
    if method in ("th", "cv", "or"):
        model, result = fit_with_selection(
            ds, method, options.grid, folds=options.folds, seed=seed,
            lambda_source=options.lambda_source, inflation=options.lambda_inflation,
            proportion_mode=options.proportion_mode, variant=options.theory_variant)
        return transductive_error(model, ds), {
            "alpha_l": result.chosen[0], "alpha_u": result.chosen[1],
            "criterion": result.chosen_criterion, "selection_seconds": result.wall_clock_seconds,
        }
    raise ValidationError(f"Unknown method {method!r}; expected one of {', '.join(METHODS)}", method=method)


def _run_trial(source: Source, methods: Sequence[str], options: BenchOptions, seed: int) -> List[TrialResult]:
    results = []
    try:
        ds = source.dataset(seed)
    except QLDSError as e:
        error_handler.log_error(e, {"seed": seed, "stage": "dataset"})
        return [TrialResult(seed, method, math.nan, 0.0, failure=type(e).__name__) for method in methods]

    for method in methods:
        started = time.perf_counter()
        try:
            error, selection = run_method(ds, method, options, seed)
        except QLDSError as e:
            error_handler.log_error(e, {"seed": seed, "method": method})
            results.append(TrialResult(seed, method, math.nan, time.perf_counter() - started,
                                       failure=type(e).__name__))
            continue
        results.append(TrialResult(seed, method, error, time.perf_counter() - started, selection))
    return results


@dataclass
class BenchmarkReport:
    source: Dict[str, Any]
    methods: List[str]
    seeds: List[int]
    trials: List[TrialResult]
    summary: List[Dict[str, Any]]
    comparisons: List[Dict[str, Any]]
    reference: Optional[Dict[str, Tuple[float, float]]] = None

    def errors(self, method: str) -> np.ndarray:
        return np.array([t.error for t in self.trials if t.method == method and t.failure is None])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "methods": self.methods,
            "seeds": self.seeds,
            "summary": self.summary,
            "comparisons": self.comparisons,
            "reference_errors_percent": self.reference,
            "trials": [t.to_dict() for t in self.trials],
        }


def run_benchmark(source: Source, methods: Sequence[str] = METHODS, n_trials: int = 20, seed0: int = 0,
                  options: Optional[BenchOptions] = None) -> BenchmarkReport:
    """Per-method error mean/std over seeded trials plus pairwise Mann-Whitney p-values"""
    options = options or BenchOptions()
    if n_trials < 2:
        raise ValidationError("A benchmark needs at least two trials", n_trials=n_trials)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"Unknown methods: {', '.join(unknown)}", methods=unknown)

    seeds = derive_seeds(seed0, n_trials)
    with timed_operation("run_benchmark", methods=list(methods), n_trials=n_trials):
        per_seed = run_parallel(lambda s: _run_trial(source, methods, options, s), seeds, options.jobs)
    trials = [trial for batch in per_seed for trial in batch]

    summary = []
    errors = {}
    for method in methods:
        values = np.array([t.error for t in trials if t.method == method and t.failure is None])
        errors[method] = values
        summary.append({
            "method": method,
            "mean_error": float(values.mean()) if values.size else math.nan,
            "std_error": float(values.std(ddof=1)) if values.size > 1 else math.nan,
            "n_ok": int(values.size),
            "n_failed": sum(1 for t in trials if t.method == method and t.failure is not None),
        })

    comparisons = []
    for i, first in enumerate(methods):
        for second in methods[i + 1:]:
            if errors[first].size and errors[second].size:
                test = mann_whitney(errors[first], errors[second])
                comparisons.append({"method_1": first, "method_2": second, **test.to_dict(),
                                    "significant": test.p_value < SIGNIFICANCE_LEVEL})

    valid = [row for row in summary if not math.isnan(row["mean_error"])]
    if valid:
        best = min(valid, key=lambda row: row["mean_error"])["method"]
        for row in summary:
            row["best"] = row["method"] == best
            if row["method"] == best or math.isnan(row["mean_error"]):
                row["significantly_worse_than_best"] = False
                continue
            test = mann_whitney(errors[best], errors[row["method"]])
            row["significantly_worse_than_best"] = test.p_value < SIGNIFICANCE_LEVEL

    name = getattr(source, "name", "")
    return BenchmarkReport(
        source=source.describe(),
        methods=list(methods),
        seeds=seeds,
        trials=trials,
        summary=summary,
        comparisons=comparisons,
        reference=REFERENCE_ERRORS.get(str(name).lower()),
    )


def _predicted_stats(spec: GmmSpec, ds: Dataset, hp: HyperParams, variant: TheoryVariant):
    counts = class_counts(ds, assume_matched_proportions=False)
    fp = solve_fixed_point(counts, hp, variant)
    return theory_statistics(fp, counts, exact_gram(spec), hp)


def density_match(spec: GmmSpec, alpha_l: float, alpha_u: float, n_seeds: int = 20, seed0: int = 0,
                  lam: Optional[float] = None, options: Optional[BenchOptions] = None) -> Dict[str, Any]:
    """Empirical class-conditional score moments against the predicted Gaussian limit"""
    options = options or BenchOptions()
    seeds = derive_seeds(seed0, n_seeds)

    def one_seed(seed: int) -> Dict[str, Any]:
        ds = center(generate_gmm(spec.with_seed(seed)))
        seed_lam = lam if lam is not None else default_lambda(ds, options.lambda_source, options.lambda_inflation)
        hp = HyperParams(alpha_l, alpha_u, seed_lam, options.lambda_inflation)
        model = fit_qlds(ds, hp)
        if ds.n_unlabeled:
            points, truth = ds.x_unlabeled, ds.true_unlabeled_labels
        else:
            points, truth = ds.x_labeled, ds.labels
        scores = decision_scores(model, points)
        stats = _predicted_stats(spec, ds, hp, options.theory_variant)
        return {
            "scores": scores,
            "truth": truth,
            "empirical_mean": [float(scores[truth == sign].mean()) for sign in (-1, 1)],
            "empirical_std": [float(scores[truth == sign].std()) for sign in (-1, 1)],
            "empirical_error": float(np.mean(np.where(scores < 0, -1, 1) != truth)),
            "stats": stats,
        }

    with timed_operation("density_match", n_seeds=n_seeds):
        runs = run_parallel(one_seed, seeds, options.jobs)

    theory_mean = np.mean([[run["stats"].m1, run["stats"].m2] for run in runs], axis=0)
    theory_sigma = float(np.mean([math.sqrt(run["stats"].sigma2) for run in runs]))
    eps_star = float(np.mean([run["stats"].eps_star for run in runs]))
    empirical_mean = np.mean([run["empirical_mean"] for run in runs], axis=0)
    empirical_std = np.mean([run["empirical_std"] for run in runs], axis=0)
    empirical_error = float(np.mean([run["empirical_error"] for run in runs]))

    separation = abs(theory_mean[1] - theory_mean[0])
    mean_delta = np.abs(empirical_mean - theory_mean)
    std_delta = np.abs(empirical_std - theory_sigma)
    error_delta = abs(eps_star - empirical_error)
    passed = bool(np.all(mean_delta <= 0.05 * separation) and np.all(std_delta <= 0.10 * theory_sigma)
                  and error_delta <= 0.02)

    pooled_scores = np.concatenate([run["scores"] for run in runs])
    pooled_truth = np.concatenate([run["truth"] for run in runs])
    low, high = float(pooled_scores.min()), float(pooled_scores.max())
    if high <= low:
        high = low + 1.0
    edges = np.linspace(low, high, HISTOGRAM_BINS + 1)
    histograms = [np.histogram(pooled_scores[pooled_truth == sign], bins=edges)[0].tolist()
                  for sign in (-1, 1)]

    classes = []
    for j in range(2):
        classes.append({
            "class": j + 1,
            "theory_mean": float(theory_mean[j]),
            "theory_std": theory_sigma,
            "empirical_mean": float(empirical_mean[j]),
            "empirical_std": float(empirical_std[j]),
            "mean_delta_fraction": float(mean_delta[j] / separation) if separation > 0 else math.nan,
            "std_delta_fraction": float(std_delta[j] / theory_sigma),
            "histogram": histograms[j],
        })

    logger.info("density_match_completed", passed=passed, eps_star=eps_star, empirical_error=empirical_error)
    return {
        "spec": spec.to_dict(),
        "alpha_l": alpha_l,
        "alpha_u": alpha_u,
        "seeds": seeds,
        "bin_edges": edges.tolist(),
        "histogram_seeds": len(runs),
        "classes": classes,
        "eps_star": eps_star,
        "empirical_error": empirical_error,
        "error_delta": error_delta,
        "theory_variant": TheoryVariant(options.theory_variant).value,
        "verdict": "PASS" if passed else "FAIL",
    }


def _balanced_labeled(spec: GmmSpec, n_labeled: int) -> GmmSpec:
    n_l1, n_l2 = (int(c) for c in largest_remainder(n_labeled, [1, 1]))
    return replace(spec, n_l1=n_l1, n_l2=n_l2)


def _trial_errors(ds: Dataset, methods: Sequence[str], options: BenchOptions, seed: int) -> Dict[str, float]:
    return {method: run_method(ds, method, options, seed)[0] for method in methods}


def phase_diagram(labeled_sizes: Sequence[int], mu_norms: Sequence[float], base_spec: GmmSpec,
                  n_seeds: int = 20, seed0: int = 0, options: Optional[BenchOptions] = None) -> Dict[str, Any]:
    """gain[i][j] = error(LS-SVM) − error(QLDS with theoretical selection), averaged over seeds"""
    options = options or BenchOptions()
    if not labeled_sizes or not mu_norms:
        raise ValidationError("phase diagram axes must be nonempty")
    seeds = derive_seeds(seed0, n_seeds)
    cells = [(i, j) for i in range(len(labeled_sizes)) for j in range(len(mu_norms))]

    def one_cell(cell: Tuple[int, int]) -> float:
        i, j = cell
        spec = replace(_balanced_labeled(base_spec, labeled_sizes[i]), mu_norm=float(mu_norms[j]))
        gains = []
        for seed in seeds:
            ds = center(generate_gmm(spec.with_seed(seed)))
            try:
                errors = _trial_errors(ds, ("ls-svm", "th"), options, seed)
            except QLDSError as e:
                error_handler.log_error(e, {"labeled_size": labeled_sizes[i], "mu_norm": mu_norms[j]})
                return math.nan
            gains.append(errors["ls-svm"] - errors["th"])
        return float(np.mean(gains))

    with timed_operation("phase_diagram", cells=len(cells), n_seeds=n_seeds):
        values = run_parallel(one_cell, cells, options.jobs)

    gain = np.full((len(labeled_sizes), len(mu_norms)), math.nan)
    for (i, j), value in zip(cells, values):
        gain[i, j] = value
    return {"labeled_sizes": list(labeled_sizes), "mu_norms": list(mu_norms), "gain": gain.tolist(),
            "seeds": seeds, "base_spec": base_spec.to_dict()}


def proportion_robustness(spec: GmmSpec, ratios: Sequence[float], n_seeds: int = 20, seed0: int = 0,
                          options: Optional[BenchOptions] = None) -> List[Dict[str, Any]]:
    """Selection error with inferred versus true unlabeled proportions.

    For ratio r the labeled class-1 share is r/2 while the unlabeled set stays balanced.
    """
    options = options or BenchOptions()
    if any(r <= 0 for r in ratios):
        raise ValidationError("ratios must be positive")
    seeds = derive_seeds(seed0, n_seeds)
    n_labeled = spec.n_l1 + spec.n_l2
    n_unlabeled = spec.n_u1 + spec.n_u2
    n_u1, n_u2 = (int(c) for c in largest_remainder(n_unlabeled, [1, 1]))

    def one_ratio(ratio: float) -> Dict[str, Any]:
        n_l1 = min(max(2, int(round(n_labeled * 0.5 * ratio))), n_labeled - 2)
        cell = replace(spec, n_l1=n_l1, n_l2=n_labeled - n_l1, n_u1=n_u1, n_u2=n_u2)
        assumed, truth = [], []
        for seed in seeds:
            ds = center(generate_gmm(cell.with_seed(seed)))
            for mode, sink in ((ProportionMode.MATCHED, assumed), (ProportionMode.TRUTH, truth)):
                model, _ = fit_with_selection(
                    ds, SelectionMethod.THEORETICAL, options.grid,
                    lambda_source=options.lambda_source, inflation=options.lambda_inflation,
                    proportion_mode=mode, variant=options.theory_variant)
                sink.append(transductive_error(model, ds))
        return {"ratio": float(ratio), "n_l1": n_l1, "n_l2": n_labeled - n_l1,
                "error_assumed": float(np.mean(assumed)), "error_truth": float(np.mean(truth))}

    with timed_operation("proportion_robustness", ratios=len(ratios), n_seeds=n_seeds):
        return run_parallel(one_ratio, list(ratios), options.jobs)


def runtime_compare(sizes: Sequence[int], grid: Optional[Grid] = None, folds: int = 10, seed: int = 0,
                    mu_norm: float = 2.0, options: Optional[BenchOptions] = None) -> List[Dict[str, Any]]:
    """Wall-clock of theoretical versus cross-validated selection with n_ℓj = n_uj = d"""
    options = options or BenchOptions()
    grid = grid or options.grid
    rows = []
    for size in sizes:
        spec = GmmSpec(d=int(size), mu_norm=mu_norm, n_l1=int(size), n_l2=int(size),
                       n_u1=int(size), n_u2=int(size), seed=seed)
        ds = center(generate_gmm(spec))
        timings = {}
        fits = {}
        for label, method in (("theory", SelectionMethod.THEORETICAL), ("cv", SelectionMethod.CROSS_VALIDATION)):
            before = fit_counter.value
            started = time.perf_counter()
            fit_with_selection(ds, method, grid, folds=folds, seed=seed,
                               lambda_source=options.lambda_source, inflation=options.lambda_inflation,
                               proportion_mode=options.proportion_mode, variant=options.theory_variant)
            timings[label] = time.perf_counter() - started
            fits[label] = fit_counter.value - before
        rows.append({
            "n": ds.n,
            "d": ds.d,
            "t_theory": timings["theory"],
            "t_cv": timings["cv"],
            "speedup": timings["cv"] / timings["theory"] if timings["theory"] > 0 else math.inf,
            "fits_theory": fits["theory"],
            "fits_cv": fits["cv"],
        })
        logger.info("runtime_compared", **rows[-1])
    return rows


def labeled_size_sweep(spec: GmmSpec, labeled_sizes: Sequence[int],
                       methods: Sequence[str] = ("th", "cv", "or", "ls-svm", "gb-ssl"),
                       n_seeds: int = 20, seed0: int = 0,
                       options: Optional[BenchOptions] = None) -> List[Dict[str, Any]]:
    """Error mean/std and mean selected (α_ℓ, α_u) per labeled size and method"""
    options = options or BenchOptions()
    rows = []
    for n_labeled in labeled_sizes:
        report = run_benchmark(GmmSource(_balanced_labeled(spec, n_labeled)), methods,
                               n_trials=n_seeds, seed0=seed0, options=options)
        for row in report.summary:
            chosen = [t.selection for t in report.trials
                      if t.method == row["method"] and t.failure is None and "alpha_l" in t.selection]
            rows.append({
                "n_labeled": int(n_labeled),
                "method": row["method"],
                "mean_error": row["mean_error"],
                "std_error": row["std_error"],
                "mean_alpha_l": float(np.mean([c["alpha_l"] for c in chosen])) if chosen else math.nan,
                "mean_alpha_u": float(np.mean([c["alpha_u"] for c in chosen])) if chosen else math.nan,
            })
    return rows
