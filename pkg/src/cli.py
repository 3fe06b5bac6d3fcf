"""
QLDS Command Line
Subcommands for fitting, prediction, synthetic data and the experiment suite
"""

import argparse
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence
import numpy as np
import pandas as pd
from src.bench.experiments import (
    METHODS, BenchOptions, FileSource, GmmSource, density_match, labeled_size_sweep, phase_diagram,
    proportion_robustness, run_benchmark, runtime_compare
)
from src.bench.reports import ReportWriter, dumps, file_hash
from src.core.config import (
    LAMBDA_SOURCES, LOG_LEVELS, PROPORTION_MODES, THEORY_VARIANTS, RunConfig, load_run_config
)
from src.core.errors import ConfigError, ParseError, QLDSError, error_handler, read_text
from src.core.structured_logging import configure_logging, get_structured_logger, run_context, timed_operation
from src.data.dataset import Dataset, center, class_counts, feature_mean
from src.data.loaders import load_csv, load_libsvm, save_csv
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.loss_lab import OptimConfig, all_specs, loss_grid_oracle_compare
from src.qlds.selection import Grid, SelectionMethod, fit_with_selection
from src.qlds.solver import (
    HyperParams, LambdaSource, LinearModel, decision_scores, default_lambda, labels_from_scores,
    transductive_error
)
from src.qlds.theory import (
    ProportionMode, TheoryVariant, cached_gram, solve_fixed_point, theory_statistics
)

DEFAULTS = RunConfig()
LIBSVM_SUFFIXES = {".svm", ".libsvm", ".svmlight"}

logger = get_structured_logger(__name__)


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _methods(text: str) -> List[str]:
    methods = [part.strip() for part in text.split(",") if part.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    return methods


def _global_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("global options")
    group.add_argument("--config", help="KEY=value config file (default: none)")
    group.add_argument("--seed", type=int, help=f"root seed (default: {DEFAULTS.seed})")
    group.add_argument("--output-dir", dest="output_dir", help=f"report directory (default: {DEFAULTS.output_dir})")
    group.add_argument("--lambda-source", dest="lambda_source", choices=LAMBDA_SOURCES,
                       help=f"Gram matrix setting the default lambda (default: {DEFAULTS.lambda_source})")
    group.add_argument("--lambda-inflation", dest="lambda_inflation", type=float,
                       help=f"lambda = (1 + inflation) * top eigenvalue (default: {DEFAULTS.lambda_inflation:g})")
    group.add_argument("--proportion-mode", dest="proportion_mode", choices=PROPORTION_MODES,
                       help=f"unlabeled class proportions for the theory (default: {DEFAULTS.proportion_mode})")
    group.add_argument("--theory-variant", "--g-sign-variant", dest="theory_variant", choices=THEORY_VARIANTS,
                       help=f"form of the performance theory (default: {DEFAULTS.theory_variant})")
    group.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    group.add_argument("--folds", type=int, help=f"cross-validation folds (default: {DEFAULTS.folds})")
    group.add_argument("--n-trials", dest="n_trials", type=int,
                       help=f"benchmark trials or Monte Carlo seeds (default: {DEFAULTS.n_trials})")
    group.add_argument("--grid-file", dest="grid_file",
                       help="alpha_l,alpha_u pairs, one per line (default: 11x11 lattice on [0,1]^2)")
    group.add_argument("--log-level", dest="log_level", choices=LOG_LEVELS,
                       help=f"stderr log level (default: {DEFAULTS.log_level})")
    return parent


def _data_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("input", nargs=None if required else "?", help="CSV or libsvm dataset")
    parser.add_argument("--format", choices=("csv", "libsvm"),
                        help="input format (default: from the file suffix, csv otherwise)")
    parser.add_argument("--label-column", default="label", help="CSV label column (default: label)")
    parser.add_argument("--labeled-flag-column", default="labeled",
                        help="CSV 0/1 labeled-flag column (default: labeled)")
    parser.add_argument("--n-labeled", type=int, help="labeled samples drawn from a libsvm file (required for libsvm)")
    parser.add_argument("--name", help="dataset name (default: file stem)")


def _spec_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--spec", required=required, help="mixture JSON {d, mu_norm, n_l1, n_l2, n_u1, n_u2, seed}")


def build_parser() -> argparse.ArgumentParser:
    parent = _global_flags()
    parser = argparse.ArgumentParser(
        prog="qlds",
        description="Semi-supervised QLDS classification with theory-driven hyperparameter selection",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", parents=[parent], help="select hyperparameters, fit and predict")
    _data_flags(fit)
    fit.add_argument("--select", default="th", choices=("th", "cv", "oracle"),
                     help="selector when no fixed pair is given (default: th)")
    fit.add_argument("--alpha-l", dest="alpha_l", type=float, help="fixed alpha_l (requires --alpha-u)")
    fit.add_argument("--alpha-u", dest="alpha_u", type=float, help="fixed alpha_u (requires --alpha-l)")

    predict = commands.add_parser("predict", parents=[parent], help="score a dataset with a saved model")
    predict.add_argument("input", help="CSV with one sample per row")
    predict.add_argument("--model", required=True, help="model JSON written by fit")
    predict.add_argument("--exclude-columns", default="label,labeled",
                         help="non-feature columns to ignore (default: label,labeled)")

    gmm = commands.add_parser("gmm", parents=[parent], help="draw a synthetic mixture to CSV")
    _spec_flags(gmm)
    gmm.add_argument("--out", help="output CSV (default: <output-dir>/gmm.csv)")

    bench = commands.add_parser("bench", parents=[parent], help="seeded method comparison")
    _data_flags(bench, required=False)
    _spec_flags(bench, required=False)
    bench.add_argument("--methods", type=_methods, default=list(METHODS),
                       help=f"comma-separated methods (default: {','.join(METHODS)})")

    density = commands.add_parser("density", parents=[parent], help="empirical versus predicted score density")
    _spec_flags(density)
    density.add_argument("--alpha-l", dest="alpha_l", type=float, default=1.0, help="alpha_l (default: 1)")
    density.add_argument("--alpha-u", dest="alpha_u", type=float, default=1.0, help="alpha_u (default: 1)")
    density.add_argument("--lambda", dest="lam", type=float, help="fixed lambda (default: lambda policy per seed)")

    phase = commands.add_parser("phase", parents=[parent], help="gain over LS-SVM by labeled size and separation")
    _spec_flags(phase)
    phase.add_argument("--labeled-sizes", type=_ints, default=[4, 10, 20, 50, 100],
                       help="total labeled sizes (default: 4,10,20,50,100)")
    phase.add_argument("--mu-norms", type=_floats, default=[0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
                       help="mean separations (default: 0.5,1,1.5,2,3,4)")

    proportions = commands.add_parser("proportions", parents=[parent],
                                      help="selection with inferred versus true class proportions")
    _spec_flags(proportions)
    proportions.add_argument("--ratios", type=_floats, default=[0.05, 0.1, 0.25, 0.5, 0.75, 1.0],
                             help="labeled class-1 share divided by 1/2 (default: 0.05,0.1,0.25,0.5,0.75,1)")

    runtime = commands.add_parser("runtime", parents=[parent], help="theory versus cross-validation wall-clock")
    runtime.add_argument("--sizes", type=_ints, default=[50, 100, 200],
                         help="dimensions d, with n_lj = n_uj = d (default: 50,100,200)")
    runtime.add_argument("--mu-norm", type=float, default=2.0, help="mean separation (default: 2)")

    losslab = commands.add_parser("losslab", parents=[parent], help="oracle errors of six gradient-trained losses")
    _data_flags(losslab, required=False)
    _spec_flags(losslab, required=False)
    losslab.add_argument("--alpha-l-values", type=_floats, default=[1.0], help="alpha_l values (default: 1)")
    losslab.add_argument("--alpha-u-values", type=_floats, default=[0.0, 0.5, 1.0],
                         help="alpha_u values (default: 0,0.5,1)")
    losslab.add_argument("--lambda-values", type=_floats,
                         help="lambda values (default: the lambda policy on the dataset)")
    losslab.add_argument("--epochs", type=int, default=OptimConfig.epochs, help="training epochs (default: 2000)")
    losslab.add_argument("--learning-rate", type=float, default=OptimConfig.learning_rate,
                         help="learning rate (default: 0.001)")
    losslab.add_argument("--weight-decay", type=float, default=OptimConfig.weight_decay,
                         help="weight decay (default: 1e-05)")

    diag = commands.add_parser("diag-fixedpoint", parents=[parent], help="fixed point and predicted score statistics")
    _data_flags(diag, required=False)
    _spec_flags(diag, required=False)
    diag.add_argument("--alpha-l", dest="alpha_l", type=float, default=1.0, help="alpha_l (default: 1)")
    diag.add_argument("--alpha-u", dest="alpha_u", type=float, default=1.0, help="alpha_u (default: 1)")
    diag.add_argument("--lambda", dest="lam", type=float, help="lambda (default: lambda policy)")

    sweep = commands.add_parser("sweep", parents=[parent], help="errors and selected alphas by labeled size")
    _spec_flags(sweep)
    sweep.add_argument("--labeled-sizes", type=_ints, default=[10, 20, 50, 100, 200],
                       help="total labeled sizes (default: 10,20,50,100,200)")
    sweep.add_argument("--methods", type=_methods, default=["th", "cv", "or", "ls-svm", "gb-ssl"],
                       help="comma-separated methods (default: th,cv,or,ls-svm,gb-ssl)")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in RunConfig.__dataclass_fields__}
    return load_run_config(args.config, overrides)


def _grid(cfg: RunConfig) -> Grid:
    return Grid.from_file(cfg.grid_file) if cfg.grid_file else Grid.default()


def _writer(cfg: RunConfig, args: argparse.Namespace) -> ReportWriter:
    command = {key: value for key, value in vars(args).items()
               if key not in RunConfig.__dataclass_fields__ and key != "config"}
    writer = ReportWriter(cfg.output_dir, config={**cfg.to_dict(), "command": command})
    for key in ("input", "spec", "model", "config"):
        path = getattr(args, key, None)
        if path:
            writer.add_input(str(path), file_hash(path))
    if cfg.grid_file:
        writer.add_input(cfg.grid_file, file_hash(cfg.grid_file))
    return writer


def _load_dataset(args: argparse.Namespace, cfg: RunConfig) -> Dataset:
    fmt = args.format or ("libsvm" if Path(args.input).suffix.lower() in LIBSVM_SUFFIXES else "csv")
    if fmt == "libsvm":
        if args.n_labeled is None:
            raise ConfigError("--n-labeled is required for libsvm input", key="n_labeled")
        return load_libsvm(args.input, args.n_labeled, cfg.seed, name=args.name)
    return load_csv(args.input, args.label_column, args.labeled_flag_column, name=args.name)


def _spec(args: argparse.Namespace, cfg: RunConfig) -> GmmSpec:
    spec = GmmSpec.from_file(args.spec)
    return spec.with_seed(args.seed) if args.seed is not None else spec


def _dataset_or_spec(args: argparse.Namespace, cfg: RunConfig) -> Dataset:
    if getattr(args, "input", None):
        return _load_dataset(args, cfg)
    if getattr(args, "spec", None):
        return generate_gmm(_spec(args, cfg))
    raise ConfigError("Provide a dataset file or --spec")


def _echo(message: str) -> None:
    sys.stdout.write(message + "\n")


def cmd_fit(args: argparse.Namespace, cfg: RunConfig) -> int:
    raw = _load_dataset(args, cfg)
    ds = center(raw)
    writer = _writer(cfg, args)

    if (args.alpha_l is None) != (args.alpha_u is None):
        raise ConfigError("--alpha-l and --alpha-u must be given together")
    fixed = args.alpha_l is not None
    method = SelectionMethod.FIXED if fixed else SelectionMethod.parse(args.select)

    model, selection = fit_with_selection(
        ds, method, _grid(cfg), folds=cfg.folds, seed=cfg.seed,
        alpha_pair=(args.alpha_l, args.alpha_u) if fixed else None,
        lambda_source=LambdaSource(cfg.lambda_source), inflation=cfg.lambda_inflation,
        proportion_mode=ProportionMode(cfg.proportion_mode), variant=TheoryVariant(cfg.theory_variant),
        n_jobs=cfg.jobs,
    )
    model = LinearModel(model.omega, model.n_train, model.hyper, feature_mean=feature_mean(raw))

    scores = decision_scores(model, ds.features)
    writer.write_json("model.json", model.to_dict(), embed=False)
    writer.write_csv("predictions.csv", pd.DataFrame({
        "index": np.arange(ds.n), "score": scores, "label": labels_from_scores(scores),
    }), float_format="%.17g")
    writer.write_json("selection.json", selection.to_dict())

    summary = (f"fit {ds.name}: alpha_l={selection.chosen[0]:g} alpha_u={selection.chosen[1]:g} "
               f"lambda={selection.lam:.6g}")
    if ds.n_unlabeled and ds.has_truth:
        summary += f" transductive_error={transductive_error(model, ds):.4f}"
    _echo(summary)
    return 0


def load_feature_matrix(path: str, exclude: Sequence[str]) -> np.ndarray:
    """d×m matrix from a CSV with one sample per row, ignoring the excluded columns"""
    try:
        frame = pd.read_csv(io.StringIO(read_text(path)))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Cannot parse CSV file {path}: {e}", path=path) from e
    columns = [c for c in frame.columns if c not in set(exclude)]
    numeric = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise ParseError(f"Non-numeric value at row {row + 2}, column {columns[col]!r}",
                         row=row + 2, column=columns[col])
    return numeric.to_numpy(dtype=float).T


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        model = LinearModel.from_dict(json.loads(read_text(args.model)))
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid model JSON: {e.msg}", row=e.lineno, path=args.model) from e
    points = load_feature_matrix(args.input, [c.strip() for c in args.exclude_columns.split(",")])
    if model.feature_mean is not None and points.shape[0] == model.d:
        points = points - model.feature_mean[:, np.newaxis]
    scores = decision_scores(model, points)

    writer = _writer(cfg, args)
    path = writer.write_csv("predictions.csv", pd.DataFrame({
        "index": np.arange(scores.size), "score": scores, "label": labels_from_scores(scores),
    }), float_format="%.17g")
    _echo(f"predict: {scores.size} samples scored -> {path}")
    return 0


def cmd_gmm(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = _spec(args, cfg)
    ds = generate_gmm(spec)
    path = save_csv(ds, args.out or Path(cfg.output_dir) / "gmm.csv")
    _echo(f"gmm: d={ds.d} n={ds.n} n_labeled={ds.n_labeled} seed={spec.seed} -> {path}")
    return 0


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg, _grid(cfg))
    if args.input:
        if args.n_labeled is None:
            raise ConfigError("--n-labeled is required to resample a dataset file", key="n_labeled")
        fmt = args.format or ("libsvm" if Path(args.input).suffix.lower() in LIBSVM_SUFFIXES else "csv")
        if fmt == "libsvm":
            full = load_libsvm(args.input, None, name=args.name)
        else:
            full = load_csv(args.input, args.label_column, args.labeled_flag_column, name=args.name)
        source: Any = FileSource(full, args.n_labeled, name=full.name)
    elif args.spec:
        source = GmmSource(_spec(args, cfg))
    else:
        raise ConfigError("bench needs a dataset file or --spec")

    report = run_benchmark(source, args.methods, cfg.n_trials, cfg.seed, options)
    writer = _writer(cfg, args)
    writer.write_csv("bench_summary.csv", report.summary)
    writer.write_csv("bench_trials.csv", [
        {"seed": t.seed, "method": t.method, "error": t.error, "failure": t.failure} for t in report.trials
    ])
    writer.write_json("bench_report.json", report.to_dict())

    best = next((row for row in report.summary if row.get("best")), None)
    outcome = f"best={best['method']} ({best['mean_error']:.4f})" if best else "no successful trials"
    _echo(f"bench: {len(report.methods)} methods x {cfg.n_trials} trials; {outcome}")
    return 0


def cmd_density(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg)
    result = density_match(_spec(args, cfg), args.alpha_l, args.alpha_u, cfg.n_trials, cfg.seed, args.lam, options)
    writer = _writer(cfg, args)
    writer.write_json("density.json", result)
    edges = np.asarray(result["bin_edges"])
    writer.write_csv("density_histogram.csv", pd.DataFrame({
        "bin_low": edges[:-1], "bin_high": edges[1:],
        "class1_count": result["classes"][0]["histogram"], "class2_count": result["classes"][1]["histogram"],
    }))
    _echo(f"density: {result['verdict']} eps_star={result['eps_star']:.4f} "
          f"empirical_error={result['empirical_error']:.4f}")
    return 0


def cmd_phase(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg, _grid(cfg))
    result = phase_diagram(args.labeled_sizes, args.mu_norms, _spec(args, cfg), cfg.n_trials, cfg.seed, options)
    writer = _writer(cfg, args)
    writer.write_json("phase.json", result)
    writer.write_csv("phase.csv", [
        {"labeled_size": size, "mu_norm": mu, "gain": result["gain"][i][j]}
        for i, size in enumerate(result["labeled_sizes"]) for j, mu in enumerate(result["mu_norms"])
    ])
    _echo(f"phase: {len(args.labeled_sizes)}x{len(args.mu_norms)} cells over {cfg.n_trials} seeds")
    return 0


def cmd_proportions(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg, _grid(cfg))
    rows = proportion_robustness(_spec(args, cfg), args.ratios, cfg.n_trials, cfg.seed, options)
    writer = _writer(cfg, args)
    writer.write_csv("proportions.csv", rows)
    writer.write_json("proportions.json", rows)
    worst = max(abs(row["error_assumed"] - row["error_truth"]) for row in rows)
    _echo(f"proportions: {len(rows)} ratios, max |assumed - truth| = {worst:.4f}")
    return 0


def cmd_runtime(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg, _grid(cfg))
    rows = runtime_compare(args.sizes, options.grid, cfg.folds, cfg.seed, args.mu_norm, options)
    writer = _writer(cfg, args)
    writer.write_csv("runtime.csv", rows, float_format="%.3f")
    writer.write_json("runtime.json", rows)
    _echo("runtime: " + ", ".join(f"d={row['d']} speedup={row['speedup']:.1f}x" for row in rows))
    return 0


def cmd_losslab(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = center(_dataset_or_spec(args, cfg))
    lambdas = args.lambda_values or [default_lambda(ds, LambdaSource(cfg.lambda_source), cfg.lambda_inflation)]
    grid = [(a_l, a_u, lam) for a_l in args.alpha_l_values for a_u in args.alpha_u_values for lam in lambdas]
    optim = OptimConfig(learning_rate=args.learning_rate, weight_decay=args.weight_decay,
                        epochs=args.epochs, seed=cfg.seed)
    with timed_operation("losslab", grid_size=len(grid)):
        rows = loss_grid_oracle_compare(ds, all_specs(), grid, optim, cfg.jobs)
    writer = _writer(cfg, args)
    writer.write_csv("losslab.csv", [row.to_dict() for row in rows])
    writer.write_json("losslab.json", {
        "rows": [row.to_dict() for row in rows],
        "optimizer": {"epochs": optim.epochs, "learning_rate": optim.learning_rate,
                      "weight_decay": optim.weight_decay, "batch": "full", "initialization": "zeros"},
    })
    ranked = sorted(rows, key=lambda row: (np.isnan(row.oracle_error), row.oracle_error))
    _echo(f"losslab: best {ranked[0].spec} oracle_error={ranked[0].oracle_error:.4f}")
    return 0


def cmd_diag_fixedpoint(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = center(_dataset_or_spec(args, cfg))
    lam = args.lam if args.lam is not None else default_lambda(
        ds, LambdaSource(cfg.lambda_source), cfg.lambda_inflation)
    hp = HyperParams(args.alpha_l, args.alpha_u, lam, cfg.lambda_inflation)
    counts = class_counts(ds, ProportionMode(cfg.proportion_mode) is ProportionMode.MATCHED)
    gram = cached_gram(ds)
    fp = solve_fixed_point(counts, hp, TheoryVariant(cfg.theory_variant))
    stats = theory_statistics(fp, counts, gram, hp)

    document = {"hyper": hp.to_dict(), "class_counts": counts.to_dict(), "gram": gram.to_dict(),
                "fixed_point": fp.to_dict(), "theory_stats": stats.to_dict()}
    _writer(cfg, args).write_json("diag_fixedpoint.json", document)
    sys.stdout.write(dumps(document))
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: RunConfig) -> int:
    options = BenchOptions.from_run_config(cfg, _grid(cfg))
    rows = labeled_size_sweep(_spec(args, cfg), args.labeled_sizes, args.methods, cfg.n_trials, cfg.seed, options)
    writer = _writer(cfg, args)
    writer.write_csv("sweep.csv", rows)
    writer.write_json("sweep.json", rows)
    _echo(f"sweep: {len(args.labeled_sizes)} labeled sizes x {len(args.methods)} methods")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "gmm": cmd_gmm,
    "bench": cmd_bench,
    "density": cmd_density,
    "phase": cmd_phase,
    "proportions": cmd_proportions,
    "runtime": cmd_runtime,
    "losslab": cmd_losslab,
    "diag-fixedpoint": cmd_diag_fixedpoint,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        configure_logging(cfg.log_level)
        with run_context() as run_id:
            with timed_operation(f"cmd_{args.command}", run_id=run_id):
                return COMMANDS[args.command](args, cfg)
    except (QLDSError, OSError) as e:
        error_handler.log_error(e, {"command": args.command})
        sys.stderr.write(json.dumps(error_handler.error_document(e), default=str) + "\n")
        return error_handler.exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
