"""Command-line surface.

Subcommands: preprocess, train, score, evaluate, experiment, sweep.
Exit codes are a stable contract: 0 success, 1 usage error, 2 data
error, 3 training divergence. A config file (--config, flat dotted
key-value lines) can supply any flag's value; explicit flags win.
SOMDAGMM_SEED serves as a last-resort training seed default.
"""

import argparse
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import compression, configfile, data as datamod, experiment as expmod
from .compression import AutoencoderConfig
from .errors import (
    DataError,
    DivergedError,
    SchemaMismatchError,
    SingularMatrixError,
)
from .estimation import EstimationConfig
from .evaluate import ThresholdPolicy, compute_metrics, threshold_energies
from .modelfile import load_model, save_model
from .som import SomConfig
from .trainer import TrainConfig, score_features, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

SEED_ENV = "SOMDAGMM_SEED"


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Config-file key -> (argparse dest, converter). Flags beat file values.
CONFIG_KEYS = {
    "data.format": ("data_format", str),
    "data.policy": ("policy", str),
    "data.max-bad-ratio": ("max_bad_ratio", float),
    "data.inlier-labels": ("inlier_labels", _strs),
    "som.enabled": ("som_enabled", _bool),
    "som.grid-width": ("grid_width", int),
    "som.grid-height": ("grid_height", int),
    "som.learning-rate": ("som_lr", float),
    "som.neighborhood": ("neighborhood", str),
    "som.initial-radius": ("som_radius", float),
    "som.iterations": ("som_iterations", int),
    "autoencoder.layer-sizes": ("layer_sizes", _ints),
    "autoencoder.recon-features": ("recon_features", str),
    "estimation.hidden-sizes": ("est_hidden", _ints),
    "estimation.components": ("components", int),
    "estimation.dropout": ("dropout", float),
    "train.learning-rate": ("learning_rate", float),
    "train.batch-size": ("batch_size", int),
    "train.lambda1": ("lambda1", float),
    "train.lambda2": ("lambda2", float),
    "train.epochs": ("epochs", int),
    "train.eps": ("eps", float),
    "train.optimizer": ("optimizer", str),
    "train.seed": ("seed", int),
    "threshold.ratio": ("ratio", float),
    "threshold.value": ("threshold_value", float),
    "experiment.scenario": ("scenario", str),
    "experiment.ratios": ("ratios", _floats),
    "experiment.seeds": ("seeds", _ints),
    "experiment.n-seeds": ("n_seeds", int),
    "experiment.arms": ("arms", _strs),
    "experiment.subsample": ("subsample", int),
    "experiment.subsample-seed": ("subsample_seed", int),
    "experiment.jobs": ("jobs", int),
    "sweep.learning-rates": ("som_lrs", _floats),
    "sweep.neighborhoods": ("neighborhoods", _strs),
}


class CliParser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _apply_config(args) -> None:
    """Fill unset (None) arg slots from the --config file, if any."""
    path = getattr(args, "config", None)
    if path is None:
        return
    file_cfg = configfile.load_config(path)
    unknown = [k for k in file_cfg if k not in CONFIG_KEYS]
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in file_cfg.items():
        dest, conv = CONFIG_KEYS[key]
        if hasattr(args, dest) and getattr(args, dest) is None:
            try:
                setattr(args, dest, conv(value))
            except ValueError as exc:
                raise DataError(f"config key {key!r}: {exc}") from exc


def _get(args, dest, default):
    value = getattr(args, dest, None)
    return default if value is None else value


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise DataError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _load_cli_schema(args) -> datamod.RecordSchema:
    schema = (
        datamod.load_builtin_schema("nsl_kdd")
        if getattr(args, "schema", None) is None
        else datamod.load_schema(args.schema)
    )
    labels = getattr(args, "inlier_labels", None)
    if labels:
        schema = schema.with_inlier_labels(tuple(labels))
    return schema


def _model_configs(args, input_dim: int, sub: dict[str, int]):
    """Assemble (som, autoencoder, estimation) configs from CLI state."""
    som_cfg = None
    if _get(args, "som_enabled", True):
        som_cfg = SomConfig(
            grid_width=_get(args, "grid_width", 10),
            grid_height=_get(args, "grid_height", 10),
            learning_rate=_get(args, "som_lr", 0.6),
            neighborhood=_get(args, "neighborhood", "bubble"),
            initial_radius=_get(args, "som_radius", 5.0),
            iterations=getattr(args, "som_iterations", None),
            seed=sub["som"],
        )
    layer_sizes = _get(
        args, "layer_sizes", compression.default_layer_sizes(input_dim)
    )
    ae_cfg = AutoencoderConfig(
        layer_sizes=tuple(layer_sizes),
        recon_features=_get(args, "recon_features", "both"),
        seed=sub["ae"],
    )
    latent = (2 if som_cfg is not None else 0) + ae_cfg.recon_dim + ae_cfg.code_dim
    est_cfg = EstimationConfig(
        latent_dim=latent,
        hidden_sizes=tuple(_get(args, "est_hidden", (10,))),
        n_components=_get(args, "components", 4),
        dropout=_get(args, "dropout", 0.5),
        seed=sub["est"],
    )
    return som_cfg, ae_cfg, est_cfg


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=_get(args, "learning_rate", 0.0001),
        batch_size=_get(args, "batch_size", 1024),
        lambda1=_get(args, "lambda1", 0.1),
        lambda2=_get(args, "lambda2", 0.005),
        epochs=_get(args, "epochs", 200),
        seed=seed,
        eps=_get(args, "eps", 1e-6),
        optimizer=_get(args, "optimizer", "adam"),
    )


def _write_log(path, log) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,reconstruction,energy,penalty,objective\n")
        for row in log:
            fh.write(
                f"{row.epoch},{row.recon!r},{row.energy!r},"
                f"{row.penalty!r},{row.objective!r}\n"
            )


# -- subcommands -------------------------------------------------------


def cmd_preprocess(args) -> int:
    schema = _load_cli_schema(args)
    parse = (
        datamod.parse_nslkdd
        if _get(args, "data_format", "nslkdd") == "nslkdd"
        else datamod.parse_csv
    )
    report_path = args.report or args.output + ".report.json"
    try:
        records, report = parse(
            args.input, schema, _get(args, "max_bad_ratio", 0.01)
        )
    except DataError as exc:
        attached = getattr(exc, "report", None)
        if attached is not None:
            Path(report_path).write_text(attached.to_json() + "\n", encoding="utf-8")
            print(f"parse report: {report_path}", file=sys.stderr)
        raise
    Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    dataset, stats = datamod.fit_transform(
        records, schema, _get(args, "policy", "warn-zeros")
    )
    datamod.write_cache(args.output, dataset, schema, stats)
    print(
        f"wrote {args.output}: {dataset.n_rows} rows, "
        f"dimension {schema.dimension}, "
        f"anomaly ratio {dataset.anomaly_ratio:.4f}, "
        f"{len(report.bad)} bad lines, {dataset.warnings} unseen-category values"
    )
    print(f"parse report: {report_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset, schema, stats = datamod.read_cache(args.input)
    seed = _resolve_seed(args)
    sub = expmod._sub_seeds(seed)
    som_cfg, ae_cfg, est_cfg = _model_configs(
        args, schema.dimension, sub
    )
    train_cfg = _train_config(args, sub["train"])
    log_path = args.log or args.output + ".log.csv"
    try:
        model = train(dataset.features, som_cfg, ae_cfg, est_cfg, train_cfg)
    except DivergedError as exc:
        _write_log(log_path, getattr(exc, "log", []))
        print(f"training log: {log_path}", file=sys.stderr)
        raise
    model.preprocessing = datamod.Preprocessor(
        schema, stats, _get(args, "policy", "warn-zeros")
    )
    save_model(args.output, model)
    _write_log(log_path, model.log)
    if model.log:
        last = model.log[-1]
        print(
            f"epoch {last.epoch}: reconstruction {last.recon!r}, "
            f"energy {last.energy!r}, penalty {last.penalty!r}, "
            f"objective {last.objective!r}"
        )
    print(
        f"wrote {args.output} (seed {seed}, "
        f"{'with' if som_cfg is not None else 'no'} map, "
        f"latent {est_cfg.latent_dim}); log: {log_path}"
    )
    return EXIT_OK


def _features_for_model(model, path):
    """Feature matrix plus optional labels from a cache or raw file."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith(datamod.CACHE_MAGIC):
        dataset, schema, _ = datamod.read_cache(path)
        if model.preprocessing is not None:
            expected = datamod.schema_hash(model.preprocessing.schema)
            actual = dataset.provenance["schema_hash"]
            if expected != actual:
                raise SchemaMismatchError(
                    f"model schema {expected} != input schema {actual}",
                    expected=expected,
                    actual=actual,
                )
        elif dataset.features.shape[1] != model.input_dim:
            raise SchemaMismatchError(
                f"input width {dataset.features.shape[1]} != model "
                f"input {model.input_dim}"
            )
        return dataset.features, dataset
    if model.preprocessing is None:
        raise DataError(
            "model has no preprocessing stats; provide a preprocessed cache"
        )
    records, _ = datamod.parse_nslkdd(path, model.preprocessing.schema)
    return model.preprocessing.transform(records), None


def cmd_score(args) -> int:
    model = load_model(args.model)
    features, _ = _features_for_model(model, args.input)
    energies = score_features(model, features)
    out = args.output or args.input + ".energies.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("index,energy\n")
        for i, e in enumerate(energies):
            fh.write(f"{i},{float(e)!r}\n")
    print(f"wrote {out}: {len(energies)} energies")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    features, dataset = _features_for_model(model, args.input)
    if dataset is None:
        raise DataError("evaluate needs a labeled cache file")
    energies = score_features(model, features)
    if getattr(args, "threshold_value", None) is not None:
        policy = ThresholdPolicy("fixed", value=args.threshold_value)
    else:
        policy = ThresholdPolicy(
            "percentile", ratio=_get(args, "ratio", dataset.anomaly_ratio)
        )
    predicted = threshold_energies(energies, policy)
    metrics = compute_metrics(predicted, dataset.anomalies)
    for name in ("accuracy", "precision", "recall", "f1"):
        print(f"{name}: {getattr(metrics, name)!r}")
    print(
        f"confusion: tp={metrics.tp} fp={metrics.fp} "
        f"fn={metrics.fn} tn={metrics.tn}"
    )
    if metrics.zero_division:
        print(f"zero-denominator metrics: {', '.join(metrics.zero_division)}")
    if args.output:
        import json

        payload = {
            "metrics": asdict(metrics),
            "threshold": (
                f"percentile:{policy.ratio!r}"
                if policy.kind == "percentile"
                else f"fixed:{policy.value!r}"
            ),
            "n": int(len(energies)),
            "test_anomaly_ratio": dataset.anomaly_ratio,
            "model": args.model,
            "input": args.input,
        }
        Path(args.output).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.output}")
    return EXIT_OK


def _experiment_config(args) -> expmod.ExperimentConfig:
    seeds = getattr(args, "seeds", None)
    if seeds is None:
        seeds = tuple(range(_get(args, "n_seeds", 10)))
    arms = getattr(args, "arms", None)
    if arms is None or tuple(arms) == ("both",):
        arms = expmod.ARMS
    threshold = None
    if getattr(args, "threshold_value", None) is not None:
        threshold = ThresholdPolicy("fixed", value=args.threshold_value)
    elif getattr(args, "ratio", None) is not None:
        threshold = ThresholdPolicy("percentile", ratio=args.ratio)
    layer_sizes = getattr(args, "layer_sizes", None)
    ae_cfg = None
    if layer_sizes is not None:
        ae_cfg = AutoencoderConfig(
            layer_sizes=tuple(layer_sizes),
            recon_features=_get(args, "recon_features", "both"),
        )
    elif getattr(args, "recon_features", None) is not None:
        # sized later per dataset; carry the feature mode through
        ae_cfg = None
    est_cfg = None
    if (
        getattr(args, "est_hidden", None) is not None
        or getattr(args, "components", None) is not None
        or getattr(args, "dropout", None) is not None
    ):
        est_cfg = EstimationConfig(
            hidden_sizes=tuple(_get(args, "est_hidden", (10,))),
            n_components=_get(args, "components", 4),
            dropout=_get(args, "dropout", 0.5),
        )
    som_cfg = SomConfig(
        grid_width=_get(args, "grid_width", 10),
        grid_height=_get(args, "grid_height", 10),
        learning_rate=_get(args, "som_lr", 0.6),
        neighborhood=_get(args, "neighborhood", "bubble"),
        initial_radius=_get(args, "som_radius", 5.0),
        iterations=getattr(args, "som_iterations", None),
    )
    if _get(args, "som_enabled", True) is False:
        arms = ("dagmm",)
    return expmod.ExperimentConfig(
        dataset_path=args.input,
        schema_path=getattr(args, "schema", None),
        data_format=_get(args, "data_format", "nslkdd"),
        scenario=_get(args, "scenario", "ideal"),
        ratios=tuple(_get(args, "ratios", (0.01, 0.05, 0.10))),
        arms=tuple(arms),
        seeds=tuple(seeds),
        som=som_cfg,
        autoencoder=ae_cfg,
        estimation=est_cfg,
        train=_train_config(args, 0),
        threshold=threshold,
        subsample=getattr(args, "subsample", None),
        subsample_seed=_get(args, "subsample_seed", 0),
        policy=_get(args, "policy", "warn-zeros"),
        inlier_labels=getattr(args, "inlier_labels", None),
        jobs=_get(args, "jobs", 1),
    )


def _write_report(outdir: Path, report) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "metrics_table.csv").write_text(
        report.metrics_table_csv(), encoding="utf-8"
    )
    (outdir / "runs.csv").write_text(report.runs_csv(), encoding="utf-8")
    (outdir / "whisker.csv").write_text(report.whisker_csv(), encoding="utf-8")
    if report.scenario == "mixed":
        (outdir / "degradation.csv").write_text(
            report.degradation_csv(), encoding="utf-8"
        )
    (outdir / "summary.json").write_text(
        report.to_json() + "\n", encoding="utf-8"
    )


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    report = expmod.run_experiment(cfg)
    outdir = Path(args.output)
    _write_report(outdir, report)
    print(report.metrics_table_csv(), end="")
    failed = sum(1 for r in report.runs if not r.ok)
    if failed:
        print(f"{failed} failed runs recorded in {outdir / 'runs.csv'}")
    print(f"wrote {outdir}/: metrics_table.csv runs.csv whisker.csv summary.json")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    lrs = _get(args, "som_lrs", (0.3, 0.6, 0.9))
    neighborhoods = _get(args, "neighborhoods", ("bubble", "gaussian"))
    sweep = expmod.run_sweep(cfg, tuple(lrs), tuple(neighborhoods))
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "sweep.csv").write_text(sweep.csv(), encoding="utf-8")
    print(sweep.csv(), end="")
    print(f"wrote {outdir / 'sweep.csv'}")
    return EXIT_OK


# -- parser ------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat key-value config file")


def _add_data_options(p):
    p.add_argument("--schema", help="schema file (default: built-in NSL-KDD)")
    p.add_argument("--data-format", choices=("nslkdd", "csv"), dest="data_format")
    p.add_argument("--policy", choices=datamod.UNSEEN_POLICIES)
    p.add_argument("--inlier-labels", type=_strs, dest="inlier_labels",
                   help="treat these labels as inliers, all others as anomalies")


def _add_model_options(p):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--no-som", dest="som_enabled", action="store_const",
                       const=False, help="drop the map (latent = [z_r, z_c])")
    group.add_argument("--with-som", dest="som_enabled", action="store_const",
                       const=True)
    p.add_argument("--grid-width", type=int)
    p.add_argument("--grid-height", type=int)
    p.add_argument("--som-lr", type=float, dest="som_lr")
    p.add_argument("--neighborhood", choices=("bubble", "gaussian"))
    p.add_argument("--som-radius", type=float, dest="som_radius")
    p.add_argument("--som-iterations", type=int, dest="som_iterations")
    p.add_argument("--layer-sizes", type=_ints, dest="layer_sizes")
    p.add_argument("--recon-features", choices=("both", "euclidean"),
                   dest="recon_features")
    p.add_argument("--est-hidden", type=_ints, dest="est_hidden")
    p.add_argument("--components", type=int)
    p.add_argument("--dropout", type=float)


def _add_train_options(p):
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--seed", type=int)


def build_parser() -> CliParser:
    parser = CliParser(prog="somdagmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="encode a raw file into a cache")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report", help="parse report path (default <output>.report.json)")
    p.add_argument("--max-bad-ratio", type=float, dest="max_bad_ratio")
    _add_data_options(p)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on a preprocessed cache")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="training log CSV path (default <output>.log.csv)")
    _add_model_options(p)
    _add_train_options(p)
    p.add_argument("--policy", choices=datamod.UNSEEN_POLICIES)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write energies for a cache or raw file")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="threshold + metrics on a labeled cache")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="JSON report path")
    p.add_argument("--ratio", type=float, help="percentile threshold ratio "
                   "(default: the cache's anomaly fraction)")
    p.add_argument("--threshold-value", type=float, dest="threshold_value",
                   help="fixed energy threshold instead of a percentile")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="seeded multi-run comparison")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--scenario", choices=expmod.SCENARIOS)
    p.add_argument("--ratios", type=_floats)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--n-seeds", type=int, dest="n_seeds")
    p.add_argument("--arms", type=_strs, help="both | som-dagmm | dagmm")
    p.add_argument("--subsample", type=int)
    p.add_argument("--subsample-seed", type=int, dest="subsample_seed")
    p.add_argument("--jobs", type=int)
    p.add_argument("--ratio", type=float, help="fixed percentile threshold ratio")
    p.add_argument("--threshold-value", type=float, dest="threshold_value")
    _add_data_options(p)
    _add_model_options(p)
    _add_train_options(p)
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="map hyperparameter grid (mean F1)")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--som-lrs", type=_floats, dest="som_lrs")
    p.add_argument("--neighborhoods", type=_strs)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--n-seeds", type=int, dest="n_seeds")
    p.add_argument("--subsample", type=int)
    p.add_argument("--subsample-seed", type=int, dest="subsample_seed")
    p.add_argument("--jobs", type=int)
    _add_data_options(p)
    _add_model_options(p)
    _add_train_options(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(args)
        return args.func(args)
    except DivergedError as exc:
        print(f"somdagmm: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SchemaMismatchError as exc:
        print(f"somdagmm: schema mismatch: {exc}", file=sys.stderr)
        if exc.expected or exc.actual:
            print(
                f"somdagmm: model schema hash: {exc.expected}\n"
                f"somdagmm: input schema hash: {exc.actual}",
                file=sys.stderr,
            )
        return EXIT_DATA
    except (DataError, SingularMatrixError, OSError) as exc:
        print(f"somdagmm: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"somdagmm: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
