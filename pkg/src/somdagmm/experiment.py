"""Seeded multi-run experiment harness.

One run = split the records, optionally blend held-aside anomalies into
the training half, fit the full pipeline, score the test half, threshold
and compute metrics. The harness repeats this over a seed list for each
algorithm arm ("dagmm" = no map, "som-dagmm" = with map) and, in the
mixed scenario, for each contamination ratio, then aggregates AVG/STDEV
per condition. A diverged or otherwise failed seed becomes a failed-run
entry and never aborts the other seeds.

Both arms of the same run seed see identical data: split, pool and
contamination randomness derive from the run seed alone, while network
and shuffle seeds are spawned per run via SeedSequence, so two runs with
the same seed are bit-identical end to end.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import data as datamod
from .compression import AutoencoderConfig, default_layer_sizes
from .errors import SomDagmmError
from .estimation import EstimationConfig
from .evaluate import (
    RunMetrics,
    ThresholdPolicy,
    aggregate,
    compute_metrics,
    degradation_table,
    metrics_table,
    threshold_energies,
    whisker_table,
)
from .som import SomConfig
from .trainer import TrainConfig, score_features, train

ARMS = ("dagmm", "som-dagmm")
ARM_DISPLAY = {"dagmm": "DAGMM", "som-dagmm": "SOM-DAGMM"}
SCENARIOS = ("ideal", "mixed")
_SUB_SEED_ROLES = ("split", "pool", "mix", "som", "ae", "est", "train")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full experiment needs; sub-config seeds are templates
    that get replaced by per-run derived seeds."""

    dataset_path: str
    schema_path: str | None = None  # None -> built-in NSL-KDD schema
    data_format: str = "nslkdd"  # nslkdd | csv
    scenario: str = "ideal"
    ratios: tuple[float, ...] = (0.01, 0.05, 0.10)
    arms: tuple[str, ...] = ARMS
    seeds: tuple[int, ...] = tuple(range(10))
    som: SomConfig = SomConfig()
    autoencoder: AutoencoderConfig | None = None  # None -> sized to the data
    estimation: EstimationConfig | None = None  # None -> sized to the latent
    train: TrainConfig = TrainConfig()
    threshold: ThresholdPolicy | None = None  # None -> percentile at test ratio
    subsample: int | None = None
    subsample_seed: int = 0
    policy: str = "warn-zeros"
    inlier_labels: tuple[str, ...] | None = None
    jobs: int = 1

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.data_format not in ("nslkdd", "csv"):
            raise ValueError("data format must be nslkdd or csv")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seed list must be non-empty with unique entries")
        if not self.arms or any(a not in ARMS for a in self.arms):
            raise ValueError(f"arms must be a non-empty subset of {ARMS}")
        if self.scenario == "mixed":
            if not self.ratios:
                raise ValueError("mixed scenario needs contamination ratios")
            if any(not 0.0 < r < 0.5 for r in self.ratios):
                raise ValueError("contamination ratios must be in (0, 0.5)")
        if self.subsample is not None and self.subsample < 10:
            raise ValueError("subsample must be at least 10 rows")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        self.som.validate()
        self.train.validate()
        if self.threshold is not None:
            self.threshold.validate()


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one (arm, ratio, seed) cell; error text when it failed."""

    arm: str
    ratio: float
    seed: int
    metrics: RunMetrics | None
    error: str | None = None
    n_train: int = 0
    n_test: int = 0
    test_anomaly_ratio: float = 0.0
    threshold: str = ""

    @property
    def ok(self) -> bool:
        return self.metrics is not None


def _sub_seeds(seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(_SUB_SEED_ROLES))
    return {
        role: int(child.generate_state(1, np.uint64)[0])
        for role, child in zip(_SUB_SEED_ROLES, children)
    }


def _load_records(cfg: ExperimentConfig):
    schema = (
        datamod.load_builtin_schema("nsl_kdd")
        if cfg.schema_path is None
        else datamod.load_schema(cfg.schema_path)
    )
    if cfg.inlier_labels is not None:
        schema = schema.with_inlier_labels(cfg.inlier_labels)
    parse = datamod.parse_nslkdd if cfg.data_format == "nslkdd" else datamod.parse_csv
    records, _ = parse(cfg.dataset_path, schema)
    if cfg.subsample is not None and cfg.subsample < records.n_rows:
        rng = np.random.default_rng(cfg.subsample_seed)
        keep = rng.choice(records.n_rows, size=cfg.subsample, replace=False)
        records = records.take(np.sort(keep))
    return records, schema


def run_single(
    records: datamod.ParsedRecords,
    schema: datamod.RecordSchema,
    cfg: ExperimentConfig,
    arm: str,
    ratio: float,
    seed: int,
) -> RunRecord:
    """One full cell: carve pool -> split -> contaminate -> fit stats on
    the training half only -> train -> score -> threshold -> metrics."""
    sub = _sub_seeds(seed)
    try:
        work = records
        pool = None
        if ratio > 0.0:
            ano = np.flatnonzero(records.anomalies)
            n_train_inliers = int(np.sum(~records.anomalies)) // 2
            need = datamod.contamination_count(n_train_inliers, ratio)
            if need > len(ano):
                raise datamod.DataError(
                    f"contamination needs {need} anomalies, dataset has {len(ano)}"
                )
            rng = np.random.default_rng(sub["pool"])
            picked = ano[np.sort(rng.choice(len(ano), size=need, replace=False))]
            pool = records.take(picked)
            keep = np.setdiff1d(np.arange(records.n_rows), picked)
            work = records.take(keep)
        train_rec, test_rec = datamod.split_ideal(work, sub["split"])
        if pool is not None:
            train_rec = datamod.mix_contamination(train_rec, pool, ratio, sub["mix"])
        stats = datamod.fit_stats(train_rec)
        train_ds = datamod.transform(train_rec, schema, stats, cfg.policy, seed)
        test_ds = datamod.transform(test_rec, schema, stats, cfg.policy, seed)

        ae_cfg = cfg.autoencoder or AutoencoderConfig(
            default_layer_sizes(schema.dimension)
        )
        ae_cfg = replace(ae_cfg, seed=sub["ae"])
        with_som = arm == "som-dagmm"
        som_cfg = replace(cfg.som, seed=sub["som"]) if with_som else None
        latent = (2 if with_som else 0) + ae_cfg.recon_dim + ae_cfg.code_dim
        est_cfg = cfg.estimation or EstimationConfig()
        est_cfg = replace(est_cfg, latent_dim=latent, seed=sub["est"])
        train_cfg = replace(cfg.train, seed=sub["train"])

        model = train(train_ds.features, som_cfg, ae_cfg, est_cfg, train_cfg)
        energies = score_features(model, test_ds.features)
        policy = cfg.threshold or ThresholdPolicy(
            "percentile", ratio=test_ds.anomaly_ratio
        )
        predicted = threshold_energies(energies, policy)
        metrics = compute_metrics(predicted, test_ds.anomalies)
        desc = (
            f"percentile:{policy.ratio!r}"
            if policy.kind == "percentile"
            else f"fixed:{policy.value!r}"
        )
        return RunRecord(
            arm=arm,
            ratio=ratio,
            seed=seed,
            metrics=metrics,
            n_train=train_ds.n_rows,
            n_test=test_ds.n_rows,
            test_anomaly_ratio=test_ds.anomaly_ratio,
            threshold=desc,
        )
    except (SomDagmmError, ValueError, OverflowError) as exc:
        return RunRecord(
            arm=arm,
            ratio=ratio,
            seed=seed,
            metrics=None,
            error=f"{type(exc).__name__}: {exc}",
        )


def _run_task(args):
    return run_single(*args)


@dataclass
class ExperimentReport:
    """Resolved config, every run record, and table/JSON emitters."""

    config: dict
    runs: list[RunRecord]
    scenario: str
    arms: tuple[str, ...]
    ratios: tuple[float, ...]

    def condition_label(self, arm: str, ratio: float) -> str:
        name = ARM_DISPLAY[arm]
        if self.scenario == "ideal":
            return name
        return f"{name} {100.0 * ratio:g}%"

    def conditions(self) -> list[tuple[str, str, float]]:
        return [
            (self.condition_label(arm, ratio), arm, ratio)
            for arm in self.arms
            for ratio in self.ratios
        ]

    def successful(self, arm: str, ratio: float) -> list[RunMetrics]:
        return [
            r.metrics
            for r in self.runs
            if r.arm == arm and r.ratio == ratio and r.ok
        ]

    def f1_values(self, arm: str, ratio: float) -> list[float]:
        return [m.f1 for m in self.successful(arm, ratio)]

    def metrics_table_csv(self) -> str:
        return metrics_table(
            {label: self.successful(arm, ratio)
             for label, arm, ratio in self.conditions()}
        )

    def whisker_csv(self) -> str:
        return whisker_table(
            {label: self.f1_values(arm, ratio)
             for label, arm, ratio in self.conditions()}
        )

    def degradation_csv(self) -> str:
        cells: dict[str, dict[float, float]] = {}
        for arm in self.arms:
            col = {}
            for ratio in self.ratios:
                values = self.f1_values(arm, ratio)
                if values:
                    col[ratio] = aggregate(values)[0]
            cells[ARM_DISPLAY[arm]] = col
        return degradation_table(cells, ratios=self.ratios)

    def runs_csv(self) -> str:
        header = (
            "arm,ratio,seed,status,accuracy,precision,recall,f1,"
            "tp,fp,fn,tn,n_train,n_test,test_anomaly_ratio,threshold,error"
        )
        lines = [header]
        for r in self.runs:
            if r.ok:
                m = r.metrics
                lines.append(
                    f"{r.arm},{r.ratio!r},{r.seed},ok,"
                    f"{m.accuracy!r},{m.precision!r},{m.recall!r},{m.f1!r},"
                    f"{m.tp},{m.fp},{m.fn},{m.tn},"
                    f"{r.n_train},{r.n_test},{r.test_anomaly_ratio!r},"
                    f"{r.threshold},"
                )
            else:
                err = (r.error or "").replace(",", ";")
                lines.append(
                    f"{r.arm},{r.ratio!r},{r.seed},failed,,,,,,,,,,,,,{err}"
                )
        for label, arm, ratio in self.conditions():
            runs = self.successful(arm, ratio)
            if not runs:
                continue
            for agg_name, pick in (("AVG", 0), ("STDEV", 1)):
                cells = [
                    repr(aggregate([m.by_name(name) for m in runs])[pick])
                    for name in ("accuracy", "precision", "recall", "f1")
                ]
                lines.append(
                    f"{arm},{ratio!r},{agg_name},aggregate,"
                    + ",".join(cells)
                    + ",,,,," + f"{len(runs)} runs,,,,"
                )
        return "\n".join(lines) + "\n"

    def aggregates(self) -> dict:
        out = {}
        for label, arm, ratio in self.conditions():
            runs = self.successful(arm, ratio)
            entry: dict = {
                "runs": len(runs),
                "failed": sum(
                    1
                    for r in self.runs
                    if r.arm == arm and r.ratio == ratio and not r.ok
                ),
            }
            if runs:
                for name in ("accuracy", "precision", "recall", "f1"):
                    avg, std = aggregate([m.by_name(name) for m in runs])
                    entry[name] = {"avg": avg, "stdev": std}
            out[label] = entry
        return out

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "aggregates": self.aggregates(),
            "runs": [
                {
                    "arm": r.arm,
                    "ratio": r.ratio,
                    "seed": r.seed,
                    "status": "ok" if r.ok else "failed",
                    "metrics": None if not r.ok else asdict(r.metrics),
                    "error": r.error,
                    "n_train": r.n_train,
                    "n_test": r.n_test,
                    "test_anomaly_ratio": r.test_anomaly_ratio,
                    "threshold": r.threshold,
                }
                for r in self.runs
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _resolved_config(cfg: ExperimentConfig, schema) -> dict:
    ae = cfg.autoencoder or AutoencoderConfig(default_layer_sizes(schema.dimension))
    est = cfg.estimation or EstimationConfig()
    threshold = (
        "percentile:test-anomaly-ratio"
        if cfg.threshold is None
        else f"{cfg.threshold.kind}:"
        + repr(
            cfg.threshold.ratio
            if cfg.threshold.kind == "percentile"
            else cfg.threshold.value
        )
    )
    return {
        "dataset": cfg.dataset_path,
        "data_format": cfg.data_format,
        "schema_hash": datamod.schema_hash(schema),
        "scenario": cfg.scenario,
        "ratios": list(cfg.ratios) if cfg.scenario == "mixed" else [0.0],
        "arms": list(cfg.arms),
        "seeds": list(cfg.seeds),
        "subsample": cfg.subsample,
        "subsample_seed": cfg.subsample_seed,
        "som": asdict(cfg.som),
        "autoencoder": asdict(ae),
        "estimation": asdict(est),
        "train": asdict(cfg.train),
        "threshold": threshold,
        "unseen_policy": cfg.policy,
        "inlier_labels": (
            None if cfg.inlier_labels is None else list(cfg.inlier_labels)
        ),
        "seed_derivation": (
            "per-run SeedSequence(seed).spawn over roles "
            + "/".join(_SUB_SEED_ROLES)
        ),
        "latent_dim_by_arm": {
            arm: (2 if arm == "som-dagmm" else 0) + ae.recon_dim + ae.code_dim
            for arm in cfg.arms
        },
    }


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute every (arm, ratio, seed) cell and assemble the report."""
    cfg.validate()
    records, schema = _load_records(cfg)
    ratios = tuple(cfg.ratios) if cfg.scenario == "mixed" else (0.0,)
    tasks = [
        (records, schema, cfg, arm, ratio, seed)
        for arm in cfg.arms
        for ratio in ratios
        for seed in cfg.seeds
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        runs = [run_single(*t) for t in tasks]
    return ExperimentReport(
        config=_resolved_config(cfg, schema),
        runs=runs,
        scenario=cfg.scenario,
        arms=tuple(cfg.arms),
        ratios=ratios,
    )


@dataclass
class SweepReport:
    """Mean F1 over a (learning rate x neighborhood) grid of map settings."""

    learning_rates: tuple[float, ...]
    neighborhoods: tuple[str, ...]
    grid: dict[tuple[float, str], float | None]

    def csv(self) -> str:
        lines = ["learning_rate," + ",".join(self.neighborhoods)]
        for lr in self.learning_rates:
            row = [repr(float(lr))]
            for nb in self.neighborhoods:
                value = self.grid[(lr, nb)]
                row.append("-" if value is None else repr(value))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def run_sweep(
    cfg: ExperimentConfig,
    learning_rates: tuple[float, ...],
    neighborhoods: tuple[str, ...],
) -> SweepReport:
    """Grid of mean F1 for the map-assisted arm over map hyperparameters."""
    grid: dict[tuple[float, str], float | None] = {}
    for lr in learning_rates:
        for nb in neighborhoods:
            cell_cfg = replace(
                cfg,
                som=replace(cfg.som, learning_rate=lr, neighborhood=nb),
                arms=("som-dagmm",),
            )
            report = run_experiment(cell_cfg)
            ratio = report.ratios[0]
            values = report.f1_values("som-dagmm", ratio)
            grid[(lr, nb)] = aggregate(values)[0] if values else None
    return SweepReport(
        learning_rates=tuple(learning_rates),
        neighborhoods=tuple(neighborhoods),
        grid=grid,
    )
