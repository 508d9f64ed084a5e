"""Dataset ingestion and experiment-split construction.

Covers: schema files (column roles + categorical vocabularies + label
convention), NSL-KDD-layout parsing and generic numeric CSV parsing with
per-line error reports, one-hot + min-max encoding to the fixed feature
space (122 dims for the canonical NSL-KDD schema), inlier-half splits,
contamination mixing, and a text cache format for preprocessed data.

Label convention: the schema declares which labels count as anomalies.
For NSL-KDD the majority "attack" records are the inliers used for
training and the "normal" records are the anomalies; the convention is
explicit in the schema (and flippable via --inlier-label) because it is
counterintuitive.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import DataError

SCHEMA_MAGIC = "somdagmm-schema"
SCHEMA_VERSION = 1
CACHE_MAGIC = "somdagmm-cache"
CACHE_VERSION = 1
UNSEEN_POLICIES = ("warn-zeros", "reject")
DEFAULT_BAD_LINE_RATIO = 0.01
LABEL_MODES = ("anomaly", "inlier")
_UNSEEN_EXAMPLE_CAP = 10


# -- schema ------------------------------------------------------------


@dataclass(frozen=True)
class Feature:
    """One input column: continuous, or categorical with a fixed vocabulary."""

    name: str
    vocabulary: tuple[str, ...] | None = None

    @property
    def is_categorical(self) -> bool:
        return self.vocabulary is not None

    @property
    def width(self) -> int:
        return len(self.vocabulary) if self.vocabulary is not None else 1


@dataclass(frozen=True)
class RecordSchema:
    """Ordered feature roles plus the label-to-anomaly convention.

    label_mode "anomaly": labels in label_set are anomalies, the rest
    inliers. label_mode "inlier": the set names the inlier labels and
    everything else is an anomaly.
    """

    features: tuple[Feature, ...]
    label_name: str = "label"
    label_mode: str = "anomaly"
    label_set: tuple[str, ...] = ("normal",)

    def validate(self) -> None:
        names = [f.name for f in self.features]
        if not names:
            raise DataError("schema has no features")
        if len(set(names)) != len(names):
            raise DataError("schema feature names must be unique")
        for f in self.features:
            if f.vocabulary is not None and len(f.vocabulary) == 0:
                raise DataError(f"feature {f.name!r} has an empty vocabulary")
        if self.label_mode not in LABEL_MODES:
            raise DataError(f"label mode must be one of {LABEL_MODES}")
        if not self.label_set:
            raise DataError("label convention needs at least one label")

    @property
    def dimension(self) -> int:
        return sum(f.width for f in self.features)

    @property
    def continuous_count(self) -> int:
        return sum(1 for f in self.features if not f.is_categorical)

    def is_anomaly(self, label: str) -> bool:
        hit = label in self.label_set
        return hit if self.label_mode == "anomaly" else not hit

    def with_inlier_labels(self, labels: tuple[str, ...]) -> "RecordSchema":
        """Override the convention: the given labels become the inliers."""
        return replace(self, label_mode="inlier", label_set=tuple(labels))


def serialize_schema(schema: RecordSchema) -> str:
    """Canonical text form; also the basis of the schema hash."""
    lines = [f"{SCHEMA_MAGIC} {SCHEMA_VERSION}"]
    lines.append(
        f"label {schema.label_name} {schema.label_mode}={','.join(schema.label_set)}"
    )
    for f in schema.features:
        if f.is_categorical:
            lines.append(f"feature {f.name} categorical {','.join(f.vocabulary)}")
        else:
            lines.append(f"feature {f.name} continuous")
    return "\n".join(lines) + "\n"


def parse_schema_text(text: str) -> RecordSchema:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty schema")
    head = lines[0].split()
    if len(head) != 2 or head[0] != SCHEMA_MAGIC:
        raise DataError(f"not a schema file (expected '{SCHEMA_MAGIC} <version>')")
    if head[1] != str(SCHEMA_VERSION):
        raise DataError(f"unsupported schema version {head[1]}")
    label_name = None
    label_mode = "anomaly"
    label_set: tuple[str, ...] = ()
    features: list[Feature] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "label" and len(parts) == 3:
            label_name = parts[1]
            mode, _, values = parts[2].partition("=")
            if mode not in LABEL_MODES or not values:
                raise DataError(f"bad label convention: {ln!r}")
            label_mode = mode
            label_set = tuple(values.split(","))
        elif parts[0] == "feature" and len(parts) == 3 and parts[2] == "continuous":
            features.append(Feature(parts[1]))
        elif parts[0] == "feature" and len(parts) == 4 and parts[2] == "categorical":
            features.append(Feature(parts[1], tuple(parts[3].split(","))))
        else:
            raise DataError(f"unrecognized schema line: {ln!r}")
    if label_name is None:
        raise DataError("schema is missing its label line")
    schema = RecordSchema(tuple(features), label_name, label_mode, label_set)
    schema.validate()
    return schema


def load_schema(path) -> RecordSchema:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_schema_text(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc


def load_builtin_schema(name: str = "nsl_kdd") -> RecordSchema:
    """Schemas shipped with the package (currently: nsl_kdd, 122 dims)."""
    ref = resources.files("somdagmm").joinpath(f"schemas/{name}.schema")
    try:
        return parse_schema_text(ref.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"no built-in schema named {name!r}") from exc


def schema_hash(schema: RecordSchema) -> str:
    digest = hashlib.sha256(serialize_schema(schema).encode("utf-8")).hexdigest()
    return digest[:16]


# -- parsing -----------------------------------------------------------


@dataclass(frozen=True)
class ParseReport:
    """Per-file parse outcome; bad lines carry (line number, reason)."""

    source: str
    total: int
    parsed: int
    bad: tuple[tuple[int, str], ...]

    @property
    def bad_ratio(self) -> float:
        return len(self.bad) / self.total if self.total else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "source": self.source,
                "total_lines": self.total,
                "parsed": self.parsed,
                "bad_lines": [{"line": n, "reason": r} for n, r in self.bad],
                "bad_ratio": self.bad_ratio,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass(frozen=True)
class ParsedRecords:
    """Typed records before encoding: continuous values and vocab indices.

    cat entries are vocabulary indices, -1 for a value outside the
    schema vocabulary (resolved at transform time by policy).
    """

    cont: np.ndarray  # (N, n_continuous) float64
    cat: np.ndarray  # (N, n_categorical) int64
    labels: tuple[str, ...]
    anomalies: np.ndarray  # (N,) bool
    source: str
    unseen_examples: tuple[tuple[str, str], ...] = ()

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "ParsedRecords":
        idx = np.asarray(idx)
        return ParsedRecords(
            cont=self.cont[idx],
            cat=self.cat[idx],
            labels=tuple(self.labels[i] for i in idx),
            anomalies=self.anomalies[idx],
            source=self.source,
            unseen_examples=self.unseen_examples,
        )


def _finish_parse(
    schema, rows_cont, rows_cat, labels, bad, total, unseen, source, max_bad_ratio
):
    report = ParseReport(source=source, total=total, parsed=len(labels), bad=tuple(bad))
    if total == 0 or len(labels) == 0:
        err = DataError(f"{source}: no records found")
        err.report = report
        raise err
    if report.bad_ratio > max_bad_ratio:
        err = DataError(
            f"{source}: {len(bad)} of {total} lines malformed "
            f"(ratio {report.bad_ratio:.4f} exceeds {max_bad_ratio})"
        )
        err.report = report
        raise err
    n_cont = schema.continuous_count
    n_cat = len(schema.features) - n_cont
    records = ParsedRecords(
        cont=np.asarray(rows_cont, dtype=np.float64).reshape(len(labels), n_cont),
        cat=np.asarray(rows_cat, dtype=np.int64).reshape(len(labels), n_cat),
        labels=tuple(labels),
        anomalies=np.asarray([schema.is_anomaly(l) for l in labels], dtype=bool),
        source=source,
        unseen_examples=tuple(unseen),
    )
    return records, report


def _parse_fields(schema, fields, vocab_maps, unseen):
    """One record's feature fields -> (cont values, cat indices)."""
    cont, cat = [], []
    vi = 0
    for f, raw in zip(schema.features, fields):
        raw = raw.strip()
        if f.is_categorical:
            idx = vocab_maps[vi].get(raw, -1)
            if idx < 0 and len(unseen) < _UNSEEN_EXAMPLE_CAP:
                unseen.append((f.name, raw))
            cat.append(idx)
            vi += 1
        else:
            try:
                cont.append(float(raw))
            except ValueError:
                raise ValueError(f"field {f.name!r}: cannot parse {raw!r} as a number")
    return cont, cat


def _vocab_maps(schema):
    return [
        {v: i for i, v in enumerate(f.vocabulary)}
        for f in schema.features
        if f.is_categorical
    ]


def parse_nslkdd(
    path,
    schema: RecordSchema | None = None,
    max_bad_ratio: float = DEFAULT_BAD_LINE_RATIO,
) -> tuple[ParsedRecords, ParseReport]:
    """Parse a headerless comma-separated file in the NSL-KDD layout.

    Each line holds the schema's features, the label, and optionally a
    trailing difficulty field, which is ignored. Malformed lines are
    collected per line number; the parse is fatal only when their ratio
    exceeds max_bad_ratio.
    """
    if schema is None:
        schema = load_builtin_schema("nsl_kdd")
    schema.validate()
    n_feat = len(schema.features)
    vocab_maps = _vocab_maps(schema)
    rows_cont, rows_cat, labels = [], [], []
    bad: list[tuple[int, str]] = []
    unseen: list[tuple[str, str]] = []
    total = 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            fields = line.split(",")
            if len(fields) not in (n_feat + 1, n_feat + 2):
                bad.append(
                    (line_no, f"expected {n_feat + 1} or {n_feat + 2} fields, "
                              f"got {len(fields)}")
                )
                continue
            try:
                cont, cat = _parse_fields(schema, fields, vocab_maps, unseen)
            except ValueError as exc:
                bad.append((line_no, str(exc)))
                continue
            rows_cont.append(cont)
            rows_cat.append(cat)
            labels.append(fields[n_feat].strip())
    return _finish_parse(
        schema, rows_cont, rows_cat, labels, bad, total, unseen, str(path),
        max_bad_ratio,
    )


def parse_csv(
    path,
    schema: RecordSchema,
    max_bad_ratio: float = DEFAULT_BAD_LINE_RATIO,
) -> tuple[ParsedRecords, ParseReport]:
    """Parse a headered comma-separated file by column name.

    The header must contain every schema feature plus the label column;
    extra columns are ignored. Covers numeric flow datasets whose roles
    are supplied via a user schema.
    """
    schema.validate()
    vocab_maps = _vocab_maps(schema)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        header_line = fh.readline()
        if not header_line.strip():
            err = DataError(f"{path}: no records found")
            err.report = ParseReport(str(path), 0, 0, ())
            raise err
        header = [h.strip() for h in header_line.split(",")]
        positions = {name: i for i, name in enumerate(header)}
        missing = [
            name
            for name in [f.name for f in schema.features] + [schema.label_name]
            if name not in positions
        ]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        cols = [positions[f.name] for f in schema.features]
        label_col = positions[schema.label_name]
        rows_cont, rows_cat, labels = [], [], []
        bad: list[tuple[int, str]] = []
        unseen: list[tuple[str, str]] = []
        total = 0
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            total += 1
            fields = line.split(",")
            if len(fields) != len(header):
                bad.append(
                    (line_no, f"expected {len(header)} fields, got {len(fields)}")
                )
                continue
            try:
                cont, cat = _parse_fields(
                    schema, [fields[c] for c in cols], vocab_maps, unseen
                )
            except ValueError as exc:
                bad.append((line_no, str(exc)))
                continue
            rows_cont.append(cont)
            rows_cat.append(cat)
            labels.append(fields[label_col].strip())
    return _finish_parse(
        schema, rows_cont, rows_cat, labels, bad, total, unseen, str(path),
        max_bad_ratio,
    )


# -- encoding ----------------------------------------------------------


@dataclass(frozen=True)
class PreprocessStats:
    """Per-continuous-feature min/max, fit on the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    def validate(self) -> None:
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise DataError("preprocessing stats are malformed")
        if np.any(self.maxs < self.mins):
            raise DataError("preprocessing stats have max < min")


@dataclass
class LabeledDataset:
    """Encoded rows with their anomaly flags and raw labels for audit."""

    features: np.ndarray  # (N, D) float64
    anomalies: np.ndarray  # (N,) bool
    labels: tuple[str, ...]
    provenance: dict = field(default_factory=dict)
    warnings: int = 0  # unseen-category occurrences zero-encoded

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def anomaly_ratio(self) -> float:
        return float(np.mean(self.anomalies)) if self.n_rows else 0.0

    def take(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            features=self.features[idx],
            anomalies=self.anomalies[idx],
            labels=tuple(self.labels[i] for i in idx),
            provenance=dict(self.provenance),
            warnings=self.warnings,
        )


def fit_stats(records: ParsedRecords) -> PreprocessStats:
    if records.n_rows < 1:
        raise DataError("cannot fit preprocessing stats on zero records")
    return PreprocessStats(
        mins=records.cont.min(axis=0), maxs=records.cont.max(axis=0)
    )


def encode(
    records: ParsedRecords,
    schema: RecordSchema,
    stats: PreprocessStats,
    policy: str = "warn-zeros",
) -> tuple[np.ndarray, int]:
    """(features, unseen count). Continuous columns are min-max scaled and
    clipped to [0,1] (constant features map to 0); categorical columns
    expand to one-hot blocks in vocabulary order. Unseen categories
    encode as all-zeros under "warn-zeros" or fail under "reject".
    """
    if policy not in UNSEEN_POLICIES:
        raise DataError(f"unseen-category policy must be one of {UNSEEN_POLICIES}")
    stats.validate()
    if stats.mins.shape[0] != schema.continuous_count:
        raise DataError("stats do not match the schema's continuous features")
    n = records.n_rows
    unseen_count = int(np.sum(records.cat < 0))
    if unseen_count and policy == "reject":
        examples = ", ".join(
            f"{name}={value!r}" for name, value in records.unseen_examples[:3]
        )
        raise DataError(
            f"{unseen_count} values outside schema vocabularies"
            + (f" (e.g. {examples})" if examples else "")
        )
    span = stats.maxs - stats.mins
    with np.errstate(invalid="ignore"):
        scaled = np.where(span > 0, (records.cont - stats.mins) / span, 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    blocks = []
    ci = vi = 0
    rows = np.arange(n)
    for f in schema.features:
        if f.is_categorical:
            block = np.zeros((n, len(f.vocabulary)))
            idx = records.cat[:, vi]
            hit = idx >= 0
            block[rows[hit], idx[hit]] = 1.0
            blocks.append(block)
            vi += 1
        else:
            blocks.append(scaled[:, ci : ci + 1])
            ci += 1
    return np.concatenate(blocks, axis=1), unseen_count


def transform(
    records: ParsedRecords,
    schema: RecordSchema,
    stats: PreprocessStats,
    policy: str = "warn-zeros",
    seed: object = "-",
) -> LabeledDataset:
    features, warnings = encode(records, schema, stats, policy)
    return LabeledDataset(
        features=features,
        anomalies=records.anomalies.copy(),
        labels=records.labels,
        provenance={
            "source": records.source,
            "schema_hash": schema_hash(schema),
            "seed": str(seed),
        },
        warnings=warnings,
    )


def fit_transform(
    records: ParsedRecords, schema: RecordSchema, policy: str = "warn-zeros"
) -> tuple[LabeledDataset, PreprocessStats]:
    stats = fit_stats(records)
    return transform(records, schema, stats, policy), stats


@dataclass(frozen=True)
class Preprocessor:
    """Schema + frozen stats; what a trained model stores for scoring."""

    schema: RecordSchema
    stats: PreprocessStats
    policy: str = "warn-zeros"

    def transform(self, records: ParsedRecords) -> np.ndarray:
        return encode(records, self.schema, self.stats, self.policy)[0]


# -- splits ------------------------------------------------------------


def split_ideal(data, seed: int):
    """Seeded inlier split: half the inliers train, the rest plus every
    anomaly test. Works on ParsedRecords (pre-encoding, the leak-free
    route) and on LabeledDataset alike; row order inside each side
    follows the source file.
    """
    anomalies = data.anomalies
    inl = np.flatnonzero(~anomalies)
    ano = np.flatnonzero(anomalies)
    if len(inl) < 2:
        raise DataError(f"need at least 2 inliers to split, have {len(inl)}")
    shuf = np.random.default_rng(seed).permutation(inl)
    half = len(inl) // 2
    train = data.take(np.sort(shuf[:half]))
    test = data.take(np.sort(np.concatenate([shuf[half:], ano])))
    return train, test


def concat(a, b):
    """Row-wise concatenation of two datasets of the same type."""
    if isinstance(a, ParsedRecords) and isinstance(b, ParsedRecords):
        return ParsedRecords(
            cont=np.concatenate([a.cont, b.cont], axis=0),
            cat=np.concatenate([a.cat, b.cat], axis=0),
            labels=a.labels + b.labels,
            anomalies=np.concatenate([a.anomalies, b.anomalies]),
            source=a.source,
            unseen_examples=a.unseen_examples + b.unseen_examples,
        )
    if isinstance(a, LabeledDataset) and isinstance(b, LabeledDataset):
        return LabeledDataset(
            features=np.concatenate([a.features, b.features], axis=0),
            anomalies=np.concatenate([a.anomalies, b.anomalies]),
            labels=a.labels + b.labels,
            provenance=dict(a.provenance),
            warnings=a.warnings + b.warnings,
        )
    raise TypeError(f"cannot concatenate {type(a).__name__} and {type(b).__name__}")


def contamination_count(n_inliers: int, ratio: float) -> int:
    """Smallest A with A == round(ratio * (n_inliers + A)).

    Such an A always exists for ratio < 0.5 because the defect
    round(ratio*(B+A)) - A steps down by at most 1 as A grows.
    """
    if not 0.0 <= ratio < 0.5:
        raise ValueError("contamination ratio must be in [0, 0.5)")
    if ratio == 0.0:
        return 0
    target = ratio * n_inliers / (1.0 - ratio)
    a = max(0, int(np.floor(target)) - 3)
    while a <= target + 8:
        if round(ratio * (n_inliers + a)) == a:
            return a
        a += 1
    raise DataError(
        f"no integer anomaly count realizes ratio {ratio} over {n_inliers} inliers"
    )


def mix_contamination(train, pool, ratio: float, seed: int):
    """Blend seeded-sampled pool anomalies into a training set so they
    make up exactly round(ratio * final_size) of it, then permute rows.
    The pool must be disjoint from any test anomalies; labels stay
    attached for audit but the trainer only ever sees feature rows.
    """
    count = contamination_count(train.n_rows, ratio)
    if count == 0:
        return train
    if count > pool.n_rows:
        raise DataError(
            f"contamination needs {count} anomalies, pool has {pool.n_rows}"
        )
    rng = np.random.default_rng(seed)
    picked = pool.take(np.sort(rng.choice(pool.n_rows, size=count, replace=False)))
    combined = concat(train, picked)
    return combined.take(rng.permutation(combined.n_rows))


# -- preprocessed-dataset cache ---------------------------------------


def write_cache(path, dataset: LabeledDataset, schema: RecordSchema,
                stats: PreprocessStats) -> None:
    """Text cache: header, embedded schema, stats, then one line per row
    (features as round-trip decimals, raw label, anomaly bit). Rewriting
    the same inputs is byte-identical.
    """
    schema_text = serialize_schema(schema)
    schema_lines = schema_text.splitlines()
    dim = schema.dimension
    if dataset.features.shape[1] != dim:
        raise DataError(
            f"dataset width {dataset.features.shape[1]} does not match schema {dim}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CACHE_MAGIC} {CACHE_VERSION}\n")
        fh.write(f"schema-hash {schema_hash(schema)}\n")
        fh.write(f"source {dataset.provenance.get('source', '-')}\n")
        fh.write(f"dimension {dim}\n")
        fh.write(f"rows {dataset.n_rows}\n")
        fh.write(f"stats-mins {' '.join(repr(float(v)) for v in stats.mins)}\n")
        fh.write(f"stats-maxs {' '.join(repr(float(v)) for v in stats.maxs)}\n")
        fh.write(f"schema-lines {len(schema_lines)}\n")
        for ln in schema_lines:
            fh.write(ln + "\n")
        fh.write("data\n")
        for row, label, anom in zip(dataset.features, dataset.labels,
                                    dataset.anomalies):
            cells = " ".join(repr(float(v)) for v in row)
            fh.write(f"{cells} {label} {1 if anom else 0}\n")


def read_cache(path) -> tuple[LabeledDataset, RecordSchema, PreprocessStats]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read cache {path}: {exc}") from exc

    def fail(msg):
        raise DataError(f"{path}: {msg}")

    with fh:
        def expect(key):
            line = fh.readline().rstrip("\n")
            head, _, rest = line.partition(" ")
            if head != key:
                fail(f"expected {key!r} in cache header, found {head!r}")
            return rest

        magic = expect(CACHE_MAGIC)
        if magic != str(CACHE_VERSION):
            fail(f"unsupported cache version {magic!r}")
        recorded_hash = expect("schema-hash")
        source = expect("source")
        dim = int(expect("dimension"))
        rows = int(expect("rows"))
        mins = np.array([float(v) for v in expect("stats-mins").split()])
        maxs = np.array([float(v) for v in expect("stats-maxs").split()])
        n_schema = int(expect("schema-lines"))
        schema = parse_schema_text(
            "\n".join(fh.readline().rstrip("\n") for _ in range(n_schema))
        )
        if schema_hash(schema) != recorded_hash:
            fail("embedded schema does not match its recorded hash")
        if schema.dimension != dim:
            fail(f"schema dimension {schema.dimension} != recorded {dim}")
        if fh.readline().strip() != "data":
            fail("missing data section")
        features = np.empty((rows, dim))
        anomalies = np.empty(rows, dtype=bool)
        labels = []
        for i in range(rows):
            parts = fh.readline().split()
            if len(parts) != dim + 2:
                fail(f"row {i}: expected {dim + 2} fields, got {len(parts)}")
            features[i] = [float(v) for v in parts[:dim]]
            labels.append(parts[dim])
            anomalies[i] = parts[dim + 1] == "1"
    stats = PreprocessStats(mins=mins, maxs=maxs)
    stats.validate()
    dataset = LabeledDataset(
        features=features,
        anomalies=anomalies,
        labels=tuple(labels),
        provenance={"source": source, "schema_hash": recorded_hash, "seed": "-"},
    )
    return dataset, schema, stats
