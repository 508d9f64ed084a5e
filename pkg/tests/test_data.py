"""Schema handling, NSL-KDD and CSV parsing, one-hot + min-max encoding,
split construction, contamination mixing, and the preprocessed cache."""

import numpy as np
import pytest

import synthkdd
from somdagmm.data import (
    Feature,
    LabeledDataset,
    ParsedRecords,
    Preprocessor,
    PreprocessStats,
    RecordSchema,
    concat,
    contamination_count,
    encode,
    fit_stats,
    fit_transform,
    load_builtin_schema,
    load_schema,
    mix_contamination,
    parse_csv,
    parse_nslkdd,
    parse_schema_text,
    read_cache,
    schema_hash,
    serialize_schema,
    split_ideal,
    transform,
    write_cache,
)
from somdagmm.errors import DataError

SMALL = RecordSchema(
    features=(
        Feature("size"),
        Feature("color", ("red", "green", "blue")),
        Feature("weight"),
    ),
    label_name="label",
    label_mode="anomaly",
    label_set=("bad",),
)


def small_records(rows, labels):
    """rows: (size, color_index, weight) triples."""
    arr = np.asarray(rows, dtype=np.float64)
    return ParsedRecords(
        cont=arr[:, [0, 2]],
        cat=arr[:, [1]].astype(np.int64),
        labels=tuple(labels),
        anomalies=np.array([SMALL.is_anomaly(l) for l in labels]),
        source="inline",
    )


def test_builtin_schema_shape_and_label_convention():
    schema = load_builtin_schema()
    assert schema.dimension == 122
    assert len(schema.features) == 41
    assert schema.continuous_count == 38
    cats = [f for f in schema.features if f.is_categorical]
    assert [f.name for f in cats] == ["protocol_type", "service", "flag"]
    assert [f.width for f in cats] == [3, 70, 11]
    assert schema.features[0].name == "duration"
    # attack records are the inliers, "normal" the anomalies
    assert schema.is_anomaly("normal")
    assert not schema.is_anomaly("neptune")
    flipped = schema.with_inlier_labels(("normal",))
    assert not flipped.is_anomaly("normal")
    assert flipped.is_anomaly("neptune")
    with pytest.raises(DataError):
        load_builtin_schema("no_such_schema")


def test_schema_round_trip_and_hash():
    text = serialize_schema(SMALL)
    back = parse_schema_text(text)
    assert back == SMALL
    assert schema_hash(back) == schema_hash(SMALL)
    assert len(schema_hash(SMALL)) == 16
    assert int(schema_hash(SMALL), 16) >= 0
    other = RecordSchema(SMALL.features, label_set=("worse",))
    assert schema_hash(other) != schema_hash(SMALL)
    builtin = load_builtin_schema()
    assert parse_schema_text(serialize_schema(builtin)) == builtin


def test_schema_parse_and_validation_errors(tmp_path):
    for text in (
        "",
        "wrong-magic 1\nlabel label anomaly=bad\nfeature a continuous\n",
        "somdagmm-schema 9\nlabel label anomaly=bad\nfeature a continuous\n",
        "somdagmm-schema 1\nfeature a continuous\n",  # no label line
        "somdagmm-schema 1\nlabel label oddmode=bad\nfeature a continuous\n",
        "somdagmm-schema 1\nlabel label anomaly=\nfeature a continuous\n",
        "somdagmm-schema 1\nlabel label anomaly=bad\nfeature a nonsense\n",
        "somdagmm-schema 1\nlabel label anomaly=bad\n",  # no features
        "somdagmm-schema 1\nlabel label anomaly=bad\n"
        "feature a continuous\nfeature a continuous\n",  # duplicate name
    ):
        with pytest.raises(DataError):
            parse_schema_text(text)
    with pytest.raises(DataError):
        RecordSchema((Feature("c", ()),)).validate()  # empty vocabulary
    with pytest.raises(DataError):
        load_schema(tmp_path / "missing.schema")


def test_parse_nslkdd_small_schema(tmp_path):
    path = tmp_path / "flows.txt"
    path.write_text(
        "1.5,red,2.5,good\n"
        "2.5,green,3.5,bad,21\n"  # trailing difficulty field is ignored
        "\n"
        "3.5,violet,4.5,good\n"  # unseen category -> index -1
    )
    records, report = parse_nslkdd(path, SMALL)
    assert report.total == 3 and report.parsed == 3 and report.bad == ()
    assert records.n_rows == 3
    assert np.array_equal(records.cont, [[1.5, 2.5], [2.5, 3.5], [3.5, 4.5]])
    assert np.array_equal(records.cat[:, 0], [0, 1, -1])
    assert records.labels == ("good", "bad", "good")
    assert np.array_equal(records.anomalies, [False, True, False])
    assert records.unseen_examples == (("color", "violet"),)


def test_parse_nslkdd_bad_lines_and_limits(tmp_path):
    path = tmp_path / "flows.txt"
    path.write_text(
        "1.5,red,2.5,good\n"
        "1.5,red,good\n"  # too few fields
        "oops,red,2.5,good\n"  # non-numeric continuous
        "1.5,red,2.5,good,21,9\n"  # too many fields
    )
    records, report = parse_nslkdd(path, SMALL, max_bad_ratio=0.9)
    assert records.n_rows == 1
    assert [n for n, _ in report.bad] == [2, 3, 4]
    assert "field" in report.bad[1][1]
    assert 0.74 < report.bad_ratio < 0.76

    with pytest.raises(DataError) as info:
        parse_nslkdd(path, SMALL)  # default 1% tolerance
    assert info.value.report.parsed == 1

    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n")
    with pytest.raises(DataError, match="no records"):
        parse_nslkdd(empty, SMALL)
    with pytest.raises(DataError):
        parse_nslkdd(tmp_path / "nope.txt", SMALL)
    report_json = report.to_json()
    assert '"bad_ratio"' in report_json and '"line": 2' in report_json


def test_parse_nslkdd_generated_full_schema(tmp_path):
    path = tmp_path / "kdd.txt"
    synthkdd.write_dataset(path, 60, anomaly_ratio=0.4, seed=3)
    records, report = parse_nslkdd(path)
    assert report.parsed == 60 and report.bad == ()
    assert records.cont.shape == (60, 38)
    assert records.cat.shape == (60, 3)
    assert np.all(records.cat >= 0)  # generator stays inside the vocabulary
    normals = sum(1 for l in records.labels if l == "normal")
    assert normals == 24
    assert records.anomalies.sum() == 24  # "normal" is the anomaly class
    assert set(records.labels) <= {
        "normal", "neptune", "smurf", "portsweep", "back"
    }


def test_parse_csv_by_header_name(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text(
        "weight,extra,label,size,color\n"
        "2.5,zzz,good,1.5,red\n"
        "3.5,zzz,bad,2.5,blue\n"
        "3.5,zzz\n"  # wrong field count
    )
    records, report = parse_csv(path, SMALL, max_bad_ratio=0.5)
    assert records.n_rows == 2
    assert np.array_equal(records.cont, [[1.5, 2.5], [2.5, 3.5]])
    assert np.array_equal(records.cat[:, 0], [0, 2])
    assert [n for n, _ in report.bad] == [4]

    missing = tmp_path / "missing.csv"
    missing.write_text("size,color,label\n1.5,red,good\n")
    with pytest.raises(DataError, match="weight"):
        parse_csv(missing, SMALL)
    blank = tmp_path / "blank.csv"
    blank.write_text("")
    with pytest.raises(DataError, match="no records"):
        parse_csv(blank, SMALL)


def test_encode_scaling_one_hot_and_clipping():
    records = small_records(
        [(0.0, 0, 0.0), (5.0, 1, 10.0), (10.0, 2, 20.0)], ["good"] * 3
    )
    stats = fit_stats(records)
    assert np.array_equal(stats.mins, [0.0, 0.0])
    assert np.array_equal(stats.maxs, [10.0, 20.0])
    features, unseen = encode(records, SMALL, stats)
    assert unseen == 0
    want = np.array(
        [
            [0.0, 1, 0, 0, 0.0],
            [0.5, 0, 1, 0, 0.5],
            [1.0, 0, 0, 1, 1.0],
        ]
    )
    assert np.array_equal(features, want)

    # out-of-range values from a different batch clip into [0, 1]
    far = small_records([(20.0, 0, -5.0)], ["good"])
    clipped, _ = encode(far, SMALL, stats)
    assert np.array_equal(clipped[0], [1.0, 1, 0, 0, 0.0])

    # constant features encode to 0 regardless of value
    const = small_records([(7.0, 0, 3.0), (7.0, 1, 4.0)], ["good"] * 2)
    cstats = fit_stats(const)
    cfeat, _ = encode(const, SMALL, cstats)
    assert np.array_equal(cfeat[:, 0], [0.0, 0.0])


def test_encode_unseen_category_policies():
    records = small_records([(1.0, -1, 2.0), (1.0, 0, 2.0)], ["good"] * 2)
    stats = fit_stats(records)
    features, unseen = encode(records, SMALL, stats)
    assert unseen == 1
    assert np.array_equal(features[0, 1:4], [0, 0, 0])  # all-zeros block
    assert np.array_equal(features[1, 1:4], [1, 0, 0])
    with pytest.raises(DataError, match="outside schema"):
        encode(records, SMALL, stats, policy="reject")
    with pytest.raises(DataError):
        encode(records, SMALL, stats, policy="ask-user")
    short = PreprocessStats(mins=np.zeros(1), maxs=np.ones(1))
    with pytest.raises(DataError):
        encode(records, SMALL, short)
    with pytest.raises(DataError):
        PreprocessStats(mins=np.ones(2), maxs=np.zeros(2)).validate()


def test_fit_transform_and_preprocessor():
    records = small_records(
        [(0.0, 0, 1.0), (4.0, 1, 3.0), (8.0, 2, 5.0)], ["good", "bad", "good"]
    )
    dataset, stats = fit_transform(records, SMALL)
    assert dataset.n_rows == 3
    assert dataset.features.shape == (3, 5)
    assert np.all((dataset.features >= 0.0) & (dataset.features <= 1.0))
    assert np.array_equal(dataset.anomalies, [False, True, False])
    assert abs(dataset.anomaly_ratio - 1 / 3) < 1e-15
    assert dataset.provenance["schema_hash"] == schema_hash(SMALL)
    assert dataset.warnings == 0

    again = transform(records, SMALL, stats)
    assert np.array_equal(again.features, dataset.features)

    pre = Preprocessor(schema=SMALL, stats=stats)
    assert np.array_equal(pre.transform(records), dataset.features)

    sub = dataset.take([2, 0])
    assert sub.labels == ("good", "good")
    assert np.array_equal(sub.features, dataset.features[[2, 0]])


def test_split_ideal_partition_and_determinism():
    labels = ["bad" if i % 4 == 0 else "good" for i in range(13)]
    rows = [(float(i), i % 3, float(2 * i)) for i in range(13)]
    records = small_records(rows, labels)  # 4 anomalies, 9 inliers
    train, test = split_ideal(records, seed=5)
    assert train.n_rows == 4  # floor(9 / 2)
    assert test.n_rows == 9
    assert not train.anomalies.any()
    assert test.anomalies.sum() == 4
    # the two sides partition the file: recover original row ids via size
    train_ids = [int(v) for v in train.cont[:, 0]]
    test_ids = [int(v) for v in test.cont[:, 0]]
    assert sorted(train_ids + test_ids) == list(range(13))
    # file order within each side
    assert train_ids == sorted(train_ids)
    assert test_ids == sorted(test_ids)

    t2, s2 = split_ideal(records, seed=5)
    assert np.array_equal(t2.cont, train.cont)
    assert np.array_equal(s2.cont, test.cont)
    t3, _ = split_ideal(records, seed=6)
    assert [int(v) for v in t3.cont[:, 0]] != train_ids

    tiny = small_records([(0.0, 0, 0.0)], ["good"])
    with pytest.raises(DataError, match="at least 2"):
        split_ideal(tiny, seed=0)


def test_contamination_count_solves_the_fixed_point():
    assert contamination_count(1000, 0.0) == 0
    assert contamination_count(990, 0.01) == 10
    for n in (1, 7, 50, 333, 1000, 4321):
        for ratio in (0.01, 0.05, 0.1, 0.25, 0.4654):
            a = contamination_count(n, ratio)
            assert a == round(ratio * (n + a))
            # smallest such count
            assert all(b != round(ratio * (n + b)) for b in range(a))
    with pytest.raises(ValueError):
        contamination_count(100, 0.5)
    with pytest.raises(ValueError):
        contamination_count(100, -0.01)


def test_mix_contamination_hits_the_ratio_exactly():
    train = small_records(
        [(float(i), 0, 1.0) for i in range(100)], ["good"] * 100
    )
    pool = small_records(
        [(1000.0 + i, 1, 2.0) for i in range(60)], ["bad"] * 60
    )
    mixed = mix_contamination(train, pool, 0.25, seed=9)
    need = contamination_count(100, 0.25)
    assert int(mixed.anomalies.sum()) == need
    assert mixed.n_rows == 100 + need
    assert round(0.25 * mixed.n_rows) == need
    # permuted, not appended
    assert [int(v) for v in mixed.cont[:, 0]] != sorted(
        int(v) for v in mixed.cont[:, 0]
    )
    again = mix_contamination(train, pool, 0.25, seed=9)
    assert np.array_equal(again.cont, mixed.cont)
    other = mix_contamination(train, pool, 0.25, seed=10)
    assert not np.array_equal(other.cont, mixed.cont)

    assert mix_contamination(train, pool, 0.0, seed=9) is train
    with pytest.raises(DataError, match="pool"):
        mix_contamination(train, pool.take(range(5)), 0.25, seed=9)


def test_concat_matches_types():
    a = small_records([(0.0, 0, 0.0)], ["good"])
    b = small_records([(1.0, 1, 1.0)], ["bad"])
    both = concat(a, b)
    assert both.n_rows == 2 and both.labels == ("good", "bad")
    da, _ = fit_transform(concat(a, b), SMALL)
    db = concat(da.take([0]), da.take([1]))
    assert np.array_equal(db.features, da.features)
    with pytest.raises(TypeError):
        concat(a, da)


def test_cache_round_trip_is_exact_and_rewrites_identically(tmp_path):
    rng = np.random.default_rng(11)
    rows = [
        (float(rng.uniform(0, 10)), int(rng.integers(0, 3)), float(rng.uniform(0, 5)))
        for _ in range(20)
    ]
    labels = ["bad" if rng.random() < 0.3 else "good" for _ in range(20)]
    records = small_records(rows, labels)
    dataset, stats = fit_transform(records, SMALL)

    p1, p2 = tmp_path / "a.cache", tmp_path / "b.cache"
    write_cache(p1, dataset, SMALL, stats)
    back, schema, back_stats = read_cache(p1)
    assert np.array_equal(back.features, dataset.features)  # bit-exact repr round trip
    assert np.array_equal(back.anomalies, dataset.anomalies)
    assert back.labels == dataset.labels
    assert schema == SMALL
    assert np.array_equal(back_stats.mins, stats.mins)
    assert np.array_equal(back_stats.maxs, stats.maxs)

    write_cache(p2, back, schema, back_stats)
    assert p1.read_bytes() == p2.read_bytes()


def test_cache_rejects_corruption(tmp_path):
    records = small_records([(0.0, 0, 1.0), (2.0, 1, 3.0)], ["good", "bad"])
    dataset, stats = fit_transform(records, SMALL)
    path = tmp_path / "ok.cache"
    write_cache(path, dataset, SMALL, stats)
    good = path.read_text().splitlines(keepends=True)

    def variant(name, mutate):
        p = tmp_path / name
        lines = list(good)
        mutate(lines)
        p.write_text("".join(lines))
        return p

    bad_magic = variant("m.cache", lambda l: l.__setitem__(0, "other-magic 1\n"))
    bad_version = variant("v.cache", lambda l: l.__setitem__(0, "somdagmm-cache 99\n"))
    tampered = variant(
        "t.cache",
        lambda l: l.__setitem__(
            next(i for i, ln in enumerate(good) if ln.startswith("label ")),
            "label label anomaly=worse\n",
        ),
    )
    truncated = variant("r.cache", lambda l: l.__delitem__(-1))
    for p in (bad_magic, bad_version, tampered, truncated):
        with pytest.raises(DataError):
            read_cache(p)
    with pytest.raises(DataError):
        read_cache(tmp_path / "absent.cache")
    wrong_width = LabeledDataset(
        features=np.zeros((2, 3)),
        anomalies=np.zeros(2, dtype=bool),
        labels=("a", "b"),
    )
    with pytest.raises(DataError):
        write_cache(tmp_path / "w.cache", wrong_width, SMALL, stats)
