from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elp.dataio import (
    COLUMNS,
    GeneratorConfig,
    SeriesFrame,
    generate_synthetic,
    largest_remainder,
    load_sessions,
    normalize_apply,
    normalize_fit,
    percent_to_mah,
    read_kv,
    session_id,
    split,
    write_kv,
    write_sessions,
)
from elp.domain import State, UserType
from elp.exceptions import GapError, InvalidParam, ParseError


def _points(records, state=None):
    return sum(len(r) for r in records if state is None or r.state is state)


def test_default_generator_counts():
    records = generate_synthetic()
    assert _points(records, State.SHARING) == 2520
    assert _points(records, State.IDLE) == 300
    assert _points(records) == 2820
    per_distance = Counter()
    for r in records:
        if r.state is State.SHARING:
            per_distance[r.distance_cm] += len(r)
    assert dict(per_distance) == {1.0: 420, 1.5: 840, 2.0: 1260}


@settings(max_examples=25, deadline=None)
@given(
    st.dictionaries(st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0]), st.integers(0, 6), min_size=1),
    st.integers(1, 12),
    st.integers(0, 3),
    st.integers(1, 8),
)
def test_generator_arithmetic(counts, minutes, idle_sessions, idle_minutes):
    cfg = GeneratorConfig(
        distance_counts=counts, session_minutes=minutes, anomaly_count=0,
        idle_sessions=idle_sessions, idle_minutes=idle_minutes,
    )
    records = generate_synthetic(cfg)
    assert _points(records, State.SHARING) == cfg.sharing_points
    assert _points(records, State.IDLE) == cfg.idle_points


def test_noiseless_consumer_is_monotone():
    records = generate_synthetic(GeneratorConfig(noise_sigma=0.0, anomaly_count=0))
    for r in records:
        if r.state is State.SHARING:
            assert r.is_monotone_consistent
            if r.role is UserType.CONSUMER:
                assert np.all(np.diff(r.levels) >= 0)


def test_generator_is_deterministic():
    a, b = generate_synthetic(), generate_synthetic()
    assert all(np.array_equal(x.levels, y.levels) and x.rid == y.rid for x, y in zip(a, b))
    c = generate_synthetic(GeneratorConfig(seed=1))
    assert not np.array_equal(a[0].levels, c[0].levels)


def test_generator_config_validation():
    with pytest.raises(InvalidParam):
        GeneratorConfig(distance_counts={1.0: -1})
    with pytest.raises(InvalidParam):
        GeneratorConfig(anomaly_count=50)
    with pytest.raises(InvalidParam):
        GeneratorConfig(efficiency_floor=0.0, efficiency_slope=2.0)


def test_config_kv_round_trip(tmp_path):
    cfg = GeneratorConfig(distance_counts={1.0: 3, 2.5: 4}, noise_sigma=0.1, seed=9)
    write_kv(tmp_path / "g.cfg", cfg.to_dict())
    assert GeneratorConfig.from_dict(read_kv(tmp_path / "g.cfg")) == cfg


def test_csv_round_trip(tmp_path):
    records = generate_synthetic()
    path = tmp_path / "data.csv"
    write_sessions(records, path)
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    back = load_sessions(path)
    assert [r.rid for r in back] == [r.rid for r in records]
    for a, b in zip(records, back):
        assert a.state is b.state and a.role is b.role and a.distance_cm == b.distance_cm
        np.testing.assert_array_equal(a.levels, b.levels)
        np.testing.assert_array_equal(a.minutes, b.minutes)


def test_empty_file_with_header(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(COLUMNS) + "\n")
    assert load_sessions(path) == []


@pytest.mark.parametrize(
    "row, row_no",
    [
        ("s1,provider,sharing,1.0,0,abc", 3),
        ("s1,alien,sharing,1.0,0,5", 3),
        ("s1,provider,sharing,,1,5", 3),
        ("s1,provider,sharing,1.0,1", 3),
        ("s1,provider,sharing,1.0,0,-2", 3),
    ],
)
def test_malformed_row_names_row(tmp_path, row, row_no):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(COLUMNS) + "\ns0,provider,sharing,1.0,0,5\n" + row + "\n")
    with pytest.raises(ParseError, match=f"row {row_no}"):
        load_sessions(path)


def test_gap_detected(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text(",".join(COLUMNS) + "\ns0,provider,sharing,1.0,0,5\ns0,provider,sharing,1.0,2,4\n")
    with pytest.raises(GapError):
        load_sessions(path)


def test_bad_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(ParseError, match="row 1"):
        load_sessions(path)


def test_percent_conversion():
    np.testing.assert_allclose(percent_to_mah([100, 50], 4000), [4000, 2000])


# splitting


def test_largest_remainder():
    assert largest_remainder(42, [0.5, 0.25, 0.25]) == [21, 10, 11]
    assert largest_remainder(5, [0.5, 0.25, 0.25]) == [3, 1, 1]
    assert largest_remainder(6, [0.5, 0.25, 0.25]) == [3, 1, 2]
    assert largest_remainder(0, [1, 1]) == [0, 0]


def test_split_counts_and_partition():
    records = [r for r in generate_synthetic(GeneratorConfig(idle_sessions=0, anomaly_count=0))]
    train, val, test = split(records)
    n = [len({session_id(r) for r in part}) for part in (train, val, test)]
    assert n == [21, 10, 11]
    ids = [{session_id(r) for r in part} for part in (train, val, test)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set().union(*ids) == {session_id(r) for r in records}
    # both roles of a session stay together
    for part in (train, val, test):
        roles = Counter(session_id(r) for r in part)
        assert set(roles.values()) == {2}


def test_split_is_chronological_per_distance():
    records = generate_synthetic()
    train, val, test = split(records)
    order = {session_id(r): i for i, r in enumerate(records)}
    for d in (1.0, 1.5, 2.0):
        def last(part):
            return max((order[session_id(r)] for r in part if r.distance_cm == d), default=-1)

        def first(part):
            return min((order[session_id(r)] for r in part if r.distance_cm == d), default=10**9)

        assert last(train) < first(val) and last(val) < first(test)


def test_split_edge_cases():
    records = generate_synthetic()
    train, val, test = split(records, (1.0, 0.0, 0.0))
    assert len(train) == len(records) and not val and not test
    assert split(records, seed=1) == split(records, seed=1)
    with pytest.raises(InvalidParam):
        split(records, (0.5, 0.5, 0.5))


# normalization


def test_normalization():
    train, val, _ = split(generate_synthetic())
    raw = SeriesFrame.from_records(train, "provider")
    stats = normalize_fit(raw)
    norm = normalize_apply(stats, raw)
    assert abs(norm.target.mean()) < 1e-9
    assert abs(norm.time.mean()) < 1e-9
    assert norm.distance.tobytes() == raw.distance.tobytes()
    np.testing.assert_allclose(stats.invert_target(norm.target), raw.target, rtol=0, atol=1e-9)
    with pytest.raises(InvalidParam):
        normalize_apply(stats, norm)
    with pytest.raises(InvalidParam):
        normalize_fit(norm)
    # validation frames reuse the training statistics
    val_norm = normalize_apply(stats, SeriesFrame.from_records(val, "provider"))
    assert val_norm.normalized


def test_series_frame_from_records():
    records = generate_synthetic()
    frame = SeriesFrame.from_records(records, "consumer")
    assert len(frame) == 1260
    assert frame.n_sessions == 42
    assert np.all(frame.target[frame.time == 0] == 0)
