import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mstp.data import Dataset, StageRecord, Trajectory, load_dataset, save_dataset, split_folds
from mstp.errors import DomainError, MalformedTrajectoryError, PositivityError, SchemaError

HEADER = "subject,stage,a,r,mu,x1,x2\n"


def write(tmp_path, body, header=HEADER):
    path = tmp_path / "d.csv"
    path.write_text(header + body, encoding="utf-8")
    return path


def random_dataset(seed, n=5, T=2, d=3):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.standard_normal((n, T, d)) * 10.0 ** rng.integers(-5, 5, (n, T, d)),
        rng.choice([-1.0, 1.0], (n, T)),
        rng.standard_normal((n, T)),
        rng.uniform(0.01, 1.0, (n, T)),
    )


def test_load_two_by_two(tmp_path):
    body = "s1,1,1,0.5,0.5,1,2\ns1,2,-1,0.1,0.5,3,4\ns2,1,-1,0,0.25,5,6\ns2,2,1,1,1,7,8\n"
    ds = load_dataset(write(tmp_path, body))
    assert (ds.n, ds.T, ds.d) == (2, 2, 2)
    assert ds.subject_ids == ("s1", "s2")
    assert ds.X[1, 1].tolist() == [7.0, 8.0]
    assert ds.A[0].tolist() == [1.0, -1.0]


def test_rows_are_ordered_by_stage(tmp_path):
    body = "s1,2,-1,0.1,0.5,3,4\ns2,1,-1,0,0.5,5,6\ns1,1,1,0.5,0.5,1,2\ns2,2,1,1,0.5,7,8\n"
    ds = load_dataset(write(tmp_path, body))
    assert ds.X[0, 0].tolist() == [1.0, 2.0]
    assert ds.R[0].tolist() == [0.5, 0.1]


def test_mu_zero_is_a_positivity_violation(tmp_path):
    with pytest.raises(PositivityError):
        load_dataset(write(tmp_path, "s1,1,1,0,0,1,2\ns2,1,1,0,0.5,1,2\n"))


def test_stage_gap_is_malformed(tmp_path):
    with pytest.raises(MalformedTrajectoryError):
        load_dataset(write(tmp_path, "s1,1,1,0,0.5,1,2\ns1,3,1,0,0.5,1,2\ns2,1,1,0,0.5,1,2\ns2,2,1,0,0.5,1,2\n"))


def test_unequal_horizons_are_malformed(tmp_path):
    with pytest.raises(MalformedTrajectoryError):
        load_dataset(write(tmp_path, "s1,1,1,0,0.5,1,2\ns1,2,1,0,0.5,1,2\ns2,1,1,0,0.5,1,2\n"))


def test_missing_column_is_a_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        load_dataset(write(tmp_path, "s1,1,1,0.5,1,2\n", header="subject,stage,a,r,x1,x2\n"))


def test_bad_action_is_a_domain_error(tmp_path):
    with pytest.raises(DomainError):
        load_dataset(write(tmp_path, "s1,1,0,0,0.5,1,2\ns2,1,1,0,0.5,1,2\n"))


def test_single_subject_rejected():
    with pytest.raises(DomainError):
        Dataset(np.zeros((1, 1, 1)), np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))


def test_stage_record_invariants():
    with pytest.raises(DomainError):
        StageRecord(np.array([np.nan]), 1, 0.0, 0.5)
    with pytest.raises(PositivityError):
        StageRecord(np.array([0.0]), 1, 0.0, 1.5)
    with pytest.raises(MalformedTrajectoryError):
        Trajectory((StageRecord(np.zeros(1), 1, 0.0, 0.5), StageRecord(np.zeros(2), 1, 0.0, 0.5)))


def test_trajectory_round_trip():
    ds = random_dataset(0)
    assert Dataset.from_trajectories(ds.trajectories, ds.subject_ids).equals(ds)


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 3), st.integers(1, 4))
def test_csv_round_trip_is_exact(tmp_path_factory, seed, n, T, d):
    ds = random_dataset(seed, n, T, d)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_dataset(ds, path)
    assert load_dataset(path).equals(ds)


def test_split_folds_examples():
    folds = split_folds(10, 5, seed=1)
    assert [len(v) for _, v in folds] == [2] * 5
    assert sorted(len(v) for _, v in split_folds(7, 3, seed=1)) == [2, 2, 3]
    a, b = split_folds(10, 5, seed=3), split_folds(10, 5, seed=3)
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        split_folds(3, 4, seed=0)


@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**31))
def test_folds_partition_subjects(n, k, seed):
    k = min(k, n)
    folds = split_folds(n, k, seed)
    vals = np.concatenate([v for _, v in folds])
    assert sorted(vals.tolist()) == list(range(n))
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1
    for tr, va in folds:
        assert set(tr.tolist()).isdisjoint(va.tolist())
        assert len(tr) + len(va) == n


def test_dataset_is_read_only():
    ds = random_dataset(1)
    with pytest.raises(ValueError):
        ds.X[0, 0, 0] = 1.0
