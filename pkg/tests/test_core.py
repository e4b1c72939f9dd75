import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermotransfer.core import (Dataset, HorizonError, HorizonSpec, InsufficientHistoryError,
                                 SampleRecord, build_design_matrix, build_feature_vector,
                                 feature_length, feature_names, rollout_arrays, rollout_predict)
from thermotransfer.simulator import (HouseConfig, HysteresisController, disturbances_for,
                                      exact_feature_predictor, simulate)


def random_dataset(rng, n=40, m_in=5, t0=0):
    return Dataset(np.arange(t0, t0 + n), rng.normal(20, 1, n), rng.normal(size=(n, m_in)))


def test_feature_vector_lag_one_ordering():
    data = Dataset([0, 1], [21.0, 22.0], [[0.0787, 45.0], [0.0, 45.0]])
    x = build_feature_vector(data, 1, 1)
    assert x.tolist() == [21.0, 0.0787, 45.0, 1.0]


def test_feature_vector_length_lag3():
    data = random_dataset(np.random.default_rng(0))
    x = build_feature_vector(data, 10, 3)
    assert len(x) == 19 == feature_length(3, 5)
    assert len(feature_names(3, 5)) == 19


def test_feature_vector_layout_lags_most_recent_first():
    rng = np.random.default_rng(1)
    data = random_dataset(rng, t0=100)
    t = 110
    x = build_feature_vector(data, t, 3)
    p = data.position(t)
    np.testing.assert_array_equal(x[:3], data.y[[p - 1, p - 2, p - 3]])
    np.testing.assert_array_equal(x[3:8], data.u[p - 1])
    np.testing.assert_array_equal(x[13:18], data.u[p - 3])
    assert x[-1] == 1.0


def test_feature_vector_insufficient_history():
    data = random_dataset(np.random.default_rng(0))
    with pytest.raises(InsufficientHistoryError):
        build_feature_vector(data, 2, 3)


def test_design_matrix_rows_match_feature_vectors():
    data = random_dataset(np.random.default_rng(2), n=15)
    X, y = build_design_matrix(data, 3)
    assert X.shape == (12, 19)
    for row, t in zip(X, range(3, 15)):
        np.testing.assert_array_equal(row, build_feature_vector(data, t, 3))
    np.testing.assert_array_equal(y, data.y[3:])


def test_dataset_rejects_gaps_and_ragged_records():
    with pytest.raises(ValueError):
        Dataset([0, 2], [1.0, 2.0], [[0.0], [0.0]])
    with pytest.raises(ValueError):
        Dataset.from_records([SampleRecord(0, 1.0, (1.0,)), SampleRecord(1, 1.0, (1.0, 2.0))])


def test_dataset_records_and_csv_roundtrip(tmp_path):
    data = random_dataset(np.random.default_rng(3), n=7, t0=5)
    again = Dataset.from_records(data.records, data.domain_id)
    np.testing.assert_array_equal(again.u, data.u)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,y,u1,u2,u3,u4,u5"
    loaded = Dataset.from_csv(path)
    np.testing.assert_array_equal(loaded.t, data.t)
    np.testing.assert_array_equal(loaded.y, data.y)
    np.testing.assert_array_equal(loaded.u, data.u)


def test_rollout_constant_predictor():
    data = random_dataset(np.random.default_rng(0))
    out = rollout_predict(lambda X: np.full(len(np.atleast_2d(X)), 21.0), data, 20,
                          HorizonSpec(horizon_steps=12), 3)
    assert out.tolist() == [21.0] * 12


def test_rollout_copy_last_output():
    data = random_dataset(np.random.default_rng(0))
    y = data.y.copy()
    y[20] = 20.0
    data = Dataset(data.t, y, data.u)
    out = rollout_predict(lambda X: X[..., 0], data, 20, HorizonSpec(horizon_steps=3), 3)
    assert out.tolist() == [20.0, 20.0, 20.0]


def test_rollout_short_input_sequence():
    data = random_dataset(np.random.default_rng(0))
    with pytest.raises(HorizonError):
        rollout_predict(lambda X: X[..., 0], data, 10, HorizonSpec(horizon_steps=12), 3,
                        true_inputs=np.zeros((5, 5)))
    with pytest.raises(HorizonError):
        rollout_predict(lambda X: X[..., 0], data, 35, HorizonSpec(horizon_steps=12), 3)


def test_rollout_with_exact_map_tracks_simulator():
    config = HouseConfig()
    dist = disturbances_for("cold-site", "family", 3, 4)
    log = simulate(config, HysteresisController(), dist, 3)
    data = log.dataset
    predict = exact_feature_predictor(config)
    for t_k in (10, 47, 100):
        out = rollout_predict(predict, data, t_k, HorizonSpec(horizon_steps=12), 3)
        np.testing.assert_allclose(out, data.y[t_k + 1:t_k + 13], atol=1e-9, rtol=0)


def test_rollout_uses_measured_outputs_only_up_to_tk():
    rng = np.random.default_rng(4)
    data = random_dataset(rng)
    w = rng.normal(size=19) * 0.2
    base = rollout_predict(lambda X: X @ w, data, 20, HorizonSpec(horizon_steps=5), 3)
    y = data.y.copy()
    y[21:] += 100.0  # future measurements must not leak into the rollout
    again = rollout_predict(lambda X: X @ w, Dataset(data.t, y, data.u), 20,
                            HorizonSpec(horizon_steps=5), 3)
    np.testing.assert_array_equal(base, again)


def test_rollout_batch_matches_single():
    rng = np.random.default_rng(5)
    data = random_dataset(rng)
    w = rng.normal(size=19) * 0.2
    futures = rng.normal(size=(4, 6, 5))
    batch = rollout_arrays(lambda X: X @ w, data.y[:21], data.u[:20], futures, 3)
    for b in range(4):
        single = rollout_arrays(lambda X: X @ w, data.y[:21], data.u[:20], futures[b], 3)
        np.testing.assert_allclose(batch[b], single, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), lag=st.integers(1, 4), t_k=st.integers(4, 30))
def test_rollout_single_step_is_direct_prediction(seed, lag, t_k):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng)
    w = rng.normal(size=feature_length(lag, 5))
    out = rollout_predict(lambda X: X @ w, data, t_k, HorizonSpec(horizon_steps=1), lag)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(build_feature_vector(data, t_k + 1, lag) @ w, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rollout_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng)
    w = rng.normal(size=19) * 0.3
    a = rollout_predict(lambda X: X @ w, data, 15, HorizonSpec(), 3)
    b = rollout_predict(lambda X: X @ w, data, 15, HorizonSpec(), 3)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), perm=st.permutations(range(5)))
def test_channel_permutation_with_matching_coefficients(seed, perm):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng)
    lag = 3
    w = rng.normal(size=19) * 0.2
    perm = np.array(perm)
    permuted = Dataset(data.t, data.y, data.u[:, perm])
    w_perm = w.copy()
    for i in range(lag):
        block = slice(lag + 5 * i, lag + 5 * (i + 1))
        w_perm[block] = w[block][perm]
    spec = HorizonSpec(horizon_steps=6)
    a = rollout_predict(lambda X: X @ w, data, 20, spec, lag)
    b = rollout_predict(lambda X: X @ w_perm, permuted, 20, spec, lag)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_horizon_spec_validation():
    assert HorizonSpec().horizon_h == 6.0
    with pytest.raises(ValueError):
        HorizonSpec(horizon_steps=0)
    with pytest.raises(ValueError):
        HorizonSpec(discount=0.0)
