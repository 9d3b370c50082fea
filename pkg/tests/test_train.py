"""Label construction, loss closed forms, splits, and a short training run."""

import math

import numpy as np
import pytest

from parkrank import evaluate, ingest, model, train
from parkrank.errors import ConfigError, DataError


def chain_graph(n=4):
    locs = [
        ingest.MeterLocation(f"m{i:03d}", 22.28, 114.16 + i * 0.0003)
        for i in range(n)
    ]
    return ingest.build_adjacency(locs, 35.0)


class TestMakeLabels:
    def test_vacant_beats_occupied(self):
        g = chain_graph(3)
        vacant = np.array([True, False, True])
        rem = np.array([5, 5, 5])
        y = train.make_labels(g, vacant, rem, 0.5, 0.5, 12)
        assert y[1, 0] > 0 and y[1, 2] > 0
        assert y[1, 1] == 0.0

    def test_nearer_beats_farther(self):
        # both neighbors vacant with equal duration: self outranks neighbor
        g = chain_graph(3)
        vacant = np.ones(3, dtype=bool)
        rem = np.full(3, 6)
        y = train.make_labels(g, vacant, rem, 0.5, 0.5, 12)
        assert y[1, 1] > y[1, 0]
        assert y[1, 0] == y[1, 2]

    def test_longer_vacancy_beats_shorter(self):
        g = chain_graph(3)
        vacant = np.ones(3, dtype=bool)
        rem = np.array([2, 1, 9])
        y = train.make_labels(g, vacant, rem, 0.5, 0.5, 12)
        assert y[1, 2] > y[1, 0]

    def test_duration_capped(self):
        g = chain_graph(3)
        vacant = np.ones(3, dtype=bool)
        y_a = train.make_labels(g, vacant, np.array([1, 1, 12]), 0.5, 0.5, 12)
        y_b = train.make_labels(g, vacant, np.array([1, 1, 500]), 0.5, 0.5, 12)
        assert y_a[1, 2] == y_b[1, 2]

    def test_row_peak_is_exactly_one(self):
        g = chain_graph(4)
        vacant = np.array([True, True, False, True])
        rem = np.array([3, 8, 2, 4])
        y = train.make_labels(g, vacant, rem, 0.5, 0.5, 12)
        for q in range(4):
            row = y[q]
            if row.max() > 0:
                assert row.max() == 1.0

    def test_all_occupied_row_stays_zero(self):
        g = chain_graph(3)
        y = train.make_labels(
            g, np.zeros(3, dtype=bool), np.full(3, 4), 0.5, 0.5, 12
        )
        assert not y.any()

    def test_blocked_pairs_stay_zero(self):
        g = chain_graph(4)  # 0 and 3 are two hops apart
        vacant = np.ones(4, dtype=bool)
        y = train.make_labels(g, vacant, np.full(4, 6), 0.5, 0.5, 12)
        assert y[0, 3] == 0.0 and y[3, 0] == 0.0

    def test_batched_matches_single(self):
        g = chain_graph(3)
        rng = np.random.default_rng(0)
        vac = rng.random((5, 3)) < 0.5
        rem = rng.integers(1, 10, (5, 3))
        batch = train.make_labels(g, vac, rem, 0.5, 0.5, 12)
        for b in range(5):
            single = train.make_labels(g, vac[b], rem[b], 0.5, 0.5, 12)
            assert np.array_equal(batch[b], single)


class TestLossClosedForms:
    def test_squared_error_unit_example(self):
        got = train.squared_error([1.0, 0.0], [0.0, 1.0]).item()
        assert got == pytest.approx(2.0, abs=1e-12)

    def test_squared_error_batch_mean(self):
        y = np.array([[1.0, 0.0], [0.0, 0.0]])
        s = np.array([[0.0, 1.0], [0.0, 2.0]])
        # rows cost 2 and 4, mean 3
        assert train.squared_error(y, s).item() == pytest.approx(3.0, abs=1e-12)

    def test_listwise_confident_correct(self):
        got = train.listwise_nll([1.0, 0.0], [10.0, -10.0]).item()
        assert abs(got - math.log1p(math.exp(-20.0))) < 1e-12

    def test_listwise_uniform_scores(self):
        # equal scores over k candidates cost log k per unit of label
        got = train.listwise_nll([1.0, 0.0, 0.0], [3.0, 3.0, 3.0]).item()
        assert got == pytest.approx(math.log(3.0), abs=1e-12)

    def test_listwise_mask_excludes_blocked(self):
        allowed = np.array([True, True, False])
        got = train.listwise_nll(
            [1.0, 0.0, 0.0], [0.0, 0.0, 99.0], allowed=allowed
        ).item()
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_perfect_scores_zero_loss(self):
        y = np.array([[0.2, 1.0, 0.0]])
        total = train.training_loss(y, y.copy()).item()
        assert total == 0.0

    def test_l2_counts_once(self):
        g = chain_graph(3)
        cfg = train.TrainConfig(alpha=2, beta=1, conv_channels=2, embed_dim=2,
                                kernel_len=2)
        params = model.ModelParams(
            cfg.model_config(), g, np.random.default_rng(0)
        )
        y = np.zeros((1, 3, 3))
        base = train.training_loss(y, y.copy(), params, 0.0, 0.0).item()
        with_l2 = train.training_loss(y, y.copy(), params, 0.0, 0.5).item()
        expected = 0.5 * sum(
            float((p.data ** 2).sum()) for p in params.tensors
        )
        assert base == 0.0
        assert with_l2 == pytest.approx(expected, rel=1e-12)


class TestConfig:
    def test_manifest_round_trip(self):
        cfg = train.TrainConfig(alpha=3, iterations=7, softmax_weight=0.25)
        again = train.TrainConfig.from_manifest(cfg.to_manifest())
        assert again == cfg

    def test_unknown_manifest_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown training fields"):
            train.TrainConfig.from_manifest({"alpha": 2, "bogus": 1})

    def test_validation(self):
        with pytest.raises(ConfigError):
            train.TrainConfig(horizon_intervals=0)
        with pytest.raises(ConfigError):
            train.TrainConfig(dropout_rate=1.0)
        with pytest.raises(ConfigError):
            train.TrainConfig(prox_weight=0.0, dur_weight=0.0)
        with pytest.raises(ConfigError):
            train.TrainConfig(learning_rate=0.0)


def small_world(seed=0, locs=6, intervals=120):
    cfg = ingest.SynthConfig(
        num_locations=locs, num_intervals=intervals, rng_seed=seed
    )
    locations, matrix = ingest.synth_generate(cfg)
    return matrix, ingest.build_adjacency(locations)


class TestDataset:
    def test_split_sizes_floor(self):
        assert train.split_sizes(100) == (80, 10, 10)
        assert train.split_sizes(57) == (45, 5, 7)

    def test_chronological_split(self):
        matrix, graph = small_world()
        cfg = train.TrainConfig(alpha=3, horizon_intervals=2)
        ds = train.build_dataset(matrix, cfg)
        usable = matrix.states.shape[1] - 2 - 1
        assert len(ds.times) == usable
        assert ds.times[0] == 1
        assert len(ds.train_idx) == int(usable * 0.8)
        # strictly ordered, no overlap
        assert ds.train_idx[-1] < ds.val_idx[0] <= ds.val_idx[-1] < ds.test_idx[0]

    def test_future_columns(self):
        matrix, _ = small_world()
        cfg = train.TrainConfig(alpha=3, horizon_intervals=4)
        ds = train.build_dataset(matrix, cfg)
        i = 10
        t = int(ds.times[i])
        assert np.array_equal(ds.vacant_future[i], ~matrix.states[:, t + 4])
        assert np.array_equal(ds.states_now[i], matrix.states[:, t])

    def test_too_short_rejected(self):
        matrix, _ = small_world(intervals=6)
        with pytest.raises(DataError, match="usable"):
            train.build_dataset(matrix, train.TrainConfig(horizon_intervals=4))


class TestTrainLoop:
    def test_deterministic_given_seed(self):
        matrix, graph = small_world()
        cfg = train.TrainConfig(
            alpha=3, beta=1, conv_channels=3, embed_dim=4, kernel_len=2,
            horizon_intervals=2, iterations=6, batch_size=16, eval_every=3,
            rng_seed=11,
        )
        a = train.train_loop(matrix, graph, cfg)
        b = train.train_loop(matrix, graph, cfg)
        assert a.log == b.log
        for name, t in a.params.named.items():
            assert np.array_equal(t.data, b.params.named[name].data)

    def test_loss_decreases_on_tiny_overfit(self):
        matrix, graph = small_world(seed=3, locs=4, intervals=60)
        cfg = train.TrainConfig(
            alpha=3, beta=1, conv_channels=4, embed_dim=8, kernel_len=2,
            horizon_intervals=2, iterations=120, batch_size=8, eval_every=40,
            rng_seed=5, softmax_weight=0.1,
        )
        result = train.train_loop(matrix, graph, cfg)
        first_loss = result.log[0][1]
        last_loss = result.log[-1][1]
        assert last_loss < first_loss
        assert result.best_val_ndcg1 > 0.0

    def test_best_checkpoint_restored(self):
        matrix, graph = small_world(seed=7)
        cfg = train.TrainConfig(
            alpha=3, beta=1, conv_channels=3, embed_dim=4, kernel_len=2,
            horizon_intervals=2, iterations=9, batch_size=16, eval_every=3,
            rng_seed=2,
        )
        result = train.train_loop(matrix, graph, cfg)
        ds = result.dataset
        val = train.split_ndcg(result.params, ds, graph, ds.val_idx, cfg)
        assert val == pytest.approx(result.best_val_ndcg1, abs=1e-12)

    def test_split_results_shape_and_reuse(self):
        matrix, graph = small_world(seed=1)
        cfg = train.TrainConfig(
            alpha=3, beta=1, conv_channels=3, embed_dim=4, kernel_len=2,
            horizon_intervals=2, iterations=3, batch_size=16, eval_every=3,
        )
        result = train.train_loop(matrix, graph, cfg)
        ds = result.dataset
        res = train.split_results(result.params, ds, graph, ds.val_idx, cfg)
        assert len(res) == len(ds.val_idx) * graph.num_vertices
        report = evaluate.summarize(res, matrix, "model")
        assert report.num_queries == len(res)
        base = train.baseline_split_results(
            "persistence", matrix, ds, graph, ds.val_idx, cfg
        )
        assert len(base) == len(res)
        assert base[0].query_time == res[0].query_time
