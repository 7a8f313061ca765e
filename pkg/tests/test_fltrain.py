"""Training loop: tasks, data shards, IDX loading, and full runs."""

import gzip
import math
import struct
from dataclasses import replace

import numpy as np
import pytest

from airfl.channel import substream
from airfl.config import STREAM_INIT, SystemConfig, TrainConfig, resolve
from airfl.fltrain import (
    DeviceDataset,
    LogisticTask,
    MlpTask,
    ModelParams,
    binary_subset,
    build_devices,
    build_task,
    build_test_set,
    calibrate_g_bound,
    evaluate,
    global_update,
    ideal_aggregate,
    load_idx,
    load_idx_pair,
    local_gradient,
    round_gradients,
    train,
)

SMALL_TRAIN = TrainConfig(
    task="synthetic_logistic",
    batch_size=8,
    rounds_m=4,
    data_per_device=40,
    n_features=5,
    test_size=200,
)


def small_cfg(**kw):
    base = dict(k_devices=3, train=SMALL_TRAIN, seed=11)
    base.update(kw)
    return SystemConfig(**base)


def fd_gradient(task, w, x, y, step=1e-6):
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = step
        out[i] = (task.loss(w + e, x, y) - task.loss(w - e, x, y)) / (2 * step)
    return out


class TestTasks:
    def test_logistic_gradient_matches_finite_differences(self):
        gen = np.random.default_rng(0)
        task = LogisticTask(5)
        w = gen.standard_normal(5)
        x = gen.standard_normal((30, 5))
        y = (gen.random(30) < 0.5).astype(np.float64)
        g = task.gradient(w, x, y)
        fd = fd_gradient(task, w, x, y)
        assert np.max(np.abs(g - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))

    def test_mlp_gradient_matches_finite_differences(self):
        gen = np.random.default_rng(1)
        task = MlpTask(4, 3)
        assert task.dim == 3 * 4 + 3 + 3 + 1
        w = task.init_params(gen) + 0.01 * gen.standard_normal(task.dim)
        x = gen.standard_normal((25, 4))
        y = (gen.random(25) < 0.5).astype(np.float64)
        g = task.gradient(w, x, y)
        fd = fd_gradient(task, w, x, y)
        assert np.max(np.abs(g - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))

    def test_loss_is_stable_at_extreme_scores(self):
        task = LogisticTask(1)
        x = np.array([[1.0], [1.0]])
        y = np.array([1.0, 0.0])
        loss_hi = task.loss(np.array([1000.0]), x, y)
        loss_lo = task.loss(np.array([-1000.0]), x, y)
        assert math.isfinite(loss_hi) and math.isfinite(loss_lo)
        assert abs(loss_hi - 500.0) < 1e-9
        assert abs(loss_lo - 500.0) < 1e-9

    def test_logistic_init_is_zero(self):
        task = LogisticTask(7)
        assert np.all(task.init_params(np.random.default_rng(0)) == 0.0)

    def test_mlp_init_biases_are_zero(self):
        task = MlpTask(4, 3)
        w = task.init_params(np.random.default_rng(0))
        assert w.size == task.dim
        assert np.all(w[3 * 4 : 3 * 4 + 3] == 0.0)
        assert w[-1] == 0.0

    def test_build_task_dispatch(self):
        assert isinstance(build_task(TrainConfig(task="synthetic_logistic")), LogisticTask)
        mlp = build_task(TrainConfig(task="small_mlp", hidden_units=8))
        assert isinstance(mlp, MlpTask)
        assert mlp.n_hid == 8


class TestData:
    def test_shard_shapes_and_labels(self):
        exp = resolve(small_cfg())
        devices = build_devices(exp)
        assert len(devices) == 3
        for dev in devices:
            assert dev.features.shape == (40, 5)
            assert dev.size == 40
            assert set(np.unique(dev.labels)) <= {0.0, 1.0}

    def test_shards_are_seed_deterministic(self):
        a = build_devices(resolve(small_cfg()))
        b = build_devices(resolve(small_cfg()))
        for da, db in zip(a, b):
            assert np.array_equal(da.features, db.features)
            assert np.array_equal(da.labels, db.labels)

    def test_label_skew_tilts_alternating_devices(self):
        tc = replace(SMALL_TRAIN, data_per_device=2000, label_skew=0.9)
        devices = build_devices(resolve(small_cfg(train=tc, k_devices=2)))
        # device 0 prefers class 0, device 1 prefers class 1, both at 0.95
        assert np.mean(devices[0].labels) < 0.15
        assert np.mean(devices[1].labels) > 0.85

    def test_zero_skew_is_roughly_balanced(self):
        tc = replace(SMALL_TRAIN, data_per_device=2000)
        devices = build_devices(resolve(small_cfg(train=tc)))
        for dev in devices:
            assert abs(np.mean(dev.labels) - 0.5) < 0.06

    def test_blob_separation_shows_in_first_coordinate(self):
        tc = replace(SMALL_TRAIN, data_per_device=4000, blob_separation=6.0)
        dev = build_devices(resolve(small_cfg(train=tc, k_devices=1)))[0]
        gap = np.mean(dev.features[dev.labels == 1.0, 0]) - np.mean(
            dev.features[dev.labels == 0.0, 0]
        )
        assert abs(gap - 6.0) < 0.3

    def test_test_set_is_exactly_balanced(self):
        test = build_test_set(resolve(small_cfg()))
        assert test.size == 200
        assert np.mean(test.labels) == 0.5


def write_idx_images(path, arr):
    n, rows, cols = arr.shape
    path.write_bytes(struct.pack(">iiii", 2051, n, rows, cols) + arr.tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">ii", 2049, labels.size) + labels.tobytes())


class TestIdxLoader:
    def test_image_round_trip(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 2, 2)
        p = tmp_path / "imgs.idx"
        write_idx_images(p, arr)
        assert np.array_equal(load_idx(p), arr)

    def test_label_round_trip(self, tmp_path):
        labels = np.array([0, 1, 7], dtype=np.uint8)
        p = tmp_path / "labels.idx"
        write_idx_labels(p, labels)
        assert np.array_equal(load_idx(p), labels)

    def test_gzip_transparent(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 2, 2)
        raw = tmp_path / "imgs.idx"
        write_idx_images(raw, arr)
        gz = tmp_path / "imgs.idx.gz"
        gz.write_bytes(gzip.compress(raw.read_bytes()))
        assert np.array_equal(load_idx(gz), arr)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short.idx"
        p.write_bytes(b"\x00\x00")
        with pytest.raises(ValueError, match="truncated"):
            load_idx(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "cut.idx"
        p.write_bytes(struct.pack(">iiii", 2051, 3, 2, 2) + b"\x00" * 5)
        with pytest.raises(ValueError, match="expected"):
            load_idx(p)

    def test_unknown_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">ii", 1234, 0))
        with pytest.raises(ValueError, match="magic"):
            load_idx(p)

    def test_pair_loader_scales_and_flattens(self, tmp_path):
        arr = np.full((3, 2, 2), 255, dtype=np.uint8)
        labels = np.array([3, 8, 3], dtype=np.uint8)
        pi, pl = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(pi, arr)
        write_idx_labels(pl, labels)
        x, y = load_idx_pair(pi, pl)
        assert x.shape == (3, 4)
        assert np.all(x == 1.0)
        assert y.dtype == np.int64

    def test_pair_loader_count_mismatch(self, tmp_path):
        pi, pl = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(pi, np.zeros((3, 2, 2), dtype=np.uint8))
        write_idx_labels(pl, np.zeros(4, dtype=np.uint8))
        with pytest.raises(ValueError, match="mismatch"):
            load_idx_pair(pi, pl)

    def test_pair_loader_rejects_swapped_files(self, tmp_path):
        pl = tmp_path / "l.idx"
        write_idx_labels(pl, np.zeros(4, dtype=np.uint8))
        with pytest.raises(ValueError, match="not an image file"):
            load_idx_pair(pl, pl)

    def test_binary_subset_relabels(self):
        x = np.arange(10, dtype=np.float64).reshape(5, 2)
        y = np.array([3, 8, 5, 3, 8])
        xs, ys = binary_subset(x, y, class_zero=3, class_one=8)
        assert xs.shape == (4, 2)
        assert np.array_equal(ys, [0.0, 1.0, 0.0, 1.0])


class TestPrimitives:
    def test_local_gradient_validation(self):
        task = LogisticTask(2)
        w = np.zeros(2)
        with pytest.raises(ValueError, match="empty"):
            local_gradient(task, w, np.empty((0, 2)), np.empty(0))
        with pytest.raises(ValueError, match="mismatch"):
            local_gradient(task, w, np.zeros((3, 2)), np.zeros(2))

    def test_ideal_aggregate_is_the_mean(self):
        grads = [np.array([1.0, 2.0]), np.array([3.0, 6.0])]
        assert np.array_equal(ideal_aggregate(grads), [2.0, 4.0])
        with pytest.raises(ValueError):
            ideal_aggregate([])

    def test_global_update(self):
        w = np.array([1.0, 1.0])
        assert np.array_equal(global_update(w, np.array([10.0, -10.0]), 0.1), [0.0, 2.0])
        with pytest.raises(ValueError):
            global_update(w, np.array([1.0, 2.0]), 0.0)
        with pytest.raises(ValueError):
            global_update(w, np.zeros(3), 0.1)

    def test_evaluate_ties_predict_class_zero(self):
        exp = resolve(small_cfg())
        test = build_test_set(exp)
        task = LogisticTask(5)
        _, accuracy = evaluate(task, np.zeros(5), test)
        assert accuracy == 0.5

    def test_model_params_reject_nonfinite(self):
        with pytest.raises(ValueError):
            ModelParams(w=np.array([1.0, math.nan]))


class TestTraining:
    def test_ideal_run_is_deterministic(self):
        a = train(small_cfg(), mode="ideal")
        b = train(small_cfg(), mode="ideal")
        assert np.array_equal(a.final.w, b.final.w)
        assert a.records == b.records

    def test_ideal_trace_has_no_channel_fields(self):
        trace = train(small_cfg(), mode="ideal")
        assert trace.mode == "ideal"
        assert trace.gamma_th is None
        assert trace.g_bound is None
        assert trace.skipped_rounds == 0
        assert all(r.divergence_sq == 0.0 for r in trace.records)
        assert all(r.active_count == 3 for r in trace.records)

    def test_unity_override_with_zero_noise_reproduces_ideal(self):
        exp = replace(resolve(small_cfg(rho=1.0)), sigma2=0.0)
        ideal = train(exp, mode="ideal")
        faked = train(exp, mode="aircomp", xi_override=1.0)
        assert np.array_equal(ideal.final.w, faked.final.w)
        assert faked.mean_divergence_sq == 0.0

    def test_aircomp_noise_shows_up_in_divergence(self):
        trace = train(small_cfg(sigma2_dbm=-20.0), mode="aircomp")
        assert trace.mode == "aircomp"
        assert trace.gamma_th == 0.5
        assert trace.g_bound is not None and trace.g_bound > 0.0
        assert trace.mean_divergence_sq > 0.0

    def test_trace_properties(self):
        trace = train(small_cfg(), mode="aircomp")
        assert trace.final_accuracy == trace.records[-1].accuracy
        spread = np.mean([r.grad_spread_sq for r in trace.records])
        assert abs(trace.delta2_hat - float(spread)) < 1e-15

    def test_huge_threshold_skips_every_round(self):
        trace = train(small_cfg(k_devices=2, gamma_th=12.0), mode="aircomp")
        assert trace.skipped_rounds == len(trace.records) == 4
        assert all(r.active_count == 0 for r in trace.records)
        # logistic init is the zero vector and no update ever fires
        assert np.all(trace.final.w == 0.0)

    def test_genie_mode_runs(self):
        trace = train(small_cfg(g_mode="genie"), mode="aircomp")
        assert len(trace.records) == 4

    def test_fixed_mode_requires_bound(self):
        with pytest.raises(ValueError, match="g_bound"):
            train(small_cfg(g_mode="fixed"), mode="aircomp")
        trace = train(small_cfg(g_mode="fixed", g_bound=2.0), mode="aircomp")
        assert trace.g_bound == 2.0

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            train(small_cfg(), mode="perfect")

    def test_accepts_resolved_experiment(self):
        exp = resolve(small_cfg())
        a = train(exp, mode="ideal")
        b = train(small_cfg(), mode="ideal")
        assert np.array_equal(a.final.w, b.final.w)

    def test_calibration_is_margin_times_peak_warmup_norm(self):
        exp = resolve(small_cfg())
        task = build_task(exp.train)
        devices = build_devices(exp)
        got = calibrate_g_bound(exp, task, devices, rounds=3)

        w = task.init_params(substream(exp.seed, STREAM_INIT))
        g_max = 0.0
        for m in range(3):
            grads = round_gradients(task, w, devices, exp, m)
            g_max = max(g_max, max(float(np.linalg.norm(g)) for g in grads))
            w = global_update(w, ideal_aggregate(grads), exp.train.eta)
        assert got == 1.1 * g_max

    def test_ideal_learns_the_synthetic_task(self):
        tc = replace(SMALL_TRAIN, rounds_m=150)
        trace = train(small_cfg(train=tc, eta=0.05), mode="ideal")
        assert trace.final_accuracy > 0.8

    def test_mlp_training_round_runs(self):
        tc = TrainConfig(
            task="small_mlp",
            batch_size=8,
            rounds_m=2,
            data_per_device=40,
            n_features=5,
            test_size=100,
            hidden_units=4,
        )
        trace = train(small_cfg(train=tc), mode="aircomp")
        assert len(trace.records) == 2
        assert trace.final.w.size == 4 * 5 + 4 + 4 + 1
