import csv

import numpy as np
import pytest

from finemorphs import (
    OptimizerConfig,
    TrainConfig,
    parse_sequence,
    predict,
    rmse,
    train,
)
from finemorphs.predictor import export_pca_snapshots, pca_snapshot, propagate

FAST = TrainConfig(
    optimizer=OptimizerConfig(max_iters=120), max_sigma_loops=2, verbose=False
)


@pytest.fixture(scope="module")
def sine_model():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.5, 1.5, size=(40, 1))
    y = np.sin(2.0 * x)
    # s=0 keeps train-time inputs identical to prediction-time inputs, so
    # training points re-fed as test points follow the same path exactly.
    spec = parse_sequence("ADA", d_x=1, d_y=1, s=0, steps=6)
    return x, y, train(spec, x, y, FAST)


class TestPredict:
    def test_training_points_reproduce_training_outputs(self, sine_model):
        x, y, model = sine_model
        from finemorphs.preprocess import anchors_first_permutation, standardize
        from finemorphs.flow import forward_pass
        from finemorphs.objective import trim
        from finemorphs.preprocess import unstandardize_y

        ds, _ = standardize(x, y, s=0, rng_seed=FAST.rng_seed)
        perm = anchors_first_permutation(model.anchor_indices, x.shape[0])
        fwd = forward_pass(model.spec, model.params, ds.x[perm], model.n_subset)
        train_outputs = unstandardize_y(
            model.standardization, trim(fwd.outputs, model.spec.r)
        )
        pred = predict(model, x[perm]).predictions
        np.testing.assert_allclose(pred, train_outputs, rtol=0, atol=1e-10)

    def test_pure_affine_model(self, rng):
        x = rng.normal(size=(30, 2))
        y = x @ np.array([[0.5], [-2.0]]) + 1.0
        spec = parse_sequence("A", d_x=2, d_y=1, s=0)
        model = train(spec, x, y, FAST)
        st = model.standardization
        m, b = model.params.affines[0].M, model.params.affines[0].b
        xs = (x - st.mu_x) / st.sigma_x
        expected = (xs @ m.T + b) * st.sigma_y + st.mu_y
        np.testing.assert_allclose(predict(model, x).predictions, expected, atol=1e-12)

    def test_zero_controls_equal_affine_composition(self, sine_model):
        x, y, model = sine_model
        import copy

        frozen = copy.deepcopy(model)
        for c in frozen.params.controls:
            c[:] = 0.0
        # With zero controls the caches must describe static anchors.
        for i, cache in enumerate(frozen.caches):
            frozen.caches[i] = np.repeat(cache[:1], cache.shape[0], axis=0)
        st = frozen.standardization
        xs = (x - st.mu_x) / st.sigma_x
        m0, m1 = frozen.params.affines
        expected = ((xs @ m0.M.T + m0.b) @ m1.M.T + m1.b) * st.sigma_y + st.mu_y
        np.testing.assert_allclose(
            predict(frozen, x).predictions, expected, atol=1e-12
        )

    def test_dimension_mismatch_rejected(self, sine_model, rng):
        _, _, model = sine_model
        with pytest.raises(ValueError):
            predict(model, rng.normal(size=(5, 3)))

    def test_corrupted_cache_rejected(self, sine_model, rng):
        import copy

        _, _, model = sine_model
        bad = copy.deepcopy(model)
        bad.caches[0] = bad.caches[0][:-1]
        with pytest.raises(ValueError, match="corrupt"):
            predict(bad, rng.normal(size=(3, 1)))

    def test_pure_function(self, sine_model, rng):
        _, _, model = sine_model
        xt = rng.normal(size=(7, 1))
        a = predict(model, xt).predictions
        b = predict(model, xt).predictions
        np.testing.assert_array_equal(a, b)


class TestRmse:
    def test_perfect(self):
        p = np.arange(6.0).reshape(3, 2)
        assert rmse(p, p.copy()) == 0.0

    def test_plus_minus_one(self):
        assert rmse(np.array([1.0, -1.0]), np.zeros(2)) == 1.0

    def test_two_dim_single_point(self):
        # The per-point error is the squared Euclidean norm, so a (3, 4)
        # error vector gives rmse 5 for a single test point.
        assert rmse(np.array([[3.0, 4.0]]), np.zeros((1, 2))) == 5.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((0, 1)), np.zeros((0, 1)))

    def test_response_scaling_scales_rmse(self, rng):
        x = rng.normal(size=(30, 2))
        y = np.sin(x[:, :1]) + 0.1 * rng.normal(size=(30, 1))
        xt = rng.normal(size=(10, 2))
        yt = np.sin(xt[:, :1])
        spec = parse_sequence("ADA", d_x=2, d_y=1, steps=4)
        cfg = TrainConfig(
            optimizer=OptimizerConfig(max_iters=60), max_sigma_loops=1, verbose=False
        )
        # A power-of-two scale keeps every float exact, so the standardized
        # problem and the optimizer trajectory are bit-identical and the
        # RMSE scales exactly with |c|.
        c = 4.0
        r1 = predict(train(spec, x, y, cfg), xt, targets=yt).rmse
        r2 = predict(train(spec, x, c * y, cfg), xt, targets=c * yt).rmse
        assert r2 == pytest.approx(c * r1, rel=1e-12)


class TestPcaExport:
    def test_zero_control_snapshots_constant(self, sine_model, tmp_path):
        x, y, model = sine_model
        import copy

        frozen = copy.deepcopy(model)
        for c in frozen.params.controls:
            c[:] = 0.0
        for i, cache in enumerate(frozen.caches):
            frozen.caches[i] = np.repeat(cache[:1], cache.shape[0], axis=0)
        out = tmp_path / "snap.csv"
        header, rows = export_pca_snapshots(
            frozen, x, y, module=1, times=[0.0, 0.5, 1.0], out_path=str(out)
        )
        data = np.asarray(rows, dtype=float)
        per_time = data.reshape(3, -1, data.shape[1])
        np.testing.assert_allclose(per_time[0][:, 2:], per_time[1][:, 2:], atol=1e-12)
        np.testing.assert_allclose(per_time[0][:, 2:], per_time[2][:, 2:], atol=1e-12)

    def test_axis_aligned_recovery(self):
        rng = np.random.default_rng(3)
        states = np.zeros((50, 3))
        states[:, 0] = rng.normal(0, 5.0, 50)
        states[:, 1] = rng.normal(0, 2.0, 50)
        states[:, 2] = rng.normal(0, 0.5, 50)
        scores, comps = pca_snapshot(states, 3)
        # Components align with coordinate axes, largest variance first.
        np.testing.assert_allclose(np.abs(comps), np.eye(3), atol=0.08)
        for i in range(3):
            assert comps[i, np.abs(comps[i]).argmax()] > 0  # sign convention

    def test_reconstruction_matches_eigh_oracle(self, rng):
        states = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5))
        scores, comps = pca_snapshot(states, 3)
        recon = scores @ comps
        centered = states - states.mean(axis=0)
        # Independent oracle: dense symmetric eigendecomposition.
        evals, evecs = np.linalg.eigh(centered.T @ centered)
        basis = evecs[:, ::-1][:, :3]
        recon_oracle = centered @ basis @ basis.T
        np.testing.assert_allclose(recon, recon_oracle, atol=1e-8)

    def test_csv_schema(self, sine_model, tmp_path):
        x, y, model = sine_model
        out = tmp_path / "snap.csv"
        times = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        export_pca_snapshots(model, x, y, module=1, times=times, out_path=str(out))
        with open(out) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        assert header == ["t", "index", "pc1", "y"]  # 1-D module: one component
        assert len(rows) == len(times) * x.shape[0]
        for row in rows:
            assert len(row) == len(header)
            float(row[0]), int(float(row[1]))

    def test_low_dimension_warns(self, sine_model, tmp_path):
        x, y, model = sine_model
        with pytest.warns(UserWarning, match="principal"):
            export_pca_snapshots(model, x, y, module=1, times=[0.5])

    def test_bad_module_index(self, sine_model):
        x, y, model = sine_model
        with pytest.raises(ValueError):
            export_pca_snapshots(model, x, y, module=2, times=[0.5])

    def test_propagate_capture_shape(self, sine_model):
        x, y, model = sine_model
        xs = (x - model.standardization.mu_x) / model.standardization.sigma_x
        traj = propagate(model, xs, capture_module=1)
        steps = model.spec.diffeo_specs[0].steps
        assert traj.shape == (steps + 1, x.shape[0], 1)
