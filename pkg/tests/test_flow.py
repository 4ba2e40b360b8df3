import numpy as np
import pytest

from finemorphs import (
    FlowDivergenceError,
    KernelConfig,
    flow_module,
    forward_pass,
    init_params,
    kernel_eval,
    parse_sequence,
    transport,
)
from finemorphs.optimizer import ParamLayout


def reference_forward(spec, params, x, n_subset):
    """Step-by-step scalar-loop evaluator, independent of the flow module."""
    from finemorphs.sequence import AffineSpec

    z = np.array(x, dtype=float)
    a_idx = d_idx = 0
    for mod in spec.modules:
        if isinstance(mod, AffineSpec):
            p = params.affines[a_idx]
            z = np.array([p.M @ row + p.b for row in z])
            a_idx += 1
        else:
            controls = params.controls[d_idx]
            for i in range(mod.steps):
                new = z.copy()
                for k in range(z.shape[0]):
                    vel = np.zeros(mod.dim)
                    for l in range(n_subset):
                        vel += kernel_eval(mod.kernel, z[k], z[l]) * controls[i, l]
                    new[k] = z[k] + vel / mod.steps
                z = new
            d_idx += 1
    return z


class TestFlowModule:
    def test_zero_controls_identity(self, rng):
        cfg = KernelConfig(0.5, 3)
        anchors = rng.normal(size=(5, 3))
        passengers = rng.normal(size=(4, 3))
        res = flow_module(cfg, 6, np.zeros((6, 5, 3)), anchors, passengers)
        assert np.array_equal(res.anchors_out, anchors)
        assert np.array_equal(res.passengers_out, passengers)
        assert res.running_cost == 0.0
        for i in range(7):
            assert np.array_equal(res.trajectory[i], anchors)

    def test_single_step_single_anchor(self):
        # One Euler step of a single self-driven anchor: z1 = z0 + c.
        cfg = KernelConfig(0.5, 1)
        z0 = np.array([[0.7]])
        c = np.array([[[2.5]]])
        res = flow_module(cfg, 1, c, z0)
        assert res.anchors_out[0, 0] == pytest.approx(0.7 + 2.5, abs=0)

    def test_passenger_on_anchor_follows_it(self, rng):
        cfg = KernelConfig(0.5, 2)
        anchors = rng.normal(size=(4, 2))
        controls = rng.normal(0, 0.3, size=(5, 4, 2))
        passenger = anchors[2:3].copy()
        res = flow_module(cfg, 5, controls, anchors, passenger)
        np.testing.assert_allclose(
            res.passengers_out[0], res.anchors_out[2], rtol=1e-12, atol=1e-12
        )

    def test_divergence_detected(self):
        # Three coincident anchors each pushing 1e308 overflow the summed
        # field, so the very first state update goes non-finite.
        cfg = KernelConfig(0.5, 1)
        controls = np.full((3, 3, 1), 1e308)
        with np.errstate(over="ignore"), pytest.raises(FlowDivergenceError, match="step 1"):
            flow_module(cfg, 3, controls, np.zeros((3, 1)))

    def test_control_shape_validated(self):
        cfg = KernelConfig(0.5, 2)
        with pytest.raises(ValueError):
            flow_module(cfg, 3, np.zeros((3, 2, 2)), np.zeros((4, 2)))


class TestTransport:
    def test_permutation_equivariance(self, rng):
        cfg = KernelConfig(0.6, 2)
        anchors = rng.normal(size=(4, 2))
        controls = rng.normal(0, 0.3, size=(5, 4, 2))
        res = flow_module(cfg, 5, controls, anchors)
        points = rng.normal(size=(6, 2))
        perm = rng.permutation(6)
        out = transport(cfg, controls, res.trajectory, points)
        out_perm = transport(cfg, controls, res.trajectory, points[perm])
        np.testing.assert_array_equal(out[perm], out_perm)

    def test_reverse_euler_reconstruction_improves_with_steps(self, rng):
        # Fix a piecewise-constant control signal on a 10-step grid, then
        # integrate it at finer resolutions: reverse Euler reconstruction
        # of the inputs should improve roughly first order in 1/T.
        cfg = KernelConfig(0.8, 2)
        anchors0 = rng.normal(size=(5, 2))
        base = rng.normal(0, 0.5, size=(10, 5, 2))
        errors = {}
        for factor in (1, 4, 16):
            steps = 10 * factor
            controls = np.repeat(base, factor, axis=0) / 1.0
            res = flow_module(cfg, steps, controls, anchors0)
            z = res.anchors_out.copy()
            for i in range(steps - 1, -1, -1):
                k = np.array(
                    [
                        [kernel_eval(cfg, z[a], res.trajectory[i][l]) for l in range(5)]
                        for a in range(5)
                    ]
                )
                z = z - (k @ controls[i]) / steps
            errors[steps] = np.abs(z - anchors0).max()
        assert errors[40] < 1.1 * errors[10]
        assert errors[160] < 1.1 * errors[40]
        assert errors[160] < errors[10] / 2


class TestForwardPass:
    def test_zero_controls_reduce_to_affine_composition(self, rng):
        spec = parse_sequence("ADA", d_x=4, d_y=1, s=1)
        params = init_params(spec, 6, rng_seed=0)
        m0, m1 = params.affines
        x = np.hstack([rng.normal(size=(6, 4)), np.zeros((6, 1))])
        fwd = forward_pass(spec, params, x, 6)
        expected = (x @ m0.M.T + m0.b) @ m1.M.T + m1.b
        np.testing.assert_array_equal(fwd.outputs, expected)

    def test_single_affine_exact(self, rng):
        spec = parse_sequence("A", d_x=3, d_y=2, s=0)
        params = init_params(spec, 1, 0)
        x = rng.normal(size=(1, 3))
        fwd = forward_pass(spec, params, x, 1)
        np.testing.assert_array_equal(
            fwd.outputs[0], params.affines[0].M @ x[0] + params.affines[0].b
        )

    def test_matches_reference_evaluator(self, rng):
        spec = parse_sequence("AD2A", d_x=3, d_y=2, s=0, steps=3)
        layout = ParamLayout(spec, 3)
        params = layout.unflatten(
            layout.flatten(init_params(spec, 3, 0)) + rng.normal(0, 0.4, layout.size)
        )
        x = rng.normal(size=(5, 3))
        fwd = forward_pass(spec, params, x, 3)
        ref = reference_forward(spec, params, x, 3)
        np.testing.assert_allclose(fwd.outputs, ref, rtol=1e-12, atol=1e-12)

    def test_all_anchor_equals_joint_computation(self, rng):
        # With n_subset = N the passenger path is never taken.
        spec = parse_sequence("ADA", d_x=3, d_y=1, s=0)
        layout = ParamLayout(spec, 5)
        params = layout.unflatten(
            layout.flatten(init_params(spec, 5, 0)) + rng.normal(0, 0.3, layout.size)
        )
        x = rng.normal(size=(5, 3))
        fwd = forward_pass(spec, params, x, 5)
        assert fwd.n_subset == 5
        np.testing.assert_array_equal(fwd.caches[0][-1], fwd.states[2][:5])

    def test_input_width_validated(self, rng):
        spec = parse_sequence("ADA", d_x=4, d_y=1, s=1)
        params = init_params(spec, 3, 0)
        with pytest.raises(ValueError):
            forward_pass(spec, params, rng.normal(size=(3, 4)), 3)

    def test_states_boundaries(self, rng):
        spec = parse_sequence("ADA", d_x=2, d_y=1, s=0)
        params = init_params(spec, 4, 0)
        x = rng.normal(size=(4, 2))
        fwd = forward_pass(spec, params, x, 4)
        assert len(fwd.states) == 4
        np.testing.assert_array_equal(fwd.states[0], x)
        np.testing.assert_array_equal(fwd.caches[0][0], fwd.states[1][:4])
