"""Update rules: clipping, warmup, Adam, LAMB trust ratios, penalty terms."""

import numpy as np
import pytest

from mlrn import tensor as T
from mlrn.optim import (
    Optimizer,
    OptimizerConfig,
    OptimizerState,
    activation_penalty,
    adam_step,
    clip_global_norm,
    clip_per_element,
    is_bias,
    l2_penalty,
    lamb_step,
    warmup_lr,
)


def single_param(value, name="w.weight"):
    p = T.parameter(np.array([float(value)], dtype=np.float64), name=name)
    return {name: p}


class TestClip:
    def test_norm_twenty_halved(self):
        grads = {"a": np.array([12.0]), "b": np.array([16.0])}
        clipped, norm = clip_global_norm(grads, 10.0)
        assert norm == pytest.approx(20.0)
        assert clipped["a"][0] == pytest.approx(6.0)
        assert clipped["b"][0] == pytest.approx(8.0)
        total = np.sqrt(sum(float(g @ g) for g in clipped.values()))
        assert total == pytest.approx(10.0)

    def test_small_norm_unchanged(self):
        grads = {"a": np.array([3.0])}
        clipped, norm = clip_global_norm(grads, 10.0)
        assert norm == pytest.approx(3.0)
        assert np.array_equal(clipped["a"], grads["a"])

    def test_zero_gradients_unchanged(self):
        grads = {"a": np.zeros(4)}
        clipped, norm = clip_global_norm(grads, 10.0)
        assert norm == 0.0
        assert np.array_equal(clipped["a"], np.zeros(4))

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        grads = {f"p{i}": rng.standard_normal(5) * 10 for i in range(3)}
        once, _ = clip_global_norm(grads, 10.0)
        twice, _ = clip_global_norm(once, 10.0)
        for name in grads:
            assert np.allclose(once[name], twice[name], atol=1e-12)

    def test_nonfinite_norm_rejected(self):
        with pytest.raises(T.NonFiniteError):
            clip_global_norm({"a": np.array([np.inf])}, 10.0)

    def test_per_element_mode(self):
        clipped = clip_per_element({"a": np.array([-25.0, 3.0, 11.0])}, 10.0)
        assert np.array_equal(clipped["a"], [-10.0, 3.0, 10.0])


class TestWarmup:
    def test_first_iteration(self):
        assert warmup_lr(2e-3, 0, 1000, 8) == pytest.approx(2e-3 / 8000)

    def test_midpoint(self):
        # end of epoch 4 of 8: iteration+1 == 4 * ipe
        assert warmup_lr(2e-3, 4 * 1000 - 1, 1000, 8) == pytest.approx(1e-3)

    def test_beyond_warmup_is_base(self):
        assert warmup_lr(2e-3, 8 * 1000, 1000, 8) == 2e-3
        assert warmup_lr(2e-3, 10**6, 1000, 8) == 2e-3

    def test_monotone_nondecreasing(self):
        values = [warmup_lr(1e-3, it, 50, 8) for it in range(600)]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestAdam:
    def test_first_step_magnitude(self):
        params = single_param(1.0)
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="adam", lr=1e-2)
        adam_step(params, {"w.weight": np.array([0.1])}, state, cfg, lr_eff=1e-2)
        # m_hat = 0.1, v_hat = 0.01, update = lr * 0.1 / (0.1 + 1e-8)
        assert params["w.weight"].data[0] == pytest.approx(1.0 - 1e-2, abs=1e-8)

    def test_zero_gradient_never_moves(self):
        params = single_param(0.7)
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="adam")
        for _ in range(25):
            adam_step(params, {"w.weight": np.zeros(1)}, state, cfg, lr_eff=cfg.lr)
        assert params["w.weight"].data[0] == 0.7

    def test_proportional_gradients_equal_first_step(self):
        cfg = OptimizerConfig(kind="adam", lr=1e-3)
        updates = []
        for g in (0.1, 0.2):
            params = single_param(1.0)
            state = OptimizerState.init_for(params)
            adam_step(params, {"w.weight": np.array([g])}, state, cfg, lr_eff=cfg.lr)
            updates.append(1.0 - params["w.weight"].data[0])
        assert updates[0] == pytest.approx(updates[1], rel=1e-6)

    def test_default_lr(self):
        assert OptimizerConfig(kind="adam").lr == 1e-4
        assert OptimizerConfig(kind="lamb").lr == 2e-3

    def test_warmup_defaults_follow_kind(self):
        assert OptimizerConfig(kind="lamb").warmup is True
        assert OptimizerConfig(kind="adam").warmup is False


class TestLamb:
    def test_hand_computed_single_weight_step(self):
        # w=1, g=0.1, lr=2e-3, decay=0.2, first step:
        #   m_hat = 0.1, v_hat = 0.01
        #   u = 0.1/(0.1 + 1e-8) + 0.2 = 1.1999999...
        #   r = 1 / (u + 1e-6)
        #   w' = 1 - 2e-3 * r * u
        params = single_param(1.0)
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="lamb", lr=2e-3, weight_decay=0.2)
        lamb_step(params, {"w.weight": np.array([0.1])}, state, cfg, lr_eff=2e-3)
        m_hat = 0.1
        v_hat = 0.01
        u = m_hat / (np.sqrt(v_hat) + 1e-8) + 0.2 * 1.0
        expected = 1.0 - 2e-3 * (1.0 / (abs(u) + 1e-6)) * u
        assert params["w.weight"].data[0] == pytest.approx(expected, abs=1e-12)
        assert params["w.weight"].data[0] == pytest.approx(0.998, abs=1e-6)

    def test_zero_parameter_tensor_stays_zero(self):
        params = {"w.weight": T.parameter(np.zeros(4, dtype=np.float64))}
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="lamb")
        lamb_step(params, {"w.weight": np.full(4, 0.3)}, state, cfg, lr_eff=2e-3)
        assert np.array_equal(params["w.weight"].data, np.zeros(4))

    def test_no_decay_on_biases(self):
        cfg = OptimizerConfig(kind="lamb", weight_decay=0.5)
        results = {}
        for name in ("layer.weight", "layer.bias"):
            params = {name: T.parameter(np.array([1.0], dtype=np.float64), name=name)}
            state = OptimizerState.init_for(params)
            ratios = []
            lamb_step(params, {name: np.array([0.1])}, state, cfg, lr_eff=2e-3,
                      trace_hook=lambda n, p, u, r: ratios.append((np.linalg.norm(u), r)))
            results[name] = ratios[0]
        u_weight, _ = results["layer.weight"]
        u_bias, _ = results["layer.bias"]
        assert u_weight == pytest.approx(u_bias + 0.5, abs=1e-7)

    def test_update_magnitude_scales_with_parameter_norm(self):
        # with decay 0 the step size is lr * ||p|| up to the denominator offset
        rng = np.random.default_rng(1)
        base = rng.standard_normal(50)
        grads = [rng.standard_normal(50) for _ in range(5)]
        cfg = OptimizerConfig(kind="lamb", weight_decay=0.0)

        def run(scale):
            params = {"w.weight": T.parameter(base * scale)}
            state = OptimizerState.init_for(params)
            before = params["w.weight"].data.copy()
            for g in grads:
                lamb_step(params, {"w.weight": g * scale}, state, cfg, lr_eff=2e-3)
            return np.linalg.norm(params["w.weight"].data - before)

        small, large = run(1.0), run(3.0)
        assert large == pytest.approx(3.0 * small, rel=1e-4)

    def test_trust_ratio_matches_independent_recompute(self):
        rng = np.random.default_rng(2)
        params = {
            "a.weight": T.parameter(rng.standard_normal((4, 3))),
            "a.bias": T.parameter(rng.standard_normal(4)),
        }
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="lamb", weight_decay=0.2)
        seen = []

        def hook(name, p_before, u, ratio):
            expected = np.linalg.norm(p_before) / (np.linalg.norm(u) + cfg.trust_denominator_offset)
            assert ratio >= 0.0 and np.isfinite(ratio)
            assert ratio == pytest.approx(expected, abs=1e-6)
            seen.append(name)

        for step in range(10):
            grads = {n: rng.standard_normal(p.shape) for n, p in params.items()}
            lamb_step(params, grads, state, cfg, lr_eff=1e-3, trace_hook=hook)
        assert len(seen) == 20


class TestPenalties:
    def test_activation_penalty_zero(self):
        pen = activation_penalty([T.Tensor(np.zeros(10))], 2e-3)
        assert float(pen.data) == 0.0

    def test_activation_penalty_unit_mean_square(self):
        pen = activation_penalty([T.Tensor(np.array([1.0, -1.0, 1.0, -1.0]))], 2e-3)
        assert float(pen.data) == pytest.approx(2e-3, rel=1e-6)

    def test_activation_penalty_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        acts = [T.Tensor(rng.standard_normal(16)), T.Tensor(rng.standard_normal(5))]
        doubled = [T.Tensor(2 * a.data) for a in acts]
        assert float(activation_penalty(doubled, 2e-3).data) == pytest.approx(
            4.0 * float(activation_penalty(acts, 2e-3).data), rel=1e-6
        )

    def test_activation_penalty_mean_over_concatenation(self):
        a = T.Tensor(np.full(6, 2.0))
        b = T.Tensor(np.full(2, 4.0))
        expected = 2e-3 * (6 * 4.0 + 2 * 16.0) / 8.0
        assert float(activation_penalty([a, b], 2e-3).data) == pytest.approx(expected, rel=1e-6)

    def test_l2_zero_weights(self):
        params = {"w.weight": T.parameter(np.zeros(5))}
        assert float(l2_penalty(params, 0.5).data) == 0.0

    def test_l2_hand_value(self):
        params = {"w.weight": T.parameter(np.array([3.0]))}
        assert float(l2_penalty(params, 0.5).data) == pytest.approx(4.5)

    def test_l2_excludes_biases(self):
        params = {
            "w.weight": T.parameter(np.array([2.0])),
            "w.bias": T.parameter(np.array([100.0])),
        }
        assert float(l2_penalty(params, 1.0).data) == pytest.approx(4.0)

    def test_l2_gradient_closed_form(self):
        w = T.parameter(np.random.default_rng(4).standard_normal(6), name="w.weight", dtype=np.float64)
        coeff = 0.37
        with T.Tape() as tape:
            loss = l2_penalty({"w.weight": w}, coeff)
        tape.backward(loss)
        assert np.allclose(w.grad, 2.0 * coeff * w.data, atol=1e-6)

    def test_is_bias_naming_rule(self):
        assert is_bias("conv0.bias") and not is_bias("conv0.weight")


class TestStateAndSmoke:
    def test_step_counter_increments_once_per_step(self):
        params = single_param(1.0)
        state = OptimizerState.init_for(params)
        cfg = OptimizerConfig(kind="lamb")
        for expected in range(1, 6):
            lamb_step(params, {"w.weight": np.array([0.05])}, state, cfg, lr_eff=1e-3)
            assert state.t == expected

    def test_quadratic_bowl_monotone_after_warmup(self):
        # loss = 0.5 * (w1^2 + 10 * w2^2): both optimizers must descend
        for kind in ("adam", "lamb"):
            cfg = OptimizerConfig(kind=kind, lr=1e-2 if kind == "adam" else 1e-3, weight_decay=0.0, warmup=False)
            params = {
                "p.weight": T.parameter(np.array([3.0, -2.0], dtype=np.float64), name="p.weight"),
            }
            opt = Optimizer(cfg, params)
            losses = []
            for _ in range(60):
                w = params["p.weight"].data
                losses.append(0.5 * (w[0] ** 2 + 10 * w[1] ** 2))
                grads = {"p.weight": np.array([w[0], 10 * w[1]])}
                opt.step(params, grads, cfg.lr)
            tail = losses[10:]
            assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:])), kind
            assert tail[-1] < losses[0]

    def test_replay_from_serialized_state(self):
        # stepping after a state round-trip matches stepping straight through
        from mlrn.storage import load_checkpoint, save_checkpoint
        import tempfile, os

        rng = np.random.default_rng(5)
        grads_seq = [
            {"w.weight": rng.standard_normal(3).astype(np.float32), "w.bias": rng.standard_normal(2).astype(np.float32)}
            for _ in range(8)
        ]

        def fresh_params():
            r = np.random.default_rng(6)
            return {
                "w.weight": T.parameter(r.standard_normal(3).astype(np.float32), name="w.weight"),
                "w.bias": T.parameter(r.standard_normal(2).astype(np.float32), name="w.bias"),
            }

        cfg = OptimizerConfig(kind="lamb", lr=2e-3)
        straight = fresh_params()
        opt = Optimizer(cfg, straight)
        for g in grads_seq:
            opt.step(straight, g, cfg.lr)

        resumed = fresh_params()
        opt2 = Optimizer(cfg, resumed)
        for g in grads_seq[:4]:
            opt2.step(resumed, g, cfg.lr)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "mid.ckpt")
            save_checkpoint(path, resumed, opt2.state)
            bundle = load_checkpoint(path)
        from mlrn.model import ModelParams

        restored = ModelParams.from_arrays(bundle.params)
        opt3 = Optimizer(cfg, restored)
        opt3.state = bundle.opt_state
        for g in grads_seq[4:]:
            opt3.step(restored, g, cfg.lr)
        for name in straight:
            assert np.array_equal(straight[name].data, restored[name].data), name
