"""Tests for the reverse-mode tape, optimizer, targets and checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from tecrl.autodiff import (
    Mlp,
    ParamStore,
    Tape,
    adam_step,
    concat,
    linear,
    load_checkpoint,
    minimum,
    polyak_update,
    save_checkpoint,
    softplus,
)

from helpers import central_diff_param_grads, max_rel_error


def make_mlp(in_dim=3, hidden=(8, 8), out_dim=1, seed=0, activation="tanh"):
    store = ParamStore()
    mlp = Mlp(store, "net", in_dim, hidden, out_dim, np.random.default_rng(seed), activation)
    return store, mlp


class TestForward:
    def test_zero_weights_output_is_bias(self):
        store, mlp = make_mlp(in_dim=2, hidden=(4,), out_dim=3)
        for p in store.params():
            p.value[...] = 0.0
        store["net.b1"].value[...] = [1.0, -2.0, 0.5]
        out = mlp.forward_np(np.random.default_rng(1).normal(size=(5, 2)))
        np.testing.assert_allclose(out, np.tile([1.0, -2.0, 0.5], (5, 1)), atol=0)

    def test_one_by_one_linear(self):
        # w=2, b=1, x=3 -> 7 on the taped path too
        store = ParamStore()
        w = store.create("w", np.array([[2.0]]))
        b = store.create("b", np.array([1.0]))
        tape = Tape()
        out = linear(np.array([[3.0]]), tape.param(w), tape.param(b), tape)
        assert out.value[0, 0] == 7.0

    def test_matches_plain_matmul_chain(self):
        store, mlp = make_mlp(in_dim=4, hidden=(16, 16), out_dim=2, seed=3)
        x = np.random.default_rng(4).normal(size=(7, 4))
        h = np.tanh(x @ store["net.w0"].value + store["net.b0"].value)
        h = np.tanh(h @ store["net.w1"].value + store["net.b1"].value)
        want = h @ store["net.w2"].value + store["net.b2"].value
        np.testing.assert_allclose(mlp.forward_np(x), want, atol=1e-12)
        tape = Tape()
        np.testing.assert_allclose(mlp.forward(x, tape).value, want, atol=1e-12)

    def test_input_width_error_names_layer(self):
        _, mlp = make_mlp(in_dim=3)
        with pytest.raises(ValueError, match="net: layer 0"):
            mlp.forward_np(np.zeros((2, 5)))

    def test_constructor_validation(self):
        with pytest.raises(ValueError, match="hidden"):
            Mlp(ParamStore(), "m", 2, (), 1, np.random.default_rng(0))
        with pytest.raises(ValueError, match="activation"):
            Mlp(ParamStore(), "m", 2, (4,), 1, np.random.default_rng(0), activation="sine")


class TestBackward:
    def test_scalar_product(self):
        # loss = w * x with x = 3 -> dw = 3
        store = ParamStore()
        w = store.create("w", np.array(1.5))
        tape = Tape()
        loss = tape.param(w) * 3.0
        loss.backward()
        assert w.grad == pytest.approx(3.0, abs=0)

    def test_squared_residual(self):
        # loss = (w*x - y)^2 at w=1, x=2, y=0 -> dw = 2*2*2 = 8
        store = ParamStore()
        w = store.create("w", np.array(1.0))
        tape = Tape()
        loss = (tape.param(w) * 2.0 - 0.0).square()
        loss.backward()
        assert w.grad == pytest.approx(8.0, abs=0)

    def test_accumulation_until_zero_grad(self):
        store = ParamStore()
        w = store.create("w", np.array(2.0))
        for _ in range(2):
            tape = Tape()
            (tape.param(w) * 3.0).backward()
        assert w.grad == pytest.approx(6.0)
        store.zero_grad()
        assert w.grad == pytest.approx(0.0)

    def test_tape_reuse_raises(self):
        store = ParamStore()
        w = store.create("w", np.array(1.0))
        tape = Tape()
        out = tape.param(w) * 2.0
        out.backward()
        with pytest.raises(RuntimeError, match="consumed"):
            out.backward()

    def test_cross_tape_mixing_raises(self):
        store = ParamStore()
        w = store.create("w", np.array(1.0))
        t1, t2 = Tape(), Tape()
        a = t1.param(w)
        b = t2.param(w)
        with pytest.raises(ValueError, match="different tapes"):
            _ = a + b

    def test_large_net_matches_finite_differences(self):
        # every parameter of a two-hidden-layer 256-unit net, h = 1e-5
        store, mlp = make_mlp(in_dim=3, hidden=(256, 256), out_dim=1, seed=7)
        x = np.random.default_rng(8).normal(size=(1, 3))

        def loss():
            return float(mlp.forward_np(x).sum())

        numeric = central_diff_param_grads(loss, store.params(), h=1e-5)
        tape = Tape()
        mlp.forward(x, tape).sum().backward()
        analytic = {p.name: p.grad for p in store.params()}
        assert max_rel_error(analytic, numeric) <= 1e-4


class TestCompositeGradients:
    """Spot-check the op set agents rely on against finite differences."""

    @staticmethod
    def _kink_free_draw(seed):
        # min ties and clip boundaries are excluded from the gradient check,
        # so redraw until every coordinate is clear of them.
        for attempt in range(100):
            rng = np.random.default_rng(seed + 1000 * attempt)
            w = rng.normal(size=(3, 2))
            b = rng.normal(size=(2,))
            c = rng.normal(size=(3, 2))
            x = rng.normal(size=(4, 3))
            u = x @ w + b
            v = x @ c
            squash = -2.0 * (u + np.logaddexp(0.0, -2.0 * u) - np.log(2.0))
            clipped = np.clip(v, -1.5, 1.5)
            if np.abs(squash - clipped).min() > 1e-3 and np.abs(np.abs(v) - 1.5).min() > 1e-3:
                return w, b, c, x
        raise AssertionError("no kink-free draw found")

    @pytest.mark.parametrize("draw", range(10))
    def test_squash_entropy_min_composite(self, draw):
        w0, b0, c0, x = self._kink_free_draw(100 + draw)
        store = ParamStore()
        w = store.create("w", w0)
        b = store.create("b", b0)
        c = store.create("c", c0)

        def build():
            tape = Tape()
            u = linear(x, tape.param(w), tape.param(b), tape)
            v = linear(x, tape.param(c), np.zeros(2), tape)
            # log(1 - tanh(u)^2) in its cancellation-free form
            squash_term = (u + softplus(u * -2.0) - np.log(2.0)) * -2.0
            clipped = v.clip(-1.5, 1.5)
            mixed = minimum(squash_term, clipped) + u.tanh().square()
            joined = concat(mixed, clipped.exp(), tape)
            return joined.slice_cols(0, 3).sum(axis=1).mean()

        out = build()
        out.backward()
        analytic = {p.name: p.grad.copy() for p in store.params()}
        numeric = central_diff_param_grads(lambda: float(build().value), store.params(), h=1e-6)
        assert max_rel_error(analytic, numeric) <= 1e-4


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        store = ParamStore()
        w = store.create("w", np.array([1.0, -2.0]))
        adam_step(store, lr=0.1)
        np.testing.assert_array_equal(w.value, [1.0, -2.0])

    def test_first_step_closed_form(self):
        # g = 1 on the first step: bias corrections cancel, delta = -lr/(1+eps)
        store = ParamStore()
        w = store.create("w", np.array(0.0))
        w.grad[...] = 1.0
        adam_step(store, lr=1e-4)
        assert abs(float(w.value) + 1e-4) < 1e-11

    def test_quadratic_descent_tail_monotone(self):
        store = ParamStore()
        w = store.create("w", np.array(1.0))
        history = []
        for _ in range(100):
            store.zero_grad()
            w.grad[...] = 2.0 * w.value
            adam_step(store, lr=1e-3)
            history.append(abs(float(w.value)))
        tail = history[10:]
        assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_nonfinite_gradient_names_tensor(self):
        store = ParamStore()
        store.create("fine", np.array(1.0))
        bad = store.create("broken", np.array(1.0))
        bad.grad[...] = np.nan
        with pytest.raises(FloatingPointError, match="broken"):
            adam_step(store, lr=0.1)

    def test_deterministic(self):
        def run():
            store = ParamStore()
            w = store.create("w", np.array([0.3, -0.7]))
            for i in range(10):
                store.zero_grad()
                w.grad[...] = np.sin(w.value) + i
                adam_step(store, lr=1e-2)
            return w.value.copy()

        np.testing.assert_array_equal(run(), run())

    def test_frozen_store_rejects_new_params(self):
        store = ParamStore()
        store.create("w", np.array(1.0))
        adam_step(store, lr=0.1)
        with pytest.raises(RuntimeError, match="frozen"):
            store.create("extra", np.array(1.0))


class TestPolyak:
    def make_pair(self, shape=(4, 3), seed=0):
        rng = np.random.default_rng(seed)
        online, target = ParamStore(), ParamStore()
        online.create("w", rng.normal(size=shape))
        target.create("w", rng.normal(size=shape))
        return online, target

    def test_tau_one_copies(self):
        online, target = self.make_pair()
        polyak_update(target, online, tau=1.0)
        np.testing.assert_array_equal(target["w"].value, online["w"].value)

    def test_small_tau_blend(self):
        online, target = self.make_pair()
        target["w"].value[...] = 0.0
        online["w"].value[...] = 1.0
        polyak_update(target, online, tau=0.005)
        np.testing.assert_allclose(target["w"].value, 0.005, rtol=0, atol=1e-15)

    def test_geometric_convergence_with_frozen_online(self):
        online, target = self.make_pair(seed=2)
        tau = 0.1
        diffs = []
        for _ in range(30):
            polyak_update(target, online, tau)
            diffs.append(np.max(np.abs(target["w"].value - online["w"].value)))
        ratios = np.array(diffs[1:]) / np.array(diffs[:-1])
        np.testing.assert_allclose(ratios, 1.0 - tau, rtol=1e-10)

    def test_shape_mismatch_raises(self):
        online, target = ParamStore(), ParamStore()
        online.create("w", np.zeros((2, 2)))
        target.create("w", np.zeros((3, 2)))
        with pytest.raises(ValueError, match="shape mismatch"):
            polyak_update(target, online, tau=0.5)

    def test_bad_tau_raises(self):
        online, target = self.make_pair()
        with pytest.raises(ValueError, match="tau"):
            polyak_update(target, online, tau=0.0)


class TestCheckpoint:
    def test_roundtrip_and_byte_stability(self, tmp_path):
        store, mlp = make_mlp(seed=11)
        x = np.random.default_rng(12).normal(size=(6, 3))
        for _ in range(3):
            store.zero_grad()
            tape = Tape()
            mlp.forward(x, tape).square().mean().backward()
            adam_step(store, lr=1e-3)

        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, {"net": store}, meta={"note": "test"})
        save_checkpoint(p2, {"net": store})
        assert p1.read_bytes()[16:] != b""
        state, meta = load_checkpoint(p1)
        assert meta == {"note": "test"}

        fresh_store, _ = make_mlp(seed=99)
        fresh_store.load_state(state["net"]["params"], state["net"]["step_count"])
        assert fresh_store.step_count == 3
        for p, q in zip(fresh_store.params(), store.params()):
            np.testing.assert_array_equal(p.value, q.value)
            np.testing.assert_array_equal(p.m, q.m)
            np.testing.assert_array_equal(p.v, q.v)

        save_checkpoint(tmp_path / "c.ckpt", {"net": store}, meta={"note": "test"})
        assert (tmp_path / "c.ckpt").read_bytes() == p1.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        bad = tmp_path / "x.ckpt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(bad)
