import numpy as np
import pytest

from vcmpre import autodiff as ad
from vcmpre import optim


def params_with_grads(rng, shapes=((3, 4), (5,))):
    out = []
    for s in shapes:
        t = ad.Tensor(rng.normal(0, 1, s).astype(np.float32), requires_grad=True)
        t.grad = rng.normal(0, 1, s).astype(np.float32)
        out.append(t)
    return out


def adam_oracle_first_step(p0, g, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Closed-form single Adam step in float64 (bias-corrected)."""
    g = g.astype(np.float64)
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    # the implementation rounds moments to float32 before using them
    m = m.astype(np.float32).astype(np.float64)
    v = v.astype(np.float32).astype(np.float64)
    mh = m / (1 - beta1)
    vh = v / (1 - beta2)
    return p0.astype(np.float64) - lr * mh / (np.sqrt(vh) + eps)


class TestStep:
    def test_first_step_matches_closed_form(self, rng):
        ps = params_with_grads(rng)
        before = [p.values.copy() for p in ps]
        opt = optim.Adam(ps, lr=0.01)
        opt.step()
        assert opt.t == 1
        for p0, p in zip(before, ps):
            want = adam_oracle_first_step(p0, p.grad, 0.01).astype(np.float32)
            np.testing.assert_allclose(p.values, want, rtol=1e-6, atol=1e-7)

    def test_first_step_magnitude_is_roughly_lr(self, rng):
        # bias-corrected first step moves each weight by ~lr in the gradient's
        # sign direction (exactly lr when eps is negligible)
        ps = params_with_grads(rng)
        before = ps[0].values.copy()
        optim.Adam(ps, lr=0.05).step()
        delta = before - ps[0].values
        np.testing.assert_allclose(delta, 0.05 * np.sign(ps[0].grad), rtol=1e-3)

    def test_zero_gradient_leaves_params_unchanged(self, rng):
        ps = params_with_grads(rng)
        for p in ps:
            p.grad = np.zeros_like(p.values)
        before = [p.values.copy() for p in ps]
        opt = optim.Adam(ps, lr=0.5)
        opt.step()
        opt.step()
        assert opt.t == 2
        for b, p in zip(before, ps):
            np.testing.assert_array_equal(b, p.values)

    def test_state_roundtrip_resumes_bit_exactly(self, rng):
        # run A: 5 steps straight; run B: 3 steps, state copied into a fresh
        # optimizer (as a checkpoint restore does), 2 more; must agree bitwise
        grads = [rng.normal(0, 1, (4, 3)).astype(np.float32) for _ in range(5)]
        start = rng.normal(0, 1, (4, 3)).astype(np.float32)

        def run(schedule, carry=None):
            p = ad.Tensor(start.copy() if carry is None else carry[0],
                          requires_grad=True)
            opt = optim.Adam([p], lr=0.02)
            if carry is not None:
                opt.t, opt.m[0], opt.v[0] = carry[1], carry[2], carry[3]
            for g in schedule:
                p.grad = g.copy()
                opt.step()
            return p.values.copy(), opt.t, opt.m[0].copy(), opt.v[0].copy()

        full = run(grads)
        half = run(grads[:3])
        resumed = run(grads[3:], carry=half)
        np.testing.assert_array_equal(full[0], resumed[0])
        np.testing.assert_array_equal(full[2], resumed[2])
        np.testing.assert_array_equal(full[3], resumed[3])

    def test_moments_track_constant_gradient_exactly(self, rng):
        # with a constant gradient the moment recursions have closed forms:
        # m_t = (1 - beta1^t) g, v_t = (1 - beta2^t) g^2
        p = ad.Tensor(np.zeros(3, np.float32), requires_grad=True)
        opt = optim.Adam([p], lr=0.01)
        g = np.array([1.0, -2.0, 0.5], np.float32)
        for _ in range(200):
            p.grad = g.copy()
            opt.step()
        np.testing.assert_allclose(opt.m[0], (1 - 0.9**200) * g, rtol=1e-4)
        np.testing.assert_allclose(opt.v[0], (1 - 0.999**200) * g * g, rtol=1e-4)


class TestErrors:
    def test_missing_gradient_names_the_parameter(self, rng):
        ps = params_with_grads(rng)
        ps[1].grad = None
        opt = optim.Adam(ps, names=["w", "b"])
        with pytest.raises(RuntimeError, match="b"):
            opt.step()

    def test_nan_gradient_aborts_with_diagnostic(self, rng):
        ps = params_with_grads(rng)
        ps[0].grad[1, 2] = np.nan
        opt = optim.Adam(ps, names=["conv.w", "conv.b"])
        with pytest.raises(FloatingPointError, match="conv.w"):
            opt.step()

    def test_inf_gradient_also_aborts(self, rng):
        ps = params_with_grads(rng)
        ps[0].grad[0, 0] = np.inf
        with pytest.raises(FloatingPointError):
            optim.Adam(ps).step()

    def test_empty_params_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            optim.Adam([])

    def test_names_length_mismatch(self, rng):
        with pytest.raises(ValueError, match="names"):
            optim.Adam(params_with_grads(rng), names=["only_one"])
