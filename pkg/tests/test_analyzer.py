import numpy as np
import pytest

from vcmpre import analyzer as an
from vcmpre import autodiff as ad
from vcmpre import synth


def dataset_arrays(seed, count, split):
    items = synth.synth_dataset(seed, count, split=split)
    frames = np.stack([it.clip.luma for it in items])
    labels = np.array([it.label for it in items], dtype=np.int64)
    return frames, labels


def ce_oracle(logits, labels):
    """Direct float64 softmax cross-entropy, no shift tricks."""
    z = logits.astype(np.float64)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return float(np.mean([-np.log(p[i, l]) for i, l in enumerate(labels)]))


class TestInit:
    def test_parameter_count(self):
        params = an.init_analyzer(0)
        assert an.param_count(params) == 6576
        sizes = {name: t.size for name, t in params.named()}
        assert sizes["stage0.tw"] == 24 and sizes["stage0.sw"] == 576
        assert sizes["stage2.sw"] == 2304
        assert sizes["head.w"] == 128 and sizes["head.b"] == 8

    def test_seed_determinism(self):
        a = dict(an.init_analyzer(5).named())
        b = dict(an.init_analyzer(5).named())
        c = dict(an.init_analyzer(6).named())
        for name in a:
            np.testing.assert_array_equal(a[name].values, b[name].values)
        assert any(not np.array_equal(a[n].values, c[n].values) for n in a)


class TestLogits:
    def test_shapes(self, rng):
        params = an.init_analyzer(0)
        x = rng.random((3, 8, 64, 64), dtype=np.float32)
        lg = an.logits_batch(params, ad.constant(x))
        assert lg.shape == (3, 8)

    def test_geometry_enforced(self, rng):
        params = an.init_analyzer(0)
        for bad in [(2, 8, 64, 32), (2, 4, 64, 64), (8, 64, 64)]:
            with pytest.raises(ValueError):
                an.logits_batch(params, ad.constant(np.zeros(bad, np.float32)))
        with pytest.raises(ValueError, match="classify"):
            an.classify(np.zeros((4, 64, 64), np.float32), params)

    def test_classify_matches_logits_batch(self):
        params = an.init_analyzer(0)
        clip = synth.standard_clip(0)
        got = an.classify(clip, params)
        want = an.logits_batch(params, ad.constant(clip.luma[None])).values[0]
        np.testing.assert_array_equal(got, want)
        assert got.shape == (8,)

    def test_every_parameter_receives_gradient(self, rng):
        params = an.init_analyzer(0)
        x = rng.random((2, 8, 64, 64), dtype=np.float32)
        with ad.Tape() as tape:
            loss = an.batch_cross_entropy(
                an.logits_batch(params, ad.constant(x)), [1, 6]
            )
        ad.backward(loss, tape)
        for name, t in params.named():
            assert t.grad is not None, f"{name}: no gradient"
            assert np.any(t.grad != 0.0), f"{name}: gradient identically zero"


class TestCrossEntropy:
    def test_matches_direct_oracle(self, rng):
        logits = rng.normal(0, 2.0, (5, 8)).astype(np.float32)
        labels = rng.integers(0, 8, size=5)
        got = an.batch_cross_entropy(ad.constant(logits), labels).item()
        assert abs(got - ce_oracle(logits, labels)) < 1e-5

    def test_uniform_logits_give_log_k(self):
        logits = ad.constant(np.zeros((4, 8), np.float32))
        got = an.batch_cross_entropy(logits, [0, 3, 5, 7]).item()
        assert abs(got - np.log(8.0)) < 1e-6

    def test_confident_correct_prediction_is_near_zero(self):
        logits = np.full((2, 8), -10.0, np.float32)
        logits[0, 2] = 10.0
        logits[1, 5] = 10.0
        got = an.batch_cross_entropy(ad.constant(logits), [2, 5]).item()
        assert 0.0 <= got < 1e-6

    def test_large_logits_do_not_overflow(self):
        logits = np.array([[500.0, 0.0, 0, 0, 0, 0, 0, -500.0]], np.float32)
        got = an.batch_cross_entropy(ad.constant(logits), [0]).item()
        assert np.isfinite(got) and got < 1e-6

    def test_label_validation(self):
        logits = ad.constant(np.zeros((2, 8), np.float32))
        with pytest.raises(ValueError, match="range"):
            an.batch_cross_entropy(logits, [0, 8])
        with pytest.raises(ValueError, match="range"):
            an.batch_cross_entropy(logits, [-1, 0])
        with pytest.raises(ValueError, match="labels"):
            an.batch_cross_entropy(logits, [0])

    def test_accuracy_loss_is_single_row_cross_entropy(self, rng):
        logits = rng.normal(0, 1, 8).astype(np.float32)
        got = an.accuracy_loss(ad.constant(logits), 3).item()
        assert abs(got - ce_oracle(logits[None], [3])) < 1e-5
        with pytest.raises(ValueError, match="1-D"):
            an.accuracy_loss(ad.constant(np.zeros((2, 8), np.float32)), 0)


class TestAccuracy:
    def test_matches_manual_argmax(self):
        params = an.init_analyzer(0)
        frames, labels = dataset_arrays(0, 16, "val")
        got = an.accuracy(params, frames, labels, batch=5)  # uneven batching
        lg = an.logits_batch(params, ad.constant(frames)).values
        want = float(np.mean(np.argmax(lg, axis=1) == labels))
        assert got == want

    def test_topk_ordering(self):
        params = an.init_analyzer(1)
        frames, labels = dataset_arrays(0, 24, "val")
        t1 = an.accuracy(params, frames, labels, k=1)
        t2 = an.accuracy(params, frames, labels, k=2)
        t8 = an.accuracy(params, frames, labels, k=8)
        assert t1 <= t2 <= t8 == 1.0

    def test_untrained_accuracy_near_chance(self):
        # an untrained net is a fixed, label-blind function, so on the
        # class-balanced val split it cannot beat chance (0.125) by much
        params = an.init_analyzer(0)
        frames, labels = dataset_arrays(0, 160, "val")
        acc = an.accuracy(params, frames, labels)
        assert 0.0 <= acc <= 0.30


class TestPretrain:
    def test_short_run_is_deterministic_and_logged(self):
        frames, labels = dataset_arrays(0, 32, "train")
        vf, vl = dataset_arrays(0, 16, "val")

        def run():
            entries = []
            with pytest.raises(RuntimeError, match="stalled"):
                an.pretrain(
                    frames, labels, vf, vl, seed=0, max_steps=20, batch=8,
                    eval_every=5, log=lambda *rec: entries.append(rec),
                )
            return entries

        a, b = run(), run()
        assert len(a) == 4 and a == b
        steps = [rec[0] for rec in a]
        assert steps == [5, 10, 15, 20]
        assert all(np.isfinite(rec[1]) for rec in a)

    def test_stall_guard_names_the_accuracy(self):
        frames, labels = dataset_arrays(0, 16, "train")
        with pytest.raises(RuntimeError, match=r"top-1 0\.\d+ < 0\.80"):
            an.pretrain(frames, labels, frames, labels, seed=0, max_steps=3,
                        batch=8, eval_every=10)
