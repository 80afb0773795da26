import os
import stat

import numpy as np
import pytest

FAKE_ENCODER = os.path.join(os.path.dirname(__file__), "fake_encoder.py")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stub_codecs(monkeypatch):
    """Point the external-tool variables at the fake encoder script."""
    mode = os.stat(FAKE_ENCODER).st_mode
    os.chmod(FAKE_ENCODER, mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    for var in ("VCM_X264_PATH", "VCM_X265_PATH", "VCM_FFMPEG_PATH"):
        monkeypatch.setenv(var, FAKE_ENCODER)
    monkeypatch.delenv("FAKE_ENCODER_FAIL", raising=False)
    return FAKE_ENCODER


def fd_check(op, arrays, rng, h=1e-2, tol=1e-3, max_elems=48):
    """Central-difference check of d(loss)/d(input) for every input of ``op``.

    loss = sum(op(*inputs) * G) for a fixed random weighting G, evaluated in
    float64 outside the graph.  Relative error uses a small absolute floor so
    near-zero gradients cannot divide by ~0.  Returns the worst error seen.
    """
    from vcmpre import autodiff as ad

    tensors = [ad.Tensor(a.astype(np.float32), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = op(*tensors)
        gw = ad.constant(rng.uniform(0.5, 1.5, size=out.shape).astype(np.float32))
        loss = ad.sum_all(ad.mul(out, gw))
    assert loss.values.shape == () and loss.values.dtype == np.float32
    ad.backward(loss, tape)
    gwv = gw.values.astype(np.float64)

    def loss_at(vals):
        res = op(*[ad.Tensor(v.astype(np.float32)) for v in vals])
        return float(np.sum(res.values.astype(np.float64) * gwv))

    worst = 0.0
    for i, base in enumerate(arrays):
        an = tensors[i].grad
        assert an is not None, f"input {i} got no gradient"
        assert an.shape == base.shape
        n = base.size
        if n <= max_elems:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=max_elems, replace=False)
        for j in idxs:
            vals = [a.astype(np.float64).copy() for a in arrays]
            step = h * max(1.0, abs(vals[i].flat[j]))
            vals[i].flat[j] += step
            fp = loss_at(vals)
            vals[i].flat[j] -= 2.0 * step
            fm = loss_at(vals)
            fd = (fp - fm) / (2.0 * step)
            a = float(np.asarray(an).flat[j])
            err = abs(fd - a) / max(abs(fd), abs(a), 1e-2)
            worst = max(worst, err)
    assert worst < tol, f"max relative FD error {worst:.3e} >= {tol}"
    return worst
