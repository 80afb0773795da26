"""Small frozen video classifier used as the downstream vision task.

Three spatio-temporal stages (frame-axis conv, then per-frame 3x3 conv, relu,
2x2 average pool; channels 1->8->16->16), a global average pool, and a linear
head over the 8 synthetic classes.  Pretraining runs on clean clips only; the
trained parameters are frozen while the preprocessor learns.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import optim
from .video import VideoClip

STAGE_WIDTHS = (8, 16, 16)
NUM_CLASSES = 8
INPUT_GEOMETRY = (8, 64, 64)


@dataclass
class AnalyzerParams:
    stages: tuple  # three (t_weight, t_bias, s_weight, s_bias) groups
    head_w: ad.Tensor
    head_b: ad.Tensor

    def named(self):
        for i, (tw, tb, sw, sb) in enumerate(self.stages):
            yield f"stage{i}.tw", tw
            yield f"stage{i}.tb", tb
            yield f"stage{i}.sw", sw
            yield f"stage{i}.sb", sb
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def tensors(self):
        return [t for _, t in self.named()]

    def set_trainable(self, flag):
        for t in self.tensors():
            t.requires_grad = bool(flag)


def param_count(params):
    return sum(t.size for t in params.tensors())


def init_analyzer(seed=0):
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x414E)))

    def tensor(shape, std):
        return ad.Tensor(rng.normal(0, std, shape).astype(np.float32),
                         requires_grad=True)

    stages = []
    in_c = 1
    for out_c in STAGE_WIDTHS:
        tw = tensor((out_c, in_c, 3), np.sqrt(2.0 / (in_c * 3)))
        tb = ad.Tensor(np.zeros(out_c, np.float32), requires_grad=True)
        sw = tensor((out_c, out_c, 3, 3), np.sqrt(2.0 / (out_c * 9)))
        sb = ad.Tensor(np.zeros(out_c, np.float32), requires_grad=True)
        stages.append((tw, tb, sw, sb))
        in_c = out_c
    head_w = tensor((NUM_CLASSES, STAGE_WIDTHS[-1]), np.sqrt(1.0 / STAGE_WIDTHS[-1]))
    head_b = ad.Tensor(np.zeros(NUM_CLASSES, np.float32), requires_grad=True)
    return AnalyzerParams(tuple(stages), head_w, head_b)


def logits_batch(params, x):
    """Classify a batched clip Tensor (B, 8, 64, 64) -> logits (B, 8)."""
    if x.ndim != 4 or x.shape[1:] != INPUT_GEOMETRY:
        raise ValueError(
            f"logits_batch: expected (B,) + {INPUT_GEOMETRY}, got {x.shape}"
        )
    b, t, h, w = x.shape
    v = ad.reshape(x, (b, t, 1, h, w))
    for tw, tb, sw, sb in params.stages:
        o = tw.shape[0]
        v = ad.relu(ad.conv_temporal(v, tw, tb))
        f = ad.reshape(v, (b * t, o, h, w))
        f = ad.avg_pool2x2(ad.relu(ad.conv2d(f, sw, sb)))
        h, w = h // 2, w // 2
        v = ad.reshape(f, (b, t, o, h, w))
    feat = ad.mean_axes(v, (1, 3, 4))
    return ad.linear(feat, params.head_w, params.head_b)


def classify(clip, params):
    """One clip (VideoClip or (8, 64, 64) array) -> logits ndarray (8,)."""
    y = clip.luma if isinstance(clip, VideoClip) else np.asarray(clip, np.float32)
    if y.shape != INPUT_GEOMETRY:
        raise ValueError(f"classify: expected {INPUT_GEOMETRY}, got {y.shape}")
    return logits_batch(params, ad.constant(y[None])).values[0]


def batch_cross_entropy(logits, labels):
    """Mean cross-entropy for logits (B, K); stable via a detached max shift."""
    lv = logits.values
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != lv.shape[0]:
        raise ValueError("batch_cross_entropy: labels must be (B,)")
    if labels.min() < 0 or labels.max() >= lv.shape[1]:
        raise ValueError(f"label out of range 0..{lv.shape[1] - 1}")
    shift = ad.constant(np.broadcast_to(lv.max(axis=1, keepdims=True), lv.shape).copy())
    z = ad.sub(logits, shift)
    lse = ad.log(ad.sum_axes(ad.exp(z), (1,)))
    return ad.mean_all(ad.sub(lse, ad.take_per_row(z, labels)))


def accuracy_loss(logits, label):
    """Cross-entropy for a single logits vector (K,)."""
    if logits.ndim != 1:
        raise ValueError("accuracy_loss: logits must be 1-D")
    return batch_cross_entropy(ad.reshape(logits, (1, logits.shape[0])), [int(label)])


def accuracy(params, frames, labels, k=1, batch=32):
    """Top-k accuracy of the analyzer over clips (N, 8, 64, 64)."""
    frames = np.asarray(frames, np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    hits = 0
    for i in range(0, len(frames), batch):
        lg = logits_batch(params, ad.constant(frames[i:i + batch])).values
        topk = np.argsort(-lg, axis=1)[:, :k]
        hits += int((topk == labels[i:i + batch, None]).any(axis=1).sum())
    return hits / len(frames)


def pretrain(train_frames, train_labels, val_frames, val_labels, seed=0,
             max_steps=5000, target_acc=0.95, lr=3e-3, batch=16,
             eval_every=100, log=None):
    """Cross-entropy training on clean clips until validation top-1 reaches
    ``target_acc`` (or ``max_steps``).  Deterministic given the seed; raises
    if the final accuracy is below 0.80, which signals a dataset or
    architecture problem rather than bad luck.
    """
    train_frames = np.asarray(train_frames, np.float32)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    params = init_analyzer(seed)
    opt = optim.Adam(params.tensors(), lr=lr)
    n = len(train_frames)
    val_acc = 0.0
    for step in range(1, int(max_steps) + 1):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x4154, step)))
        idx = rng.choice(n, size=min(batch, n), replace=False)
        xb = ad.constant(train_frames[idx])
        opt.zero_grad()
        with ad.Tape() as tape:
            loss = batch_cross_entropy(logits_batch(params, xb), train_labels[idx])
        ad.backward(loss, tape)
        opt.step()
        if step % eval_every == 0 or step == max_steps:
            val_acc = accuracy(params, val_frames, val_labels)
            if log is not None:
                log(step, loss.item(), val_acc)
            if val_acc >= target_acc:
                break
    if val_acc < 0.80:
        raise RuntimeError(
            f"analyzer pretraining stalled at top-1 {val_acc:.3f} < 0.80"
        )
    return params
