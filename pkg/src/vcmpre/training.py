"""Preprocessor optimization against the virtual codec and a frozen analyzer.

Each step draws a batch of clips, pushes them through the preprocessor, the
noise-relaxed virtual codec and the analyzer, and minimizes

    L = alpha * (L_D + lambda * L_R) + L_Acc

where L_D is the reconstruction MSE against the *original* clips, L_R the
estimated bits per pixel, and L_Acc the classifier cross-entropy on the
reconstructions.  All randomness (batch choice, per-element quality factor,
quantization noise) is derived statelessly from (seed, step), so runs are
reproducible and a resumed run retraces the remaining steps bit-exactly.

The ``finetune-analyzer-baseline`` mode keeps the preprocessor out of the
graph entirely (identity) and instead trains the analyzer on the compressed
clips — the comparison baseline for the headline experiment.
"""

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from . import analyzer as _analyzer
from . import autodiff as ad
from . import codec as _codec
from . import optim
from . import preprocessor as _preprocessor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

MODES = ("preprocessor", "finetune-analyzer-baseline")
GUARD_WINDOW = 20
LOG_HEADER = "step,f_q,L,L_D,L_R,L_Acc"

# seed-stream salts: batch/f_q draws and per-element quantization noise
_SALT_BATCH = 0x4254
_SALT_NOISE = 0x4E5A


class TrainingDiverged(RuntimeError):
    """Loss ran away past the divergence guard; maps to CLI exit code 3."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 10.0
    lam: float = 0.001
    lr: float = 1e-4
    f_q_range: tuple = (30, 50)
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    mode: str = "preprocessor"
    checkpoint_every: int = 500

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        lo, hi = self.f_q_range
        if not (4 <= lo <= hi <= 63):
            raise ValueError(f"f_q_range must lie within [4, 63], got {self.f_q_range}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps and batch_size must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.checkpoint_every <= 0:
            raise ValueError("checkpoint_every must be positive")

    def snapshot(self):
        """JSON-compatible dict (tuples become lists, as they would on disk)."""
        return json.loads(json.dumps(dataclasses.asdict(self)))


def batch_total_loss(frames, labels, f_qs, noise_rngs, pre, ent, ana, cfg,
                     use_preprocessor=True):
    """Loss over one batch; returns (L tensor, components dict of floats).

    ``frames`` (B, T, H, W) float32 in [0, 1]; distortion is measured against
    these originals even though the codec sees the preprocessed version.
    """
    if use_preprocessor and any(t.requires_grad for t in ana.tensors()):
        raise RuntimeError(
            "analyzer must be frozen while the preprocessor trains"
        )
    b, t, h, w = frames.shape
    x = ad.constant(frames)
    processed = _preprocessor.forward_batch(pre, x) if use_preprocessor else x

    recons, dists, bpps = [], [], []
    for i in range(b):
        xi = ad.reshape(
            ad.slice_nd(processed, (i, 0, 0, 0), (1, t, h, w)), (t, h, w)
        )
        rd = _codec.virtual_encode(
            xi, frames[i], int(f_qs[i]), ent, mode="noise", rng=noise_rngs[i]
        )
        recons.append(ad.reshape(rd.recon, (1, t, h, w)))
        dists.append(rd.distortion)
        bpps.append(rd.bpp)

    inv_b = 1.0 / b
    l_d = ad.scale(_sum(dists), inv_b)
    l_r = ad.scale(_sum(bpps), inv_b)
    logits = _analyzer.logits_batch(ana, ad.concat(recons, axis=0))
    l_acc = _analyzer.batch_cross_entropy(logits, labels)
    loss = ad.add(ad.scale(ad.add(l_d, ad.scale(l_r, cfg.lam)), cfg.alpha), l_acc)
    comps = {
        "L": loss.item(),
        "L_D": l_d.item(),
        "L_R": l_r.item(),
        "L_Acc": l_acc.item(),
    }
    return loss, comps


def _sum(tensors):
    acc = tensors[0]
    for t in tensors[1:]:
        acc = ad.add(acc, t)
    return acc


def _make_checkpoint(pre, ent, ana, cfg, opt, names, next_step):
    return Checkpoint(
        preprocessor=pre,
        entropy=ent,
        analyzer=ana,
        analyzer_frozen=cfg.mode == "preprocessor",
        adam_m={n: m.copy() for n, m in zip(names, opt.m)},
        adam_v={n: v.copy() for n, v in zip(names, opt.v)},
        adam_t=opt.t,
        config=cfg.snapshot(),
        next_step=next_step,
    )


def train(train_set, cfg, out_dir, analyzer_params=None, entropy_params=None,
          resume=None, progress=None):
    """Run the training loop; returns (final Checkpoint, its path, log path).

    ``train_set`` is a list of LabeledClip.  ``analyzer_params`` must be a
    pretrained analyzer (required unless resuming).  Artifacts land in
    ``out_dir``: ``train_log.csv`` plus ``ckpt_step{N}.vcmp`` at step 0,
    every ``cfg.checkpoint_every`` steps and at the end.  ``resume`` names a
    checkpoint file to continue from; the remaining steps and every artifact
    they produce are bit-identical to the uninterrupted run.
    """
    frames = np.stack([item.clip.luma for item in train_set])
    labels = np.array([item.label for item in train_set], dtype=np.int64)
    if len(frames) < cfg.batch_size:
        raise ValueError(
            f"dataset has {len(frames)} clips < batch_size {cfg.batch_size}"
        )
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.csv")

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != cfg.snapshot():
            raise ValueError(
                f"resume config mismatch: checkpoint has {ckpt.config}, "
                f"run requested {cfg.snapshot()}"
            )
        pre, ent, ana = ckpt.preprocessor, ckpt.entropy, ckpt.analyzer
        start_step = ckpt.next_step
    else:
        if analyzer_params is None:
            raise ValueError("train: analyzer_params required for a fresh run")
        pre = _preprocessor.init_preprocessor(cfg.seed)
        ent = entropy_params or _codec.init_entropy_model(seed=cfg.seed)
        ana = analyzer_params
        start_step = 1

    use_pre = cfg.mode == "preprocessor"
    if use_pre:
        pre.set_trainable(True)
        ent.set_trainable(True)
        ana.set_trainable(False)
        named = [(f"pre.{n}", t) for n, t in pre.named()]
        named += list(ent.named())
    else:
        pre.set_trainable(False)
        ent.set_trainable(False)
        ana.set_trainable(True)
        named = [(f"an.{n}", t) for n, t in ana.named()]
    names = [n for n, _ in named]
    opt = optim.Adam([t for _, t in named], lr=cfg.lr, names=names)
    if resume is not None:
        opt.t = ckpt.adam_t
        for i, n in enumerate(names):
            opt.m[i] = ckpt.adam_m[n].copy()
            opt.v[i] = ckpt.adam_v[n].copy()

    def write_ckpt(next_step):
        path = os.path.join(out_dir, f"ckpt_step{next_step - 1:05d}.vcmp")
        save_checkpoint(
            path, _make_checkpoint(pre, ent, ana, cfg, opt, names, next_step)
        )
        return path

    if resume is None:
        write_ckpt(1)  # step-0 state: untouched params, zeroed optimizer

    lo, hi = cfg.f_q_range
    guard_ref = None
    window = []
    ckpt_path = None
    with open(log_path, "w" if resume is None else "a", newline="") as log:
        if resume is None:
            log.write(LOG_HEADER + "\n")
        for step in range(start_step, cfg.steps + 1):
            rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, _SALT_BATCH, step))
            )
            idx = rng.choice(len(frames), size=cfg.batch_size, replace=False)
            f_qs = rng.integers(lo, hi + 1, size=cfg.batch_size)
            noise_rngs = [
                np.random.default_rng(
                    np.random.SeedSequence((cfg.seed, _SALT_NOISE, step, i))
                )
                for i in range(cfg.batch_size)
            ]
            opt.zero_grad()
            with ad.Tape() as tape:
                loss, comps = batch_total_loss(
                    frames[idx], labels[idx], f_qs, noise_rngs,
                    pre, ent, ana, cfg, use_preprocessor=use_pre,
                )
            ad.backward(loss, tape)
            del tape, loss
            opt.step()

            fq_txt = ";".join(str(int(q)) for q in f_qs)
            log.write(
                f"{step},{fq_txt},{comps['L']:.9g},{comps['L_D']:.9g},"
                f"{comps['L_R']:.9g},{comps['L_Acc']:.9g}\n"
            )
            log.flush()
            if progress is not None:
                progress(step, comps)

            window.append(comps["L"])
            if len(window) > GUARD_WINDOW:
                window.pop(0)
            if len(window) == GUARD_WINDOW:
                ma = float(np.mean(window))
                if guard_ref is None:
                    guard_ref = ma
                elif ma > 10.0 * guard_ref:
                    write_ckpt(step + 1)
                    raise TrainingDiverged(
                        f"step {step}: loss moving average {ma:.4g} exceeds "
                        f"10x its initial value {guard_ref:.4g}"
                    )

            if step % cfg.checkpoint_every == 0 or step == cfg.steps:
                ckpt_path = write_ckpt(step + 1)

    final = _make_checkpoint(pre, ent, ana, cfg, opt, names, cfg.steps + 1)
    return final, ckpt_path, log_path
