"""Catalogue of finite-difference gradient cases for every primitive op.

Shared by the unit tests and the acceptance gate.  Inputs are drawn away from
non-differentiable kinks (relu/abs at 0, clamp boundaries) so central
differences are valid; ste_round is excluded here because its backward is a
deliberate straight-through identity with its own exact tests.
"""

import numpy as np

from vcmpre import autodiff as ad


def _away_from(rng, shape, lo, hi, margin, kinks):
    """Uniform samples in [lo, hi] at least ``margin`` away from every kink.

    Resamples must be re-checked against *all* kinks, not just the one that
    triggered them, or a redraw can land inside another kink's margin.
    """
    x = rng.uniform(lo, hi, size=shape)

    def bad_mask(v):
        m = np.zeros(v.shape, dtype=bool)
        for k in kinks:
            m |= np.abs(v - k) < margin
        return m

    bad = bad_mask(x)
    while np.any(bad):
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        bad = bad_mask(x)
    return x


def _u(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


OP_CASES = [
    ("add", lambda rng: (ad.add, [_u(rng, (3, 4)), _u(rng, (3, 4))]), 0.08),
    ("sub", lambda rng: (ad.sub, [_u(rng, (3, 4)), _u(rng, (3, 4))]), 0.08),
    ("mul", lambda rng: (ad.mul, [_u(rng, (3, 4)), _u(rng, (3, 4))]), 0.08),
    ("add_scalar", lambda rng: (lambda a: ad.add_scalar(a, 0.7), [_u(rng, (3, 4))]), 0.08),
    ("scale", lambda rng: (lambda a: ad.scale(a, -1.3), [_u(rng, (3, 4))]), 0.08),
    ("relu", lambda rng: (ad.relu, [_away_from(rng, (4, 5), -2, 2, 0.15, [0.0])]), 0.01),
    ("sigmoid", lambda rng: (ad.sigmoid, [_u(rng, (4, 5), -3, 3)]), 0.01),
    ("tanh", lambda rng: (ad.tanh, [_u(rng, (4, 5), -3, 3)]), 0.005),
    ("softplus", lambda rng: (ad.softplus, [_u(rng, (4, 5), -4, 4)]), 0.01),
    ("exp", lambda rng: (ad.exp, [_u(rng, (4, 5), -2, 1.5)]), 0.01),
    # log's third derivative blows up near the low end of the domain, so the
    # central-difference truncation term needs a smaller step than the rest.
    ("log", lambda rng: (ad.log, [_u(rng, (4, 5), 0.2, 3.0)]), 0.002),
    ("absval", lambda rng: (ad.absval, [_away_from(rng, (4, 5), -2, 2, 0.15, [0.0])]), 0.01),
    (
        "clamp01",
        lambda rng: (ad.clamp01, [_away_from(rng, (6, 5), -0.5, 1.5, 0.1, [0.0, 1.0])]),
        0.01,
    ),
    (
        "clamp_min",
        lambda rng: (
            lambda a: ad.clamp_min(a, 0.25),
            [_away_from(rng, (4, 5), -1, 1.5, 0.1, [0.25])],
        ),
        0.01,
    ),
    ("sum_all", lambda rng: (ad.sum_all, [_u(rng, (2, 3, 4))]), 0.08),
    ("mean_all", lambda rng: (ad.mean_all, [_u(rng, (2, 3, 4))]), 0.08),
    ("sum_axes", lambda rng: (lambda a: ad.sum_axes(a, (0, 2)), [_u(rng, (2, 3, 4))]), 0.08),
    ("mean_axes", lambda rng: (lambda a: ad.mean_axes(a, (1,)), [_u(rng, (2, 3, 4))]), 0.08),
    ("mse", lambda rng: (ad.mse, [_u(rng, (4, 5)), _u(rng, (4, 5))]), 0.08),
    ("reshape", lambda rng: (lambda a: ad.reshape(a, (3, 4)), [_u(rng, (2, 6))]), 0.08),
    (
        "concat",
        lambda rng: (
            lambda a, b: ad.concat([a, b], axis=1),
            [_u(rng, (2, 3)), _u(rng, (2, 2))],
        ),
        0.08,
    ),
    (
        "slice_nd",
        lambda rng: (lambda a: ad.slice_nd(a, (1, 2), (2, 3)), [_u(rng, (4, 6))]),
        0.08,
    ),
    (
        "repeat_axis",
        lambda rng: (lambda a: ad.repeat_axis(a, 1, 5), [_u(rng, (3, 1, 4))]),
        0.08,
    ),
    ("take_index", lambda rng: (lambda a: ad.take_index(a, 3), [_u(rng, (7,))]), 0.08),
    (
        "take_per_row",
        lambda rng: (
            lambda a: ad.take_per_row(a, np.array([1, 0, 4, 2])),
            [_u(rng, (4, 5))],
        ),
        0.08,
    ),
    (
        "linear",
        lambda rng: (ad.linear, [_u(rng, (3, 5)), _u(rng, (2, 5)), _u(rng, (2,))]),
        0.08,
    ),
    (
        "batch_matmul",
        lambda rng: (ad.batch_matmul, [_u(rng, (4, 2, 3)), _u(rng, (4, 3, 5))]),
        0.08,
    ),
    (
        "linear_1d",
        lambda rng: (ad.linear, [_u(rng, (5,)), _u(rng, (2, 5)), _u(rng, (2,))]),
        0.08,
    ),
    # Convolution is linear in each input, so central differences carry no
    # truncation error at any step size; the large step is there to dilute
    # the float32 round-off of the forward evaluations.
    (
        "conv2d",
        lambda rng: (
            ad.conv2d,
            [_u(rng, (2, 3, 6, 6)), _u(rng, (4, 3, 3, 3)), _u(rng, (4,))],
        ),
        0.5,
    ),
    (
        "conv2d_unbatched",
        lambda rng: (
            ad.conv2d,
            [_u(rng, (3, 6, 6)), _u(rng, (2, 3, 5, 5)), _u(rng, (2,))],
        ),
        0.5,
    ),
    (
        "conv_temporal",
        lambda rng: (
            ad.conv_temporal,
            [_u(rng, (2, 5, 3, 4, 4)), _u(rng, (2, 3, 3)), _u(rng, (2,))],
        ),
        0.5,
    ),
    (
        "conv_temporal_nobias",
        lambda rng: (
            lambda x, w: ad.conv_temporal(x, w),
            [_u(rng, (5, 3, 4, 4)), _u(rng, (2, 3, 3))],
        ),
        0.5,
    ),
    ("avg_pool2x2", lambda rng: (ad.avg_pool2x2, [_u(rng, (2, 3, 4, 6))]), 0.08),
    ("block_dct8", lambda rng: (ad.block_dct8, [_u(rng, (2, 8, 16))]), 0.08),
    ("block_idct8", lambda rng: (ad.block_idct8, [_u(rng, (2, 8, 16))]), 0.08),
    ("coeff_channels", lambda rng: (ad.coeff_channels, [_u(rng, (16, 16))]), 0.08),
]

OP_NAMES = [case[0] for case in OP_CASES]


def run_case(name, seed, fd_check):
    # crc32 keeps per-op input streams distinct yet stable across processes
    # (str hash is salted per interpreter run).
    import zlib

    rng = np.random.default_rng((seed, zlib.crc32(name.encode())))
    builder, h = {c[0]: (c[1], c[2]) for c in OP_CASES}[name]
    op, arrays = builder(rng)
    return fd_check(op, arrays, rng, h=h)
