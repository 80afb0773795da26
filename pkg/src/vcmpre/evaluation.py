"""Rate-accuracy curves and Bjontegaard-style rate deltas.

The testbed's end metric is "how many bits does it take to keep the
downstream classifier right".  This module measures rate-accuracy points
over a QP grid (through the virtual codec or a real external one),
assembles them into curves, and integrates the average bitrate difference
between two curves at equal accuracy:

    BD = (10 ** mean(log10 bpp_test - log10 bpp_anchor) - 1) * 100   [%]

where the mean is taken over the metric interval shared by both curves,
with each curve's log10(bpp) represented as a monotone piecewise-cubic
(PCHIP) interpolant in the metric.  Negative BD means the test curve
needs fewer bits for the same accuracy.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import analyzer
from . import codec as vcodec
from . import harness as realcodec
from . import preprocessor
from .video import VideoClip

__all__ = [
    "BDRow",
    "DEFAULT_QPS",
    "RACurve",
    "RAPoint",
    "bd_rate",
    "load_ra_points",
    "measure_curve",
    "write_report",
]

DEFAULT_QPS = (30, 35, 40, 45, 50)

RA_POINTS_HEADER = "method,codec,qp,bpp,metric,value"
BDRATE_HEADER = "codec,metric,anchor,test,bdrate_pct"


@dataclass(frozen=True)
class RAPoint:
    """One operating point: bits per pixel vs. metric value at a given QP."""

    bpp: float
    value: float
    qp: int

    def __post_init__(self):
        if not (np.isfinite(self.bpp) and self.bpp > 0.0):
            raise ValueError(f"bpp must be finite and > 0, got {self.bpp}")
        if not np.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")


@dataclass(frozen=True)
class RACurve:
    """A rate-accuracy curve; points are kept sorted by ascending bpp."""

    method: str
    codec: str
    metric: str
    points: tuple

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.bpp))
        if len(pts) < 4:
            raise ValueError(f"a curve needs at least 4 points, got {len(pts)}")
        for a, b in zip(pts, pts[1:]):
            if b.bpp <= a.bpp:
                raise ValueError(
                    f"curve {self.method!r} has duplicate bpp {a.bpp:.9g}"
                )
        object.__setattr__(self, "points", pts)

    @property
    def bpps(self):
        return np.array([p.bpp for p in self.points], dtype=np.float64)

    @property
    def values(self):
        return np.array([p.value for p in self.points], dtype=np.float64)


def _monotone_points(curve, log):
    """Points usable for metric->log10(bpp) interpolation.

    Walking up the curve in bpp, keep only points whose metric strictly
    improves on the last kept one; anything else cannot belong to a
    function of the metric and is dropped (and reported).
    """
    kept = []
    for p in curve.points:
        if kept and p.value <= kept[-1].value:
            if log:
                log(
                    f"{curve.method}/{curve.codec}: dropped point "
                    f"(qp={p.qp}, bpp={p.bpp:.6g}, {curve.metric}="
                    f"{p.value:.6g}) breaking metric monotonicity"
                )
            continue
        kept.append(p)
    if len(kept) < 2:
        raise ValueError(
            f"curve {curve.method!r} keeps fewer than 2 monotone points"
        )
    return kept


def _log_bpp_interp(points):
    """PCHIP interpolant of log10(bpp) as a function of the metric."""
    m = np.array([p.value for p in points], dtype=np.float64)
    lb = np.log10([p.bpp for p in points])
    return PchipInterpolator(m, lb)


def bd_rate(anchor, test, log=None):
    """Average bitrate change of ``test`` relative to ``anchor``, percent.

    Integrates log10(bpp) over the metric interval both curves cover.
    Points that break metric monotonicity are dropped (reported through
    ``log``).  Raises ValueError when the curves measure different things
    or share no metric interval.
    """
    if (anchor.metric, anchor.codec) != (test.metric, test.codec):
        raise ValueError(
            f"curves are not comparable: {anchor.codec}/{anchor.metric} "
            f"vs {test.codec}/{test.metric}"
        )
    pa = _monotone_points(anchor, log)
    pt = _monotone_points(test, log)
    lo = max(pa[0].value, pt[0].value)
    hi = min(pa[-1].value, pt[-1].value)
    if not lo < hi:
        raise ValueError(
            f"no metric overlap: anchor spans [{pa[0].value:.6g}, "
            f"{pa[-1].value:.6g}], test spans [{pt[0].value:.6g}, "
            f"{pt[-1].value:.6g}]"
        )
    fa = _log_bpp_interp(pa)
    ft = _log_bpp_interp(pt)
    diff = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo)
    return float((10.0 ** diff - 1.0) * 100.0)


@dataclass(frozen=True)
class BDRow:
    """One report line: BD of ``test`` against ``anchor``."""

    codec: str
    metric: str
    anchor: str
    test: str
    bdrate_pct: float


def _top1(logits, label):
    return 1.0 if int(np.argmax(logits)) == int(label) else 0.0


def _mean(vals):
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


def measure_curve(
    clips,
    labels,
    analyzer_params,
    codec="virtual",
    qps=DEFAULT_QPS,
    preprocessor_params=None,
    entropy_params=None,
    codec_cfg=None,
    harness_cfg=None,
    run_dir=None,
    method="anchor",
    metric="top1",
    log=None,
):
    """Measure a rate-accuracy curve over a QP grid.

    For ``codec="virtual"`` each QP value is a quality factor of the
    differentiable codec (rounding mode, ``entropy_params`` required); for
    ``"h264"``/``"h265"`` the clips are written to ``run_dir`` as Y4M and
    pushed through the external tool grid.  Either way each clip is first
    run through the preprocessor when ``preprocessor_params`` is given,
    the decoded frames are scored with the analyzer's top-1 accuracy, and
    one point per QP averages accuracy and bits-per-pixel over the clips.
    """
    if len(clips) != len(labels) or not clips:
        raise ValueError("need equally many clips and labels, at least one")
    qps = list(qps)
    if preprocessor_params is not None:
        inputs = [preprocessor.preprocess(c, preprocessor_params) for c in clips]
    else:
        inputs = list(clips)

    points = []
    if codec == "virtual":
        if entropy_params is None:
            raise ValueError("virtual codec needs entropy_params")
        for qp in qps:
            accs, bpps = [], []
            for clip, source, label in zip(inputs, clips, labels):
                rd = vcodec.virtual_encode(
                    clip.luma, source.luma, int(qp), entropy_params,
                    cfg=codec_cfg, mode="round",
                )
                accs.append(_top1(analyzer.classify(rd.recon.values,
                                                    analyzer_params), label))
                bpps.append(float(rd.bpp.values))
            points.append(RAPoint(_mean(bpps), _mean(accs), int(qp)))
    elif codec in realcodec.REAL_CODECS:
        if run_dir is None:
            raise ValueError(f"codec {codec!r} needs a run_dir for artifacts")
        per_qp_acc = {qp: [] for qp in qps}
        per_qp_bpp = {qp: [] for qp in qps}
        for i, (clip, label) in enumerate(zip(inputs, labels)):
            clip_dir = os.path.join(run_dir, f"{method}_clip{i:05d}")
            results = realcodec.run_grid(clip, codec, qps, clip_dir,
                                         cfg=harness_cfg)
            for qp, res in zip(qps, results):
                per_qp_acc[qp].append(
                    _top1(analyzer.classify(res.decoded.luma,
                                            analyzer_params), label)
                )
                per_qp_bpp[qp].append(res.bpp)
        for qp in qps:
            points.append(RAPoint(_mean(per_qp_bpp[qp]),
                                  _mean(per_qp_acc[qp]), int(qp)))
    else:
        raise ValueError(f"unknown codec {codec!r}")

    return RACurve(method=method, codec=codec, metric=metric,
                   points=tuple(points))


def write_report(curves, bd_rows, out_dir):
    """Write the evaluation report files and return their paths.

    ``ra_points.csv`` holds every measured point, ``bdrate.csv`` the BD
    summary rows, and one two-column ``curve_<method>_<codec>.dat`` per
    curve is emitted for plotting.  Output is deterministic for identical
    inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    ra_path = os.path.join(out_dir, "ra_points.csv")
    with open(ra_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RA_POINTS_HEADER.split(","))
        for c in curves:
            for p in c.points:
                w.writerow([c.method, c.codec, p.qp, "%.9g" % p.bpp,
                            c.metric, "%.9g" % p.value])
    paths.append(ra_path)

    bd_path = os.path.join(out_dir, "bdrate.csv")
    with open(bd_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BDRATE_HEADER.split(","))
        for r in bd_rows:
            w.writerow([r.codec, r.metric, r.anchor, r.test,
                        "%.6f" % r.bdrate_pct])
    paths.append(bd_path)

    for c in curves:
        dat_path = os.path.join(out_dir, f"curve_{c.method}_{c.codec}.dat")
        with open(dat_path, "w") as fh:
            fh.write(f"# bpp {c.metric}\n")
            for p in c.points:
                fh.write("%.9g %.9g\n" % (p.bpp, p.value))
        paths.append(dat_path)
    return paths


def load_ra_points(path):
    """Parse ``ra_points.csv`` back into curves keyed by (method, codec)."""
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RA_POINTS_HEADER.split(","):
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            if len(row) != 6:
                raise ValueError(f"{path}: malformed row {row}")
            method, codec_name, qp, bpp, metric, value = row
            key = (method, codec_name, metric)
            groups.setdefault(key, []).append(
                RAPoint(float(bpp), float(value), int(qp))
            )
    if not groups:
        raise ValueError(f"{path}: no data rows")
    return [
        RACurve(method=m, codec=c, metric=met, points=tuple(pts))
        for (m, c, met), pts in groups.items()
    ]
