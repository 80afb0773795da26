"""Drive external video encoders (x264 / x265) over a QP grid.

This module shells out to real command-line tools.  Each encode runs the
encoder on a Y4M input, measures the bitstream size on disk, then decodes
the bitstream back to Y4M (via an ffmpeg-style tool) so the decoded frames
can be scored by the downstream analyzer.

Command lines are built from templates so unusual builds or wrapper
scripts can be substituted without code changes.  Placeholders:

    {bin}      resolved tool binary
    {in}      input Y4M path (encode) -- note: no space, it is a format field
    {out}     bitstream path (encoder output, decoder input)
    {decoded} decoded Y4M path (decoder output)
    {qp}      integer quantisation parameter
    {preset}  encoder preset name

Tool discovery order, per tool:

    1. an explicit environment variable (``VCM_X264_PATH``,
       ``VCM_X265_PATH``, ``VCM_FFMPEG_PATH``), which must point at an
       existing executable, else an error;
    2. the conventional name (``x264``, ``x265``, ``ffmpeg``) on ``PATH``.

A tool that cannot be found raises :class:`MissingToolError`, which the
command-line layer maps to exit code 4.
"""

import csv
import os
import shlex
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .video import read_y4m, write_y4m

__all__ = [
    "DEFAULT_TEMPLATES",
    "EncodeJob",
    "EncodeResult",
    "EncoderError",
    "HarnessConfig",
    "MissingToolError",
    "encode_decode",
    "resolve_tool",
    "run_grid",
    "write_results_csv",
]

REAL_CODECS = ("h264", "h265")

DEFAULT_TEMPLATES = {
    "h264": "{bin} --qp {qp} --preset {preset} -o {out} {in}",
    "h265": "{bin} --qp {qp} --preset {preset} --input {in} --output {out}",
    "decode": "{bin} -i {out} -pix_fmt yuv420p -f yuv4mpegpipe {decoded}",
}

# tool key -> (override env var, conventional binary name)
TOOL_LOOKUP = {
    "h264": ("VCM_X264_PATH", "x264"),
    "h265": ("VCM_X265_PATH", "x265"),
    "decode": ("VCM_FFMPEG_PATH", "ffmpeg"),
}

RESULTS_HEADER = "codec,qp,bits,bpp,wall_ms,bitstream_path"


class MissingToolError(RuntimeError):
    """An external tool could not be located (CLI exit code 4)."""


class EncoderError(RuntimeError):
    """An external tool was found but failed while running."""


@dataclass(frozen=True)
class HarnessConfig:
    """How to invoke external tools.

    templates map codec names (and ``"decode"``) to command-line templates;
    ``workers`` bounds the process pool used by :func:`run_grid`;
    ``keep_artifacts`` retains decoded Y4M files next to the bitstreams
    instead of deleting them once frames are in memory.
    """

    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    workers: int = 2
    keep_artifacts: bool = False

    def __post_init__(self):
        for key in ("decode",):
            if key not in self.templates:
                raise ValueError(f"templates must include a {key!r} entry")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class EncodeJob:
    """One (clip, codec, qp) encode request."""

    input_path: str
    codec: str
    qp: int
    output_path: str
    preset: str = "medium"

    def __post_init__(self):
        if self.codec not in REAL_CODECS:
            raise ValueError(f"codec must be one of {REAL_CODECS}, got {self.codec!r}")
        if not 0 <= int(self.qp) <= 51:
            raise ValueError(f"qp must lie in [0, 51], got {self.qp}")
        if not self.preset:
            raise ValueError("preset must be a non-empty string")


@dataclass(frozen=True)
class EncodeResult:
    """Measured outcome of one encode+decode round trip."""

    codec: str
    qp: int
    bits: int
    bpp: float
    decoded: object  # VideoClip
    wall_ms: float
    bitstream_path: str


def resolve_tool(kind, cfg=None):
    """Return the executable path for ``kind`` ("h264", "h265", "decode")."""
    if kind not in TOOL_LOOKUP:
        raise ValueError(f"unknown tool kind {kind!r}")
    env_var, default_name = TOOL_LOOKUP[kind]
    override = os.environ.get(env_var)
    if override:
        if not (os.path.isfile(override) and os.access(override, os.X_OK)):
            raise MissingToolError(
                f"{env_var}={override!r} is not an executable file"
            )
        return override
    found = shutil.which(default_name)
    if found is None:
        raise MissingToolError(
            f"{default_name!r} not found on PATH; set {env_var} to the binary"
        )
    return found


def _build_command(template, **values):
    """Split the template into tokens, then substitute each placeholder.

    Splitting before substitution keeps paths containing spaces inside a
    single argument.
    """
    return [tok.format(**values) for tok in shlex.split(template)]


def _run(cmd, what):
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        stderr = (proc.stderr or "").strip()
        tail = stderr[-500:] if stderr else "(no stderr)"
        raise EncoderError(
            f"{what} failed with exit code {proc.returncode}: "
            f"{shlex.join(cmd)}\n{tail}"
        )
    return proc


def encode_decode(job, cfg=None):
    """Run one encode + decode round trip and measure it.

    Returns an :class:`EncodeResult` whose ``bits`` is exactly eight times
    the bitstream's on-disk byte size and whose ``bpp`` divides that by the
    input clip's luma pixel count (width x height x frames).
    """
    cfg = cfg or HarnessConfig()
    if job.codec not in cfg.templates:
        raise ValueError(f"no command template for codec {job.codec!r}")
    encoder = resolve_tool(job.codec, cfg)
    decoder = resolve_tool("decode", cfg)
    src = read_y4m(job.input_path)
    decoded_path = job.output_path + ".dec.y4m"

    enc_cmd = _build_command(
        cfg.templates[job.codec],
        bin=encoder,
        qp=job.qp,
        preset=job.preset,
        out=job.output_path,
        **{"in": job.input_path},
    )
    dec_cmd = _build_command(
        cfg.templates["decode"],
        bin=decoder,
        out=job.output_path,
        decoded=decoded_path,
    )

    start = time.perf_counter()
    try:
        _run(enc_cmd, f"{job.codec} encode (qp={job.qp})")
        if not os.path.isfile(job.output_path):
            raise EncoderError(
                f"{job.codec} encode (qp={job.qp}) exited 0 but wrote no "
                f"bitstream at {job.output_path}"
            )
        _run(dec_cmd, f"{job.codec} decode (qp={job.qp})")
        wall_ms = (time.perf_counter() - start) * 1000.0
        decoded = read_y4m(decoded_path)
    finally:
        if not cfg.keep_artifacts and os.path.isfile(decoded_path):
            os.remove(decoded_path)

    if (decoded.num_frames, decoded.height, decoded.width) != (
        src.num_frames,
        src.height,
        src.width,
    ):
        raise EncoderError(
            f"decoded geometry {decoded.num_frames}x{decoded.height}x"
            f"{decoded.width} does not match input {src.num_frames}x"
            f"{src.height}x{src.width} ({job.codec}, qp={job.qp})"
        )

    bits = os.path.getsize(job.output_path) * 8
    bpp = bits / float(src.width * src.height * src.num_frames)
    return EncodeResult(
        codec=job.codec,
        qp=job.qp,
        bits=bits,
        bpp=bpp,
        decoded=decoded,
        wall_ms=wall_ms,
        bitstream_path=job.output_path,
    )


def run_grid(clip, codec, qps, run_dir, cfg=None, preset="medium"):
    """Encode ``clip`` at every QP in ``qps`` and return results in order.

    ``clip`` may be a VideoClip (written to ``run_dir`` once) or a path to
    an existing Y4M file.  Encodes run on a bounded worker pool; the result
    list preserves the order of ``qps`` regardless of completion order, and
    the first failure propagates.  An empty ``qps`` returns ``[]`` without
    launching any process.
    """
    qps = list(qps)
    if not qps:
        return []
    cfg = cfg or HarnessConfig()
    os.makedirs(run_dir, exist_ok=True)
    if isinstance(clip, (str, os.PathLike)):
        input_path = os.fspath(clip)
    else:
        input_path = os.path.join(run_dir, "input.y4m")
        write_y4m(clip, input_path)
    jobs = [
        EncodeJob(
            input_path=input_path,
            codec=codec,
            qp=qp,
            output_path=os.path.join(run_dir, f"{codec}_qp{qp:02d}.bits"),
            preset=preset,
        )
        for qp in qps
    ]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda job: encode_decode(job, cfg), jobs))


def write_results_csv(results, path):
    """Write one row per result: codec,qp,bits,bpp,wall_ms,bitstream_path."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER.split(","))
        for r in results:
            writer.writerow(
                [r.codec, r.qp, r.bits, "%.9g" % r.bpp, "%.3f" % r.wall_ms,
                 r.bitstream_path]
            )
