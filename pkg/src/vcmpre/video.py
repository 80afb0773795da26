"""Video clip container and frame I/O.

Clips store float32 planes in [0, 1].  Three layouts:

* ``luma``   -- one plane (T, H, W)
* ``yuv420`` -- planes (T, H, W), (T, H/2, W/2), (T, H/2, W/2), H and W even
* ``rgb``    -- three planes (T, H, W)

File formats: Y4M (``YUV4MPEG2``, C420, 8-bit) and raw planar YUV420 with
externally supplied dimensions.  Byte mapping is ``round(v * 255)`` on write
and ``v / 255`` on read.
"""

import re

import numpy as np

LAYOUTS = ("luma", "yuv420", "rgb")


class VideoClip:
    """Immutable-by-convention stack of frames; see module docstring."""

    __slots__ = ("layout", "planes")

    def __init__(self, layout, planes):
        if layout not in LAYOUTS:
            raise ValueError(f"unknown layout {layout!r}")
        planes = tuple(np.asarray(p, dtype=np.float32) for p in planes)
        want = 1 if layout == "luma" else 3
        if len(planes) != want:
            raise ValueError(f"layout {layout} needs {want} planes, got {len(planes)}")
        y = planes[0]
        if y.ndim != 3 or y.shape[0] < 1:
            raise ValueError(f"planes must be (T,H,W) with T >= 1, got {y.shape}")
        t, h, w = y.shape
        if layout == "yuv420":
            if h % 2 or w % 2:
                raise ValueError(f"yuv420 needs even dimensions, got {h}x{w}")
            for p in planes[1:]:
                if p.shape != (t, h // 2, w // 2):
                    raise ValueError(
                        f"chroma plane shape {p.shape} != {(t, h // 2, w // 2)}"
                    )
        elif layout == "rgb":
            for p in planes[1:]:
                if p.shape != (t, h, w):
                    raise ValueError(f"rgb planes must all be {(t, h, w)}, got {p.shape}")
        for p in planes:
            if not np.all((p >= 0.0) & (p <= 1.0)):
                raise ValueError("plane values must lie in [0, 1]")
        self.layout = layout
        self.planes = planes

    @classmethod
    def from_luma(cls, arr):
        return cls("luma", (arr,))

    @property
    def num_frames(self):
        return self.planes[0].shape[0]

    @property
    def height(self):
        return self.planes[0].shape[1]

    @property
    def width(self):
        return self.planes[0].shape[2]

    @property
    def luma(self):
        if self.layout == "rgb":
            raise ValueError("rgb clip has no luma plane; convert with rgb_to_yuv420")
        return self.planes[0]

    def __repr__(self):
        return (
            f"VideoClip({self.layout}, {self.num_frames}x{self.height}x{self.width})"
        )


def _to_bytes(plane):
    return np.rint(plane * 255.0).astype(np.uint8)


def _from_bytes(raw, shape):
    return (np.frombuffer(raw, dtype=np.uint8).reshape(shape) / np.float32(255.0)).astype(
        np.float32
    )


def _neutral_chroma(t, h, w):
    return np.full((t, h // 2, w // 2), 0.5, dtype=np.float32)


def write_y4m(clip, path):
    """Write a luma or yuv420 clip as C420 Y4M; luma gets neutral (0.5) chroma."""
    if clip.layout == "rgb":
        raise ValueError("convert rgb clips with rgb_to_yuv420 before writing y4m")
    if clip.height % 2 or clip.width % 2:
        raise ValueError("y4m C420 needs even dimensions")
    if clip.layout == "luma":
        planes = (clip.planes[0],) + (
            _neutral_chroma(clip.num_frames, clip.height, clip.width),
        ) * 2
    else:
        planes = clip.planes
    header = f"YUV4MPEG2 W{clip.width} H{clip.height} F25:1 Ip A1:1 C420\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for t in range(clip.num_frames):
            f.write(b"FRAME\n")
            for p in planes:
                f.write(_to_bytes(p[t]).tobytes())


def read_y4m(path):
    """Read a C420 Y4M file into a yuv420 clip."""
    with open(path, "rb") as f:
        data = f.read()
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(b"YUV4MPEG2"):
        raise ValueError(f"{path}: not a YUV4MPEG2 file")
    width = height = None
    colorspace = "C420"
    for token in data[:nl].decode("ascii", "replace").split()[1:]:
        if token[0] == "W":
            width = int(token[1:])
        elif token[0] == "H":
            height = int(token[1:])
        elif token[0] == "C":
            colorspace = token
    if width is None or height is None:
        raise ValueError(f"{path}: header missing W/H")
    if not colorspace.startswith("C420"):
        raise ValueError(f"{path}: unsupported colorspace {colorspace}")
    ysize = width * height
    csize = (width // 2) * (height // 2)
    ys, us, vs = [], [], []
    pos = nl + 1
    while pos < len(data):
        fnl = data.find(b"\n", pos)
        if fnl < 0 or not data[pos:fnl].startswith(b"FRAME"):
            raise ValueError(f"{path}: bad frame marker at byte {pos}")
        pos = fnl + 1
        if pos + ysize + 2 * csize > len(data):
            raise ValueError(f"{path}: truncated frame payload")
        ys.append(data[pos : pos + ysize])
        pos += ysize
        us.append(data[pos : pos + csize])
        pos += csize
        vs.append(data[pos : pos + csize])
        pos += csize
    if not ys:
        raise ValueError(f"{path}: no frames")
    t = len(ys)
    y = _from_bytes(b"".join(ys), (t, height, width))
    u = _from_bytes(b"".join(us), (t, height // 2, width // 2))
    v = _from_bytes(b"".join(vs), (t, height // 2, width // 2))
    return VideoClip("yuv420", (y, u, v))


def write_yuv420(clip, path):
    """Raw planar YUV420, no header; luma clips get neutral chroma."""
    if clip.layout == "rgb":
        raise ValueError("convert rgb clips with rgb_to_yuv420 before writing yuv")
    if clip.layout == "luma":
        planes = (clip.planes[0],) + (
            _neutral_chroma(clip.num_frames, clip.height, clip.width),
        ) * 2
    else:
        planes = clip.planes
    with open(path, "wb") as f:
        for t in range(clip.num_frames):
            for p in planes:
                f.write(_to_bytes(p[t]).tobytes())


def read_yuv420(path, width, height):
    """Raw planar YUV420 with externally supplied dimensions."""
    if width % 2 or height % 2:
        raise ValueError("yuv420 needs even dimensions")
    with open(path, "rb") as f:
        data = f.read()
    frame_bytes = width * height * 3 // 2
    if not data or len(data) % frame_bytes:
        raise ValueError(
            f"{path}: size {len(data)} is not a multiple of frame size {frame_bytes}"
        )
    t = len(data) // frame_bytes
    ysize = width * height
    csize = ysize // 4
    ys, us, vs = [], [], []
    pos = 0
    for _ in range(t):
        ys.append(data[pos : pos + ysize])
        pos += ysize
        us.append(data[pos : pos + csize])
        pos += csize
        vs.append(data[pos : pos + csize])
        pos += csize
    y = _from_bytes(b"".join(ys), (t, height, width))
    u = _from_bytes(b"".join(us), (t, height // 2, width // 2))
    v = _from_bytes(b"".join(vs), (t, height // 2, width // 2))
    return VideoClip("yuv420", (y, u, v))


# BT.601 full-range luma/chroma conversion; chroma is 2x2 box-averaged on the
# way down and nearest-neighbour expanded on the way up.


def rgb_to_yuv420(clip):
    if clip.layout != "rgb":
        raise ValueError(f"expected rgb clip, got {clip.layout}")
    if clip.height % 2 or clip.width % 2:
        raise ValueError("yuv420 needs even dimensions")
    r, g, b = (p.astype(np.float64) for p in clip.planes)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = (b - y) / 1.772 + 0.5
    v = (r - y) / 1.402 + 0.5
    t, h, w = y.shape
    u = u.reshape(t, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    v = v.reshape(t, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    planes = tuple(np.clip(p, 0.0, 1.0).astype(np.float32) for p in (y, u, v))
    return VideoClip("yuv420", planes)


def yuv420_to_rgb(clip):
    if clip.layout != "yuv420":
        raise ValueError(f"expected yuv420 clip, got {clip.layout}")
    y = clip.planes[0].astype(np.float64)
    u = clip.planes[1].repeat(2, axis=1).repeat(2, axis=2).astype(np.float64)
    v = clip.planes[2].repeat(2, axis=1).repeat(2, axis=2).astype(np.float64)
    r = y + 1.402 * (v - 0.5)
    b = y + 1.772 * (u - 0.5)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    planes = tuple(np.clip(p, 0.0, 1.0).astype(np.float32) for p in (r, g, b))
    return VideoClip("rgb", planes)
