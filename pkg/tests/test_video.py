import numpy as np
import pytest

from vcmpre.video import (
    VideoClip,
    read_y4m,
    read_yuv420,
    rgb_to_yuv420,
    write_y4m,
    write_yuv420,
    yuv420_to_rgb,
)


class TestVideoClip:
    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            VideoClip.from_luma(np.full((1, 2, 2), 1.5, dtype=np.float32))

    def test_rejects_bad_chroma_shape(self):
        y = np.zeros((1, 4, 4), dtype=np.float32)
        c = np.zeros((1, 2, 3), dtype=np.float32)
        with pytest.raises(ValueError, match="chroma"):
            VideoClip("yuv420", (y, c, c))

    def test_rejects_odd_yuv_dims(self):
        y = np.zeros((1, 3, 4), dtype=np.float32)
        c = np.zeros((1, 1, 2), dtype=np.float32)
        with pytest.raises(ValueError, match="even"):
            VideoClip("yuv420", (y, c, c))

    def test_geometry_properties(self):
        clip = VideoClip.from_luma(np.zeros((3, 6, 8), dtype=np.float32))
        assert (clip.num_frames, clip.height, clip.width) == (3, 6, 8)

    def test_luma_of_rgb_raises(self):
        clip = VideoClip("rgb", (np.zeros((1, 2, 2), dtype=np.float32),) * 3)
        with pytest.raises(ValueError, match="rgb"):
            clip.luma


class TestY4m:
    def test_written_bytes_match_hand_built_file(self, tmp_path):
        # one 2x2 frame, luma [[0, 1/3], [2/3, 1]]; bytes are round(v*255)
        y = np.array([[[0.0, 1 / 3], [2 / 3, 1.0]]], dtype=np.float32)
        path = tmp_path / "t.y4m"
        write_y4m(VideoClip.from_luma(y), path)
        want = (
            b"YUV4MPEG2 W2 H2 F25:1 Ip A1:1 C420\n"
            b"FRAME\n"
            + bytes([0, 85, 170, 255])  # round(255/3)=85, round(510/3)=170
            + bytes([128])  # neutral chroma round(0.5*255)=128
            + bytes([128])
        )
        assert path.read_bytes() == want

    def test_file_size_formula(self, tmp_path):
        t, h, w = 8, 64, 64
        clip = VideoClip.from_luma(np.zeros((t, h, w), dtype=np.float32))
        path = tmp_path / "s.y4m"
        write_y4m(clip, path)
        header = len(f"YUV4MPEG2 W{w} H{h} F25:1 Ip A1:1 C420\n")
        assert path.stat().st_size == header + t * (6 + w * h * 3 // 2)
        assert path.stat().st_size == 49237  # frozen for the 8x64x64 case

    def test_round_trip_is_exact_at_8bit(self, tmp_path, rng):
        y = rng.random((4, 16, 16)).astype(np.float32)
        u = rng.random((4, 8, 8)).astype(np.float32)
        v = rng.random((4, 8, 8)).astype(np.float32)
        clip = VideoClip("yuv420", (y, u, v))
        path = tmp_path / "rt.y4m"
        write_y4m(clip, path)
        back = read_y4m(str(path))
        for orig, got in zip(clip.planes, back.planes):
            np.testing.assert_array_equal(got, np.rint(orig * 255) / np.float32(255.0))
            assert np.max(np.abs(got - orig)) <= 0.5 / 255 + 1e-7

    def test_reads_c420mpeg2_and_frame_params(self, tmp_path):
        # decoders commonly emit C420mpeg2 and FRAME with parameters
        payload = bytes(range(4)) + bytes([1]) + bytes([2])
        raw = b"YUV4MPEG2 W2 H2 F30000:1001 Ip A1:1 C420mpeg2\nFRAME Xweird\n" + payload
        path = tmp_path / "m.y4m"
        path.write_bytes(raw)
        clip = read_y4m(str(path))
        assert clip.num_frames == 1 and clip.width == 2 and clip.height == 2
        np.testing.assert_allclose(
            clip.planes[0][0], np.array([[0, 1], [2, 3]]) / 255.0, atol=1e-7
        )

    def test_rejects_non_420(self, tmp_path):
        path = tmp_path / "bad.y4m"
        path.write_bytes(b"YUV4MPEG2 W2 H2 C444\n" + b"FRAME\n" + bytes(12))
        with pytest.raises(ValueError, match="C444"):
            read_y4m(str(path))

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad2.y4m"
        path.write_bytes(b"NOTAY4M W2 H2\n")
        with pytest.raises(ValueError, match="YUV4MPEG2"):
            read_y4m(str(path))

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "tr.y4m"
        path.write_bytes(b"YUV4MPEG2 W2 H2 C420\nFRAME\n" + bytes(3))
        with pytest.raises(ValueError, match="truncated"):
            read_y4m(str(path))

    def test_rgb_clip_must_be_converted_first(self, tmp_path):
        clip = VideoClip("rgb", (np.zeros((1, 2, 2), dtype=np.float32),) * 3)
        with pytest.raises(ValueError, match="rgb_to_yuv420"):
            write_y4m(clip, tmp_path / "x.y4m")


class TestRawYuv:
    def test_round_trip(self, tmp_path, rng):
        y = rng.random((3, 8, 10)).astype(np.float32)
        u = rng.random((3, 4, 5)).astype(np.float32)
        v = rng.random((3, 4, 5)).astype(np.float32)
        clip = VideoClip("yuv420", (y, u, v))
        path = tmp_path / "c.yuv"
        write_yuv420(clip, path)
        assert path.stat().st_size == 3 * (8 * 10 * 3 // 2)
        back = read_yuv420(str(path), width=10, height=8)
        for orig, got in zip(clip.planes, back.planes):
            np.testing.assert_array_equal(got, np.rint(orig * 255) / np.float32(255.0))

    def test_size_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.yuv"
        path.write_bytes(bytes(100))
        with pytest.raises(ValueError, match="multiple"):
            read_yuv420(str(path), width=10, height=8)


class TestColorConversion:
    def test_primary_colors_map_to_known_yuv(self):
        # full-range BT.601: white -> (1, .5, .5); red -> Y=.299, V=1
        rgb = np.zeros((3, 1, 2, 2), dtype=np.float32)
        rgb[:, 0] = 1.0  # white
        white = rgb_to_yuv420(VideoClip("rgb", tuple(rgb)))
        assert abs(white.planes[0][0, 0, 0] - 1.0) < 1e-6
        assert abs(white.planes[1][0, 0, 0] - 0.5) < 1e-6
        assert abs(white.planes[2][0, 0, 0] - 0.5) < 1e-6

        red = np.zeros((3, 1, 2, 2), dtype=np.float32)
        red[0, 0] = 1.0
        out = rgb_to_yuv420(VideoClip("rgb", tuple(red)))
        assert abs(out.planes[0][0, 0, 0] - 0.299) < 1e-6
        assert abs(out.planes[2][0, 0, 0] - 1.0) < 1e-6  # (1-0.299)/1.402 + 0.5
        assert abs(out.planes[1][0, 0, 0] - (0.5 - 0.299 / 1.772)) < 1e-6

    def test_round_trip_on_chroma_constant_blocks(self, rng):
        # 2x2-constant rgb blocks survive the chroma subsample exactly, so
        # rgb -> yuv420 -> rgb is identity up to float rounding
        small = rng.random((3, 2, 2, 3)).astype(np.float32)
        planes = tuple(
            np.repeat(np.repeat(small[i], 2, axis=1), 2, axis=2) for i in range(3)
        )
        clip = VideoClip("rgb", planes)
        back = yuv420_to_rgb(rgb_to_yuv420(clip))
        for a, b in zip(clip.planes, back.planes):
            assert np.max(np.abs(a - b)) < 1e-5

    def test_chroma_downsample_is_2x2_box_mean(self):
        # one frame where B-Y is constant within each 2x2 block by design
        r = np.zeros((1, 2, 4), dtype=np.float32)
        g = np.zeros((1, 2, 4), dtype=np.float32)
        b = np.array([[[0.2, 0.2, 0.8, 0.8], [0.2, 0.2, 0.8, 0.8]]], dtype=np.float32)
        out = rgb_to_yuv420(VideoClip("rgb", (r, g, b)))
        y = 0.114 * b[0, 0, 0]
        u_left = (b[0, 0, 0] - y) / 1.772 + 0.5
        assert abs(out.planes[1][0, 0, 0] - u_left) < 1e-6
        y2 = 0.114 * b[0, 0, 2]
        u_right = (b[0, 0, 2] - y2) / 1.772 + 0.5
        assert abs(out.planes[1][0, 0, 1] - u_right) < 1e-6
