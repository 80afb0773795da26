"""External-encoder harness tests, run against the fake encoder stub."""

import os

import numpy as np
import pytest

from vcmpre import harness
from vcmpre.harness import (
    EncodeJob,
    EncoderError,
    HarnessConfig,
    MissingToolError,
    encode_decode,
    resolve_tool,
    run_grid,
    write_results_csv,
)
from vcmpre.video import VideoClip, read_y4m, write_y4m

STUB = os.path.join(os.path.dirname(__file__), "fake_encoder.py")


@pytest.fixture
def stub_env(stub_codecs):
    """Point every tool variable at the fake encoder."""
    return stub_codecs


@pytest.fixture
def textured_clip():
    rng = np.random.default_rng(7)
    return VideoClip.from_luma(
        rng.uniform(0.0, 1.0, size=(4, 32, 32)).astype(np.float32)
    )


@pytest.fixture
def input_y4m(tmp_path, textured_clip):
    path = str(tmp_path / "input.y4m")
    write_y4m(textured_clip, path)
    return path


class TestResolveTool:
    def test_env_override_wins(self, stub_env):
        assert resolve_tool("h264") == STUB
        assert resolve_tool("h265") == STUB
        assert resolve_tool("decode") == STUB

    def test_bad_override_names_variable(self, monkeypatch, tmp_path):
        monkeypatch.setenv("VCM_X264_PATH", str(tmp_path / "nope"))
        with pytest.raises(MissingToolError, match="VCM_X264_PATH"):
            resolve_tool("h264")

    def test_missing_from_path_names_variable(self, monkeypatch):
        monkeypatch.delenv("VCM_X265_PATH", raising=False)
        monkeypatch.setenv("PATH", "")
        with pytest.raises(MissingToolError, match="VCM_X265_PATH"):
            resolve_tool("h265")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown tool"):
            resolve_tool("av1")


class TestEncodeJob:
    def test_bad_codec(self):
        with pytest.raises(ValueError, match="codec"):
            EncodeJob("a.y4m", "vp9", 30, "out.bits")

    @pytest.mark.parametrize("qp", [-1, 52])
    def test_bad_qp(self, qp):
        with pytest.raises(ValueError, match="qp"):
            EncodeJob("a.y4m", "h264", qp, "out.bits")

    def test_empty_preset(self):
        with pytest.raises(ValueError, match="preset"):
            EncodeJob("a.y4m", "h264", 30, "out.bits", preset="")


class TestEncodeDecode:
    @pytest.mark.parametrize("codec", ["h264", "h265"])
    def test_round_trip_both_template_styles(
        self, stub_env, tmp_path, input_y4m, textured_clip, codec
    ):
        job = EncodeJob(input_y4m, codec, 20, str(tmp_path / "out.bits"))
        res = encode_decode(job)
        assert res.codec == codec and res.qp == 20
        assert res.bits == os.path.getsize(res.bitstream_path) * 8
        t, h, w = textured_clip.luma.shape
        assert res.bpp == res.bits / float(t * h * w)
        assert res.decoded.luma.shape == (t, h, w)
        assert res.wall_ms > 0.0

    def test_quality_and_size_fall_as_qp_rises(
        self, stub_env, tmp_path, input_y4m, textured_clip
    ):
        bits, errs = [], []
        for qp in (5, 15, 30, 45):
            job = EncodeJob(input_y4m, "h264", qp, str(tmp_path / f"q{qp}.bits"))
            res = encode_decode(job)
            bits.append(res.bits)
            errs.append(
                float(np.mean(np.abs(res.decoded.luma - textured_clip.luma)))
            )
        assert bits == sorted(bits, reverse=True)
        assert all(b > a for a, b in zip(errs, errs[1:]))
        assert errs[0] < 0.02  # near-lossless at the lowest step

    def test_encoder_failure_carries_stderr_and_qp(
        self, stub_env, monkeypatch, tmp_path, input_y4m
    ):
        monkeypatch.setenv("FAKE_ENCODER_FAIL", "encode")
        job = EncodeJob(input_y4m, "h264", 33, str(tmp_path / "out.bits"))
        with pytest.raises(EncoderError, match="qp=33") as exc:
            encode_decode(job)
        assert "induced failure" in str(exc.value)

    def test_silent_encoder_detected(self, stub_env, monkeypatch, tmp_path, input_y4m):
        monkeypatch.setenv("FAKE_ENCODER_FAIL", "silent")
        job = EncodeJob(input_y4m, "h264", 30, str(tmp_path / "out.bits"))
        with pytest.raises(EncoderError, match="no bitstream"):
            encode_decode(job)

    def test_decoded_y4m_removed_unless_kept(self, stub_env, tmp_path, input_y4m):
        job = EncodeJob(input_y4m, "h264", 25, str(tmp_path / "a.bits"))
        encode_decode(job)
        assert not os.path.exists(str(tmp_path / "a.bits.dec.y4m"))
        job2 = EncodeJob(input_y4m, "h264", 25, str(tmp_path / "b.bits"))
        encode_decode(job2, HarnessConfig(keep_artifacts=True))
        kept = str(tmp_path / "b.bits.dec.y4m")
        assert os.path.exists(kept)
        assert read_y4m(kept).luma.shape == read_y4m(input_y4m).luma.shape


class TestRunGrid:
    def test_empty_qps_returns_empty(self, tmp_path, textured_clip):
        # No tools are resolved: this must not require any binary.
        assert run_grid(textured_clip, "h264", [], str(tmp_path / "run")) == []

    def test_order_preserved_and_parallel_matches_serial(
        self, stub_env, tmp_path, textured_clip
    ):
        qps = [40, 10, 30, 20]
        serial = run_grid(
            textured_clip, "h264", qps, str(tmp_path / "s"), HarnessConfig(workers=1)
        )
        parallel = run_grid(
            textured_clip, "h264", qps, str(tmp_path / "p"), HarnessConfig(workers=3)
        )
        assert [r.qp for r in serial] == qps
        assert [r.qp for r in parallel] == qps
        for a, b in zip(serial, parallel):
            assert (a.bits, a.bpp) == (b.bits, b.bpp)
            np.testing.assert_array_equal(a.decoded.luma, b.decoded.luma)

    def test_accepts_existing_y4m_path(self, stub_env, tmp_path, input_y4m):
        results = run_grid(input_y4m, "h265", [20], str(tmp_path / "run"))
        assert len(results) == 1 and results[0].bits > 0

    def test_failure_propagates(self, stub_env, monkeypatch, tmp_path, textured_clip):
        monkeypatch.setenv("FAKE_ENCODER_FAIL", "encode")
        with pytest.raises(EncoderError):
            run_grid(textured_clip, "h264", [10, 20], str(tmp_path / "run"))


class TestResultsCsv:
    def test_schema_and_bpp_recompute(self, stub_env, tmp_path, textured_clip):
        results = run_grid(textured_clip, "h264", [10, 30], str(tmp_path / "run"))
        path = str(tmp_path / "results.csv")
        write_results_csv(results, path)
        lines = open(path).read().splitlines()
        assert lines[0] == harness.RESULTS_HEADER
        assert len(lines) == 3
        t, h, w = textured_clip.luma.shape
        for line, res in zip(lines[1:], results):
            codec, qp, bits, bpp, wall_ms, bs_path = line.split(",")
            assert codec == "h264" and int(qp) == res.qp
            assert int(bits) == os.path.getsize(bs_path) * 8
            assert float(bpp) == pytest.approx(int(bits) / (t * h * w), rel=1e-8)
            assert float(wall_ms) > 0.0
