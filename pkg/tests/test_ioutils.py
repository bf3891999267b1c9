import numpy as np
import pytest

from vibsplat.errors import ChecksumMismatch
from vibsplat.ioutils import (read_channels, read_lidar, read_mask_png,
                              read_png, read_point_ply, srgb_decode,
                              srgb_encode, to_uint8, write_channels,
                              write_lidar, write_mask_png, write_png,
                              write_point_ply, write_ppm)
from vibsplat.points import PointCloud


class TestSrgb:
    def test_roundtrip_continuous(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, 1000)
        np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)

    def test_endpoints(self):
        assert srgb_encode(0.0) == 0.0
        np.testing.assert_allclose(srgb_encode(1.0), 1.0, rtol=1e-12)

    def test_quantization_stable(self):
        # u8 -> linear -> u8 is the identity (idempotent storage).
        u = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img = srgb_decode(u.astype(np.float64) / 255.0)
        again = to_uint8(img)
        np.testing.assert_array_equal(again, u)


class TestImages:
    def test_png_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (10, 14, 3))
        p = tmp_path / "img.png"
        write_png(str(p), img)
        back = read_png(str(p))
        assert back.shape == (10, 14, 3)
        assert np.abs(back - img).max() < 0.01   # 8-bit quantization only

    def test_png_read_write_stable(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (6, 6, 3))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        write_png(str(p1), img)
        write_png(str(p2), read_png(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_ppm_matches_png_values(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (4, 5, 3))
        ppm = tmp_path / "img.ppm"
        write_ppm(str(ppm), img)
        text = ppm.read_text().split()
        assert text[0] == "P3"
        assert (int(text[1]), int(text[2])) == (5, 4)
        vals = np.array([int(v) for v in text[4:]], dtype=np.uint8).reshape(4, 5, 3)
        np.testing.assert_array_equal(vals, to_uint8(img))

    def test_mask_roundtrip(self, tmp_path):
        mask = np.random.default_rng(4).random((8, 8)) > 0.5
        p = tmp_path / "m.png"
        write_mask_png(str(p), mask)
        np.testing.assert_array_equal(read_mask_png(str(p)), mask)


class TestChannelDumps:
    def test_roundtrip_2d_and_3d(self, tmp_path):
        rng = np.random.default_rng(5)
        for arr in (rng.normal(size=(7, 9)), rng.normal(size=(5, 6, 3))):
            p = tmp_path / "c.pvgc"
            write_channels(str(p), arr)
            back = read_channels(str(p))
            np.testing.assert_allclose(back, arr, atol=1e-6)
            assert back.shape == arr.shape

    def test_header_layout(self, tmp_path):
        p = tmp_path / "c.pvgc"
        write_channels(str(p), np.zeros((3, 4, 2)))
        blob = p.read_bytes()
        assert blob[:4] == b"PVGC"
        assert len(blob) == 16 + 3 * 4 * 2 * 4

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "c.pvgc"
        write_channels(str(p), np.zeros((4, 4)))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ChecksumMismatch):
            read_channels(str(p))


class TestLidarFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(100, 4))
        p = tmp_path / "l.pvgl"
        write_lidar(str(p), pts)
        back = read_lidar(str(p))
        np.testing.assert_allclose(back, pts, atol=1e-5)
        assert p.read_bytes()[:4] == b"PVGL"

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "l.pvgl"
        p.write_bytes(b"XXXX\x00\x00\x00\x00")
        with pytest.raises(ChecksumMismatch):
            read_lidar(str(p))


class TestPointPly:
    def test_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        pc = PointCloud.zeros(17)
        for name, arr in pc.params().items():
            arr[:] = rng.normal(size=arr.shape)
        p = tmp_path / "pts.ply"
        write_point_ply(str(p), pc)
        back = read_point_ply(str(p))
        for name in pc.params():
            np.testing.assert_array_equal(getattr(back, name), getattr(pc, name))

    def test_empty_cloud(self, tmp_path):
        p = tmp_path / "empty.ply"
        write_point_ply(str(p), PointCloud.zeros(0))
        assert len(read_point_ply(str(p))) == 0

    def test_header_is_ascii_ply(self, tmp_path):
        p = tmp_path / "pts.ply"
        write_point_ply(str(p), PointCloud.zeros(2))
        lines = p.read_text().split("\n")
        assert lines[0] == "ply"
        assert lines[1] == "format ascii 1.0"
        assert "element vertex 2" in lines
