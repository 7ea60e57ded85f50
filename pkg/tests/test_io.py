import numpy as np
import pytest

from cryoabi import dataio, mrc, simulate as sim
from cryoabi.errors import BadMagic, DimensionMismatch, TruncatedPayload, UnsupportedMode


class TestMrc:
    def test_volume_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = rng.normal(size=(16, 16, 16)).astype(np.float32)
        p = tmp_path / "v.mrc"
        mrc.mrc_write(vol, 1.31, p)
        data, px, kind = mrc.mrc_read(p)
        assert kind == "volume"
        assert px == pytest.approx(1.31, rel=1e-6)
        np.testing.assert_array_equal(data, vol)

    def test_stack_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        stack = rng.normal(size=(5, 8, 8)).astype(np.float32)
        p = tmp_path / "s.mrc"
        mrc.mrc_write(stack, 2.0, p, kind="stack")
        data, px, kind = mrc.mrc_read(p)
        assert kind == "stack"
        assert data.shape == (5, 8, 8)
        np.testing.assert_array_equal(data, stack)

    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        vol = rng.normal(size=(8, 8, 8)).astype(np.float32)
        p1, p2 = tmp_path / "a.mrc", tmp_path / "b.mrc"
        mrc.mrc_write(vol, 1.0, p1)
        data, px, kind = mrc.mrc_read(p1)
        mrc.mrc_write(data, px, p2, kind=kind)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mrc"
        p.write_bytes(b"\x00" * 2048)
        with pytest.raises(BadMagic):
            mrc.mrc_read(p)

    def test_unsupported_mode(self, tmp_path):
        rng = np.random.default_rng(3)
        p = tmp_path / "m.mrc"
        mrc.mrc_write(rng.normal(size=(4, 4, 4)).astype(np.float32), 1.0, p)
        raw = bytearray(p.read_bytes())
        raw[12:16] = (1).to_bytes(4, "little")  # mode word
        p.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedMode):
            mrc.mrc_read(p)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(4)
        p = tmp_path / "t.mrc"
        mrc.mrc_write(rng.normal(size=(4, 4, 4)).astype(np.float32), 1.0, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(TruncatedPayload):
            mrc.mrc_read(p)

    def test_header_counts(self, tmp_path):
        vol = np.zeros((6, 6, 6), dtype=np.float32)
        stack = np.zeros((9, 6, 6), dtype=np.float32)
        pv, ps = tmp_path / "v.mrc", tmp_path / "s.mrc"
        mrc.mrc_write(vol, 1.0, pv, kind="volume")
        mrc.mrc_write(stack, 1.0, ps, kind="stack")
        hv = np.fromfile(pv, dtype="<i4", count=3)
        hs = np.fromfile(ps, dtype="<i4", count=3)
        assert tuple(hv) == (6, 6, 6)
        assert tuple(hs) == (6, 6, 9)


class TestStackIo:
    def test_roundtrip(self, tmp_path):
        phantom = sim.make_phantom(16, 4, seed=1, reject_symmetric=False)
        stack = sim.synthesize_dataset(phantom, sim.SimSpec(n=6, L=16, snr=0.2, seed=2))
        dataio.save_stack(stack, tmp_path / "p.mrc", tmp_path / "p.csv")
        loaded = dataio.load_stack(tmp_path / "p.mrc", tmp_path / "p.csv")
        np.testing.assert_allclose(loaded.images, stack.images, atol=0)
        np.testing.assert_allclose(loaded.gt_rotations, stack.gt_rotations, atol=1e-16)
        np.testing.assert_allclose(loaded.defocus, stack.defocus, atol=1e-9)
        assert loaded.sigma_noise == pytest.approx(stack.sigma_noise, abs=0)
        assert loaded.pixel_size == pytest.approx(stack.pixel_size, rel=1e-6)

    def test_metadata_schema_enforced(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DimensionMismatch):
            dataio.read_metadata(p)
