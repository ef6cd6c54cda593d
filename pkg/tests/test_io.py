"""Channel files, grid dumps and trace recording."""

import io
import struct

import numpy as np
import pytest

from hybrid_ris.dictionary import build_compressed_grid
from hybrid_ris.geometry import MarkovVRPrior, SystemGeometry, sample_paths, sample_vr, synthesize_channel
from hybrid_ris.io import (MAGIC, TraceRecorder, export_channel, read_channel_bin, read_channel_csv,
                           read_grid_csv, write_grid_csv)


@pytest.fixture
def channel(rng):
    g = SystemGeometry(M=4, N=16, K=4)
    p = sample_paths(g, 2, 3, rng)
    vr = sample_vr(g, 2, MarkovVRPrior.from_sparsity(0.75), rng)
    return g, synthesize_channel(g, p, vr)


class TestChannelFiles:
    @pytest.mark.parametrize("reader", [read_channel_bin, read_channel_csv])
    def test_round_trip_is_exact(self, channel, tmp_path, reader):
        g, ch = channel
        b, c = export_channel(tmp_path / "ch", ch, g)
        g2, ch2 = reader(b if reader is read_channel_bin else c)
        assert g2 == g
        np.testing.assert_array_equal(ch2.h_u, ch.h_u)
        np.testing.assert_array_equal(ch2.H, ch.H)
        np.testing.assert_array_equal(ch2.h_cascaded, ch.h_cascaded)
        np.testing.assert_array_equal(ch2.vr.phi_sub, ch.vr.phi_sub)
        np.testing.assert_array_equal(ch2.paths.beta, ch.paths.beta)

    def test_binary_layout(self, channel, tmp_path):
        g, ch = channel
        b, _ = export_channel(tmp_path / "ch", ch, g)
        data = b.read_bytes()
        assert data[:4] == MAGIC
        version, n_head = struct.unpack("<II", data[4:12])
        body = np.frombuffer(data[12 + n_head:], dtype="<c16")
        np.testing.assert_array_equal(body[:16], ch.h_u)
        np.testing.assert_array_equal(body[16:].reshape(4, 16, order="F"), ch.H)

    def test_csv_columns(self, channel, tmp_path):
        g, ch = channel
        _, c = export_channel(tmp_path / "ch", ch, g)
        lines = c.read_text().splitlines()
        table = [ln for ln in lines if not ln.startswith("#")]
        assert table[0] == "array,row,col,re,im"
        assert len(table) == 1 + 16 + 64 + 64

    def test_bad_files(self, tmp_path, channel):
        (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError):
            read_channel_bin(tmp_path / "x.bin")
        g, ch = channel
        b, _ = export_channel(tmp_path / "ch", ch, g)
        b.write_bytes(b.read_bytes()[:-16])
        with pytest.raises(ValueError):
            read_channel_bin(b)


class TestGridDump:
    def test_round_trip(self, tmp_path):
        g = build_compressed_grid(SystemGeometry(M=4, N=16, K=4), n_angles=16, n_rings=2)
        rows = read_grid_csv(write_grid_csv(tmp_path / "grid.csv", g))
        np.testing.assert_array_equal(rows[:, 0], g.angles)
        np.testing.assert_array_equal(rows[:, 1], g.curvature)
        np.testing.assert_array_equal(rows[:, 2], g.ranges)


class TestTraceRecorder:
    def test_shared_streams(self):
        s = io.StringIO()
        TraceRecorder(gain=s, trial=0).gain(1, [(1.0, 2, 3.0)])
        TraceRecorder(gain=s, trial=1, header=False).gain(1, [(0.5, 1, 4.0)])
        assert s.getvalue().splitlines() == ["trial,outer,inner,residual,n_active,kappa",
                                            "0,1,1,1.0,2,3.0", "1,1,1,0.5,1,4.0"]

    def test_missing_sinks_are_ignored(self):
        rec = TraceRecorder()
        rec.gain(1, [(1.0, 1, 1.0)])
        rec.vr(1, None)
        rec.refine(1, [(0, -1.0, 0.0, 0)])

    def test_scaling(self):
        s = io.StringIO()
        TraceRecorder(refine=s).refine(2, [(1, -4.0, 3.0, 5)], scale=2.0)
        assert s.getvalue().splitlines()[1] == "2,1,-16.0,6.0,5"
