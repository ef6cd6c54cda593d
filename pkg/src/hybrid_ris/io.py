"""Persistence for channels, grids and per-iteration traces.

Channel files
-------------
A realization is written as two files with the same content.

``<stem>.csv`` starts with ``# key=value`` header lines (geometry, paths and
visibility, values JSON-encoded) followed by the table
``array,row,col,re,im``. ``array`` is ``h_u`` (length N, col 0), ``H``
(M x N) or ``h_cascaded`` (length MN, col 0).

``<stem>.bin`` is little-endian: the 4-byte magic ``HRIS``, a uint32 format
version, a uint32 header length, the same header as UTF-8 JSON, then
``h_u`` (N complex128) and ``H`` (M x N complex128, column-major). The
cascaded channel is recomputed on load.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dictionary import PolarGrid
from .geometry import ChannelRealization, PathSet, SystemGeometry, VisibleRegion
from .tensor import vec

MAGIC = b"HRIS"
VERSION = 1


def _complex_pairs(z: np.ndarray) -> list[list[float]]:
    return [[float(v.real), float(v.imag)] for v in np.asarray(z, dtype=complex).ravel()]


def _from_pairs(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]


def channel_header(ch: ChannelRealization, geom: SystemGeometry) -> dict:
    p = ch.paths
    return {
        "geometry": asdict(geom),
        "paths": {
            "theta_U": p.theta_U.tolist(), "r_U": p.r_U.tolist(), "alpha": _complex_pairs(p.alpha),
            "theta_B": p.theta_B.tolist(), "phi_R": p.phi_R.tolist(), "beta": _complex_pairs(p.beta),
        },
        "phi_sub": ch.vr.phi_sub.astype(int).tolist(),
    }


def _parse_header(head: dict) -> tuple[SystemGeometry, PathSet, VisibleRegion]:
    g = dict(head["geometry"])
    g["bs_anchor"] = tuple(g["bs_anchor"])
    g["user_range"] = tuple(g["user_range"])
    geom = SystemGeometry(**g)
    p = head["paths"]
    paths = PathSet(np.asarray(p["theta_U"]), np.asarray(p["r_U"]), _from_pairs(p["alpha"]),
                    np.asarray(p["theta_B"]), np.asarray(p["phi_R"]), _from_pairs(p["beta"]))
    vr = VisibleRegion(np.asarray(head["phi_sub"], dtype=np.int8))
    return geom, paths, vr


def _rebuild(head: dict, h_u: np.ndarray, H: np.ndarray) -> tuple[SystemGeometry, ChannelRealization]:
    geom, paths, vr = _parse_header(head)
    return geom, ChannelRealization(h_u, H, paths, vr, vec(H * h_u[None, :]))


def write_channel_bin(path, ch: ChannelRealization, geom: SystemGeometry) -> Path:
    path = Path(path)
    head = json.dumps(channel_header(ch, geom), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(head)))
        f.write(head)
        f.write(np.asarray(ch.h_u, dtype="<c16").tobytes())
        f.write(np.asarray(ch.H, dtype="<c16").tobytes(order="F"))
    return path


def read_channel_bin(path) -> tuple[SystemGeometry, ChannelRealization]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a channel file")
    version, n_head = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    head = json.loads(data[12:12 + n_head])
    M, N = head["geometry"]["M"], head["geometry"]["N"]
    body = np.frombuffer(data[12 + n_head:], dtype="<c16")
    if body.size != N + M * N:
        raise ValueError(f"{path}: expected {N + M * N} entries, found {body.size}")
    h_u = body[:N].astype(complex)
    H = body[N:].reshape(M, N, order="F").astype(complex)
    return _rebuild(head, h_u, H)


def write_channel_csv(path, ch: ChannelRealization, geom: SystemGeometry) -> Path:
    path = Path(path)
    head = channel_header(ch, geom)
    with open(path, "w", newline="") as f:
        for key in sorted(head):
            f.write(f"# {key}={json.dumps(head[key], sort_keys=True)}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["array", "row", "col", "re", "im"])
        for name, arr in (("h_u", ch.h_u[:, None]), ("H", ch.H), ("h_cascaded", ch.h_cascaded[:, None])):
            for j in range(arr.shape[1]):
                for i in range(arr.shape[0]):
                    z = complex(arr[i, j])
                    w.writerow([name, i, j, repr(z.real), repr(z.imag)])
    return path


def read_channel_csv(path) -> tuple[SystemGeometry, ChannelRealization]:
    head, rows = {}, []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("# "):
                key, _, val = line[2:].rstrip("\n").partition("=")
                head[key] = json.loads(val)
            else:
                rows = list(csv.DictReader([line, *f]))
                break
    M, N = head["geometry"]["M"], head["geometry"]["N"]
    h_u = np.zeros(N, dtype=complex)
    H = np.zeros((M, N), dtype=complex)
    for r in rows:
        z = float(r["re"]) + 1j * float(r["im"])
        if r["array"] == "h_u":
            h_u[int(r["row"])] = z
        elif r["array"] == "H":
            H[int(r["row"]), int(r["col"])] = z
    return _rebuild(head, h_u, H)


def export_channel(stem, ch: ChannelRealization, geom: SystemGeometry) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` and ``<stem>.csv``."""
    stem = Path(stem)
    return (write_channel_bin(stem.with_suffix(".bin"), ch, geom),
            write_channel_csv(stem.with_suffix(".csv"), ch, geom))


def write_grid_csv(path, grid: PolarGrid) -> Path:
    """One row per grid point: ``index,ring,angle,curvature,range`` (range ``inf`` on ring 0)."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "ring", "angle", "curvature", "range"])
        for i, (a, c, r) in enumerate(zip(grid.angles, grid.curvature, grid.ranges)):
            w.writerow([i, int(grid.ring_of(i)), repr(float(a)), repr(float(c)), repr(float(r))])
    return path


def read_grid_csv(path) -> np.ndarray:
    """Rows of ``(angle, curvature, range)``."""
    with open(path, newline="") as f:
        return np.array([[float(r["angle"]), float(r["curvature"]), float(r["range"])]
                         for r in csv.DictReader(f)])


class TraceRecorder:
    """CSV sinks for the per-iteration diagnostics of the three TS-JBE modules.

    Any sink may be ``None``. Each accepts an open text stream; rows are
    flushed as they are written so long runs can be followed live. Several
    recorders can share streams, one per trial, with ``header`` set only on
    the first.
    """

    GAIN_FIELDS = ["outer", "inner", "residual", "n_active", "kappa"]
    VR_FIELDS = ["outer", "column", "subarray", "pi_in", "pi_out", "posterior", "decision"]
    REFINE_FIELDS = ["outer", "sweep", "objective", "grad_norm", "accepted"]

    def __init__(self, gain=None, vr=None, refine=None, trial: int | None = None,
                 header: bool = True):
        self.trial = trial
        self._w = {}
        for name, stream, fields in (("gain", gain, self.GAIN_FIELDS), ("vr", vr, self.VR_FIELDS),
                                     ("refine", refine, self.REFINE_FIELDS)):
            if stream is None:
                continue
            cols = (["trial"] if trial is not None else []) + fields
            w = csv.writer(stream, lineterminator="\n")
            if header:
                w.writerow(cols)
            self._w[name] = (w, stream)

    def _row(self, name, values):
        if name not in self._w:
            return
        w, stream = self._w[name]
        w.writerow(([self.trial] if self.trial is not None else []) + list(values))
        stream.flush()

    def gain(self, outer: int, diagnostics, scale: float = 1.0) -> None:
        for i, (res, n_active, kappa) in enumerate(diagnostics, 1):
            self._row("gain", [outer, i, repr(float(scale * res)), n_active, repr(float(kappa / scale**2))])

    def vr(self, outer: int, beliefs) -> None:
        if beliefs is None:
            return
        for j, col in enumerate(beliefs.columns):
            for k in range(beliefs.decision.shape[0]):
                self._row("vr", [outer, int(col), k, repr(float(beliefs.pi_in[k, j])),
                                 repr(float(beliefs.pi_out[k, j])),
                                 repr(float(beliefs.posterior[k, j])), int(beliefs.decision[k, j])])

    def refine(self, outer: int, trace, scale: float = 1.0) -> None:
        for sweep, L, gnorm, accepted in trace:
            self._row("refine", [outer, sweep, repr(float(scale**2 * L)), repr(float(scale * gnorm)), accepted])
