"""On-disk formats: diagnostics CSV, binary field snapshots, PGM heatmaps,
run manifests and the per-directory job lock.

All formats are platform independent: little-endian binary, UTF-8 text,
17-significant-digit decimal floats (lossless for IEEE doubles).
"""

from __future__ import annotations

import json
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import DiagnosticsRecord

SNAPSHOT_MAGIC = b"MREF"
SNAPSHOT_VERSION = 1


class SnapshotError(Exception):
    pass


class BadMagicError(SnapshotError):
    pass


class VersionMismatchError(SnapshotError):
    pass


class TruncatedPayloadError(SnapshotError):
    pass


class LockHeldError(RuntimeError):
    pass


def _fmt_exponent(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:g}"


def csv_columns(
    p_list, alpha_list, d: int, levelset_count: int | None = None
) -> list[str]:
    cols = ["t", "energy", "dissipation", "cum_dissipation", "energy_residual"]
    cols += [f"lp_{_fmt_exponent(p)}" for p in p_list]
    cols += [f"u_H{_fmt_exponent(a)}" for a in alpha_list]
    cols += ["grad_u_linf", "u_linf"]
    if d == 3:
        cols.append("helicity")
    cols += ["current_l2", "divb_residual", "lp_envelope_margin", "hs_envelope_margin"]
    if d == 2 and levelset_count:
        cols += [f"levelset_q{i:02d}" for i in range(levelset_count)]
    return cols


def record_row(rec: DiagnosticsRecord, p_list, alpha_list, d: int) -> list[float]:
    row = [rec.t, rec.energy, rec.dissipation, rec.cum_dissipation, rec.energy_residual]
    row += [rec.lp_norms[p] for p in p_list]
    row += [rec.u_alpha_norms[a] for a in alpha_list]
    row += [rec.grad_u_linf, rec.u_linf]
    if d == 3:
        row.append(rec.helicity if rec.helicity is not None else math.nan)
    row += [rec.current_l2, rec.divb_residual, rec.lp_envelope_margin, rec.hs_envelope_margin]
    if d == 2 and rec.levelset is not None:
        row += list(rec.levelset)
    return row


def write_diagnostics_csv(records, path, p_list, alpha_list, d: int) -> None:
    """One row per time-ordered record, 17 significant digits per value."""
    levelset_count = None
    if records and d == 2 and records[0].levelset is not None:
        levelset_count = len(records[0].levelset)
    cols = csv_columns(p_list, alpha_list, d, levelset_count)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for rec in records:
                row = record_row(rec, p_list, alpha_list, d)
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing diagnostics to {path}: {exc}") from exc


def read_diagnostics_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [
            [float(v) for v in line.strip().split(",")] for line in fh if line.strip()
        ]
    data = np.array(rows) if rows else np.empty((0, len(header)))
    return header, data


# ---------------------------------------------------------------------------
# Binary snapshots
# ---------------------------------------------------------------------------

def write_snapshot(fields, d: int, n: int, t: float, gamma: float, path) -> None:
    """magic 'MREF', u8 version, u8 d, u8 nfields, u8 pad, d x u32 n,
    f64 time, f64 gamma, then each field as row-major little-endian f64."""
    fields = [np.ascontiguousarray(f, dtype="<f8") for f in fields]
    for f in fields:
        if f.shape != (n,) * d:
            raise ValueError(f"field shape {f.shape} does not match header ({n},)*{d}")
    header = struct.pack(
        f"<4sBBBB{d}Idd", SNAPSHOT_MAGIC, SNAPSHOT_VERSION, d, len(fields), 0,
        *([n] * d), t, gamma,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for f in fields:
            fh.write(f.tobytes(order="C"))


def read_snapshot(path):
    """Returns (fields, meta) with meta = dict(d, n, t, gamma)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != SNAPSHOT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, d, nfields, _pad = struct.unpack_from("<BBBB", raw, 4)
    if version != SNAPSHOT_VERSION:
        raise VersionMismatchError(f"{path}: unsupported snapshot version {version}")
    header_size = 8 + 4 * d + 16
    if len(raw) < header_size:
        raise TruncatedPayloadError(f"{path}: truncated payload (header incomplete)")
    ns = struct.unpack_from(f"<{d}I", raw, 8)
    t, gamma = struct.unpack_from("<dd", raw, 8 + 4 * d)
    n = ns[0]
    count = n**d
    expected = header_size + nfields * count * 8
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    fields = []
    off = header_size
    for _ in range(nfields):
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape((n,) * d)
        fields.append(arr.copy())
        off += count * 8
    return fields, {"d": d, "n": n, "t": t, "gamma": gamma}


# ---------------------------------------------------------------------------
# PGM heatmaps
# ---------------------------------------------------------------------------

def render_heatmap(samples: np.ndarray, path) -> str:
    """8-bit grayscale PGM of a 2-d sample array; returns the sidecar path.

    Image rows are the x2 index increasing downward, columns the x1 index;
    values map [min, max] -> [0, 255].  A degenerate range renders uniform
    mid-gray.  Min/max and the orientation note go to the sidecar.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2:
        raise ValueError("heatmap requires a 2-d sample array (pass a slice for d=3)")
    lo, hi = float(arr.min()), float(arr.max())
    img = arr.T  # rows = x2, cols = x1
    if hi > lo:
        pix = np.round((img - lo) / (hi - lo) * 255.0).astype(np.uint8)
        note = ""
    else:
        pix = np.full(img.shape, 128, dtype=np.uint8)
        note = "degenerate range: uniform mid-gray\n"
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes(order="C"))
    sidecar = str(path) + ".meta.txt"
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(f"min={lo:.17g}\nmax={hi:.17g}\n")
        fh.write("orientation: rows are the x2 axis (top row x2=0), columns x1\n")
        if note:
            fh.write(note)
    return sidecar


# ---------------------------------------------------------------------------
# Run manifest and directory lock
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    rng_seed: int
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    version: str = ""

    def add(self, path) -> None:
        self.outputs.append(str(path))

    def write(self, path) -> None:
        """Validates that every listed artifact exists with nonzero size."""
        for out in self.outputs:
            if not os.path.exists(out) or os.path.getsize(out) == 0:
                raise OSError(f"manifest lists missing or empty artifact: {out}")
        payload = {
            "config": self.config,
            "rng_seed": self.rng_seed,
            "outputs": self.outputs,
            "timings": self.timings,
            "version": self.version,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


class DirLock:
    """One writer per output directory, enforced by an exclusive lock file."""

    def __init__(self, outdir):
        self.path = os.path.join(outdir, ".mre-lab.lock")
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeldError(
                f"output directory is locked by another job: {self.path}"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self.path)
        return False


class StopWatch:
    def __init__(self):
        self.marks = {}
        self._t0 = time.perf_counter()

    def mark(self, name: str) -> None:
        self.marks[name] = time.perf_counter() - self._t0
