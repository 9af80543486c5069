"""Binary and text file formats, all little-endian, all written atomically."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .geometry import Grid, SparseDesign
from .model import Sinogram
from .mri import Segmentation

MAGIC_DESIGN = b"NPLD"
MAGIC_IMAGE = b"NPLI"
MAGIC_SINO = b"NPLS"
MAGIC_LABELS = b"NPLL"


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode("utf-8"))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read(path, magic: bytes) -> memoryview:
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise FormatError(f"{path}: expected magic {magic.decode()}, found {raw[:4]!r}")
    return memoryview(raw)[4:]


# -- design -----------------------------------------------------------------

def write_design_binary(path, design: SparseDesign):
    m = design.matrix
    head = MAGIC_DESIGN + struct.pack("<QQQ", m.shape[0], m.shape[1], m.nnz)
    body = (m.indptr.astype("<u8").tobytes() + m.indices.astype("<u8").tobytes()
            + m.data.astype("<f8").tobytes())
    atomic_write(path, head + body)


def read_design_binary(path, grid: Grid = None) -> SparseDesign:
    buf = _read(path, MAGIC_DESIGN)
    d, p, nnz = struct.unpack_from("<QQQ", buf, 0)
    off = 24
    need = off + 8 * (d + 1) + 16 * nnz
    if len(buf) != need:
        raise FormatError(f"{path}: truncated or oversized design file")
    indptr = np.frombuffer(buf, "<u8", d + 1, off).astype(np.int64)
    off += 8 * (d + 1)
    indices = np.frombuffer(buf, "<u8", nnz, off).astype(np.int64)
    off += 8 * nnz
    data = np.frombuffer(buf, "<f8", nnz, off).astype(float)
    return SparseDesign(sp.csr_matrix((data, indices, indptr), shape=(d, p)), "loaded", grid)


def write_design_text(path, design: SparseDesign):
    m = design.matrix.tocoo()
    lines = [f"{m.shape[0]} {m.shape[1]} {m.nnz}"]
    lines += [f"{i} {j} {float(v)!r}" for i, j, v in zip(m.row, m.col, m.data)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_design_text(path, grid: Grid = None) -> SparseDesign:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 3:
            raise FormatError(f"{path}: header must be 'd p nnz'")
        d, p, nnz = map(int, head)
        rows = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if rows.shape[0] != nnz:
        raise FormatError(f"{path}: expected {nnz} entries, found {rows.shape[0]}")
    m = sp.csr_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))), shape=(d, p))
    return SparseDesign(m, "loaded", grid)


# -- images and sinograms --------------------------------------------------

def image_bytes(values, width: int, height: int) -> bytes:
    v = np.asarray(values, dtype="<f8").ravel()
    if v.size != width * height:
        raise FormatError("image size does not match width*height")
    return MAGIC_IMAGE + struct.pack("<QQ", width, height) + v.tobytes()


def write_image(path, values, width: int, height: int):
    atomic_write(path, image_bytes(values, width, height))


def read_image(path):
    """Returns (values, width, height)."""
    buf = _read(path, MAGIC_IMAGE)
    w, h = struct.unpack_from("<QQ", buf, 0)
    if len(buf) != 16 + 8 * w * h:
        raise FormatError(f"{path}: size does not match header")
    return np.frombuffer(buf, "<f8", w * h, 16).astype(float), int(w), int(h)


def write_image_csv(path, values, width: int, height: int):
    v = np.asarray(values, dtype=float).reshape(height, width)
    out = _io.StringIO()
    out.write("x,y,value\n")
    for y in range(height):
        for x in range(width):
            out.write(f"{x},{y},{float(v[y, x])!r}\n")
    atomic_write_text(path, out.getvalue())


def write_sinogram(path, sino: Sinogram):
    v = sino.values.astype("<f8")
    atomic_write(path, MAGIC_SINO + struct.pack("<Qd", v.size, float(sino.t)) + v.tobytes())


def read_sinogram(path) -> Sinogram:
    buf = _read(path, MAGIC_SINO)
    d, t = struct.unpack_from("<Qd", buf, 0)
    if len(buf) != 16 + 8 * d:
        raise FormatError(f"{path}: size does not match header")
    return Sinogram(np.frombuffer(buf, "<f8", d, 16).astype(float), t)


def write_sinogram_csv(path, sino: Sinogram):
    lines = ["lor,value"] + [f"{i},{float(v)!r}" for i, v in enumerate(sino.values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_pgm16(path, values, width: int, height: int):
    """16-bit PGM, min-max scaled; the scaling goes to ``<path>.scale.txt``."""
    v = np.asarray(values, dtype=float).reshape(height, width)
    lo, hi = float(np.nanmin(v)), float(np.nanmax(v))
    span = hi - lo
    q = np.zeros(v.shape) if span == 0 else (v - lo) / span * 65535.0
    q = np.clip(np.rint(np.nan_to_num(q)), 0, 65535).astype(">u2")
    atomic_write(path, f"P5\n{width} {height}\n65535\n".encode("ascii") + q.tobytes())
    atomic_write_text(str(path) + ".scale.txt", f"min={lo!r}\nmax={hi!r}\n")


def read_pgm16(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], ">u2").reshape(h, w).astype(np.int64)


# -- segmentations -----------------------------------------------------------

def write_segmentation(directory, seg: Segmentation, width: int, height: int, stem: str = "labels"):
    directory = Path(directory)
    names = []
    for k, m in enumerate(seg.labels):
        name = f"{stem}_{k:02d}.npll"
        atomic_write(directory / name, MAGIC_LABELS + struct.pack("<QQ", width, height)
                     + m.astype("<i4").tobytes())
        names.append(name)
    manifest = "".join(f"{n} {c}\n" for n, c in zip(names, seg.counts))
    atomic_write_text(directory / f"{stem}.txt", manifest)
    return directory / f"{stem}.txt"


def read_label_image(path):
    buf = _read(path, MAGIC_LABELS)
    w, h = struct.unpack_from("<QQ", buf, 0)
    if len(buf) != 16 + 4 * w * h:
        raise FormatError(f"{path}: size does not match header")
    return np.frombuffer(buf, "<i4", w * h, 16).astype(np.int64), int(w), int(h)


def read_segmentation(manifest) -> Segmentation:
    manifest = Path(manifest)
    labels, counts = [], []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, count = line.split()
        lab, _, _ = read_label_image(manifest.parent / name)
        labels.append(lab)
        counts.append(int(count))
    if not labels:
        raise FormatError(f"{manifest}: no label images listed")
    return Segmentation(labels, counts)


# -- key=value text -----------------------------------------------------------

def format_kv(pairs: Dict[str, object]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)
    return "".join(f"{k}={fmt(v)}\n" for k, v in pairs.items())


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# -- solver reports and archives ----------------------------------------------

def write_solve_report(directory, report, width: int, height: int, stem: str = "solve"):
    directory = Path(directory)
    atomic_write_text(directory / f"{stem}.txt", format_kv({
        "iterations": report.iterations,
        "converged": report.converged,
        "objective_final": float(report.objective_final),
    }))
    write_csv(directory / f"{stem}_trace.csv", ["iteration", "objective"],
              [(i, float(v)) for i, v in enumerate(report.objective_trace)])
    write_image(directory / f"{stem}.npli", report.result, width, height)


def write_archive(directory, archive, width: int, height: int, meta: Dict[str, object]):
    """Directory with meta.txt, draw_%05d.npli per draw and solver_reports.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write_text(directory / "meta.txt", format_kv(meta))
    for b in range(archive.B):
        if archive.reports[b].failed:
            continue
        write_image(directory / f"draw_{b:05d}.npli", archive.draws[b], width, height)
    write_csv(directory / "solver_reports.csv",
              ["draw", "iterations", "converged", "failed", "objective", "message"],
              [(r.index, r.iterations, int(r.converged), int(r.failed), float(r.objective), r.message)
               for r in archive.reports])


def read_archive_draws(directory) -> np.ndarray:
    """Stack of the stored draw images, in draw order."""
    directory = Path(directory)
    files = sorted(directory.glob("draw_*.npli"))
    if not files:
        raise FormatError(f"{directory}: no draw_*.npli files")
    return np.stack([read_image(f)[0] for f in files])


def read_meta(directory) -> Dict[str, str]:
    return parse_kv((Path(directory) / "meta.txt").read_text(encoding="utf-8"))


def write_chain(directory, chain, width: int, height: int, meta: Dict[str, object]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write_text(directory / "meta.txt", format_kv({"kind": "gibbs", **meta}))
    for k in range(chain.samples.shape[0]):
        write_image(directory / f"draw_{k:05d}.npli", chain.samples[k], width, height)
