"""Dependency-free artifact formats: plain PGM/PPM images, CSV tables with a
versioned format line, and write-then-rename discipline for both files and
directories so interrupted runs never leave partial outputs behind.
"""
from __future__ import annotations

import csv
import io as _io
import os
import shutil
import tempfile

import numpy as np


class FormatError(ValueError):
    pass


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, blob):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class staged_dir:
    """Populate a scratch directory, then rename it into place on success."""

    def __init__(self, final_path):
        self.final = os.path.abspath(final_path)
        self.tmp = None

    def __enter__(self):
        parent = os.path.dirname(self.final)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(dir=parent, prefix=".staging-")
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            if os.path.isdir(self.final):
                shutil.rmtree(self.final)
            os.replace(self.tmp, self.final)
        else:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


# --- images ---------------------------------------------------------------------


def write_pgm(path, img):
    """8-bit grayscale; img is (H, W) in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"PGM needs (H, W), got shape {img.shape}")
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())


def write_ppm(path, img):
    """8-bit color; img is (3, H, W) in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"PPM needs (3, H, W), got shape {img.shape}")
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.moveaxis(pixels, 0, -1)
    header = f"P6\n{img.shape[2]} {img.shape[1]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + interleaved.tobytes())


def _read_netpbm(path, magic):
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    i += 1  # single whitespace after maxval
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()}, got {tokens[0].decode()}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported")
    return data[i:], w, h


def read_pgm(path):
    body, w, h = _read_netpbm(path, b"P5")
    pixels = np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)
    return pixels.astype(np.float64) / 255.0


def read_ppm(path):
    body, w, h = _read_netpbm(path, b"P6")
    pixels = np.frombuffer(body, dtype=np.uint8, count=3 * w * h).reshape(h, w, 3)
    return np.moveaxis(pixels, -1, 0).astype(np.float64) / 255.0


# --- csv tables -------------------------------------------------------------------


def write_csv(path, format_name, header, rows):
    """CSV with a leading `# format: <name>` line; floats keep full precision."""
    buf = _io.StringIO()
    buf.write(f"# format: {format_name}\n")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def read_csv(path, expect_format=None):
    """Returns (format_name, header, rows-of-strings)."""
    with open(path, "r", newline="") as f:
        first = f.readline().strip()
        if not first.startswith("# format:"):
            raise FormatError(f"{path}: missing format line")
        fmt = first.split(":", 1)[1].strip()
        if expect_format and fmt != expect_format:
            raise FormatError(f"{path}: format {fmt!r}, expected {expect_format!r}")
        reader = csv.reader(f)
        header = next(reader)
        return fmt, header, [row for row in reader]


def write_points_csv(path, rows):
    write_csv(path, "points-v1", [f"x{i}" for i in range(rows.shape[1])], rows.tolist())


def read_points_csv(path):
    _, header, rows = read_csv(path, "points-v1")
    return np.array([[float(v) for v in row] for row in rows])
