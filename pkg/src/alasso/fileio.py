"""On-disk formats for experiment artifacts.

Vectors are raw little-endian float32 behind a one-line ASCII header
listing the dimensions and the dtype tag (``128 f32`` or ``16 16 f32``).
Images additionally get binary PGM previews (P5, 8- or 16-bit after an
affine range map); the float vector file is always the payload of
record.  Sweep results go to CSV with a fixed column order, floats
printed as %.17g so rewriting the same numbers is byte-identical, and
missing values as empty fields.  Configuration files are flat
``key = value`` text with full-line # comments.
"""

from __future__ import annotations

import numpy as np

SWEEP_COLUMNS = ("lambda", "dof", "gsure_pred", "gsure_proj", "gsure_est",
                 "se_pred", "se_proj", "se_est", "solver_iters", "converged",
                 "cert_margin")

_INT_COLUMNS = {"dof", "solver_iters"}
_BOOL_COLUMNS = {"converged"}

_VECTOR_DTYPE = "f32"


def format_float(v):
    """Shortest fixed-rule decimal that round-trips a float64."""
    return "%.17g" % float(v)


# -- float vectors ----------------------------------------------------------

def write_vector(path, arr):
    """Write an array as little-endian float32 with a dims/dtype header."""
    arr = np.asarray(arr, dtype=float)
    header = " ".join(str(d) for d in arr.shape) + f" {_VECTOR_DTYPE}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_vector(path):
    """Read a vector file back as float64 with its recorded shape."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            b = fh.read(1)
            if not b:
                raise ValueError(f"{path}: truncated header")
            if b == b"\n":
                break
            header += b
            if len(header) > 256:
                raise ValueError(f"{path}: header line too long; not a "
                                 "vector file")
        tokens = header.decode("ascii", errors="replace").split()
        if len(tokens) < 2 or tokens[-1] != _VECTOR_DTYPE:
            raise ValueError(f"{path}: expected '<dims> {_VECTOR_DTYPE}' "
                             f"header, got {header.decode(errors='replace')!r}")
        try:
            shape = tuple(int(t) for t in tokens[:-1])
        except ValueError:
            raise ValueError(f"{path}: non-integer dimension in header")
        if any(d < 0 for d in shape):
            raise ValueError(f"{path}: negative dimension in header")
        count = int(np.prod(shape)) if shape else 0
        payload = fh.read()
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload holds {len(payload)} bytes, "
                         f"header promises {4 * count}")
    data = np.frombuffer(payload, dtype="<f4").astype(float)
    return data.reshape(shape)


# -- PGM previews -----------------------------------------------------------

def write_pgm(path, image, bits=16, lo=None, hi=None):
    """Binary PGM preview of a 2-d float array.

    The value range [lo, hi] (data min/max by default) maps affinely onto
    [0, maxval].  16-bit samples are big-endian per the format.  Preview
    only: quantization loses the float payload.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM preview needs a 2-d array")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    lo = float(np.min(image)) if lo is None else float(lo)
    hi = float(np.max(image)) if hi is None else float(hi)
    span = hi - lo
    if span <= 0:
        scaled = np.zeros_like(image)
    else:
        scaled = np.clip((image - lo) / span, 0.0, 1.0) * maxval
    pix = np.rint(scaled).astype(">u2" if bits == 16 else "u1")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path):
    """Read a binary PGM; returns (array of ints, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # Header tokens may be interleaved with #-comments ending at newline.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = (int(t) for t in tokens)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    if len(data) - pos < count * (2 if maxval > 255 else 1):
        raise ValueError(f"{path}: truncated PGM payload")
    pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return pix.reshape(h, w).astype(int), maxval


# -- sweep CSV ---------------------------------------------------------------

def _format_field(col, value):
    if value is None:
        return ""
    if col in _BOOL_COLUMNS:
        return "true" if value else "false"
    if col in _INT_COLUMNS:
        return str(int(value))
    return format_float(value)


def write_sweep_csv(path, rows):
    """Write sweep rows (mappings column -> value or None) as CSV.

    The header and the column order are fixed; unknown keys are rejected
    so a typo cannot silently drop a value.
    """
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        extra = set(row) - set(SWEEP_COLUMNS)
        if extra:
            raise ValueError(f"unknown sweep columns: {sorted(extra)}")
        lines.append(",".join(_format_field(c, row.get(c))
                              for c in SWEEP_COLUMNS))
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


def read_sweep_csv(path):
    """Parse a sweep CSV back into a list of dicts (None for empties)."""
    with open(path, "rb") as fh:
        text = fh.read().decode("ascii")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != ",".join(SWEEP_COLUMNS):
        raise ValueError(f"{path}: missing or wrong CSV header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(SWEEP_COLUMNS):
            raise ValueError(f"{path}: row has {len(parts)} fields, "
                             f"expected {len(SWEEP_COLUMNS)}")
        row = {}
        for col, field in zip(SWEEP_COLUMNS, parts):
            if field == "":
                row[col] = None
            elif col in _BOOL_COLUMNS:
                row[col] = field == "true"
            elif col in _INT_COLUMNS:
                row[col] = int(field)
            else:
                row[col] = float(field)
        rows.append(row)
    return rows


# -- flat key=value files ----------------------------------------------------

def read_kv(path):
    """Parse a flat key=value file; # starts a full-line comment."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def write_kv(path, mapping):
    """Write a mapping as key = value lines in insertion order."""
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
