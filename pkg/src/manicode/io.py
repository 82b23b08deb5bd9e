"""File formats: binary matrices, key=value configs, dictionary sidecars, metric CSVs and SVG scatters."""

import csv
import io as _io
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

MAGIC = b"MTXF"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    pass


def matrix_to_bytes(m):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError(f"matrix must be 2-D, got shape {a.shape}")
    rows, cols = a.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(a, dtype="<f8").tobytes()


def matrix_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated matrix header")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported matrix version {version}")
    expected = 8 * rows * cols
    payload = buf[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_matrix(path, m):
    Path(path).write_bytes(matrix_to_bytes(m))


def read_matrix(path):
    return matrix_from_bytes(Path(path).read_bytes())


def _coerce(text, typ, key):
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if name == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if name == "int":
            return int(text)
        if name == "float":
            return float(text)
    except ValueError as err:
        raise FormatError(f"bad value for {key}: {text!r}") from err
    return text


def parse_config(text, cls):
    """Parse ``key=value`` lines into dataclass ``cls``; '#' starts a comment, unknown keys are rejected."""
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        kw[key] = _coerce(val, types[key], key)
    return cls(**kw)


def serialize_config(cfg):
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name}={v}")
    return "\n".join(out) + "\n"


def read_config(path, cls):
    return parse_config(Path(path).read_text(), cls)


def write_dictionary(path, dictionary):
    """Atoms as a matrix file plus a ``.meta`` sidecar with the learning state."""
    path = Path(path)
    write_matrix(path, dictionary.atoms)
    cap = "none" if dictionary.norm_cap is None else repr(float(dictionary.norm_cap))
    meta = f"lr={dictionary.lr!r}\nstep_count={dictionary.step_count}\nnorm_cap={cap}\n"
    path.with_name(path.name + ".meta").write_text(meta)


def read_dictionary(path):
    from .dictionary import Dictionary

    path = Path(path)
    atoms = read_matrix(path)
    side = path.with_name(path.name + ".meta")
    kw = {}
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kw[k.strip()] = v.strip()
    return Dictionary(
        atoms,
        lr=float(kw.get("lr", 2e-3)),
        step_count=int(kw.get("step_count", 0)),
        norm_cap=None if kw.get("norm_cap", "none") == "none" else float(kw["norm_cap"]),
    )


def metrics_csv(rows, header):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def read_metrics_csv(text):
    reader = csv.reader(_io.StringIO(text))
    header = next(reader)
    return header, [list(r) for r in reader]


def scatter_svg(samples, centers=None, size=800, lim=3.0):
    """SVG scatter on a fixed [-lim, lim]^2 window: samples as dots, real modes as crosses."""
    pts = np.asarray(samples, dtype=float)

    def px(x, y):
        return (x + lim) / (2 * lim) * size, (lim - y) / (2 * lim) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="0" y1="{size / 2:.2f}" x2="{size}" y2="{size / 2:.2f}" stroke="#ccc"/>',
        f'<line x1="{size / 2:.2f}" y1="0" x2="{size / 2:.2f}" y2="{size}" stroke="#ccc"/>',
    ]
    for x, y in pts.T:
        if abs(x) <= lim and abs(y) <= lim:
            cx, cy = px(x, y)
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2" fill="#1f77b4" fill-opacity="0.5"/>')
    if centers is not None:
        for x, y in np.asarray(centers, dtype=float).T:
            cx, cy = px(x, y)
            parts.append(
                f'<path d="M{cx - 6:.2f} {cy - 6:.2f}L{cx + 6:.2f} {cy + 6:.2f}'
                f'M{cx - 6:.2f} {cy + 6:.2f}L{cx + 6:.2f} {cy - 6:.2f}" stroke="#d62728" stroke-width="2"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
