"""File formats: LIBSVM text, PGM images and ``key = value`` experiment configs."""
from __future__ import annotations

import io
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


class ParseError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _text(src):
    if hasattr(src, "read"):
        data = src.read()
        return data.decode() if isinstance(data, bytes) else data
    with open(src, encoding="utf-8") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# LIBSVM


@dataclass
class SparseDataset:
    rows: int
    cols: int
    entries: list = field(default_factory=list)
    labels: np.ndarray | None = None

    def to_csr(self) -> sparse.csr_matrix:
        if not self.entries:
            return sparse.csr_matrix((self.rows, self.cols))
        r, c, v = zip(*self.entries)
        return sparse.csr_matrix((v, (r, c)), shape=(self.rows, self.cols))


def parse_libsvm(src, classification: bool = False, n_features: int | None = None) -> SparseDataset:
    """Reads ``label idx:val ...`` lines; indices are 1-based and strictly increasing."""
    entries, labels = [], []
    cols = 0
    for lineno, raw in enumerate(_text(src).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        try:
            lab = float(toks[0])
        except ValueError:
            raise ParseError(f"bad label {toks[0]!r}", lineno) from None
        if classification and lab not in (1.0, -1.0):
            raise ParseError(f"label must be +1 or -1, got {toks[0]!r}", lineno)
        row = len(labels)
        prev = 0
        for tok in toks[1:]:
            m = re.fullmatch(r"(\d+):(\S+)", tok)
            if m is None:
                raise ParseError(f"malformed token {tok!r}", lineno)
            idx = int(m.group(1))
            try:
                val = float(m.group(2))
            except ValueError:
                raise ParseError(f"bad value in {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"indices are 1-based, got {idx}", lineno)
            if idx <= prev:
                raise ParseError(f"indices must be increasing, {idx} after {prev}", lineno)
            if n_features is not None and idx > n_features:
                raise ParseError(f"index {idx} exceeds {n_features} features", lineno)
            prev = idx
            entries.append((row, idx - 1, val))
            cols = max(cols, idx)
        labels.append(lab)
    if n_features is not None:
        cols = n_features
    return SparseDataset(len(labels), cols, entries, np.asarray(labels, dtype=float))


def write_libsvm(ds: SparseDataset, dest=None) -> str:
    by_row = [[] for _ in range(ds.rows)]
    for r, c, v in sorted(ds.entries):
        by_row[r].append(f"{c + 1}:{v!r}")
    labels = ds.labels if ds.labels is not None else np.zeros(ds.rows)
    lines = []
    for lab, toks in zip(labels, by_row):
        head = f"{int(lab):+d}" if float(lab).is_integer() else repr(float(lab))
        lines.append(" ".join([head] + toks))
    text = "\n".join(lines) + ("\n" if lines else "")
    if dest is not None:
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
    return text


def dataset_from_arrays(X, y=None) -> SparseDataset:
    X = sparse.coo_matrix(X)
    entries = [(int(r), int(c), float(v)) for r, c, v in zip(X.row, X.col, X.data) if v != 0]
    return SparseDataset(X.shape[0], X.shape[1], entries, None if y is None else np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# PGM


def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    toks, pos = [], 0
    while len(toks) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        toks.append(data[start:pos])
    return toks, pos


def read_pgm(path) -> np.ndarray:
    """Returns a float image scaled to ``[0, 1]`` (row-major, shape ``(rows, cols)``)."""
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as fh:
            data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise ParseError(f"bad magic {data[:2]!r}")
    toks, pos = _pgm_tokens(data, 4)
    try:
        cols, rows, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise ParseError("non-integer PGM header field") from None
    if cols < 1 or rows < 1:
        raise ParseError(f"bad dimensions {cols}x{rows}")
    if not 0 < maxval <= 65535:
        raise ParseError(f"maxval must lie in 1..65535, got {maxval}")
    n = rows * cols
    if toks[0] == b"P2":
        vals = data[pos:].split()
        if len(vals) < n:
            raise ParseError(f"expected {n} pixels, found {len(vals)}")
        img = np.array([int(v) for v in vals[:n]], dtype=float)
    else:
        body = data[pos + 1:]
        width = 2 if maxval > 255 else 1
        if len(body) < n * width:
            raise ParseError(f"expected {n * width} bytes of pixel data, found {len(body)}")
        img = np.frombuffer(body[:n * width], dtype=">u2" if width == 2 else np.uint8).astype(float)
    if np.any(img > maxval):
        raise ParseError("pixel value exceeds maxval")
    return img.reshape(rows, cols) / maxval


def write_pgm(path, image, maxval: int = 255) -> None:
    """Writes binary P5; ``image`` values are clipped to ``[0, 1]``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("image must be a nonempty 2-D array")
    if not 0 < maxval <= 65535:
        raise ValueError("maxval must lie in 1..65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(">u2" if maxval > 255 else np.uint8)
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    if hasattr(path, "write"):
        path.write(head + q.tobytes())
    else:
        with open(path, "wb") as fh:
            fh.write(head + q.tobytes())


# ---------------------------------------------------------------------------
# config files


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "auto"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config(src) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may be dotted."""
    out = {}
    text = _text(src) if hasattr(src, "read") or os.path.exists(str(src)) else str(src)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][\w-]*(\.[A-Za-z_][\w-]*)*", key):
            raise ParseError(f"bad key {key!r}", lineno)
        out[key] = _coerce(val)
    return out


def format_config(cfg: dict) -> str:
    buf = io.StringIO()
    for k in sorted(cfg):
        buf.write(f"{k} = {cfg[k]}\n")
    return buf.getvalue()
