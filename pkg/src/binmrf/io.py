"""File formats: images, covariates, labelled vectors and state streams.

Every write goes to a temporary file in the target directory and is renamed
into place, so an interrupted run never leaves a truncated output.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .configsets import ConfigCatalog
from .errors import DataIOError, ValidationError
from .lattice import Boundary, LatticeSpec
from .model import BinaryImage, CovariateField, PartitionState

PathLike = Union[str, os.PathLike]


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, mode) as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


# -- images ------------------------------------------------------------------------

def parse_text_grid(text: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Rows of ``0``/``1`` characters; ``.`` marks a node outside the region."""
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise ValidationError("image file has no rows")
    rows = [ln.replace(" ", "") for ln in rows]
    if len({len(r) for r in rows}) != 1:
        raise ValidationError("image rows have different lengths")
    bad = {ch for r in rows for ch in r} - set("01.")
    if bad:
        raise ValidationError(f"image contains characters other than 0, 1 and '.': {sorted(bad)}")
    grid = np.array([list(r) for r in rows])
    mask = grid != "."
    data = (grid == "1").astype(np.uint8)
    return data, (None if mask.all() else mask)


def _pbm_tokens(raw: bytes):
    """Yield header tokens, skipping comments; returns the offset after the header."""
    pos, tokens = 0, []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError("truncated PBM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def parse_pbm(raw: bytes) -> np.ndarray:
    tokens, offset = _pbm_tokens(raw)
    magic, width, height = tokens[0], int(tokens[1]), int(tokens[2])
    if magic == b"P1":
        body = raw[offset:].decode("ascii")
        body = "".join(ln.split("#", 1)[0] for ln in body.splitlines())
        bits = [int(ch) for ch in body if ch in "01"]
        if len(bits) != width * height:
            raise ValidationError("P1 body does not match its size")
        return np.array(bits, dtype=np.uint8).reshape(height, width)
    if magic == b"P4":
        stride = (width + 7) // 8
        body = np.frombuffer(raw[offset:offset + stride * height], dtype=np.uint8)
        if body.size != stride * height:
            raise ValidationError("P4 body is truncated")
        bits = np.unpackbits(body.reshape(height, stride), axis=1)[:, :width]
        return bits.astype(np.uint8)
    raise ValidationError(f"unsupported PBM magic {magic!r}")


def read_image(path: PathLike, boundary: Union[str, Boundary] = Boundary.TORUS) -> BinaryImage:
    """Read a text grid or PBM (P1/P4) image; 1 means 'on' in both formats."""
    raw = _read_bytes(path)
    boundary = Boundary(boundary)
    if raw[:2] in (b"P1", b"P4"):
        data, mask = parse_pbm(raw), None
    else:
        try:
            data, mask = parse_text_grid(raw.decode("ascii"))
        except UnicodeDecodeError:
            raise ValidationError(f"{path} is neither a text grid nor a PBM image") from None
    if mask is not None and boundary is Boundary.TORUS:
        raise ValidationError("masked ('.') nodes need the free boundary")
    if mask is None:
        spec = LatticeSpec(data.shape[0], data.shape[1], boundary)
    else:
        spec = LatticeSpec.with_mask(mask)
    return BinaryImage(data, spec)


def format_text_grid(x: BinaryImage) -> str:
    active = x.spec.mask_array
    rows = []
    for i in range(x.spec.n):
        rows.append("".join(("1" if x.data[i, j] else "0") if active[i, j] else "." for j in range(x.spec.m)))
    return "\n".join(rows) + "\n"


def format_pbm(x: BinaryImage, binary: bool = True) -> bytes:
    if x.spec.mask is not None:
        raise ValidationError("PBM cannot store masked nodes; use the text grid")
    n, m = x.data.shape
    if binary:
        return f"P4\n{m} {n}\n".encode() + np.packbits(x.data, axis=1).tobytes()
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in x.data)
    return f"P1\n{m} {n}\n{body}\n".encode()


def write_image(path: PathLike, x: BinaryImage, fmt: str = "text") -> None:
    if fmt == "text":
        atomic_write(path, format_text_grid(x))
    elif fmt in ("pbm", "p4"):
        atomic_write(path, format_pbm(x, binary=True))
    elif fmt == "p1":
        atomic_write(path, format_pbm(x, binary=False))
    else:
        raise ValidationError(f"unknown image format {fmt!r}")


# -- covariates ----------------------------------------------------------------------

def read_covariates(path: PathLike, n: int, m: int) -> tuple[CovariateField, Optional[np.ndarray]]:
    """CSV with columns i, j, y1..yK and an optional ``mask`` column.

    Nodes absent from the file get zero covariates and, when a mask column is
    present, count as outside the region.  Returns the field and the mask.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if "i" not in header or "j" not in header:
        raise ValidationError("covariate CSV needs columns i and j")
    names = [h for h in header if h not in ("i", "j", "mask")]
    if not names:
        raise ValidationError("covariate CSV has no covariate columns")
    y = np.zeros((n, m, len(names)))
    mask = np.zeros((n, m), dtype=bool) if "mask" in header else None
    seen = set()
    for line, row in enumerate(rows, start=2):
        try:
            i, j = int(row["i"]), int(row["j"])
            vals = [float(row[k]) for k in names]
            on = bool(int(row["mask"])) if mask is not None else True
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
        if not (0 <= i < n and 0 <= j < m):
            raise ValidationError(f"{path}:{line}: node ({i},{j}) outside the {n}x{m} lattice")
        if (i, j) in seen:
            raise ValidationError(f"{path}:{line}: node ({i},{j}) listed twice")
        seen.add((i, j))
        y[i, j] = vals
        if mask is not None:
            mask[i, j] = on
    if mask is None and len(seen) != n * m:
        raise ValidationError(f"covariate CSV lists {len(seen)} of {n * m} nodes and has no mask column")
    return CovariateField(y, tuple(names)), mask


def format_covariates(cov: CovariateField, mask: Optional[np.ndarray] = None) -> str:
    n, m, K = cov.y.shape
    lines = [",".join(["i", "j", *cov.names] + (["mask"] if mask is not None else []))]
    for i in range(n):
        for j in range(m):
            cells = [str(i), str(j)] + [repr(float(v)) for v in cov.y[i, j]]
            if mask is not None:
                cells.append("1" if mask[i, j] else "0")
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# -- vectors and states ------------------------------------------------------------------

def parse_vector(text: str, length: Optional[int] = None) -> np.ndarray:
    """Lines of ``class-id value``; ``#`` starts a comment."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValidationError(f"line {lineno}: expected 'class-id value'")
        try:
            cid, val = int(parts[0]), float(parts[1])
        except ValueError:
            raise ValidationError(f"line {lineno}: cannot parse {line!r}") from None
        if cid in entries:
            raise ValidationError(f"line {lineno}: class {cid} given twice")
        entries[cid] = val
    size = length if length is not None else len(entries)
    if sorted(entries) != list(range(size)):
        raise ValidationError(f"vector must list every class id 0..{size - 1} exactly once")
    return np.array([entries[c] for c in range(size)])


def format_vector(values, labels: Optional[Sequence[str]] = None) -> str:
    lines = []
    for cid, v in enumerate(values):
        tail = f"  # {labels[cid]}" if labels is not None else ""
        lines.append(f"{cid} {float(v)!r}{tail}")
    return "\n".join(lines) + "\n"


def read_vector(path: PathLike, length: Optional[int] = None) -> np.ndarray:
    return parse_vector(_read_bytes(path).decode(), length)


def state_line(iteration: int, z: PartitionState) -> str:
    return json.dumps({"iteration": iteration, **z.to_dict()})


def read_states(path: PathLike, catalog: ConfigCatalog) -> list[tuple[int, PartitionState]]:
    out = []
    for lineno, line in enumerate(_read_bytes(path).decode().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        out.append((int(doc.get("iteration", lineno - 1)), PartitionState.from_dict(catalog, doc)))
    return out


def read_state(path: PathLike, catalog: ConfigCatalog) -> PartitionState:
    """A single state document (JSON object)."""
    try:
        doc = json.loads(_read_bytes(path).decode())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return PartitionState.from_dict(catalog, doc)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
