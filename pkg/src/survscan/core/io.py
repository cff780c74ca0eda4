"""Point-cloud file formats.

``xyz_ascii``
    One point per line, whitespace separated ``x y z [intensity] [r g b]``
    (3, 4, 6 or 7 columns, constant within a file). ``#`` lines are comments.

``sspc_binary``
    Little-endian native format::

        magic   4s   b"SSPC"
        version u16  1
        fields  u16  bit0 intensity, bit1 rgb, bit2 class
        count   u64
        frame   32s  utf-8, zero padded
        epoch   i64  Unix seconds, -1 if absent

    followed by ``count`` packed records of ``3 x f64`` coordinates and
    the optional ``f32`` intensity, ``3 x u8`` rgb and ``u8`` class.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError
from .cloud import CLASS_CODES, PointCloud

XYZ_ASCII = "xyz_ascii"
SSPC_BINARY = "sspc_binary"
FORMATS = (XYZ_ASCII, SSPC_BINARY)

MAGIC = b"SSPC"
VERSION = 1
HAS_INTENSITY = 1
HAS_RGB = 2
HAS_CLASS = 4
_HEADER = struct.Struct("<4sHHQ32sq")
_FRAME_BYTES = 32

_EXTENSIONS = {
    ".xyz": XYZ_ASCII,
    ".txt": XYZ_ASCII,
    ".pts": XYZ_ASCII,
    ".sspc": SSPC_BINARY,
}


def guess_format(path) -> str:
    """Format implied by a file extension (``.sspc`` binary, else ASCII)."""
    return _EXTENSIONS.get(Path(path).suffix.lower(), XYZ_ASCII)


def _record_dtype(mask: int) -> np.dtype:
    fields = [("xyz", "<f8", (3,))]
    if mask & HAS_INTENSITY:
        fields.append(("intensity", "<f4"))
    if mask & HAS_RGB:
        fields.append(("rgb", "u1", (3,)))
    if mask & HAS_CLASS:
        fields.append(("cls", "u1"))
    return np.dtype(fields)


def read_cloud(path, format: str | None = None, frame: str | None = None) -> PointCloud:
    """Load a cloud from ``path``.

    ``frame`` sets the frame tag of ASCII clouds (which carry none); it is
    ignored for the binary format, whose header records the frame.
    """
    fmt = format or guess_format(path)
    if fmt == XYZ_ASCII:
        return _read_xyz(Path(path), frame)
    if fmt == SSPC_BINARY:
        return _read_sspc(Path(path))
    raise ValidationError(f"unknown cloud format {fmt!r}; expected one of {FORMATS}")


def write_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    fmt = format or guess_format(path)
    try:
        if fmt == XYZ_ASCII:
            _write_xyz(cloud, Path(path))
        elif fmt == SSPC_BINARY:
            _write_sspc(cloud, Path(path))
        else:
            raise ValidationError(f"unknown cloud format {fmt!r}; expected one of {FORMATS}")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write point cloud: {exc.strerror}", str(path)) from exc


def _read_xyz(path: Path, frame: str | None) -> PointCloud:
    rows = []
    line_numbers = []
    ncols = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) not in (3, 4, 6, 7):
                raise FormatError(
                    f"expected 3, 4, 6 or 7 columns, found {len(tokens)}", path, lineno
                )
            if ncols is None:
                ncols = len(tokens)
            elif len(tokens) != ncols:
                raise FormatError(
                    f"column count changed from {ncols} to {len(tokens)}", path, lineno
                )
            rows.append(tokens)
            line_numbers.append(lineno)

    kwargs = {"source": str(path)}
    if frame is not None:
        kwargs["frame"] = frame
    if not rows:
        return PointCloud(np.empty((0, 3)), **kwargs)

    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError:
        for tokens, lineno in zip(rows, line_numbers):
            for tok in tokens:
                try:
                    float(tok)
                except ValueError:
                    raise FormatError(f"cannot parse number {tok!r}", path, lineno) from None
        raise

    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        raise FormatError("non-finite value", path, line_numbers[int(np.flatnonzero(bad)[0])])

    xyz = table[:, :3]
    intensity = None
    rgb = None
    if ncols in (4, 7):
        intensity = table[:, 3]
        out = (intensity < 0) | (intensity > 1)
        if out.any():
            raise FormatError("intensity outside [0, 1]", path, line_numbers[int(np.flatnonzero(out)[0])])
    if ncols in (6, 7):
        rgb_raw = table[:, ncols - 3:]
        out = ((rgb_raw < 0) | (rgb_raw > 255) | (rgb_raw != np.round(rgb_raw))).any(axis=1)
        if out.any():
            raise FormatError("rgb must be integers in 0..255", path, line_numbers[int(np.flatnonzero(out)[0])])
        rgb = rgb_raw.astype(np.uint8)
    return PointCloud(xyz, intensity=intensity, rgb=rgb, **kwargs)


def _write_xyz(cloud: PointCloud, path: Path) -> None:
    # repr gives the shortest string that parses back to the same double.
    lines = []
    xyz = cloud.xyz.tolist()
    inten = None if cloud.intensity is None else cloud.intensity.tolist()
    rgb = None if cloud.rgb is None else cloud.rgb.tolist()
    for i, (x, y, z) in enumerate(xyz):
        parts = [repr(x), repr(y), repr(z)]
        if inten is not None:
            parts.append(repr(inten[i]))
        if rgb is not None:
            parts.extend(str(c) for c in rgb[i])
        lines.append(" ".join(parts))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if lines:
            fh.write("\n".join(lines))
            fh.write("\n")


def _encode_frame(frame: str) -> bytes:
    raw = frame.encode("utf-8")
    if len(raw) > _FRAME_BYTES:
        raise ValidationError(f"frame tag longer than {_FRAME_BYTES} bytes: {frame!r}")
    return raw.ljust(_FRAME_BYTES, b"\0")


def _write_sspc(cloud: PointCloud, path: Path) -> None:
    mask = HAS_CLASS
    if cloud.intensity is not None:
        mask |= HAS_INTENSITY
    if cloud.rgb is not None:
        mask |= HAS_RGB
    dtype = _record_dtype(mask)
    records = np.zeros(len(cloud), dtype=dtype)
    records["xyz"] = cloud.xyz
    if mask & HAS_INTENSITY:
        records["intensity"] = cloud.intensity.astype("<f4")
    if mask & HAS_RGB:
        records["rgb"] = cloud.rgb
    records["cls"] = cloud.classification
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        mask,
        len(cloud),
        _encode_frame(cloud.frame),
        -1 if cloud.epoch is None else int(cloud.epoch),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def _read_sspc(path: Path) -> PointCloud:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", path)
    magic, version, mask, count, frame_raw, epoch = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path)
    if mask & ~(HAS_INTENSITY | HAS_RGB | HAS_CLASS):
        raise FormatError(f"unknown field bits in mask {mask:#x}", path)
    dtype = _record_dtype(mask)
    body = memoryview(data)[_HEADER.size:]
    expected = count * dtype.itemsize
    if len(body) != expected:
        complete = len(body) // dtype.itemsize
        raise FormatError(
            f"record {complete}: body holds {len(body)} bytes, header promises {count} records ({expected} bytes)",
            path,
        )
    records = np.frombuffer(body, dtype=dtype, count=count)
    xyz = records["xyz"].astype(np.float64)
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        raise FormatError(f"record {int(np.flatnonzero(bad)[0])}: non-finite coordinate", path)
    labels = None
    if mask & HAS_CLASS:
        labels = records["cls"]
        bad = ~np.isin(labels, CLASS_CODES)
        if bad.any():
            raise FormatError(f"record {int(np.flatnonzero(bad)[0])}: unknown class code", path)
    try:
        frame = frame_raw.rstrip(b"\0").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("frame tag is not valid utf-8", path) from exc
    return PointCloud(
        xyz,
        intensity=records["intensity"].astype(np.float64) if mask & HAS_INTENSITY else None,
        rgb=records["rgb"] if mask & HAS_RGB else None,
        classification=labels,
        frame=frame,
        epoch=None if epoch == -1 else epoch,
        source=str(path),
    )
