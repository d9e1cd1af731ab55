"""File formats: binary PLY clouds, pose trajectories, CSV tables.

PLY dialect: ``format binary_little_endian 1.0`` with a ``vertex`` element
carrying ``x y z`` and optionally ``doppler`` and ``nx ny nz``.  The scan
period travels in a ``comment period_s <value>`` header line.  Any other
fixed-size property or element is skipped on read.

Trajectory files hold one pose per line::

    timestamp tx ty tz qx qy qz qw
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path

import numpy as np

from .cloud import DopplerPointCloud
from .errors import CloudFormatError
from .se3 import RigidTransform, quat_to_rotation, rotation_to_quat

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}
_PRECISION = {"float": "<f4", "double": "<f8"}
QUAT_NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def write_cloud(cloud: DopplerPointCloud, path, precision: str = "float") -> None:
    """Write ``cloud`` as binary little-endian PLY.

    ``precision="float"`` stores 32-bit values (the interchange dialect);
    ``"double"`` keeps float64 so that any cloud round-trips exactly.
    """
    if precision not in _PRECISION:
        raise ValueError(f"precision must be 'float' or 'double', got {precision!r}")
    ftype = _PRECISION[precision]
    names = ["x", "y", "z"]
    cols = [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2]]
    if cloud.doppler is not None:
        names.append("doppler")
        cols.append(cloud.doppler)
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        cols += [cloud.normals[:, 0], cloud.normals[:, 1], cloud.normals[:, 2]]
    rows = np.empty(len(cloud), dtype=[(n, ftype) for n in names])
    for n, c in zip(names, cols):
        rows[n] = c
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment period_s {cloud.period_s!r}",
        f"comment timestamp_s {cloud.timestamp_s!r}",
        f"comment frame_id {cloud.frame_id}",
        f"element vertex {len(cloud)}",
    ]
    header += [f"property {precision} {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())


def _parse_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise CloudFormatError(f"{path}: not a PLY file")
    comments: dict[str, str] = {}
    elements: list[tuple[str, int, list]] = []
    fmt = None
    while True:
        raw = fh.readline()
        if not raw:
            raise CloudFormatError(f"{path}: header has no end_header line")
        line = raw.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "format":
            fmt = parts[1:]
        elif key in ("comment", "obj_info"):
            if len(parts) >= 3:
                comments[parts[1]] = " ".join(parts[2:])
        elif key == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path}: malformed element line {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise CloudFormatError(f"{path}: bad element count in {line!r}") from None
            if count < 0:
                raise CloudFormatError(f"{path}: negative element count in {line!r}")
            elements.append((parts[1], count, []))
        elif key == "property":
            if not elements:
                raise CloudFormatError(f"{path}: property before any element")
            if len(parts) >= 2 and parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1][2].append((_PLY_TYPES[parts[1]], parts[2]))
            else:
                raise CloudFormatError(f"{path}: malformed property line {line!r}")
        else:
            raise CloudFormatError(f"{path}: unexpected header line {line!r}")
    if fmt is None or fmt[0] != "binary_little_endian":
        raise CloudFormatError(f"{path}: only binary_little_endian PLY is supported (got {fmt})")
    return comments, elements


def read_cloud(path) -> DopplerPointCloud:
    """Read a PLY written by :func:`write_cloud` or any compatible tool.

    A missing ``doppler`` property yields ``doppler=None``; registration
    modes that need the channel reject such clouds later.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        comments, elements = _parse_header(fh, path)
        payload = fh.read()

    offset = 0
    vertex = None
    for name, count, props in elements:
        if any(t == "list" for t, _ in props):
            if name == "vertex" or vertex is None:
                raise CloudFormatError(f"{path}: list properties in element {name!r} are not supported")
            break  # everything the reader needs has been decoded
        dtype = np.dtype([(p, t) for t, p in props])
        size = dtype.itemsize * count
        if offset + size > len(payload):
            raise CloudFormatError(
                f"{path}: truncated payload in element {name!r} "
                f"(need {size} bytes at offset {offset}, file has {len(payload) - offset})")
        if name == "vertex":
            vertex = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        offset += size
    if vertex is None:
        raise CloudFormatError(f"{path}: no vertex element")

    fields = vertex.dtype.names or ()
    for axis in "xyz":
        if axis not in fields:
            raise CloudFormatError(f"{path}: vertex element lacks property {axis!r}")
    if "period_s" not in comments:
        raise CloudFormatError(f"{path}: header lacks 'comment period_s <value>'")
    try:
        period = float(comments["period_s"])
        stamp = float(comments.get("timestamp_s", "0"))
    except ValueError as exc:
        raise CloudFormatError(f"{path}: bad numeric header comment ({exc})") from None

    positions = np.stack([vertex[a].astype(float) for a in "xyz"], axis=1)
    doppler = vertex["doppler"].astype(float) if "doppler" in fields else None
    normals = None
    if all(n in fields for n in ("nx", "ny", "nz")):
        normals = np.stack([vertex[n].astype(float) for n in ("nx", "ny", "nz")], axis=1)
    try:
        return DopplerPointCloud(positions, doppler, normals, period_s=period,
                                 frame_id=comments.get("frame_id", "lidar"), timestamp_s=stamp)
    except ValueError as exc:
        raise CloudFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def write_trajectory(path, timestamps, poses) -> None:
    """One ``timestamp tx ty tz qx qy qz qw`` line per pose, full float precision."""
    timestamps = [float(t) for t in timestamps]
    poses = list(poses)
    if len(timestamps) != len(poses):
        raise ValueError(f"{len(timestamps)} timestamps for {len(poses)} poses")
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("timestamps must be strictly increasing")
    lines = []
    for t, T in zip(timestamps, poses):
        q = rotation_to_quat(T.rotation)
        vals = [t, *T.translation, q[0], q[1], q[2], q[3]]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_trajectory(path) -> tuple[np.ndarray, list[RigidTransform]]:
    """Return ``(timestamps, poses)`` sorted by timestamp.

    Blank lines and ``#`` comments are ignored.  Raises
    :class:`CloudFormatError` on a malformed row, a quaternion whose norm is
    off by more than 1e-6, or repeated timestamps.
    """
    path = Path(path)
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise CloudFormatError(f"{path}:{lineno}: expected 8 columns, found {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise CloudFormatError(f"{path}:{lineno}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise CloudFormatError(f"{path}:{lineno}: non-finite value")
        q = np.array(vals[4:])
        if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise CloudFormatError(f"{path}:{lineno}: quaternion norm {np.linalg.norm(q):.9f} is not 1")
        rows.append((vals[0], lineno, vals[1:4], q))
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if b[0] <= a[0]:
            raise CloudFormatError(f"{path}: timestamp {b[0]!r} repeats (lines {a[1]} and {b[1]})")
    stamps = np.array([r[0] for r in rows])
    poses = [RigidTransform(quat_to_rotation(q / np.linalg.norm(q)), t) for _, _, t, q in rows]
    return stamps, poses


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def format_number(x) -> str:
    """Deterministic text for CSV cells: integers verbatim, reals with 10 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return f"{x:.10g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    if not r:
        raise CloudFormatError(f"{path}: empty CSV")
    return r[0], r[1:]


def write_gnuplot_xy(path, trajectories: dict) -> None:
    """Columns ``index x_<name> y_<name> ...`` for plotting several trajectories.

    Plot with ``plot 'file' using 2:3 with lines, '' using 4:5 with lines``.
    All trajectories must have the same length.
    """
    names = list(trajectories)
    if not names:
        raise ValueError("no trajectories to write")
    lengths = {len(trajectories[n]) for n in names}
    if len(lengths) != 1:
        raise ValueError("trajectories differ in length")
    cols = [c for n in names for c in (f"x_{n}", f"y_{n}")]
    lines = ["# index " + " ".join(cols)]
    for i in range(lengths.pop()):
        vals = []
        for n in names:
            t = trajectories[n][i].translation
            vals += [format_number(t[0]), format_number(t[1])]
        lines.append(" ".join([str(i), *vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def scan_paths(directory) -> list[Path]:
    """``*.ply`` files in ``directory`` in lexicographic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"scan directory {directory} does not exist")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".ply")
    if not paths:
        raise FileNotFoundError(f"no .ply files in {directory}")
    return paths


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
