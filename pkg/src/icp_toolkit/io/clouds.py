"""Plain-text point-cloud files: a PLY ASCII subset, XYZ and CSV.

Coordinates are written with 17 significant digits, which round-trips every
double exactly.
"""

import enum
import logging
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from ..core.errors import CloudIoError, InvalidCloud, ParseError, UnsupportedProperty
from ..core.geometry import PointCloud

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_FLOAT_FORMAT = "%.17g"
_PLY_SCALARS = {"float", "float32", "double", "float64"}
_POSITION = ("x", "y", "z")
_NORMAL = ("nx", "ny", "nz")


class CloudFormat(str, enum.Enum):
    PLY_ASCII = "ply"
    XYZ = "xyz"
    CSV = "csv"


_SUFFIXES = {".ply": CloudFormat.PLY_ASCII, ".xyz": CloudFormat.XYZ, ".txt": CloudFormat.XYZ, ".csv": CloudFormat.CSV}


def infer_format(path: PathLike) -> CloudFormat:
    suffix = Path(path).suffix.lower()
    if suffix not in _SUFFIXES:
        raise CloudIoError(f"cannot infer a cloud format from suffix {suffix!r} of {path}")
    return _SUFFIXES[suffix]


def _numbered_lines(text: str) -> Iterator[tuple[int, str]]:
    for number, raw in enumerate(text.splitlines(), start=1):
        yield number, raw.strip()


def _row(values: list[str], number: int) -> list[float]:
    if len(values) not in (3, 6):
        raise ParseError(f"expected 3 or 6 values, found {len(values)}", line=number)
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", line=number) from exc


def _build(rows: list[list[float]], source: str) -> PointCloud:
    if not rows:
        return PointCloud(np.empty((0, 3)))
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParseError(f"{source}: rows mix 3 and 6 columns")
    data = np.array(rows, dtype=np.float64)
    normals = data[:, 3:6] if data.shape[1] == 6 else None
    try:
        return PointCloud(data[:, :3], normals)
    except InvalidCloud as exc:
        raise ParseError(f"{source}: {exc}") from exc


def _parse_delimited(text: str, delimiter: Optional[str], source: str) -> PointCloud:
    rows = []
    for number, line in _numbered_lines(text):
        if not line or line.startswith("#"):
            continue
        values = [v.strip() for v in line.split(delimiter)] if delimiter else line.split()
        rows.append(_row(values, number))
    return _build(rows, source)


def _parse_ply(text: str, source: str) -> PointCloud:
    lines = list(_numbered_lines(text))
    if not lines or lines[0][1] != "ply":
        raise ParseError("missing 'ply' magic", line=1)
    count: Optional[int] = None
    properties: list[str] = []
    in_vertex = False
    body_start: Optional[int] = None
    for position, (number, line) in enumerate(lines[1:], start=1):
        words = line.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        keyword = words[0]
        if keyword == "format":
            if words[1:] != ["ascii", "1.0"]:
                raise ParseError(f"unsupported PLY format {' '.join(words[1:])!r}", line=number)
        elif keyword == "element":
            if len(words) != 3 or words[1] != "vertex":
                raise UnsupportedProperty(f"unsupported PLY element {' '.join(words[1:])!r}", line=number)
            if count is not None:
                raise ParseError("duplicate vertex element", line=number)
            try:
                count = int(words[2])
            except ValueError as exc:
                raise ParseError(f"bad vertex count {words[2]!r}", line=number) from exc
            in_vertex = True
        elif keyword == "property":
            if not in_vertex:
                raise ParseError("property before element", line=number)
            if len(words) != 3 or words[1] not in _PLY_SCALARS:
                raise UnsupportedProperty(f"unsupported PLY property {' '.join(words[1:])!r}", line=number)
            if words[2] not in _POSITION + _NORMAL:
                raise UnsupportedProperty(f"unsupported vertex property {words[2]!r}", line=number)
            properties.append(words[2])
        elif keyword == "end_header":
            body_start = position + 1
            break
        else:
            raise ParseError(f"unexpected header line {line!r}", line=number)
    if body_start is None:
        raise ParseError("PLY header has no end_header")
    if count is None:
        raise ParseError("PLY header declares no vertex element")
    if tuple(properties) not in (_POSITION, _POSITION + _NORMAL):
        raise UnsupportedProperty(f"vertex properties must be x y z [nx ny nz], got {' '.join(properties)}")

    rows = []
    for number, line in lines[body_start:]:
        if not line:
            continue
        if len(rows) == count:
            raise ParseError(f"more than the {count} declared vertices", line=number)
        values = line.split()
        if len(values) != len(properties):
            raise ParseError(f"expected {len(properties)} values, found {len(values)}", line=number)
        rows.append(_row(values, number))
    if len(rows) != count:
        raise ParseError(f"{source}: declared {count} vertices, found {len(rows)}")
    return _build(rows, source)


def read_text(path: PathLike) -> str:
    """File contents as UTF-8; undecodable bytes are a :class:`ParseError` at their line."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CloudIoError(f"cannot read {path}: {exc}") from exc
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise ParseError(f"{path}: not valid UTF-8 at byte {exc.start}", line=line) from exc


def read_cloud(path: PathLike, format: Optional[CloudFormat] = None) -> PointCloud:
    """Read a cloud; the format is inferred from the suffix when not given."""
    fmt = format or infer_format(path)
    text = read_text(path)
    source = str(path)
    if fmt is CloudFormat.PLY_ASCII:
        cloud = _parse_ply(text, source)
    elif fmt is CloudFormat.CSV:
        cloud = _parse_delimited(text, ",", source)
    else:
        cloud = _parse_delimited(text, None, source)
    logger.debug("read %d points from %s", len(cloud), path)
    return cloud


def _rows(cloud: PointCloud) -> np.ndarray:
    if cloud.normals is not None:
        return np.hstack([cloud.points, cloud.normals])
    return cloud.points


def format_cloud(cloud: PointCloud, format: CloudFormat) -> str:
    rows = _rows(cloud)
    delimiter = "," if format is CloudFormat.CSV else " "
    body = "".join(delimiter.join(_FLOAT_FORMAT % v for v in row) + "\n" for row in rows)
    if format is not CloudFormat.PLY_ASCII:
        return body
    names = _POSITION + (_NORMAL if cloud.normals is not None else ())
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property double {name}" for name in names]
    header.append("end_header")
    return "\n".join(header) + "\n" + body


def write_cloud(cloud: PointCloud, path: PathLike, format: Optional[CloudFormat] = None) -> None:
    fmt = format or infer_format(path)
    try:
        Path(path).write_text(format_cloud(cloud, fmt), encoding="utf-8")
    except OSError as exc:
        raise CloudIoError(f"cannot write {path}: {exc}") from exc
    logger.debug("wrote %d points to %s", len(cloud), path)
