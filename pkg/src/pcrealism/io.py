"""Point-cloud files.

Formats, chosen by extension:

``.xyz`` / ``.txt``
    ASCII, one ``x y z`` per line, floats written with ``repr`` so a
    save/load/save cycle is byte-identical.
``.f32``
    Headerless little-endian float32 ``x, y, z`` triples.
``.bin``
    Headerless little-endian float32 ``x, y, z, intensity`` quadruples
    (KITTI layout); intensity is discarded on load.
``.ply``
    ASCII PLY with ``x y z`` as float and optional ``red green blue`` as
    uchar. Written for visualisation; the loader reads back the xyz.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pcgen import PointCloud


class FormatError(ValueError):
    """Malformed input; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} at byte offset {offset}")
        self.offset = offset
        self.path = path


def _as_points(pc):
    return pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)


def write_xyz(path, pc) -> None:
    pts = _as_points(pc).tolist()
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for x, y, z in pts:
            f.write(f"{x!r} {y!r} {z!r}\n")


def read_xyz(path) -> PointCloud:
    data = Path(path).read_bytes()
    pts = []
    offset = 0
    for line in data.splitlines(keepends=True):
        text = line.strip()
        if text and not text.startswith(b"#"):
            parts = text.split()
            if len(parts) < 3:
                raise FormatError("expected 'x y z'", offset, path)
            try:
                pts.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise FormatError(f"cannot parse {text[:40]!r}", offset, path) from None
        offset += len(line)
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))


def write_binary(path, pc, columns: int = 3) -> None:
    pts = _as_points(pc).astype("<f4")
    if columns == 4:
        pts = np.concatenate([pts, np.zeros((len(pts), 1), "<f4")], axis=1)
    elif columns != 3:
        raise ValueError("columns must be 3 or 4")
    Path(path).write_bytes(np.ascontiguousarray(pts).tobytes())


def read_binary(path, columns: int = 3) -> PointCloud:
    data = Path(path).read_bytes()
    rec = 4 * columns
    if len(data) % rec:
        bad = len(data) - len(data) % rec
        raise FormatError(f"truncated {columns}-column float32 record", bad, path)
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, columns)
    finite = np.isfinite(arr[:, :3]).all(axis=1)
    if not finite.all():
        raise FormatError("non-finite coordinate", int(np.argmin(finite)) * rec, path)
    return PointCloud(arr[:, :3].astype(np.float64))


def write_ply(path, pc, colors=None) -> None:
    pts = _as_points(pc)
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != (len(pts), 3):
            raise ValueError("colors must be [N, 3]")
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(header) + "\n")
        for i, (x, y, z) in enumerate(pts.astype(np.float32).tolist()):
            if colors is None:
                f.write(f"{x!r} {y!r} {z!r}\n")
            else:
                r, g, b = colors[i].tolist()
                f.write(f"{x!r} {y!r} {z!r} {r} {g} {b}\n")


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("not an ASCII PLY file", 0, path)
    header = data[:end].decode("ascii", "replace").splitlines()
    if "format ascii 1.0" not in [h.strip() for h in header]:
        raise FormatError("only ASCII PLY is supported", 0, path)
    n = None
    for h in header:
        if h.startswith("element vertex"):
            n = int(h.split()[2])
    if n is None:
        raise FormatError("missing vertex element", 0, path)
    offset = data.index(b"\n", end) + 1
    pts = []
    for line in data[offset:].splitlines(keepends=True)[:n]:
        parts = line.split()
        try:
            pts.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except (ValueError, IndexError):
            raise FormatError("bad vertex line", offset, path) from None
        offset += len(line)
    if len(pts) != n:
        raise FormatError(f"expected {n} vertices, found {len(pts)}", offset, path)
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))


def load_cloud(path) -> PointCloud:
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".xyz", ".txt"):
        pc = read_xyz(path)
    elif ext == ".f32":
        pc = read_binary(path, 3)
    elif ext == ".bin":
        pc = read_binary(path, 4)
    elif ext == ".ply":
        pc = read_ply(path)
    else:
        raise ValueError(f"unsupported point-cloud extension {ext!r}")
    pc.meta["source"] = str(path)
    return pc


def save_cloud(path, pc, colors=None) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".xyz", ".txt"):
        write_xyz(path, pc)
    elif ext == ".f32":
        write_binary(path, pc, 3)
    elif ext == ".bin":
        write_binary(path, pc, 4)
    elif ext == ".ply":
        write_ply(path, pc, colors)
    else:
        raise ValueError(f"unsupported point-cloud extension {ext!r}")
