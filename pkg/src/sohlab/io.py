"""CSV serialization with atomic writes.

Floats are written with ``repr`` so files are exact and byte-stable across
reruns.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import tempfile
from pathlib import Path

import numpy as np


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the final file the usual permissions
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def trajectory_rows(ens):
    """Rows ``t,k,x1..xm,v1..vm`` for one ensemble snapshot."""
    for k in range(ens.n):
        yield (ens.t, k, *ens.x[k], *ens.v[k])


def trajectory_header(m):
    return ("t", "k", *(f"x{a + 1}" for a in range(m)), *(f"v{a + 1}" for a in range(m)))


def field_header(grid, m):
    idx = ("i", "j")[:grid.dims]
    pos = ("x", "y")[:grid.dims]
    return ("t", *idx, *pos, "rho", *(f"u{a + 1}" for a in range(m)))


def field_rows(fields):
    """Rows ``t,i[,j],x[,y],rho,u1..um``; invalid cells carry ``u = 0``."""
    grid = fields.grid
    centers = [grid.centers(a) for a in range(grid.dims)]
    u = np.where(fields.valid[..., None], fields.u, 0.0)
    for index in np.ndindex(*grid.cells):
        pos = [centers[a][index[a]] for a in range(grid.dims)]
        yield (fields.t, *index, *pos, fields.rho[index], *u[index])


def read_csv(path):
    """Header and rows (as strings) of a CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)
