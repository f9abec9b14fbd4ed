"""Legacy ASCII VTK dump of a mesh and its displacement field (viewable in ParaView)."""
from __future__ import annotations

import numpy as np

from .fem import Mesh

VTK_QUAD = 9


def write_vtk(path, mesh: Mesh, displacement=None, title="vtire load solve"):
    n = mesh.n_nodes
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.nodes]
    ne = len(mesh.elements)
    lines.append(f"CELLS {ne} {5 * ne}")
    lines += ["4 " + " ".join(str(int(i)) for i in conn) for conn in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += [str(VTK_QUAD)] * ne
    lines += [f"CELL_DATA {ne}", "SCALARS material int 1", "LOOKUP_TABLE default"]
    lines += [str(int(m)) for m in mesh.material_id]
    if displacement is not None:
        u = np.asarray(displacement, dtype=np.float64).reshape(n, 2)
        lines += [f"POINT_DATA {n}", "VECTORS displacement double"]
        lines += [f"{float(a)!r} {float(b)!r} 0.0" for a, b in u]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_vtk_points(path):
    """Node coordinates and (if present) displacement vectors from a file written above."""
    with open(path) as fh:
        toks = fh.read().split("\n")
    i = next(k for k, t in enumerate(toks) if t.startswith("POINTS"))
    n = int(toks[i].split()[1])
    pts = np.array([[float(v) for v in t.split()[:2]] for t in toks[i + 1:i + 1 + n]])
    disp = None
    for k, t in enumerate(toks):
        if t.startswith("VECTORS displacement"):
            disp = np.array([[float(v) for v in s.split()[:2]] for s in toks[k + 1:k + 1 + n]])
    return pts, disp
