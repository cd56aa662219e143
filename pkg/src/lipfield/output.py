"""Result writers: legacy-VTK fields, CSV curves, run manifests.

Float text is fixed at 17 significant digits so two runs of the same
configuration produce byte-identical files. Writes go through a
temporary file and an atomic rename; an aborted run never leaves a
half-written file behind.
"""

import json
import os

import numpy as np

CURVE_HEADER = ("load_mm,reaction_N_per_mm,stagger_iterations,"
                "free_energy_N_mm_per_mm,dissipated_N_mm_per_mm,"
                "crack_length_mm,d_min,d_max")


def _fmt(x):
    return "%.17g" % float(x)


def _write_atomic(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_vtk(path, points, triangles, point_data=(), cell_data=(),
              title="lipfield output"):
    """Legacy ASCII unstructured-grid file with named data arrays.

    point_data / cell_data: sequences of (name, array); a 1D array is a
    scalar field, an (n, 2) array an in-plane vector written with a zero
    third component.
    """
    points = np.asarray(points, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    out = ["# vtk DataFile Version 3.0", str(title), "ASCII",
           "DATASET UNSTRUCTURED_GRID",
           "POINTS %d double" % len(points)]
    out += ["%s %s 0" % (_fmt(x), _fmt(y)) for x, y in points]
    out.append("CELLS %d %d" % (len(triangles), 4 * len(triangles)))
    out += ["3 %d %d %d" % (a, b, c) for a, b, c in triangles]
    out.append("CELL_TYPES %d" % len(triangles))
    out += ["5"] * len(triangles)
    for label, data, count in (("POINT_DATA", point_data, len(points)),
                               ("CELL_DATA", cell_data, len(triangles))):
        data = list(data)
        if not data:
            continue
        out.append("%s %d" % (label, count))
        for name, arr in data:
            arr = np.asarray(arr, dtype=float)
            if len(arr) != count:
                raise ValueError("field %r does not match the %s size"
                                 % (name, label))
            if arr.ndim == 1:
                out.append("SCALARS %s double 1" % name)
                out.append("LOOKUP_TABLE default")
                out += [_fmt(v) for v in arr]
            else:
                out.append("VECTORS %s double" % name)
                out += ["%s %s 0" % (_fmt(vx), _fmt(vy)) for vx, vy in arr]
    _write_atomic(path, "\n".join(out) + "\n")


def write_fe_fields(path, mesh, u, d):
    """Displacement on the FE nodes plus per-element damage.

    The cell array is the damage as the mechanical problem sees it,
    constant on each element.
    """
    write_vtk(path, mesh.nodes, mesh.triangles,
              point_data=[("displacement", np.asarray(u, dtype=float))],
              cell_data=[("damage", np.asarray(d, dtype=float))],
              title="fe mesh fields")


def write_lip_fields(path, lip, d, extra=()):
    """Damage as the regularized problem sees it, linear per Lip triangle."""
    write_vtk(path, lip.points, lip.triangles,
              point_data=[("damage", np.asarray(d, dtype=float))]
              + list(extra), title="lip mesh fields")


def write_csv(path, header, rows):
    lines = [str(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append("%d" % v)
            else:
                cells.append(_fmt(v))
        lines.append(",".join(cells))
    _write_atomic(path, "\n".join(lines) + "\n")


def write_curve_csv(path, records):
    write_csv(path, CURVE_HEADER,
              [(r.load, r.reaction, r.iterations, r.free_energy,
                r.dissipated, r.crack_length, r.d_min, r.d_max)
               for r in records])


def write_manifest(path, manifest):
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
