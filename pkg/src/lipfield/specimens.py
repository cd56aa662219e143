"""Deterministic structured meshes for the shipped test geometries.

Every generator returns a validated FeMesh (plus tie pairs where relevant)
built from explicit node arithmetic, so runs are reproducible without any
external mesh generator. Boundary tag convention used by the run driver:

    tag 1  grip on the minus side of the load axis
    tag 2  grip on the plus side of the load axis
    tag 3  pin lines: the displacement component perpendicular to the load
           axis is fixed to zero on these nodes

All lengths in mm.
"""

import numpy as np

from .mesh import FeMesh, build_fe_mesh


def _grid(nx, ny, lx, ly, x0, y0):
    xs = x0 + lx * np.arange(nx + 1) / nx
    ys = y0 + ly * np.arange(ny + 1) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _cells(nx, ny, nid):
    """Alternating-diagonal split of an nx-by-ny cell grid."""
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return tris


def square_mesh(n, side=1.0, centered=False, nx=None, ny=None,
                lx=None, ly=None) -> FeMesh:
    """Structured rectangle, n-by-n cells by default, 2 triangles per cell.

    Left edge carries tag 1 and right edge tag 2; tag 3 pins sit on the two
    mid-height edges of each of those sides.
    """
    nx = n if nx is None else nx
    ny = n if ny is None else ny
    lx = side if lx is None else lx
    ly = side if ly is None else ly
    x0 = -lx / 2.0 if centered else 0.0
    y0 = -ly / 2.0 if centered else 0.0
    nodes = _grid(nx, ny, lx, ly, x0, y0)

    def nid(i, j):
        return j * (nx + 1) + i

    tris = _cells(nx, ny, nid)
    lines, tags = [], []
    for j in range(ny):
        lines.append((nid(0, j), nid(0, j + 1)))
        tags.append(1)
        lines.append((nid(nx, j), nid(nx, j + 1)))
        tags.append(2)
    jm = ny // 2
    for side_i, j in ((0, jm - 1), (0, jm), (nx, jm - 1), (nx, jm)):
        if 0 <= j < ny:
            lines.append((nid(side_i, j), nid(side_i, j + 1)))
            tags.append(3)
    return build_fe_mesh(nodes, tris, lines, tags)


def notched_strip(length=2.0, height=0.8, notch=0.48, nx=50, ny=20) -> FeMesh:
    """Strip with a zero-width slit at mid-height starting from x = 0.

    The slit is meshed by duplicating the crack-line nodes strictly left of
    the tip; upper-side elements reference the copies. Loading is across
    the slit: tag 1 = bottom edge, tag 2 = top edge, tag 3 = two mid-height
    edges of the right side pinning u_x.
    """
    if ny % 2:
        raise ValueError("ny must be even so the slit runs between cells")
    hx = length / nx
    i_tip = int(round(notch / hx))
    if not 0 < i_tip < nx:
        raise ValueError("notch tip must fall strictly inside the strip")
    base = _grid(nx, ny, length, height, 0.0, 0.0)

    def nid(i, j):
        return j * (nx + 1) + i

    jm = ny // 2
    n_base = len(base)
    dup = {i: n_base + i for i in range(i_tip)}
    nodes = np.vstack([base, base[[nid(i, jm) for i in range(i_tip)]]])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if j == jm:
                # the crack line is this cell row's bottom edge
                a = dup.get(i, a)
                b = dup.get(i + 1, b)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    lines, tags = [], []
    for i in range(nx):
        lines.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(1)
        lines.append((nid(i, ny), nid(i + 1, ny)))
        tags.append(2)
    lines.append((nid(nx, jm - 1), nid(nx, jm)))
    tags.append(3)
    lines.append((nid(nx, jm), nid(nx, jm + 1)))
    tags.append(3)
    return build_fe_mesh(nodes, tris, lines, tags)


def griffith_strip(length=2.0, half_height=0.5, nx=40, ny_half=10):
    """Two disconnected strip halves with coincident crack-path nodes.

    Returns (mesh, ties): ties is a (nx+1, 2) array of node pairs
    (lower, upper) along y = 0 ordered by x, for the tied-crack release
    harness. Tag 1 = bottom edge of the lower half, tag 2 = top edge of
    the upper half.
    """
    lower = _grid(nx, ny_half, length, half_height, 0.0, -half_height)
    upper = _grid(nx, ny_half, length, half_height, 0.0, 0.0)
    off = len(lower)
    nodes = np.vstack([lower, upper])

    def lo(i, j):
        return j * (nx + 1) + i

    def up(i, j):
        return off + j * (nx + 1) + i

    tris = _cells(nx, ny_half, lo) + _cells(nx, ny_half, up)
    lines, tags = [], []
    for i in range(nx):
        lines.append((lo(i, 0), lo(i + 1, 0)))
        tags.append(1)
        lines.append((up(i, ny_half), up(i + 1, ny_half)))
        tags.append(2)
    mesh = build_fe_mesh(nodes, tris, lines, tags)
    ties = np.array([[lo(i, ny_half), up(i, 0)] for i in range(nx + 1)],
                    dtype=np.int64)
    return mesh, ties


def plate_with_hole(side=2.0, radius=0.2, n_theta=72, n_rad=20) -> FeMesh:
    """Square plate with a central circular hole, structured O-grid.

    n_theta rays from the center (multiple of 8 so the square corners are
    hit exactly), n_rad divisions from the hole rim to the outer square.
    Tag 1 = left edge, tag 2 = right edge; tag 3 pins u_y near the
    mid-height of both grips.
    """
    if n_theta % 8:
        raise ValueError("n_theta must be a multiple of 8")
    half = side / 2.0
    if not 0.0 < radius < half:
        raise ValueError("hole radius must lie within the plate")
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    dirs = np.column_stack([np.cos(th), np.sin(th)])
    t_out = half / np.maximum(np.abs(dirs[:, 0]), np.abs(dirs[:, 1]))

    def nid(k, j):
        return (k % n_theta) * (n_rad + 1) + j

    nodes = np.empty((n_theta * (n_rad + 1), 2))
    for k in range(n_theta):
        r = radius + (t_out[k] - radius) * np.arange(n_rad + 1) / n_rad
        nodes[k * (n_rad + 1):(k + 1) * (n_rad + 1)] = dirs[k] * r[:, None]
    tris = []
    for k in range(n_theta):
        for j in range(n_rad):
            a, b = nid(k, j), nid(k + 1, j)
            c, d = nid(k + 1, j + 1), nid(k, j + 1)
            if (k + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    tol = 1e-12 * side
    lines, tags = [], []
    for k in range(n_theta):
        a, b = nid(k, n_rad), nid(k + 1, n_rad)
        xa, xb = nodes[a, 0], nodes[b, 0]
        if abs(xa + half) < tol and abs(xb + half) < tol:
            lines.append((a, b))
            tags.append(1)
        elif abs(xa - half) < tol and abs(xb - half) < tol:
            lines.append((a, b))
            tags.append(2)
    k_left = n_theta // 2
    for k in (n_theta - 1, 0, k_left - 1, k_left):
        lines.append((nid(k, n_rad), nid(k + 1, n_rad)))
        tags.append(3)
    return build_fe_mesh(nodes, tris, lines, tags)
