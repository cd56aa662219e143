"""Meshes: the displacement triangulation, the centroid Lip-mesh carrying
the damage field, and the edge-length graph used by the Lipschitz bounds.

The only input format is ASCII MSH version 2.2 restricted to nodes, 3-node
triangles and 2-node boundary lines with physical tags. Anything else is
rejected loudly.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.spatial import Delaunay, QhullError


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# FE mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeMesh:
    nodes: np.ndarray            # (n, 2) coordinates, mm
    triangles: np.ndarray        # (m, 3) node indices, counterclockwise
    boundary_edges: np.ndarray   # (k, 2) tagged line elements
    boundary_tags: np.ndarray    # (k,) integer physical tags
    areas: np.ndarray            # (m,)
    centroids: np.ndarray        # (m, 2)
    # closed boundary polylines as (vertex cycle, is_hole); holes are the
    # clockwise loops when walked with the domain on the left
    loops: tuple = field(default_factory=tuple)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.triangles.shape[0]

    @property
    def bbox_diag(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def nodes_with_tag(self, tag):
        """Sorted node ids lying on boundary lines carrying this tag."""
        sel = self.boundary_edges[self.boundary_tags == tag]
        if sel.size == 0:
            raise MeshError("no boundary line carries tag %d" % tag)
        return np.unique(sel)

    def hole_loops(self):
        return [cyc for cyc, is_hole in self.loops if is_hole]

    def outer_loops(self):
        return [cyc for cyc, is_hole in self.loops if not is_hole]


def _tri_geometry(nodes, triangles):
    p = nodes[triangles]                      # (m, 3, 2)
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    return signed, p.mean(axis=1)


def _boundary_loops(nodes, triangles):
    """Walk the topological boundary into closed directed loops.

    Boundary edges are oriented with their triangle on the left, so outer
    loops come out counterclockwise and holes clockwise. A slit meshed with
    duplicated nodes is just part of the outer walk.
    """
    count = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (a, b) if a < b else (b, a)
            count[key] = count.get(key, 0) + 1
    succ = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (a, b) if a < b else (b, a)
            if count[key] == 1:
                if a in succ:
                    raise MeshError("non-manifold boundary at node %d" % a)
                succ[a] = b
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        cyc = [start]
        seen.add(start)
        v = succ[start]
        while v != start:
            cyc.append(v)
            seen.add(v)
            v = succ[v]
        cyc = np.array(cyc, dtype=np.int64)
        xy = nodes[cyc]
        x, y = xy[:, 0], xy[:, 1]
        area2 = np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))
        loops.append((cyc, area2 < 0.0))
    return tuple(loops)


def build_fe_mesh(nodes, triangles, boundary_edges=None, boundary_tags=None):
    """Validate raw arrays into a FeMesh.

    Negative-orientation triangles are silently reordered. Exactly
    coincident node pairs are accepted when they form a crack-style seam
    (both used by triangles, never by the same one); near-coincident pairs
    are a meshing error.
    """
    nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float)[:, :2])
    triangles = np.asarray(triangles, dtype=np.int64).copy()
    if boundary_edges is None:
        boundary_edges = np.empty((0, 2), dtype=np.int64)
        boundary_tags = np.empty(0, dtype=np.int64)
    boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
    boundary_tags = np.asarray(boundary_tags, dtype=np.int64)
    n = nodes.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise MeshError("triangle references node out of range")

    used = np.zeros(n, dtype=bool)
    used[triangles.ravel()] = True
    if not used.all():
        raise MeshError("orphan node %d not referenced by any triangle"
                        % int(np.argmin(used)))

    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    diag = float(np.hypot(*(hi - lo)))
    tol = 1e-12 * diag
    pairs = []
    if tol > 0.0:
        # cell hashing keeps the near-duplicate scan close to linear
        cx = np.floor(nodes[:, 0] / tol).astype(np.int64)
        cy = np.floor(nodes[:, 1] / tol).astype(np.int64)
        cells = {}
        for k in range(n):
            cells.setdefault((cx[k], cy[k]), []).append(k)
        for k in range(n):
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for j in cells.get((cx[k] + dx, cy[k] + dy), ()):
                        if j > k and np.hypot(*(nodes[j] - nodes[k])) < tol:
                            pairs.append((k, j))
    if pairs:
        members = {v for p in pairs for v in p}
        tri_of = {v: set() for v in members}
        for t, tri in enumerate(triangles):
            for v in tri:
                if v in tri_of:
                    tri_of[v].add(t)
        for a, b in pairs:
            dist = np.hypot(*(nodes[a] - nodes[b]))
            if dist > 0.0:
                raise MeshError(
                    "nodes %d and %d nearly coincide (distance %.3e)"
                    % (a, b, dist))
            if tri_of[a] & tri_of[b]:
                raise MeshError(
                    "coincident nodes %d and %d share an element" % (a, b))

    signed, centroids = _tri_geometry(nodes, triangles)
    flip = signed < 0.0
    if flip.any():
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        signed = np.abs(signed)
    bad = np.where(signed <= 1e-14 * diag * diag)[0]
    if bad.size:
        raise MeshError("zero-area element %d" % int(bad[0]))

    # conformity: no edge may be shared by more than two triangles
    e = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if counts.max(initial=0) > 2:
        a, b = uniq[int(np.argmax(counts))]
        raise MeshError("edge (%d, %d) shared by more than two elements"
                        % (a, b))
    boundary_set = {tuple(x) for x in uniq[counts == 1]}
    for i, (a, b) in enumerate(boundary_edges):
        key = (a, b) if a < b else (b, a)
        if key not in boundary_set:
            raise MeshError(
                "boundary line %d (%d, %d) is not a boundary edge of the "
                "triangulation" % (i, a, b))

    loops = _boundary_loops(nodes, triangles)
    return FeMesh(nodes=nodes, triangles=triangles,
                  boundary_edges=boundary_edges, boundary_tags=boundary_tags,
                  areas=signed, centroids=centroids, loops=loops)


# ---------------------------------------------------------------------------
# MSH 2.2 ASCII input and output
# ---------------------------------------------------------------------------

def read_mesh(path):
    """Read an ASCII MSH 2.2 file into a FeMesh.

    Supported element types: 1 (2-node line, used as tagged boundary) and
    2 (3-node triangle). The first element tag is taken as the physical tag.
    """
    with open(path) as fh:
        lines = fh.read().split("\n")
    i = 0
    nln = len(lines)

    def expect(cond, msg):
        if not cond:
            raise MeshError("%s (near line %d of %s)" % (msg, i + 1, path))

    nodes = None
    node_ids = None
    tris, tri_ids = [], []
    bedges, btags = [], []
    while i < nln:
        line = lines[i].strip()
        if line == "$MeshFormat":
            expect(i + 1 < nln, "truncated $MeshFormat")
            parts = lines[i + 1].split()
            expect(len(parts) >= 2, "malformed $MeshFormat")
            expect(parts[0].startswith("2.2"),
                   "unsupported MSH version %s, need 2.2" % parts[0])
            expect(parts[1] == "0", "binary MSH not supported")
            i += 2
            expect(i < nln and lines[i].strip() == "$EndMeshFormat",
                   "missing $EndMeshFormat")
        elif line == "$Nodes":
            expect(nodes is None, "duplicate $Nodes section")
            i += 1
            expect(i < nln, "truncated $Nodes")
            try:
                count = int(lines[i].split()[0])
            except (ValueError, IndexError):
                raise MeshError("malformed node count in %s" % path)
            raw = np.empty((count, 3))
            ids = np.empty(count, dtype=np.int64)
            for k in range(count):
                i += 1
                expect(i < nln, "truncated $Nodes")
                parts = lines[i].split()
                expect(len(parts) >= 3, "malformed node line")
                ids[k] = int(parts[0])
                raw[k] = [float(parts[1]), float(parts[2]),
                          float(parts[3]) if len(parts) > 3 else 0.0]
            i += 1
            expect(i < nln and lines[i].strip() == "$EndNodes",
                   "missing $EndNodes")
            nodes = raw[:, :2]
            node_ids = ids
        elif line == "$Elements":
            i += 1
            expect(i < nln, "truncated $Elements")
            try:
                count = int(lines[i].split()[0])
            except (ValueError, IndexError):
                raise MeshError("malformed element count in %s" % path)
            for _ in range(count):
                i += 1
                expect(i < nln, "truncated $Elements")
                parts = lines[i].split()
                expect(len(parts) >= 3, "malformed element line")
                eid, etype, ntags = int(parts[0]), int(parts[1]), int(parts[2])
                tag = int(parts[3]) if ntags >= 1 else 0
                conn = [int(x) for x in parts[3 + ntags:]]
                if etype == 1:
                    expect(len(conn) == 2, "line element %d needs 2 nodes" % eid)
                    bedges.append(conn)
                    btags.append(tag)
                elif etype == 2:
                    expect(len(conn) == 3,
                           "triangle element %d needs 3 nodes" % eid)
                    tris.append(conn)
                    tri_ids.append(eid)
                else:
                    raise MeshError("unsupported element type %d (element %d)"
                                    % (etype, eid))
            i += 1
            expect(i < nln and lines[i].strip() == "$EndElements",
                   "missing $EndElements")
        elif line.startswith("$"):
            # skip unknown sections such as $PhysicalNames
            name = line[1:]
            j = i + 1
            while j < nln and lines[j].strip() != "$End" + name:
                j += 1
            expect(j < nln, "unterminated section %s" % line)
            i = j
        i += 1

    if nodes is None:
        raise MeshError("no $Nodes section in %s" % path)
    if not tris:
        raise MeshError("no triangles in %s" % path)
    # remap arbitrary gmsh node ids to dense 0-based indices
    remap = {int(g): k for k, g in enumerate(node_ids)}
    if len(remap) != len(node_ids):
        raise MeshError("duplicate node id in %s" % path)
    try:
        triangles = np.array([[remap[v] for v in t] for t in tris],
                             dtype=np.int64)
        bed = np.array([[remap[v] for v in e] for e in bedges],
                       dtype=np.int64).reshape(-1, 2)
    except KeyError as exc:
        raise MeshError("element references unknown node %s" % exc)
    return build_fe_mesh(nodes, triangles, bed,
                         np.array(btags, dtype=np.int64))


def write_msh(path, nodes, triangles, lines=(), line_tags=(), surface_tag=1):
    """Write an ASCII MSH 2.2 file (nodes, triangles, tagged lines)."""
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    lines = np.asarray(lines, dtype=np.int64).reshape(-1, 2)
    line_tags = np.asarray(line_tags, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write("$Nodes\n%d\n" % len(nodes))
        for k, (x, y) in enumerate(nodes):
            fh.write("%d %.17g %.17g 0\n" % (k + 1, x, y))
        fh.write("$EndNodes\n$Elements\n%d\n" % (len(lines) + len(triangles)))
        eid = 1
        for (a, b), tag in zip(lines, line_tags):
            fh.write("%d 1 2 %d %d %d %d\n" % (eid, tag, tag, a + 1, b + 1))
            eid += 1
        for a, b, c in triangles:
            fh.write("%d 2 2 %d %d %d %d %d\n"
                     % (eid, surface_tag, surface_tag, a + 1, b + 1, c + 1))
            eid += 1
        fh.write("$EndElements\n")


def write_fe_mesh(mesh: FeMesh, path):
    write_msh(path, mesh.nodes, mesh.triangles,
              mesh.boundary_edges, mesh.boundary_tags)


# ---------------------------------------------------------------------------
# Lip-mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LipMesh:
    points: np.ndarray        # (nv, 2), vertex i = centroid of FE element i
    triangles: np.ndarray     # (nt, 3) counterclockwise
    edges: np.ndarray         # (ne, 2) with edges[:,0] < edges[:,1]
    edge_lengths: np.ndarray  # (ne,) Euclidean, mm
    grad: np.ndarray          # (nt, 2, 3) constant-gradient coefficient rows

    @property
    def n_vertices(self):
        return self.points.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def _unique_edges(triangles):
    e = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def _gradient_operator(points, triangles):
    p = points[triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]],
                 axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]],
                 axis=1)
    a2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) \
        - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grad = np.stack([b, c], axis=1) / a2[:, None, None]
    return grad


def _points_in_loop(pts, loop_xy):
    """Even-odd crossing test, half-open on the vertical direction."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    x1, y1 = loop_xy[:, 0], loop_xy[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for k in range(len(loop_xy)):
        cond = (y1[k] <= y) != (y2[k] <= y)
        if not cond.any():
            continue
        t = (y[cond] - y1[k]) / (y2[k] - y1[k])
        xc = x1[k] + t * (x2[k] - x1[k])
        hit = np.zeros_like(inside)
        hit[cond] = x[cond] < xc
        inside ^= hit
    return inside


def _segments_cross(p1, p2, q1, q2):
    """Transversal intersection of segment batches p1p2 (na) vs q1q2 (nb).

    A segment passing exactly through an endpoint of the other still
    counts; pure collinear overlap does not.
    """
    def cross(o, a, b):
        return ((a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1])
                - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0]))
    p1 = p1[:, None, :]
    p2 = p2[:, None, :]
    q1 = q1[None, :, :]
    q2 = q2[None, :, :]
    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)
    a = d1 * d2
    b = d3 * d4
    return ((a < 0.0) & (b <= 0.0)) | ((a <= 0.0) & (b < 0.0))


def build_lip_mesh(mesh: FeMesh) -> LipMesh:
    """Triangulate the FE element centroids, complying with the domain.

    Delaunay triangles are dropped when their own centroid falls outside
    the meshed domain (inside a hole or beyond a nonconvex boundary) or
    when one of their edges crosses a boundary polyline; a slit meshed with
    duplicated nodes cuts the Lip-mesh the same way it cuts the FE mesh.
    """
    pts = mesh.centroids
    if len(pts) < 3:
        raise MeshError("fewer than 3 centroids, no Lip-mesh")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise MeshError("degenerate centroid configuration: %s" % exc)
    simplices = tri.simplices.astype(np.int64)
    if np.unique(simplices).size != len(pts):
        raise MeshError("degenerate centroid configuration")

    # orientation first, filtering after
    signed, tri_cent = _tri_geometry(pts, simplices)
    flip = signed < 0.0
    if flip.any():
        simplices[flip] = simplices[flip][:, [0, 2, 1]]

    # even a single convex-looking outer loop can hide a slit walked
    # in-and-back, so the compliance filters always run
    inside = np.zeros(len(simplices), dtype=bool)
    for cyc in mesh.outer_loops():
        inside |= _points_in_loop(tri_cent, mesh.nodes[cyc])
    for cyc in mesh.hole_loops():
        inside &= ~_points_in_loop(tri_cent, mesh.nodes[cyc])
    keep = inside
    # boundary segments of every loop, walked edge by edge
    q1 = np.vstack([mesh.nodes[cyc] for cyc, _ in mesh.loops])
    q2 = np.vstack([mesh.nodes[np.roll(cyc, -1)] for cyc, _ in mesh.loops])
    tri_kept = np.where(keep)[0]
    if tri_kept.size:
        edges = simplices[tri_kept][:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        crossing = np.empty(len(edges), dtype=bool)
        for s in range(0, len(edges), 8192):   # bound the broadcast size
            sl = slice(s, s + 8192)
            crossing[sl] = _segments_cross(pts[edges[sl, 0]],
                                           pts[edges[sl, 1]],
                                           q1, q2).any(axis=1)
        bad_tri = tri_kept[crossing.reshape(-1, 3).any(axis=1)]
        keep[bad_tri] = False
    simplices = simplices[keep]
    if len(simplices) == 0:
        raise MeshError("all Lip-mesh triangles filtered out")
    return _assemble_lip(pts, simplices)


def _assemble_lip(points, simplices):
    used = np.zeros(len(points), dtype=bool)
    used[simplices.ravel()] = True
    if not used.all():
        raise MeshError("Lip vertex %d not part of any Lip triangle"
                        % int(np.argmin(used)))
    edges = _unique_edges(simplices)
    lengths = np.hypot(*(points[edges[:, 1]] - points[edges[:, 0]]).T)
    grad = _gradient_operator(points, simplices)
    return LipMesh(points=points, triangles=simplices, edges=edges,
                   edge_lengths=lengths, grad=grad)


def lip_mesh_from_points(points) -> LipMesh:
    """Delaunay Lip-mesh over a bare point set (no domain to comply with).

    Convenience for benchmarks and randomized testing where the damage
    field lives on a synthetic vertex cloud rather than on FE centroids.
    """
    points = np.ascontiguousarray(np.asarray(points, dtype=float))
    if len(points) < 3:
        raise MeshError("fewer than 3 centroids, no Lip-mesh")
    try:
        tri = Delaunay(points)
    except QhullError as exc:
        raise MeshError("degenerate centroid configuration: %s" % exc)
    simplices = tri.simplices.astype(np.int64)
    signed, _ = _tri_geometry(points, simplices)
    flip = signed < 0.0
    if flip.any():
        simplices[flip] = simplices[flip][:, [0, 2, 1]]
    return _assemble_lip(points, simplices)


def gradient_rows(lip: LipMesh, t):
    """2x3 rows mapping the three vertex values of triangle t to grad d."""
    return lip.grad[t]


def write_lip_mesh(lip: LipMesh, path):
    write_msh(path, lip.points, lip.triangles)


# ---------------------------------------------------------------------------
# Edge graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeGraph:
    n: int
    edges: np.ndarray        # (ne, 2)
    lengths: np.ndarray      # (ne,)
    indptr: np.ndarray       # CSR adjacency over both directions
    indices: np.ndarray
    weights: np.ndarray

    def neighbors(self, v):
        s = slice(self.indptr[v], self.indptr[v + 1])
        return self.indices[s], self.weights[s]


def edge_graph(lip: LipMesh) -> EdgeGraph:
    """Adjacency of Lip vertices over the edge set with Euclidean lengths."""
    e = lip.edges
    w = lip.edge_lengths
    if np.any(w <= 0.0):
        raise MeshError("zero-length Lip edge")
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    ww = np.concatenate([w, w])
    order = np.argsort(src, kind="stable")
    src, dst, ww = src[order], dst[order], ww[order]
    indptr = np.zeros(lip.n_vertices + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return EdgeGraph(n=lip.n_vertices, edges=e, lengths=w,
                     indptr=indptr, indices=dst, weights=ww)
