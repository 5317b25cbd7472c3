"""Triangle mesh utilities: plane cross-sections, loop perimeters and
on-surface landmark displacement."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCrossSection, FormatError, OpenCrossSection, ValidationError

_DUP_TOL = 1e-9  # mm
_SURFACE_TOL = 1.0  # mm, how far a landmark may sit off the mesh
_UNIT_SCALE = {"mm": 1.0, "cm": 10.0, "m": 1000.0}


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) mm
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("vertices must have shape (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError("faces must have shape (F, 3)")

    def transformed(self, rotation, translation):
        return Mesh(self.vertices @ np.asarray(rotation).T + translation, self.faces)


@dataclass
class CrossSection:
    loops: list  # closed polylines, each (n, 3); the closing segment is implicit
    source_plane: tuple  # (point, unit normal)

    def perimeters(self):
        return [loop_perimeter(loop) for loop in self.loops]


def loop_perimeter(loop) -> float:
    """Length of a closed polyline, closing segment included."""
    loop = np.asarray(loop, dtype=float)
    return float(np.linalg.norm(loop - np.roll(loop, -1, axis=0), axis=1).sum())


def plane_cross_section(mesh: Mesh, plane_point, plane_normal) -> CrossSection:
    """Intersect a mesh with a plane and stitch the result into closed loops.

    Vertices lying exactly on the plane are treated as being on its negative
    side, which is the limit of pushing the plane offset up by an
    infinitesimal amount. Intersection points are still interpolated against
    the unshifted plane, so they lie on it to rounding precision.

    Loops are returned sorted by the lexicographic order of their centroids.

    Raises
    ------
    EmptyCrossSection
        The plane misses the mesh.
    OpenCrossSection
        Some intersection point is not shared by exactly two faces (the mesh
        has a boundary or a non-manifold edge along the cut).
    """
    point = np.asarray(plane_point, dtype=float)
    normal = np.asarray(plane_normal, dtype=float)
    nn = np.linalg.norm(normal)
    if not nn > 0:
        raise ValidationError("plane normal must be nonzero")
    normal = normal / nn

    verts, faces = mesh.vertices, mesh.faces
    dist = (verts - point) @ normal
    above = dist > 0.0

    face_above = above[faces]
    n_above = face_above.sum(axis=1)
    cut = (n_above == 1) | (n_above == 2)
    if not cut.any():
        raise EmptyCrossSection("plane does not intersect the mesh")
    cf = faces[cut]
    ca = face_above[cut]

    # the two crossing edges of every cut face
    edges = np.stack([cf[:, [0, 1]], cf[:, [1, 2]], cf[:, [2, 0]]], axis=1)
    crosses = np.stack([ca[:, 0] != ca[:, 1], ca[:, 1] != ca[:, 2], ca[:, 2] != ca[:, 0]], axis=1)
    face_edges = edges[crosses].reshape(-1, 2, 2)
    lo = face_edges.min(axis=2)
    hi = face_edges.max(axis=2)
    n_verts = len(verts)
    keys = lo * n_verts + hi  # (n_cut, 2)

    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    links = inverse.reshape(-1, 2)
    degree = np.bincount(links.reshape(-1), minlength=len(uniq))
    if np.any(degree != 2):
        raise OpenCrossSection("cut passes through a boundary or non-manifold edge")

    ea, eb = uniq // n_verts, uniq % n_verts
    da, db = dist[ea], dist[eb]
    t = da / (da - db)
    pts = verts[ea] + (verts[eb] - verts[ea]) * t[:, None]

    nbr = np.full((len(uniq), 2), -1, dtype=np.int64)
    fill = np.zeros(len(uniq), dtype=np.int64)
    for a, b in links:
        nbr[a, fill[a]] = b
        fill[a] += 1
        nbr[b, fill[b]] = a
        fill[b] += 1

    visited = np.zeros(len(uniq), dtype=bool)
    loops = []
    for start in range(len(uniq)):  # uniq is sorted, so each loop starts at its smallest key
        if visited[start]:
            continue
        order = [start]
        visited[start] = True
        prev, cur = start, min(nbr[start])
        while cur != start:
            order.append(cur)
            visited[cur] = True
            a, b = nbr[cur]
            prev, cur = cur, (b if a == prev else a)
        loop = _dedupe(pts[order])
        if len(loop) >= 3:
            loops.append(loop)
    if not loops:
        raise EmptyCrossSection("plane only touches the mesh")
    loops.sort(key=lambda lp: tuple(lp.mean(axis=0)))
    return CrossSection(loops, (point, normal))


def _dedupe(loop):
    keep = np.linalg.norm(loop - np.roll(loop, 1, axis=0), axis=1) > _DUP_TOL
    if not keep.any():
        return loop[:1]
    loop = loop[keep]
    # dropping points can create new coincident neighbours only at repeated runs
    while len(loop) > 1:
        keep = np.linalg.norm(loop - np.roll(loop, 1, axis=0), axis=1) > _DUP_TOL
        if keep.all():
            break
        loop = loop[keep]
    return loop


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    v = mesh.vertices[mesh.faces]
    fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    out = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], fn)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.where(norm > 0, norm, 1.0)


def closest_point_on_polyline(loop, point):
    """Closest point on a closed polyline.

    Returns ``(distance, segment_index, t)`` where the closest point is
    ``loop[i] + t * (loop[i+1] - loop[i])`` (indices wrap).
    """
    a = loop
    b = np.roll(loop, -1, axis=0)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", point - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + ab * t[:, None]
    d = np.linalg.norm(proj - point, axis=1)
    i = int(np.argmin(d))
    return float(d[i]), i, float(t[i])


def walk_loop(loop, segment, t, distance, direction):
    """Move ``distance`` along a closed polyline from ``(segment, t)``.

    ``direction`` is +1 (increasing index) or -1.
    """
    n = len(loop)
    seg_len = np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)
    remaining = float(distance)
    if direction > 0:
        i, offset = segment, t * seg_len[segment]
        while True:
            room = seg_len[i] - offset
            if remaining <= room:
                s = (offset + remaining) / seg_len[i] if seg_len[i] > 0 else 0.0
                return loop[i] + (loop[(i + 1) % n] - loop[i]) * s
            remaining -= room
            i, offset = (i + 1) % n, 0.0
    else:
        i, offset = segment, t * seg_len[segment]
        while True:
            if remaining <= offset:
                s = (offset - remaining) / seg_len[i] if seg_len[i] > 0 else 0.0
                return loop[i] + (loop[(i + 1) % n] - loop[i]) * s
            remaining -= offset
            i = (i - 1) % n
            offset = seg_len[i]


def point_mesh_distance(mesh: Mesh, point) -> float:
    """Euclidean distance from a point to the closest triangle."""
    p = np.asarray(point, dtype=float)
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    ok = nn > 0
    # barycentric test on the plane projection
    w = p - a
    safe = np.where(ok, nn, 1.0)
    u = np.einsum("ij,ij->i", np.cross(w, c - a), n) / safe
    v = np.einsum("ij,ij->i", np.cross(b - a, w), n) / safe
    inside = ok & (u >= 0) & (v >= 0) & (u + v <= 1)
    plane_d = np.abs(np.einsum("ij,ij->i", w, n)) / np.sqrt(safe)
    best = np.min(plane_d[inside]) if inside.any() else np.inf
    for s, e in ((a, b), (b, c), (c, a)):
        se = e - s
        den = np.einsum("ij,ij->i", se, se)
        tt = np.clip(np.einsum("ij,ij->i", p - s, se) / np.where(den > 0, den, 1.0), 0, 1)
        best = min(best, float(np.min(np.linalg.norm(s + se * tt[:, None] - p, axis=1))))
    return float(best)


def perturb_landmark_on_surface(
    mesh: Mesh,
    landmark_point,
    max_dist_mm=5.6,
    seed=0,
    *,
    max_tilt_deg=80.0,
    normals=None,
    return_arc=False,
):
    """Move a surface landmark a random arc length along a random mesh slice.

    A plane through the landmark is drawn with a uniformly random normal,
    rejecting normals that make the cut closer than ``90 - max_tilt_deg``
    degrees to tangential. The slice loop nearest the landmark is walked
    from the landmark's projection by a distance uniform in
    ``[0, max_dist_mm]``, in a random direction.

    Parameters
    ----------
    mesh : Mesh
        Watertight mesh the landmark sits on.
    landmark_point : (3,) float
        Must lie within 1 mm of the surface.
    max_dist_mm : float
        Upper bound on the arc-length displacement.
    seed : int or numpy Generator
    normals : (V, 3) float, optional
        Precomputed vertex normals.
    return_arc : bool
        Also return the arc length actually walked.

    Raises
    ------
    EmptyCrossSection
        After 10 planes failed to produce a loop through the landmark.
    """
    p = np.asarray(landmark_point, dtype=float)
    if max_dist_mm < 0:
        raise ValidationError("max_dist_mm must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if normals is None:
        normals = vertex_normals(mesh)
    nearest = int(np.argmin(np.linalg.norm(mesh.vertices - p, axis=1)))
    if np.linalg.norm(mesh.vertices[nearest] - p) > _SURFACE_TOL and point_mesh_distance(mesh, p) > _SURFACE_TOL:
        raise ValidationError("landmark is more than 1 mm away from the mesh")
    surface_normal = normals[nearest]
    max_dot = np.sin(np.radians(max_tilt_deg))

    for _ in range(10):
        while True:
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            if abs(float(n @ surface_normal)) <= max_dot:
                break
        arc = rng.uniform(0.0, max_dist_mm) if max_dist_mm > 0 else 0.0
        direction = 1 if rng.integers(2) else -1
        try:
            section = plane_cross_section(mesh, p, n)
        except EmptyCrossSection:
            continue
        hits = [closest_point_on_polyline(loop, p) for loop in section.loops]
        k = min(range(len(hits)), key=lambda j: hits[j][0])
        gap, seg, t = hits[k]
        if gap > _SURFACE_TOL:
            # the plane only grazes the surface at the landmark (a convex
            # vertex); walking a distant loop would be meaningless
            continue
        out = walk_loop(section.loops[k], seg, t, arc, direction)
        return (out, arc) if return_arc else out
    raise EmptyCrossSection("no usable cross-section through the landmark after 10 planes")


# ---------------------------------------------------------------------------
# OFF files


def read_off(path) -> Mesh:
    """Read a minimal OFF file, converting to mm.

    A ``# unit=<mm|cm|m>`` comment line before the counts declares the unit
    (default mm). Polygons with more than three corners are fan-triangulated.
    """
    if not os.path.isfile(path):
        raise FormatError(f"no such mesh file: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    unit = "mm"
    lines = []
    for line in raw:
        s = line.strip()
        if s.startswith("#"):
            body = s[1:].strip()
            if body.startswith("unit="):
                unit = body[len("unit="):].strip()
            continue
        if s:
            lines.append(s)
    if not lines or lines[0] != "OFF":
        raise FormatError(f"{path}: missing OFF header")
    if unit not in _UNIT_SCALE:
        raise FormatError(f"{path}: unsupported unit {unit!r}")
    try:
        nv, nf = (int(x) for x in lines[1].split()[:2])
        verts = np.array([[float(x) for x in lines[2 + i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nf):
            vals = [int(x) for x in lines[2 + nv + i].split()]
            idx = vals[1:1 + vals[0]]
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed OFF body ({exc})") from None
    return Mesh(verts.reshape(-1, 3) * _UNIT_SCALE[unit], np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_off(path, mesh: Mesh):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("OFF\n# unit=mm\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for f in mesh.faces:
            fh.write("3 " + " ".join(str(int(x)) for x in f) + "\n")


# ---------------------------------------------------------------------------
# primitive meshes, used for tests and demos


def box_mesh(size=1000.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned cube with 8 vertices and 12 outward-facing triangles."""
    h = size / 2.0
    c = np.asarray(center, dtype=float)
    verts = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)], dtype=float
    ) + c
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return Mesh(verts, faces)


def cylinder_mesh(radius=100.0, height=400.0, segments=64, rings=8) -> Mesh:
    """Closed cylinder along y, centered at the origin, with capped ends."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ys = np.linspace(-height / 2, height / 2, rings)
    verts = [[radius * np.sin(a), y, radius * np.cos(a)] for y in ys for a in ang]
    verts.append([0.0, -height / 2, 0.0])
    verts.append([0.0, height / 2, 0.0])
    bottom, top = len(verts) - 2, len(verts) - 1
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            faces.append([a, b, b + segments])
            faces.append([a, b + segments, a + segments])
    for s in range(segments):
        faces.append([bottom, (s + 1) % segments, s])
        off = (rings - 1) * segments
        faces.append([top, off + s, off + (s + 1) % segments])
    return Mesh(np.array(verts), np.array(faces))


def sphere_mesh(radius=100.0, n_lat=64, n_lon=128) -> Mesh:
    """UV sphere centered at the origin."""
    verts = [[0.0, -radius, 0.0]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat - np.pi / 2
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append([radius * np.cos(theta) * np.sin(phi), radius * np.sin(theta), radius * np.cos(theta) * np.cos(phi)])
    verts.append([0.0, radius, 0.0])
    top = len(verts) - 1
    faces = []
    for j in range(n_lon):
        faces.append([0, 1 + (j + 1) % n_lon, 1 + j])
    for i in range(n_lat - 2):
        base = 1 + i * n_lon
        for j in range(n_lon):
            a, b = base + j, base + (j + 1) % n_lon
            faces.append([a, b, b + n_lon])
            faces.append([a, b + n_lon, a + n_lon])
    base = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        faces.append([top, base + j, base + (j + 1) % n_lon])
    return Mesh(np.array(verts), np.array(faces))
