"""Structured quadrilateral meshes for the preset specimens.

All presets start from a tensor-product grid whose spacing is graded
towards refinement bands. Holes and notches are cut by deleting elements,
after which hole boundaries are snapped onto the circle.

Local edge ``k`` of an element joins its nodes ``k`` and ``(k+1) % 4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MESH_TOL = 1e-12
KINDS = ("rectangle", "pull_strip", "ct", "hole_plate")


class MeshError(ValueError):
    """Raised for degenerate or inconsistent geometry."""


@dataclass(frozen=True)
class RefineBand:
    """Axis-aligned box in which the element size must not exceed ``h``."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise MeshError(f"refine band target h must be positive, got {self.h}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise MeshError("refine band has zero extent")


@dataclass(frozen=True)
class GeometryPreset:
    """Description of a specimen; see the constructors below for defaults.

    ``dims`` holds the preset-specific lengths (mm). ``holes`` is a tuple of
    ``(xc, yc, r)`` and is only used by ``hole_plate``.
    """

    kind: str
    dims: dict
    h: float
    bands: tuple = ()
    holes: tuple = ()
    grading: float = 1.25

    def dim(self, key):
        return float(self.dims[key])


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    node_sets: dict = field(default_factory=dict)
    edge_sets: dict = field(default_factory=dict)
    char_length_h: np.ndarray = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.char_length_h is None:
            self.char_length_h = element_sizes(self.nodes, self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def areas(self) -> np.ndarray:
        x = self.nodes[self.elements]
        xs, ys = x[..., 0], x[..., 1]
        return 0.5 * np.sum(xs * np.roll(ys, -1, axis=1) - np.roll(xs, -1, axis=1) * ys, axis=1)


# ----------------------------------------------------------------------
# Preset constructors
# ----------------------------------------------------------------------
def rectangle(width, height, h, bands=()) -> GeometryPreset:
    return GeometryPreset("rectangle", {"width": width, "height": height}, h, tuple(bands))


def pull_strip(width, height, h, h_band=None, band_half_width=None, notch_length=None,
               notch_half_width=None) -> GeometryPreset:
    """Strip whose crack runs along ``y = height/2`` from the left edge.

    The band spans the full width and ``band_half_width`` above and below
    the mid-plane. An optional slot of length ``notch_length`` (default half
    width: one band element) is cut from the left edge along the mid-plane.
    """
    bands = ()
    if h_band is not None:
        bw = band_half_width if band_half_width is not None else 10.0 * h_band
        bw = min(bw, 0.5 * height)
        bands = (RefineBand(0.0, width, 0.5 * height - bw, 0.5 * height + bw, h_band),)
    dims = {"width": width, "height": height}
    if notch_length:
        dims["notch_length"] = notch_length
        dims["notch_half_width"] = notch_half_width
    return GeometryPreset("pull_strip", dims, h, bands)


def ct_specimen(W=10.0, h=None, h_band=None, a0=None, band_half_width=None,
                pin_radius=None, notch_half_width=None) -> GeometryPreset:
    """Compact-tension specimen with standard proportions.

    Outer size ``1.25 W x 1.2 W``; pin holes of radius ``0.125 W`` at
    ``x = 0.25 W``, ``y = 0.6 W +- 0.275 W``; notch from the left edge to
    ``x = 0.25 W + a0`` (default ``a0 = 0.5 W``). The band runs from the notch
    tip to the back face.
    """
    h = h if h is not None else W / 20.0
    a0 = a0 if a0 is not None else 0.5 * W
    dims = {
        "W": W,
        "width": 1.25 * W,
        "height": 1.2 * W,
        "a0": a0,
        "pin_radius": pin_radius if pin_radius is not None else 0.125 * W,
        "pin_offset": 0.275 * W,
        "notch_half_width": notch_half_width,
    }
    bands = ()
    if h_band is not None:
        bw = band_half_width if band_half_width is not None else 0.1 * W
        tip = 0.25 * W + a0
        bands = (RefineBand(tip - 2 * h_band, 1.25 * W, 0.6 * W - bw, 0.6 * W + bw, h_band),)
    return GeometryPreset("ct", dims, h, bands)


def hole_plate(width, height, holes, h, bands=()) -> GeometryPreset:
    return GeometryPreset("hole_plate", {"width": width, "height": height}, h,
                          tuple(bands), tuple(tuple(map(float, c)) for c in holes))


# ----------------------------------------------------------------------
# Grid construction
# ----------------------------------------------------------------------
def _size_function(x, length, h, intervals, grading):
    """Target spacing along one axis: ``h_band`` inside intervals, growing linearly away."""
    s = np.full_like(x, h)
    for a, b, hb in intervals:
        dist = np.maximum(np.maximum(a - x, x - b), 0.0)
        s = np.minimum(s, hb + (grading - 1.0) * dist)
    return s


def graded_coordinates(length, h, intervals=(), fixed=(), grading=1.25):
    """1D node coordinates on ``[0, length]``.

    ``intervals`` are ``(a, b, h_band)`` ranges that get spacing at most
    ``h_band``; ``fixed`` coordinates are forced to be nodes.
    """
    if not length > 0:
        raise MeshError(f"domain length must be positive, got {length}")
    if not h > 0:
        raise MeshError(f"element size must be positive, got {h}")
    breaks = {0.0, float(length)}
    clipped = []
    for a, b, hb in intervals:
        a, b = max(a, 0.0), min(b, length)
        if b <= a:
            raise MeshError(f"refinement band [{a}, {b}] does not intersect the domain")
        clipped.append((a, b, hb))
        breaks.update((a, b))
    for f in fixed:
        if 0.0 < f < length:
            breaks.add(float(f))
    breaks = np.array(sorted(breaks))
    breaks = breaks[np.concatenate([[True], np.diff(breaks) > MESH_TOL * max(1.0, length)])]
    breaks[-1] = length
    coords = [np.array([0.0])]
    for p, q in zip(breaks[:-1], breaks[1:]):
        xs = np.linspace(p, q, 2001)
        inv = 1.0 / _size_function(xs, length, h, clipped, grading)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(xs))])
        n = max(1, int(np.ceil(cum[-1] - 1e-9)))
        pts = np.interp(np.linspace(0.0, cum[-1], n + 1), cum, xs)
        pts[0], pts[-1] = p, q
        coords.append(pts[1:])
    return np.concatenate(coords)


def _grid(xs, ys):
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    n0 = (j * nx + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + 1 + nx, n0 + nx])
    return nodes, elements


def _axis_intervals(bands, axis):
    if axis == 0:
        return [(b.xmin, b.xmax, b.h) for b in bands]
    return [(b.ymin, b.ymax, b.h) for b in bands]


def _symmetric_y(height, h, bands, grading, fixed=()):
    """y-coordinates mirrored about the mid-plane (which is always a node line)."""
    half = 0.5 * height
    iv = []
    for a, b, hb in _axis_intervals(bands, 1):
        lo, hi = min(a, height - b), max(b, height - a)
        lo2, hi2 = max(lo, 0.0), min(hi, half)
        if hi2 > lo2:
            iv.append((lo2, hi2, hb))
    fx = [f if f <= half else height - f for f in fixed]
    lower = graded_coordinates(half, h, iv, fx, grading)
    upper = height - lower[::-1]
    return np.concatenate([lower, upper[1:]])


def element_sizes(nodes, elements):
    """Largest edge length of each element."""
    x = nodes[elements]
    edges = np.roll(x, -1, axis=1) - x
    return np.sqrt(np.max(np.sum(edges * edges, axis=-1), axis=1))


def corner_jacobians(nodes, elements):
    """Cross product of the two edges meeting at every corner, shape (n_el, 4)."""
    x = nodes[elements]
    a = np.roll(x, -1, axis=1) - x
    b = np.roll(x, 1, axis=1) - x
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _compact(nodes, elements, keep):
    elements = elements[keep]
    used = np.unique(elements)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return nodes[used], remap[elements]


def boundary_edges(elements):
    """(element, local edge) pairs that belong to exactly one element."""
    e = np.asarray(elements)
    a = e
    b = np.roll(e, -1, axis=1)
    lo, hi = np.minimum(a, b).ravel(), np.maximum(a, b).ravel()
    key = lo * (int(e.max()) + 1) + hi
    _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    on_bnd = counts[inv] == 1
    idx = np.nonzero(on_bnd)[0]
    return np.column_stack([idx // 4, idx % 4])


# ----------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------
def generate_mesh(preset: GeometryPreset) -> Mesh:
    """Build the mesh for ``preset`` and tag its boundary sets."""
    if preset.kind not in KINDS:
        raise MeshError(f"unknown preset kind {preset.kind!r}")
    if not preset.h > 0:
        raise MeshError(f"element size must be positive, got {preset.h}")
    builder = {
        "rectangle": _build_rectangle,
        "pull_strip": _build_pull_strip,
        "ct": _build_ct,
        "hole_plate": _build_hole_plate,
    }[preset.kind]
    nodes, elements = builder(preset)
    jac = corner_jacobians(nodes, elements)
    if np.any(jac <= 0):
        bad = int(np.nonzero(np.any(jac <= 0, axis=1))[0][0])
        raise MeshError(f"element {bad} has a non-positive Jacobian")
    mesh = Mesh(nodes, elements)
    return tag_boundaries(mesh, preset)


def _positive_dims(preset, *keys):
    for k in keys:
        if not preset.dim(k) > 0:
            raise MeshError(f"dimension {k!r} must be positive, got {preset.dim(k)}")


def _build_rectangle(p):
    _positive_dims(p, "width", "height")
    xs = graded_coordinates(p.dim("width"), p.h, _axis_intervals(p.bands, 0), (), p.grading)
    ys = graded_coordinates(p.dim("height"), p.h, _axis_intervals(p.bands, 1), (), p.grading)
    return _grid(xs, ys)


def _build_pull_strip(p):
    _positive_dims(p, "width", "height")
    width, height = p.dim("width"), p.dim("height")
    a0 = p.dims.get("notch_length")
    if not a0:
        xs = graded_coordinates(width, p.h, _axis_intervals(p.bands, 0), (), p.grading)
        ys = _symmetric_y(height, p.h, p.bands, p.grading)
        return _grid(xs, ys)
    if not 0 < a0 < width:
        raise MeshError("notch must end inside the strip")
    mid = 0.5 * height
    nh = p.dims.get("notch_half_width")
    nh = float(nh) if nh is not None else min([p.h] + [b.h for b in p.bands])
    xs = graded_coordinates(width, p.h, _axis_intervals(p.bands, 0), (a0,), p.grading)
    ys = _symmetric_y(height, p.h, p.bands, p.grading, fixed=(mid - nh,))
    nodes, elements = _grid(xs, ys)
    c = nodes[elements].mean(axis=1)
    keep = ~((c[:, 0] < a0) & (np.abs(c[:, 1] - mid) < nh))
    return _compact(nodes, elements, keep)


def _build_ct(p):
    _positive_dims(p, "W", "a0", "pin_radius")
    W, width, height = p.dim("W"), p.dim("width"), p.dim("height")
    r, off = p.dim("pin_radius"), p.dim("pin_offset")
    tip = 0.25 * W + p.dim("a0")
    if tip >= width:
        raise MeshError("notch tip lies outside the specimen")
    mid = 0.5 * height
    if r >= off or mid + off + r >= height:
        raise MeshError("pin holes overlap the notch or the specimen edge")
    h_min = min([p.h] + [b.h for b in p.bands])
    nh = p.dims.get("notch_half_width")
    nh = float(nh) if nh is not None else h_min
    xs = graded_coordinates(width, p.h, _axis_intervals(p.bands, 0) + [(0.25 * W - r, 0.25 * W + r, min(p.h, r / 3))],
                            (tip,), p.grading)
    ys = _symmetric_y(height, p.h, p.bands + (RefineBand(0, 1, mid + off - r, mid + off + r, min(p.h, r / 3)),),
                      p.grading, fixed=(mid - nh,))
    nodes, elements = _grid(xs, ys)
    c = nodes[elements].mean(axis=1)
    keep = ~((c[:, 0] < tip) & (np.abs(c[:, 1] - mid) < nh))
    holes = [(0.25 * W, mid + off, r), (0.25 * W, mid - off, r)]
    return _cut_holes(nodes, elements, keep, holes)


def _build_hole_plate(p):
    _positive_dims(p, "width", "height")
    width, height = p.dim("width"), p.dim("height")
    holes = list(p.holes)
    for i, (xc, yc, r) in enumerate(holes):
        if not r > 0:
            raise MeshError(f"hole {i} has non-positive radius")
        if not (xc - r > 0 and xc + r < width and yc - r > 0 and yc + r < height):
            raise MeshError(f"hole {i} does not lie strictly inside the plate")
    for i in range(len(holes)):
        for j in range(i + 1, len(holes)):
            (x1, y1, r1), (x2, y2, r2) = holes[i], holes[j]
            if np.hypot(x1 - x2, y1 - y2) <= r1 + r2:
                raise MeshError(f"holes {i} and {j} overlap")
    xs = graded_coordinates(width, p.h, _axis_intervals(p.bands, 0), (), p.grading)
    ys = graded_coordinates(height, p.h, _axis_intervals(p.bands, 1), (), p.grading)
    nodes, elements = _grid(xs, ys)
    return _cut_holes(nodes, elements, np.ones(len(elements), bool), holes)


def _snap(nodes, elements, keep, holes):
    c = nodes[elements].mean(axis=1)
    kept_nodes = np.zeros(len(nodes), bool)
    kept_nodes[elements[keep]] = True
    out = nodes.copy()
    for xc, yc, r in holes:
        near = np.hypot(c[:, 0] - xc, c[:, 1] - yc) < r + 1e-9
        ring = np.unique(elements[near & ~keep])
        ring = ring[kept_nodes[ring]]
        rel = nodes[ring] - (xc, yc)
        dist = np.hypot(rel[:, 0], rel[:, 1])
        out[ring] = (xc, yc) + rel * (r / dist)[:, None]
    return out


def _cut_holes(nodes, elements, keep, holes):
    """Delete elements inside the holes and snap the new boundary to the circles.

    Elements that would degenerate after snapping are deleted as well.
    """
    c = nodes[elements].mean(axis=1)
    removed = np.zeros(len(elements), bool)
    for xc, yc, r in holes:
        removed |= np.hypot(c[:, 0] - xc, c[:, 1] - yc) < r
    jac0 = corner_jacobians(nodes, elements).min(axis=1)
    for _ in range(20):
        cur = keep & ~removed
        snapped = _snap(nodes, elements, cur, holes)
        jac = corner_jacobians(snapped, elements).min(axis=1)
        bad = cur & (jac < 0.2 * jac0)
        if not bad.any():
            break
        removed |= bad
    else:
        raise MeshError("snapping to a hole produced inverted elements; refine the mesh")
    return _compact(snapped, elements, keep & ~removed)


# ----------------------------------------------------------------------
# Boundary sets
# ----------------------------------------------------------------------
def _edge_set(mesh, bnd, mask):
    """Boundary edges whose two nodes both satisfy ``mask``."""
    a = mesh.elements[bnd[:, 0], bnd[:, 1]]
    b = mesh.elements[bnd[:, 0], (bnd[:, 1] + 1) % 4]
    return bnd[mask[a] & mask[b]]


def tag_boundaries(mesh: Mesh, preset: GeometryPreset) -> Mesh:
    """Populate node and edge sets according to the preset kind."""
    if preset.kind not in KINDS:
        raise MeshError(f"unknown preset kind {preset.kind!r}")
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    bnd = boundary_edges(mesh.elements)
    on_bnd = np.zeros(mesh.n_nodes, bool)
    on_bnd[mesh.elements[bnd[:, 0], bnd[:, 1]]] = True
    tol = 1e-9 * max(np.ptp(x), np.ptp(y))
    masks = {}
    width, height = preset.dim("width"), preset.dim("height")
    masks["left"] = on_bnd & (np.abs(x) < tol)
    masks["right"] = on_bnd & (np.abs(x - width) < tol)
    masks["bottom"] = on_bnd & (np.abs(y) < tol)
    masks["top"] = on_bnd & (np.abs(y - height) < tol)
    mid = 0.5 * height

    if preset.kind == "pull_strip":
        masks["left_upper"] = masks["left"] & (y > mid + tol)
        masks["left_lower"] = masks["left"] & (y < mid - tol)
        masks["right_mid"] = masks["right"] & (np.abs(y - mid) < tol)
        masks["mid_plane"] = np.abs(y - mid) < tol
    elif preset.kind == "ct":
        W = preset.dim("W")
        r, off = preset.dim("pin_radius"), preset.dim("pin_offset")
        xc = 0.25 * W
        for name, yc, side in (("upper_pin", mid + off, 1.0), ("lower_pin", mid - off, -1.0)):
            ring = on_bnd & (np.abs(np.hypot(x - xc, y - yc) - r) < 1e-6 * r)
            masks[name + "_hole"] = ring
            masks[name] = ring & (side * (y - yc) > tol)
        masks["mid_plane"] = np.abs(y - mid) < tol
    elif preset.kind == "hole_plate":
        for i, (xc, yc, r) in enumerate(preset.holes):
            masks[f"hole_{i}"] = on_bnd & (np.abs(np.hypot(x - xc, y - yc) - r) < 1e-6 * r)

    node_sets = {k: np.nonzero(m)[0] for k, m in masks.items()}
    edge_sets = {k: _edge_set(mesh, bnd, m) for k, m in masks.items() if k != "mid_plane"}
    for k in ("left", "right", "top", "bottom"):
        if len(node_sets[k]) == 0:
            raise MeshError(f"boundary set {k!r} is empty")
    return Mesh(mesh.nodes, mesh.elements, node_sets, edge_sets, mesh.char_length_h)


# ----------------------------------------------------------------------
# Plain-text exchange format
# ----------------------------------------------------------------------
def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"nodes {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"elements {mesh.n_elements}")
    lines += [" ".join(map(str, e)) for e in mesh.elements.tolist()]
    for name in sorted(mesh.node_sets):
        idx = mesh.node_sets[name]
        lines.append(f"set {name} {len(idx)}")
        lines += [str(int(i)) for i in idx]
    for name in sorted(mesh.edge_sets):
        es = mesh.edge_sets[name]
        lines.append(f"edgeset {name} {len(es)}")
        lines += [f"{int(e)} {int(k)}" for e, k in es]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    pos = 0

    def header(expect):
        nonlocal pos
        parts = tokens[pos].split(" ")
        if parts[0] != expect:
            raise MeshError(f"expected {expect!r} header at line {pos + 1}")
        pos += 1
        return parts

    n = int(header("nodes")[1])
    nodes = np.array([list(map(float, tokens[pos + i].split(" "))) for i in range(n)]).reshape(n, 2)
    pos += n
    m = int(header("elements")[1])
    elements = np.array([list(map(int, tokens[pos + i].split(" "))) for i in range(m)],
                        dtype=np.int64).reshape(m, 4)
    pos += m
    node_sets, edge_sets = {}, {}
    while pos < len(tokens) and tokens[pos]:
        kind, name, cnt = tokens[pos].split(" ")
        cnt = int(cnt)
        pos += 1
        rows = tokens[pos:pos + cnt]
        pos += cnt
        if kind == "set":
            node_sets[name] = np.array([int(r) for r in rows], dtype=np.int64)
        elif kind == "edgeset":
            edge_sets[name] = np.array([list(map(int, r.split(" "))) for r in rows],
                                       dtype=np.int64).reshape(cnt, 2)
        else:
            raise MeshError(f"unknown section {kind!r}")
    return Mesh(nodes, elements, node_sets, edge_sets)
