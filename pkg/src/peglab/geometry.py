"""Cross-section kernel for columnar pegs.

A section is a closed, counterclockwise chain of straight edges and circular
arcs (millimetres).  Everything the contact model needs is derived from the
polar description seen from the area centroid: the radius R(theta) of the
boundary along a ray and the angle chi(theta) of the outward normal there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi
_CLOSE_TOL = 1e-9
_HIT_TOL = 1e-9


class SectionError(ValueError):
    """Raised for degenerate, open, clockwise, self-intersecting or non-star sections."""


@dataclass(frozen=True)
class Line:
    start: tuple[float, float]
    end: tuple[float, float]

    def point(self, t):
        t = np.asarray(t, dtype=float)
        (x0, y0), (x1, y1) = self.start, self.end
        return np.stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)], axis=-1)

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)


@dataclass(frozen=True)
class Arc:
    """Circular arc; ``sweep`` > 0 runs counterclockwise around ``center``.

    On a counterclockwise boundary a positive sweep bulges outward (convex),
    a negative sweep is a concave scallop.
    """

    center: tuple[float, float]
    radius: float
    start_angle: float
    sweep: float

    def point(self, t):
        phi = self.start_angle + np.asarray(t, dtype=float) * self.sweep
        cx, cy = self.center
        return np.stack([cx + self.radius * np.cos(phi), cy + self.radius * np.sin(phi)], axis=-1)

    @property
    def start(self) -> tuple[float, float]:
        p = self.point(0.0)
        return (float(p[0]), float(p[1]))

    @property
    def end(self) -> tuple[float, float]:
        p = self.point(1.0)
        return (float(p[0]), float(p[1]))

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius


Segment = Union[Line, Arc]


@dataclass(frozen=True)
class BoundaryPoint:
    theta: float
    radius: float
    normal_angle: float


@dataclass(frozen=True)
class Discretization:
    """Angular quadrature nodes of a section: sum(f(theta) * weights) ~ closed integral of f dtheta."""

    theta: np.ndarray
    radius: np.ndarray
    normal_angle: np.ndarray
    weights: np.ndarray
    edges: np.ndarray  # n + 1 cell boundaries, edges[-1] = edges[0] + 2*pi
    edge_radius: np.ndarray

    def __len__(self) -> int:
        return len(self.theta)

    def points(self) -> list[BoundaryPoint]:
        return [BoundaryPoint(float(t), float(r), float(c))
                for t, r, c in zip(self.theta, self.radius, self.normal_angle)]


@dataclass(frozen=True)
class CrossSection:
    segments: tuple[Segment, ...]
    name: str = "section"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        validate(self)

    def translated(self, dx: float, dy: float) -> "CrossSection":
        segs = []
        for seg in self.segments:
            if isinstance(seg, Line):
                segs.append(Line((seg.start[0] + dx, seg.start[1] + dy), (seg.end[0] + dx, seg.end[1] + dy)))
            else:
                segs.append(Arc((seg.center[0] + dx, seg.center[1] + dy), seg.radius, seg.start_angle, seg.sweep))
        return CrossSection(tuple(segs), self.name)

    def scaled(self, factor: float) -> "CrossSection":
        segs = []
        for seg in self.segments:
            if isinstance(seg, Line):
                segs.append(Line(tuple(factor * c for c in seg.start), tuple(factor * c for c in seg.end)))
            else:
                segs.append(Arc(tuple(factor * c for c in seg.center), factor * seg.radius,
                                seg.start_angle, seg.sweep))
        return CrossSection(tuple(segs), self.name)

    def centered(self) -> "CrossSection":
        cx, cy = centroid(self)
        return self.translated(-cx, -cy)


# --------------------------------------------------------------------------
# validation


def _polyline(seg: Segment, n_arc: int = 48) -> np.ndarray:
    if isinstance(seg, Line):
        return np.array([seg.start, seg.end], dtype=float)
    n = max(2, int(math.ceil(n_arc * abs(seg.sweep) / TWO_PI)) + 1)
    return seg.point(np.linspace(0.0, 1.0, n))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    eps = 1e-12
    return (d1 * d2 < -eps) and (d3 * d4 < -eps)


def validate(section: CrossSection) -> None:
    segs = section.segments
    if len(segs) == 0:
        raise SectionError(f"{section.name}: empty boundary")
    for seg in segs:
        if isinstance(seg, Arc) and (seg.radius <= 0 or seg.sweep == 0):
            raise SectionError(f"{section.name}: degenerate arc {seg}")
        if isinstance(seg, Line) and seg.length == 0:
            raise SectionError(f"{section.name}: zero-length edge {seg}")
    for a, b in zip(segs, segs[1:] + segs[:1]):
        if math.dist(a.end, b.start) > _CLOSE_TOL * max(1.0, _extent(section)):
            raise SectionError(f"{section.name}: boundary not closed between {a} and {b}")
    area = signed_area(section)
    if abs(area) < 1e-12:
        raise SectionError(f"{section.name}: zero-area boundary")
    if area < 0:
        raise SectionError(f"{section.name}: boundary must be counterclockwise")
    # segment-pair intersection scan on a fine polyline
    pieces = []
    for k, seg in enumerate(segs):
        pts = _polyline(seg)
        pieces.extend((k, pts[i], pts[i + 1]) for i in range(len(pts) - 1))
    m = len(pieces)
    for i in range(m):
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            if _segments_cross(pieces[i][1], pieces[i][2], pieces[j][1], pieces[j][2]):
                raise SectionError(f"{section.name}: boundary self-intersects")


def _extent(section: CrossSection) -> float:
    pts = np.concatenate([_polyline(s, 8) for s in section.segments])
    return float(np.max(np.abs(pts)))


# --------------------------------------------------------------------------
# area, centroid

def _moments(section: CrossSection) -> tuple[float, float, float]:
    """Green's-theorem area and first moments (A, Qx = int x dA, Qy = int y dA)."""
    area = qx = qy = 0.0
    for seg in section.segments:
        if isinstance(seg, Line):
            (x0, y0), (x1, y1) = seg.start, seg.end
            cross = x0 * y1 - x1 * y0
            area += 0.5 * cross
            qx += (x0 + x1) * cross / 6.0
            qy += (y0 + y1) * cross / 6.0
        else:
            a, b = seg.center
            rho = seg.radius
            f0, f1 = seg.start_angle, seg.start_angle + seg.sweep

            def prim(f):
                s, c = math.sin(f), math.cos(f)
                ar = 0.5 * (a * rho * s + rho * rho * f - b * rho * c)
                mx = 0.5 * rho * (a * a * s + 2 * a * rho * (f / 2 + math.sin(2 * f) / 4) + rho * rho * (s - s ** 3 / 3))
                my = 0.5 * rho * (-b * b * c + 2 * b * rho * (f / 2 - math.sin(2 * f) / 4) + rho * rho * (-c + c ** 3 / 3))
                return ar, mx, my

            p0, p1 = prim(f0), prim(f1)
            # prim integrates x^2 dy / 2 and -y^2 dx / 2; the line terms use the
            # origin-homogeneous forms, which differ by d(x^2 y / 6) and d(x y^2 / 6)
            (x0, y0), (x1, y1) = seg.start, seg.end
            area += p1[0] - p0[0]
            qx += p1[1] - p0[1] - (x1 * x1 * y1 - x0 * x0 * y0) / 6.0
            qy += p1[2] - p0[2] + (x1 * y1 * y1 - x0 * y0 * y0) / 6.0
    return area, qx, qy


def signed_area(section: CrossSection) -> float:
    return _moments(section)[0]


def area(section: CrossSection) -> float:
    return abs(signed_area(section))


def centroid(section: CrossSection) -> tuple[float, float]:
    """Area centroid of the enclosed region (mm)."""
    if "centroid" in section._cache:
        return section._cache["centroid"]
    a, qx, qy = _moments(section)
    if abs(a) < 1e-12:
        raise SectionError(f"{section.name}: zero-area boundary")
    c = (qx / a, qy / a)
    section._cache["centroid"] = c
    return c


# --------------------------------------------------------------------------
# polar description from the centroid


def _ray_hits(section: CrossSection, theta: np.ndarray):
    """Intersect rays from the centroid with every segment.

    Returns per-ray lists of (distance, outward normal angle).
    """
    cx, cy = centroid(section)
    ux, uy = np.cos(theta), np.sin(theta)
    hits = [[] for _ in range(len(theta))]
    for seg in section.segments:
        if isinstance(seg, Line):
            (x0, y0), (x1, y1) = seg.start, seg.end
            ex, ey = x1 - x0, y1 - y0
            den = ux * (-ey) - uy * (-ex)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t = ((x0 - cx) * (-ey) - (y0 - cy) * (-ex)) / den
                lam = (ux * (y0 - cy) - uy * (x0 - cx)) / den
            ok = (np.abs(den) > 1e-15) & (t > 0) & (lam >= -_HIT_TOL) & (lam <= 1 + _HIT_TOL)
            nrm = math.atan2(-ex, ey)
            for k in np.flatnonzero(ok):
                hits[k].append((float(t[k]), nrm))
        else:
            ox, oy = cx - seg.center[0], cy - seg.center[1]
            b = ox * ux + oy * uy
            c = ox * ox + oy * oy - seg.radius ** 2
            disc = b * b - c
            for root_sign in (-1.0, 1.0):
                with np.errstate(invalid="ignore"):
                    t = -b + root_sign * np.sqrt(disc)
                valid = (disc >= 0) & (t > 0)
                for k in np.flatnonzero(valid):
                    px = ox + t[k] * ux[k]
                    py = oy + t[k] * uy[k]
                    phi = math.atan2(py, px)
                    rel = ((phi - seg.start_angle) * math.copysign(1.0, seg.sweep)) % TWO_PI
                    if rel <= abs(seg.sweep) + _HIT_TOL or rel >= TWO_PI - _HIT_TOL:
                        nrm = phi if seg.sweep > 0 else phi + math.pi
                        hits[k].append((float(t[k]), math.atan2(math.sin(nrm), math.cos(nrm))))
    return hits


def radius_at(section: CrossSection, theta) -> np.ndarray:
    """Vectorised boundary radius R(theta) for a star-shaped section."""
    theta = np.asarray(theta, dtype=float)
    cx, cy = centroid(section)
    ux, uy = np.cos(theta), np.sin(theta)
    best = np.full(theta.shape, -np.inf)
    for seg in section.segments:
        if isinstance(seg, Line):
            (x0, y0), (x1, y1) = seg.start, seg.end
            ex, ey = x1 - x0, y1 - y0
            den = -ux * ey + uy * ex
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t = (-(x0 - cx) * ey + (y0 - cy) * ex) / den
                lam = (ux * (y0 - cy) - uy * (x0 - cx)) / den
            ok = (np.abs(den) > 1e-15) & (t > 0) & (lam >= -_HIT_TOL) & (lam <= 1 + _HIT_TOL)
        else:
            ox, oy = cx - seg.center[0], cy - seg.center[1]
            b = ox * ux + oy * uy
            disc = b * b - (ox * ox + oy * oy - seg.radius ** 2)
            with np.errstate(invalid="ignore"):
                t = -b + np.sqrt(disc)
            phi = np.arctan2(oy + t * uy, ox + t * ux)
            rel = ((phi - seg.start_angle) * math.copysign(1.0, seg.sweep)) % TWO_PI
            ok = (disc >= 0) & (t > 0) & ((rel <= abs(seg.sweep) + _HIT_TOL) | (rel >= TWO_PI - _HIT_TOL))
        best = np.where(ok, np.maximum(best, np.where(ok, t, -np.inf)), best)
    if not np.all(np.isfinite(best)):
        raise SectionError(f"{section.name}: some rays miss the boundary")
    return best


def _merge_hits(hit_list, theta, name, scale):
    if not hit_list:
        raise SectionError(f"{name}: ray at theta={theta:.6g} misses the boundary")
    hit_list = sorted(hit_list)
    groups = [[hit_list[0]]]
    for h in hit_list[1:]:
        if abs(h[0] - groups[-1][0][0]) <= 1e-7 * scale:
            groups[-1].append(h)
        else:
            groups.append([h])
    if len(groups) > 1:
        ds = ", ".join(f"{g[0][0]:.6g}" for g in groups)
        raise SectionError(f"{name}: not star-shaped about its centroid "
                           f"(ray at theta={theta:.6g} hits boundary at distances {ds})")
    group = groups[0]
    r = float(np.mean([h[0] for h in group]))
    if len(group) == 1:
        return r, group[0][1]
    # ray through a vertex: bisect the adjacent edge normals
    sx = sum(math.cos(h[1]) for h in group)
    sy = sum(math.sin(h[1]) for h in group)
    return r, math.atan2(sy, sx)


def boundary_sample(section: CrossSection, theta: float) -> BoundaryPoint:
    """R(theta) and outward normal angle chi(theta) along the ray from the centroid."""
    th = np.array([float(theta)])
    hits = _ray_hits(section, th)
    r, chi = _merge_hits(hits[0], float(theta), section.name, _extent(section))
    return BoundaryPoint(float(theta), r, chi)


def _vertex_angles(section: CrossSection) -> np.ndarray:
    cx, cy = centroid(section)
    angs = [math.atan2(s.start[1] - cy, s.start[0] - cx) % TWO_PI for s in section.segments]
    return np.array(angs)


def max_radius(section: CrossSection) -> float:
    """Largest distance from the centroid to the boundary (mm)."""
    cx, cy = centroid(section)
    best = 0.0
    for seg in section.segments:
        for p in (seg.start, seg.end):
            best = max(best, math.dist(p, (cx, cy)))
        if isinstance(seg, Arc):
            ox, oy = seg.center[0] - cx, seg.center[1] - cy
            d = math.hypot(ox, oy)
            if d < 1e-12:
                best = max(best, seg.radius)
                continue
            phi = math.atan2(oy, ox)
            # farthest point lies along the centroid->center direction
            frac = (phi - seg.start_angle) / seg.sweep
            period = TWO_PI / abs(seg.sweep)
            if (frac % period) <= 1.0:
                best = max(best, d + seg.radius)
    return best


def discretize(section: CrossSection, n_theta: int) -> Discretization:
    """Composite midpoint nodes in theta.

    Nodes are allocated to the angular spans between boundary vertices in
    proportion to their width, so no node sits on a vertex and every node
    carries the normal of the segment it lies on.  Weights sum to 2*pi.
    The node count is n_theta up to per-span rounding.
    """
    if n_theta < 4:
        raise ValueError("n_theta must be at least 4")
    cache_key = ("disc", n_theta)
    if cache_key in section._cache:
        return section._cache[cache_key]
    breaks = np.unique(np.round(_vertex_angles(section), 14) % TWO_PI)
    if len(breaks) == 1:
        # single closed arc (circle); anchor cells at theta = 0
        breaks = np.array([0.0])
    spans = np.diff(np.concatenate([breaks, [breaks[0] + TWO_PI]]))
    keep = spans > 1e-12
    breaks, spans = breaks[keep], spans[keep]
    if len(spans) > n_theta:
        raise ValueError(f"n_theta={n_theta} is smaller than the number of boundary spans ({len(spans)})")
    # nodes per span in proportion to its width, rounded span by span so that
    # congruent spans (and so mirror-image spans) get equal counts; the total
    # may differ from n_theta by at most the number of spans
    raw = np.round(spans / TWO_PI * n_theta, 9)
    counts = np.maximum(1, np.floor(raw + 0.5).astype(int))
    thetas, weights = [], []
    for start, span, c in zip(breaks, spans, counts):
        h = span / c
        thetas.append(start + (np.arange(c) + 0.5) * h)
        weights.append(np.full(c, h))
    theta = np.concatenate(thetas)
    theta = np.where(theta > math.pi, theta - TWO_PI, theta)
    weights = np.concatenate(weights)
    hits = _ray_hits(section, theta)
    scale = _extent(section)
    rc = [_merge_hits(h, t, section.name, scale) for h, t in zip(hits, theta)]
    radius = np.array([x[0] for x in rc])
    normal = np.array([x[1] for x in rc])
    order = np.argsort(theta)
    theta, radius, normal, weights = theta[order], radius[order], normal[order], weights[order]
    edges = np.append(theta - weights / 2, theta[-1] + weights[-1] / 2)
    ehits = _ray_hits(section, edges)
    edge_radius = np.array([_merge_hits(h, t, section.name, scale)[0] for h, t in zip(ehits, edges)])
    disc = Discretization(theta, radius, normal, weights, edges, edge_radius)
    section._cache[cache_key] = disc
    return disc


# --------------------------------------------------------------------------
# signed distance (used by the plant for the clearance-offset hole wall)


def _segment_arrays(section: CrossSection):
    if "segarr" not in section._cache:
        lines = [seg for seg in section.segments if isinstance(seg, Line)]
        arcs = [seg for seg in section.segments if not isinstance(seg, Line)]
        la = np.array([seg.start for seg in lines]).reshape(-1, 2)
        le = np.array([seg.end for seg in lines]).reshape(-1, 2) - la
        arr = {
            "la": la, "le": le, "ll": np.einsum("ij,ij->i", le, le),
            "ac": np.array([seg.center for seg in arcs]).reshape(-1, 2),
            "ar": np.array([seg.radius for seg in arcs]),
            "a0": np.array([seg.start_angle for seg in arcs]),
            "asw": np.array([seg.sweep for seg in arcs]),
            "ap0": np.array([seg.start for seg in arcs]).reshape(-1, 2),
            "ap1": np.array([seg.end for seg in arcs]).reshape(-1, 2),
        }
        section._cache["segarr"] = arr
    return section._cache["segarr"]


def signed_distance(section: CrossSection, pts: np.ndarray):
    """Signed distance of points to the boundary (positive outside) and its unit gradient.

    ``pts`` has shape (..., 2).  Returns (dist, grad) with grad of shape (..., 2).
    """
    pts = np.asarray(pts, dtype=float)
    flat = pts.reshape(-1, 2)
    arr = _segment_arrays(section)
    cands = []
    if len(arr["la"]):
        rel = flat[:, None, :] - arr["la"][None]
        t = np.clip(np.einsum("nmk,mk->nm", rel, arr["le"]) / arr["ll"], 0.0, 1.0)
        cands.append(arr["la"][None] + t[..., None] * arr["le"][None])
    if len(arr["ar"]):
        v = flat[:, None, :] - arr["ac"][None]
        phi = np.arctan2(v[..., 1], v[..., 0])
        rel = ((phi - arr["a0"]) * np.sign(arr["asw"])) % TWO_PI
        on_arc = rel <= np.abs(arr["asw"])
        on_circle = arr["ac"][None] + arr["ar"][None, :, None] * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        d0 = np.sum((flat[:, None] - arr["ap0"][None]) ** 2, axis=-1)
        d1 = np.sum((flat[:, None] - arr["ap1"][None]) ** 2, axis=-1)
        endp = np.where((d0 <= d1)[..., None], arr["ap0"][None], arr["ap1"][None])
        cands.append(np.where(on_arc[..., None], on_circle, endp))
    cand = np.concatenate(cands, axis=1)
    d2 = np.sum((flat[:, None] - cand) ** 2, axis=-1)
    k = np.argmin(d2, axis=1)
    idx = np.arange(len(flat))
    near = cand[idx, k]
    dist = np.sqrt(d2[idx, k])
    sign = np.where(_inside(section, flat), -1.0, 1.0)
    diff = flat - near
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = sign[:, None] * diff / dist[:, None]
    grad = np.nan_to_num(grad)
    return (sign * dist).reshape(pts.shape[:-1]), grad.reshape(pts.shape)


def _inside(section: CrossSection, flat: np.ndarray) -> np.ndarray:
    """Point-in-region test against the exact polar radius of the star-shaped section."""
    cx, cy = centroid(section)
    v = flat - np.array([cx, cy])
    rr = np.hypot(v[:, 0], v[:, 1])
    return rr < radius_at(section, np.arctan2(v[:, 1], v[:, 0]))


# --------------------------------------------------------------------------
# constructors


def polygon(vertices: Sequence[tuple[float, float]], name: str = "polygon") -> CrossSection:
    vs = [tuple(map(float, v)) for v in vertices]
    return CrossSection(tuple(Line(vs[i], vs[(i + 1) % len(vs)]) for i in range(len(vs))), name)


def circle(radius: float, name: str = "cylinder", center=(0.0, 0.0)) -> CrossSection:
    return CrossSection((Arc(tuple(center), float(radius), 0.0, TWO_PI),), name)


def rectangle(width: float, height: float, name: str = "cuboid") -> CrossSection:
    w, h = width / 2.0, height / 2.0
    return polygon([(-w, -h), (w, -h), (w, h), (-w, h)], name)


def regular_polygon(n: int, circumradius: float, name: str | None = None,
                    rotation: float = 0.0) -> CrossSection:
    """Regular n-gon with a vertex at angle ``rotation`` (symmetric about that ray)."""
    angs = rotation + TWO_PI * np.arange(n) / n
    verts = [(circumradius * math.cos(a), circumradius * math.sin(a)) for a in angs]
    return polygon(verts, name or f"{n}-gon")


def stadium(length: float, radius: float, name: str = "stadium") -> CrossSection:
    """Cuboid with semicircular caps along x: a cylinder-plus-cuboid compound."""
    a = length / 2.0
    segs = (
        Line((-a, -radius), (a, -radius)),
        Arc((a, 0.0), radius, -math.pi / 2, math.pi),
        Line((a, radius), (-a, radius)),
        Arc((-a, 0.0), radius, math.pi / 2, math.pi),
    )
    return CrossSection(segs, name)


def d_shape(radius: float, flat: float, name: str = "d-shape") -> CrossSection:
    """Circle with one flat cut at x = -flat (cylinder merged with a cuboid face)."""
    if not 0 < flat < radius:
        raise ValueError("flat must lie inside the circle")
    half = math.acos(-flat / radius)
    top = (radius * math.cos(half), radius * math.sin(half))
    segs = (
        Arc((0.0, 0.0), radius, -half, 2 * half),
        Line(top, (top[0], -top[1])),
    )
    return CrossSection(segs, name)


def double_circle(radius: float, separation: float, name: str = "dual-cylinder") -> CrossSection:
    """Union of two equal circles centred at (+-separation/2, 0); they must overlap."""
    h = separation / 2.0
    if not 0 < h < radius:
        raise ValueError("circles must overlap (separation < 2*radius)")
    cusp = math.sqrt(radius ** 2 - h ** 2)
    a = math.atan2(cusp, -h)  # angle of the upper cusp seen from the right centre
    segs = (
        Arc((h, 0.0), radius, -a, 2 * a),
        Arc((-h, 0.0), radius, math.pi - a, 2 * a),
    )
    return CrossSection(segs, name)


def from_points(pts: Iterable, name: str) -> CrossSection:
    return polygon(list(pts), name)
