"""Quasi-static peg-in-hole plant.

Frames: the hole frame {H} has its origin at the centre of the hole mouth
with Z pointing out of the hole; the assembly frame {A} shares the axes of
{H} and sits on the hole axis at the middle of the inserted band, i.e. at
(0, 0, -l/2).  Inserting the peg is motion along -Z.

The contact wrench F' is the wrench the peg exerts on the hole, taken about
the origin of {A}.  With this sign every direct stiffness dF_i/dp_i is
positive for a lateral bias or a tilt, and friction from an inserting peg
drags the hole along -Z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import TWO_PI, CrossSection, centroid, discretize, radius_at, signed_distance

MM = 1e-3


class JammingError(RuntimeError):
    """Penetration exceeded the physical cap: the peg is wedged."""

    def __init__(self, depth: float, cap: float):
        super().__init__(f"penetration {depth * 1e3:.4g} mm exceeds jamming cap {cap * 1e3:.4g} mm")
        self.depth = depth
        self.cap = cap


@dataclass(frozen=True)
class PoseState:
    """Relative peg/hole pose: lateral bias at mid-band (m), inserted length (m), RPY of the peg (rad)."""

    d_x: float = 0.0
    d_y: float = 0.0
    l: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.d_x, self.d_y, self.l, self.alpha, self.beta, self.gamma])

    @classmethod
    def from_array(cls, a) -> "PoseState":
        return cls(*map(float, a))


@dataclass(frozen=True)
class Wrench:
    f: np.ndarray
    m: np.ndarray
    frame: str = "A"

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float).reshape(3))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(3))
        if self.frame not in ("A", "S", "W"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.m))):
            raise ValueError("wrench components must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.f, self.m])

    @classmethod
    def from_array(cls, a, frame: str = "A") -> "Wrench":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:], frame)

    @classmethod
    def zero(cls, frame: str = "A") -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    z: float
    theta_x: float
    theta_y: float
    theta_z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta_x, self.theta_y, self.theta_z])


@dataclass(frozen=True)
class MotionIncrement:
    """Robot increment [dx, dy, dz, dtheta_x, dtheta_y, dtheta_z] in {R} (m, rad)."""

    values: np.ndarray
    clipped: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(6)
        if not np.all(np.isfinite(v)):
            raise ValueError("motion increment must be finite")
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        return self.values.copy()


def rpy_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rz(gamma) @ Ry(beta) @ Rx(alpha)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    return np.array([
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
        [-sb, cb * sa, cb * ca],
    ])


def matrix_rpy(R: np.ndarray) -> tuple[float, float, float]:
    beta = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    alpha = math.atan2(R[2, 1], R[2, 2])
    gamma = math.atan2(R[1, 0], R[0, 0])
    return alpha, beta, gamma


def rotvec_matrix(w) -> np.ndarray:
    """Rotation matrix of a rotation vector (Rodrigues)."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    if th < 1e-300:
        return np.eye(3)
    k = w / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * (K @ K)


def wrap_angle(a):
    return -((-np.asarray(a) + math.pi) % (2 * math.pi) - math.pi)


@dataclass(frozen=True)
class FrameOffset:
    """Pose of one frame in another: p_outer = rotation @ p_inner + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10 or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "FrameOffset":
        return cls()

    @classmethod
    def from_rpy(cls, alpha=0.0, beta=0.0, gamma=0.0, translation=(0.0, 0.0, 0.0)) -> "FrameOffset":
        return cls(rpy_matrix(alpha, beta, gamma), np.asarray(translation, dtype=float))

    def inverse(self) -> "FrameOffset":
        Rt = self.rotation.T
        return FrameOffset(Rt, -Rt @ self.translation)

    def compose(self, other: "FrameOffset") -> "FrameOffset":
        """self ∘ other: maps points of other's inner frame into self's outer frame."""
        return FrameOffset(self.rotation @ other.rotation,
                           self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class PlantParams:
    section: CrossSection
    clearance: float = 0.1  # mm, radial gap between hole wall and peg
    L: float = 0.02  # hole depth, m
    E_c: float = 2.0e9  # contact pressure per metre of penetration, N/m^3
    mu: float = 0.2
    tau_mode: str = "zero"  # "zero" | "random"
    tau_scale: float = 0.05  # bound of |tau| / delta in random mode
    tau_seed: int = 0
    penetration_cap: float = 1.0e-3  # m

    def __post_init__(self):
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")
        if self.E_c <= 0:
            raise ValueError("E_c must be positive")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        if self.L <= 0:
            raise ValueError("hole depth must be positive")
        if self.tau_mode not in ("zero", "random"):
            raise ValueError(f"unknown tau_mode {self.tau_mode!r}")


# --------------------------------------------------------------------------
# contact


def peg_points(params: PlantParams, p: PoseState, theta: np.ndarray, radius_mm: np.ndarray,
               s: np.ndarray) -> np.ndarray:
    """Peg surface points expressed in {A}; shape (len(s), len(theta), 3)."""
    R = rpy_matrix(p.alpha, p.beta, p.gamma)
    r = radius_mm * MM
    local = np.empty((len(s), len(theta), 3))
    local[..., 0] = r * np.cos(theta)
    local[..., 1] = r * np.sin(theta)
    local[..., 2] = s[:, None]
    return local @ R.T + np.array([p.d_x, p.d_y, 0.0])


def _hole_distance(params: PlantParams, q: np.ndarray):
    """Signed penetration beyond the hole wall (m) and outward wall normal at points q in {A}."""
    cx, cy = centroid(params.section)
    pts_mm = q[..., :2] / MM + np.array([cx, cy])
    sd, grad = signed_distance(params.section, pts_mm)
    return (sd - params.clearance) * MM, grad


def penetration(params: PlantParams, p: PoseState, node, s: float) -> float:
    """Interference of one peg boundary point (a BoundaryPoint) at axial coordinate s (m)."""
    q = peg_points(params, p, np.array([node.theta]), np.array([node.radius]), np.array([float(s)]))
    depth, _ = _hole_distance(params, q)
    return max(0.0, float(depth.ravel()[0]))


@dataclass(frozen=True)
class ContactField:
    """Per-element quadrature data behind one fpm evaluation (flattened)."""

    points: np.ndarray  # (N, 3) lever arms in {A}
    forces: np.ndarray  # (N, 3) element forces on the hole
    depth: np.ndarray  # (N,) cell-mean penetration (m)


def _positive_part_moments(a: np.ndarray, b: np.ndarray):
    """Integral and first moment over u in [0, 1] of max(0, a + (b - a) u)."""
    i0 = np.zeros_like(a)
    i1 = np.zeros_like(a)
    both = (a >= 0) & (b >= 0)
    i0[both] = 0.5 * (a[both] + b[both])
    i1[both] = (a[both] + 2 * b[both]) / 6.0
    down = (a > 0) & (b < 0)
    u0 = a[down] / (a[down] - b[down])
    i0[down] = 0.5 * a[down] * u0
    i1[down] = a[down] * u0 ** 2 / 6.0
    up = (a < 0) & (b > 0)
    u0 = a[up] / (a[up] - b[up])
    i0[up] = 0.5 * b[up] * (1 - u0)
    i1[up] = b[up] / (1 - u0) * (1 / 3 - u0 / 2 + u0 ** 3 / 6)
    return i0, i1


def _columns(params, p, theta, edges, radius=None):
    """Band data for theta columns: lever arms, unit-angle forces and wrench integrand.

    Returns (q, f, depth, g, worst) where q, f are (n_s, k, 3), depth is
    (n_s, k) and g is the (k, 6) wrench per unit theta.
    """
    if radius is None:
        radius = radius_at(params.section, theta)
    q_edge = peg_points(params, p, theta, radius, edges)
    d_edge, n_edge = _hole_distance(params, q_edge)
    i0, i1 = _positive_part_moments(d_edge[:-1], d_edge[1:])
    u = np.divide(i1, i0, out=np.full_like(i0, 0.5), where=i0 > 0)[..., None]
    q = q_edge[:-1] + u * (q_edge[1:] - q_edge[:-1])
    normal = n_edge[:-1] * (1 - u) + n_edge[1:] * u
    nn = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = np.divide(normal, nn, out=np.zeros_like(normal), where=nn > 0)
    # normal pressure delta = E_c * penetration over element area R dtheta ds
    ds = edges[1] - edges[0]
    press = params.E_c * i0 * (radius * MM)[None, :] * ds
    f = np.stack([press * normal[..., 0], press * normal[..., 1], -params.mu * press], axis=-1)
    g = np.concatenate([f.sum(axis=0), np.cross(q, f).sum(axis=0)], axis=-1)
    return q, f, i0, g, float(d_edge.max())


ADAPT_TOL = 1e-4  # per-component tolerance, relative to the coarse force and moment norms
MIN_WIDTH = 1e-5  # rad


def contact_field(params: PlantParams, p: PoseState, grid=(64, 16), rng=None,
                  tol: float = ADAPT_TOL, min_width: float = MIN_WIDTH) -> ContactField:
    """Quadrature elements of the contact integral.

    Theta cells follow the section's vertex spans and are integrated by
    adaptive Simpson on the wrench integrand, so narrow features (a peg
    corner entering the rounded hole corner, a contact front) are resolved.
    Along the axis each cell integrates the positive part of the linearly
    interpolated penetration exactly.
    """
    n_theta, n_s = grid
    disc = discretize(params.section, n_theta)
    l = float(p.l)
    if l <= 0:
        z = np.zeros((0, 3))
        return ContactField(z, z.copy(), np.zeros(0))
    edges = -l / 2 + np.arange(n_s + 1) * (l / n_s)

    store_q, store_f, store_d, store_w = [], [], [], []
    worst = -np.inf

    def evaluate(theta, radius=None):
        nonlocal worst
        q, f, d, g, w = _columns(params, p, theta, edges, radius)
        worst = max(worst, w)
        if worst > params.penetration_cap:
            raise JammingError(worst, params.penetration_cap)
        return q, f, d, g

    def split(e, sizes):
        cuts = np.cumsum(sizes)[:-1]
        parts = [np.split(x, cuts, axis=1) for x in e[:3]] + [np.split(e[3], cuts)]
        return [tuple(pp[i] for pp in parts) for i in range(len(sizes))]

    n = len(disc.theta)
    lo, hi = disc.edges[:-1], disc.edges[1:]
    mid = disc.theta
    quarters = np.concatenate([0.5 * (lo + mid), 0.5 * (mid + hi)])
    theta0 = np.concatenate([disc.edges, mid, quarters])
    radius0 = np.concatenate([disc.edge_radius, disc.radius, radius_at(params.section, quarters)])
    e_edge, em, e1, e2 = split(evaluate(theta0, radius0), [n + 1, n, n, n])
    ea = tuple(x[:, :-1] for x in e_edge[:3]) + (e_edge[3][:-1],)
    eb = tuple(x[:, 1:] for x in e_edge[:3]) + (e_edge[3][1:],)
    h = hi - lo
    coarse = (h[:, None] / 6 * (ea[3] + 4 * em[3] + eb[3])).sum(axis=0)
    scale = np.repeat([np.linalg.norm(coarse[:3]), np.linalg.norm(coarse[3:])], 3)
    tol = tol * np.maximum(scale, 1e-300)

    active = (lo, hi, ea, em, eb)
    while active[0].size:
        lo, hi, ea, em, eb = active
        h = hi - lo
        mid = 0.5 * (lo + hi)
        if e1 is None:
            k = len(lo)
            e1, e2 = split(evaluate(np.concatenate([0.5 * (lo + mid), 0.5 * (mid + hi)])), [k, k])
        whole = h[:, None] / 6 * (ea[3] + 4 * em[3] + eb[3])
        halves = h[:, None] / 12 * (ea[3] + 4 * e1[3] + 2 * em[3] + 4 * e2[3] + eb[3])
        err = np.abs(halves - whole)
        ok = np.all(err <= 15 * tol * (h / TWO_PI)[:, None], axis=1) | (h < min_width)
        if ok.any():
            for e, wt in ((ea, 1), (e1, 4), (em, 2), (e2, 4), (eb, 1)):
                store_q.append(e[0][:, ok])
                store_f.append(e[1][:, ok] * (wt * h[ok] / 12)[None, :, None])
                store_d.append(e[2][:, ok])
                store_w.append(np.broadcast_to(wt * h[ok] / 12, e[2][:, ok].shape))
        bad = ~ok
        if not bad.any():
            break

        def take(e):
            return (e[0][:, bad], e[1][:, bad], e[2][:, bad], e[3][bad])

        def cat(x, y):
            return tuple(np.concatenate([x[i], y[i]], axis=1) for i in range(3)) + \
                (np.concatenate([x[3], y[3]]),)

        A, M, B, Q1, Q2 = (take(e) for e in (ea, em, eb, e1, e2))
        active = (np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]]),
                  cat(A, M), cat(Q1, Q2), cat(M, B))
        e1 = e2 = None

    if not store_q:
        z = np.zeros((0, 3))
        return ContactField(z, z.copy(), np.zeros(0))
    q = np.concatenate([x.reshape(-1, 3) for x in store_q])
    forces = np.concatenate([x.reshape(-1, 3) for x in store_f])
    depth = np.concatenate([x.ravel() for x in store_d])
    live = depth > 0
    q, forces, depth = q[live], forces[live], depth[live]
    if params.tau_mode == "random":
        if rng is None:
            rng = np.random.default_rng(params.tau_seed)
        fn = forces[:, :2]
        press = np.linalg.norm(fn, axis=1)
        tau = rng.uniform(-params.tau_scale, params.tau_scale, size=press.shape)
        # tangential direction z x n, magnitude tau * normal pressure
        forces = forces.copy()
        forces[:, 0] += -tau * fn[:, 1]
        forces[:, 1] += tau * fn[:, 0]
    return ContactField(q, forces, depth)


def fpm(params: PlantParams, p: PoseState, grid=(64, 16), rng=None,
        tol: float = ADAPT_TOL, min_width: float = MIN_WIDTH) -> Wrench:
    """Force-pose mapping: contact wrench in {A} summed over the quadrature elements.

    ``tol`` is the adaptive refinement tolerance relative to the coarse
    force and moment norms and ``min_width`` (rad) stops refinement.  Raises JammingError when any element
    penetrates deeper than the cap.
    """
    cf = contact_field(params, p, grid, rng, tol, min_width)
    if cf.forces.size == 0:
        return Wrench.zero("A")
    F = cf.forces.sum(axis=0)
    M = np.cross(cf.points, cf.forces).sum(axis=0)
    return Wrench(F, M, "A")


# --------------------------------------------------------------------------
# couplings


def transform_wrench(w: Wrench, offset: FrameOffset, frame: str) -> Wrench:
    """Re-express a wrench taken about the inner frame origin in the outer frame."""
    f = offset.rotation @ w.f
    m = offset.rotation @ w.m + np.cross(offset.translation, f)
    return Wrench(f, m, frame)


def output_equation(params: PlantParams, p: PoseState, offset_SA: FrameOffset, grid=(64, 16),
                    rng=None, tol: float = ADAPT_TOL, min_width: float = MIN_WIDTH) -> Wrench:
    """Sensor reading F = CO(FPM(p)) with offset_SA the pose of {A} in {S}."""
    return transform_wrench(fpm(params, p, grid, rng, tol, min_width), offset_SA, "S")


def couple_state(dr, offset_RA: FrameOffset) -> np.ndarray:
    """CS: robot increment (in {R}) -> rigid increment of the peg point at the {A} origin, in {A} axes.

    dr = [v (3), w (3)]: translation of the TCP and small rotation vector, both in {R}.
    """
    dr = np.asarray(dr, dtype=float)
    v, w = dr[:3], dr[3:]
    Rt = offset_RA.rotation.T
    return np.concatenate([Rt @ (v + np.cross(w, offset_RA.translation)), Rt @ w])


def peg_frame(p: PoseState) -> tuple[np.ndarray, np.ndarray]:
    """Peg tip position in {H} and peg orientation for a relative pose."""
    R = rpy_matrix(p.alpha, p.beta, p.gamma)
    mid = np.array([p.d_x, p.d_y, -p.l * R[2, 2] / 2.0])
    tip = mid - R @ np.array([0.0, 0.0, p.l / 2.0])
    return tip, R


def pose_from_frame(tip: np.ndarray, R: np.ndarray, L: float) -> tuple[PoseState, bool]:
    """Relative pose from the peg tip and orientation, clamping the depth to [0, L]."""
    l = -tip[2] / R[2, 2]
    clamped = False
    if l < 0.0 or l > L:
        l = min(max(l, 0.0), L)
        clamped = True
        tip = tip.copy()
        tip[2] = -l * R[2, 2]
    mid = tip + R @ np.array([0.0, 0.0, l / 2.0])
    a, b, g = matrix_rpy(R)
    return PoseState(float(mid[0]), float(mid[1]), float(l), a, b, g), clamped


def kinematics(p: PoseState, dp, L: float) -> tuple[PoseState, bool]:
    """KNT: move the peg rigidly by dp = [translation of the {A}-origin peg point, rotation vector]."""
    dp = np.asarray(dp, dtype=float)
    tip, R = peg_frame(p)
    mid = np.array([p.d_x, p.d_y, -p.l * R[2, 2] / 2.0])
    dR = rotvec_matrix(dp[3:])
    new_R = dR @ R
    new_tip = mid + dp[:3] + dR @ (tip - mid)
    return pose_from_frame(new_tip, new_R, L)


def state_equation(p: PoseState, dr, offset_RA: FrameOffset, L: float) -> tuple[PoseState, bool]:
    """p' = KNT(p, CS(dr)).  Returns the new pose and whether the depth was clamped to [0, L]."""
    return kinematics(p, couple_state(dr, offset_RA), L)
