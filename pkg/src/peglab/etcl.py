"""Gain reconfiguration across peg geometries.

Stiffnesses are measured in generalised coordinates so that each of them
scales like E_c * R_hat * L for a fixed cross-section shape:

* x, y: lateral bias d (m) and force F (N), as is;
* z: fractional depth l / L and axial force, i.e. L * dF_z/dl;
* alpha, beta: tilt expressed as the sideways travel of the band end
  (angle * L/2) and the moment expressed as an end force (M / (L/2)).

Physical loop gains follow from ``physical_stiffness``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .controller import ComplianceGains
from .geometry import TWO_PI, CrossSection, discretize, max_radius, radius_at
from .plant import MM, JammingError, PlantParams, PoseState, _hole_distance, fpm, peg_points

COMPONENTS = ("x", "y", "z", "alpha", "beta")
_INDEX = {"x": 0, "y": 1, "z": 2, "alpha": 3, "beta": 4}


class ProbeError(ValueError):
    """A stiffness probe pose does not produce contact."""


@dataclass(frozen=True)
class ShapeScales:
    s_x: float
    s_y: float
    s_z: float
    s_alpha: float
    s_beta: float

    def __post_init__(self):
        for v in self.as_array():
            if not (np.isfinite(v) and v > 0):
                raise ValueError("shape scales must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.s_x, self.s_y, self.s_z, self.s_alpha, self.s_beta])

    @classmethod
    def from_array(cls, a) -> "ShapeScales":
        return cls(*(float(x) for x in np.asarray(a, dtype=float).reshape(5)))

    def relative_to(self, ref: "ShapeScales") -> "ShapeScales":
        return ShapeScales.from_array(self.as_array() / ref.as_array())


@dataclass(frozen=True)
class TaskGeometry:
    section: CrossSection | None
    R_hat: float  # mm
    L: float  # m

    @classmethod
    def of(cls, section: CrossSection, L: float) -> "TaskGeometry":
        return cls(section, max_radius(section), L)


@dataclass(frozen=True)
class ProbeSettings:
    """Probe penetration beyond first contact and finite-difference step (fraction of it)."""

    penetration: float = 0.05 * MM
    step_fraction: float = 0.1
    pairs: int = 1  # +/- probe pairs; extra pairs fan out transversally
    grid: tuple = (64, 16)


def _pose(component: str, u: float, L: float, transverse: float = 0.0) -> PoseState:
    """Probe pose with generalised coordinate u (m) along a component, at full depth."""
    half = L / 2.0
    if component in ("x", "z"):
        return PoseState(u, transverse, L, 0.0, 0.0, 0.0)
    if component == "y":
        return PoseState(transverse, u, L, 0.0, 0.0, 0.0)
    if component == "alpha":
        return PoseState(0.0, transverse, L, u / half, 0.0, 0.0)
    return PoseState(transverse, 0.0, L, 0.0, u / half, 0.0)


def _max_penetration(params: PlantParams, p: PoseState) -> float:
    # translation and tilt make penetration affine along the band, so the ends bound it
    theta = np.unique(np.concatenate([discretize(params.section, 720).edges[:-1],
                                      np.linspace(0.0, TWO_PI, 2048, endpoint=False)]))
    disc_r = radius_at(params.section, theta)
    ends = np.array([-params.L / 2.0, params.L / 2.0])
    q = peg_points(params, p, theta, disc_r, ends)
    depth, _ = _hole_distance(params, q)
    return float(depth.max())


def _probe_magnitude(params: PlantParams, component: str, sign: float, target: float,
                     transverse: float = 0.0) -> float:
    """|u| at which the deepest element penetrates by ``target``.

    Bisection on the contact-field depth; the bracket grows until contact.
    """
    lo, hi = 0.0, params.clearance * MM
    base = "x" if component == "z" else component
    for _ in range(60):
        if _max_penetration(params, _pose(base, sign * hi, params.L, transverse)) >= target:
            break
        lo, hi = hi, 2 * hi
    else:
        raise ProbeError(f"no contact along {component} for any probe up to {hi:.3g} m")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _max_penetration(params, _pose(base, sign * mid, params.L, transverse)) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-4 * target:
            break
    return 0.5 * (lo + hi)


def _generalised_force(w: np.ndarray, component: str, L: float) -> float:
    if component in ("alpha", "beta"):
        return w[_INDEX[component]] / (L / 2.0)
    return w[_INDEX[component]]


def _derivative(params, component, u, h, transverse, grid) -> float:
    L = params.L
    if component == "z":
        # axial: central difference in depth at the lateral probe, per unit fractional depth
        p0 = _pose("x", u, L, transverse)
        fp = fpm(params, replace(p0, l=L + h), grid).as_array()[2]
        fm = fpm(params, replace(p0, l=L - h), grid).as_array()[2]
        return abs(L * (fp - fm) / (2 * h))
    fp = _generalised_force(fpm(params, _pose(component, u + h, L, transverse), grid).as_array(), component, L)
    fm = _generalised_force(fpm(params, _pose(component, u - h, L, transverse), grid).as_array(), component, L)
    return (fp - fm) / (2 * h)


def stiffness_expectation(params: PlantParams, component: str,
                          probe: ProbeSettings = ProbeSettings()) -> float:
    """Mean direct stiffness at full depth over probes on both signs of the component."""
    if component not in _INDEX:
        raise ValueError(f"component must be one of {COMPONENTS}")
    target = probe.penetration
    if component == "z":
        h = probe.step_fraction * params.L
    else:
        h = probe.step_fraction * target
    values = []
    for k in range(probe.pairs):
        # extra pairs sit at a transverse offset inside the clearance
        transverse = 0.0 if k == 0 else (k / probe.pairs) * 0.5 * params.clearance * MM
        for sign in (1.0, -1.0):
            mag = _probe_magnitude(params, component, sign, target, transverse)
            u = sign * mag if component != "z" else sign * mag
            try:
                d = _derivative(params, component, u, h if component == "z" else sign * h,
                                transverse, probe.grid)
            except JammingError as exc:
                raise ProbeError(str(exc)) from exc
            if component != "z":
                d = d * sign * sign  # central difference is already signed along u
            if not d > 0:
                raise ProbeError(f"probe along {component} produced no restoring stiffness")
            values.append(d)
    return float(np.mean(values))


def shape_scale(params: PlantParams, geometry: TaskGeometry,
                probe: ProbeSettings = ProbeSettings()) -> ShapeScales:
    """s_i = E(dF_i/dp_i) / (E_c R_hat L), R_hat in metres."""
    denom = params.E_c * geometry.R_hat * MM * geometry.L
    return ShapeScales.from_array([stiffness_expectation(params, c, probe) / denom for c in COMPONENTS])


def physical_stiffness(generalised: np.ndarray, L: float) -> np.ndarray:
    """Convert generalised stiffnesses (x, y, z, alpha, beta) to N/m, N per m depth, N*m/rad."""
    g = np.asarray(generalised, dtype=float)
    half = L / 2.0
    return np.array([g[0], g[1], g[2] / L, g[3] * half ** 2, g[4] * half ** 2])


def tuned_gains(params: PlantParams, loop_gain, K_gamma: float,
                probe: ProbeSettings = ProbeSettings()) -> ComplianceGains:
    """Reference gains giving the requested per-step loop gain K_i * k_i at full depth."""
    k = physical_stiffness([stiffness_expectation(params, c, probe) for c in COMPONENTS], params.L)
    K = np.asarray(loop_gain, dtype=float) / k
    return ComplianceGains.from_array(np.append(K, K_gamma))


def reconfigure(K_src: ComplianceGains, g_src: TaskGeometry, s_src: ShapeScales,
                g_tgt: TaskGeometry, s_tgt: ShapeScales) -> ComplianceGains:
    """Keep R_hat * L * s_i * K_i fixed for x, y, z, alpha, beta; K_gamma is carried over."""
    src = g_src.R_hat * g_src.L * s_src.as_array()
    tgt = g_tgt.R_hat * g_tgt.L * s_tgt.as_array()
    k = K_src.as_array()
    out = k.copy()
    out[:5] = k[:5] * (src / tgt)
    return ComplianceGains.from_array(out)


@dataclass(frozen=True)
class ReconfigRow:
    label: str
    R_hat: float
    L: float
    rel_scales: np.ndarray
    method: str
    gains: ComplianceGains

    def product(self) -> np.ndarray:
        """R_hat * L * s_i * K_i for the five reconfigured channels."""
        return self.R_hat * self.L * self.rel_scales * self.gains.as_array()[:5]


def reconfigure_table(rows: list[dict], reference: str, K_ref: ComplianceGains) -> list[ReconfigRow]:
    """Reconfigure every row from the designated reference row.

    Each row dict holds ``label``, ``R_hat`` (mm), ``L`` (any length unit,
    used consistently) and ``scales``: five shape scales relative to any
    common base.
    """
    by_label = {str(r["label"]): r for r in rows}
    if str(reference) not in by_label:
        raise ValueError(f"reference task {reference!r} not among {sorted(by_label)}")
    ref = by_label[str(reference)]
    g_ref = TaskGeometry(None, float(ref["R_hat"]), float(ref["L"]))
    s_ref = ShapeScales.from_array(ref["scales"])
    out = []
    for r in rows:
        g = TaskGeometry(None, float(r["R_hat"]), float(r["L"]))
        s = ShapeScales.from_array(r["scales"])
        is_ref = str(r["label"]) == str(reference)
        K = K_ref if is_ref else reconfigure(K_ref, g_ref, s_ref, g, s)
        out.append(ReconfigRow(str(r["label"]), g.R_hat, g.L, s.as_array() / s_ref.as_array(),
                               "Tuned" if is_ref else "Reconfigured", K))
    return out


def write_report(rows: list[ReconfigRow], path, gain_units=(1e-5, 1e-5, 1e-5, 1e-2, 1e-2, 1e-2)) -> None:
    """CSV with label, R_hat, L, relative scales, method and gains in the given display units."""
    units = np.asarray(gain_units, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "R_hat", "L", "s_x", "s_y", "s_z", "s_alpha", "s_beta", "method",
                    "K_x", "K_y", "K_z", "K_alpha", "K_beta", "K_gamma"])
        for r in rows:
            k = r.gains.as_array() / units
            w.writerow([r.label, f"{r.R_hat:.6g}", f"{r.L:.6g}", *[f"{v:.4g}" for v in r.rel_scales],
                        r.method, *[f"{v:.4g}" for v in k]])
