"""Model-based half of the hybrid compliance controller.

Decoupling modules are the exact inverses of the plant couplings, so with
a correct frame estimate the compliance law sees the contact wrench in
{A} and its corrections land on the peg unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import FrameOffset, MotionIncrement, Wrench

GAIN_NAMES = ("K_x", "K_y", "K_z", "K_alpha", "K_beta", "K_gamma")


@dataclass(frozen=True)
class ComplianceGains:
    K_x: float
    K_y: float
    K_z: float
    K_alpha: float
    K_beta: float
    K_gamma: float

    def __post_init__(self):
        for name in GAIN_NAMES:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in GAIN_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ComplianceGains":
        return cls(*(float(x) for x in np.asarray(a, dtype=float).reshape(6)))

    def scaled(self, factor) -> "ComplianceGains":
        return ComplianceGains.from_array(self.as_array() * np.asarray(factor, dtype=float))


@dataclass(frozen=True)
class ReferenceWrench:
    """Reference wrench in {A}; only the axial force slot can be nonzero."""

    F_z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.F_z, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RevisionFactors:
    a: np.ndarray
    lb: float = -1.0
    ub: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(6)
        if not np.all(np.isfinite(a)):
            raise ValueError("revision factors must be finite")
        object.__setattr__(self, "a", np.clip(a, self.lb, self.ub))

    @classmethod
    def zero(cls) -> "RevisionFactors":
        return cls(np.zeros(6))


def decouple_output(F: Wrench, offset_SA: FrameOffset) -> Wrench:
    """DO: sensor wrench in {S} back to {A}; inverse of the plant's CO."""
    Rt = offset_SA.rotation.T
    f = Rt @ F.f
    m = Rt @ (F.m - np.cross(offset_SA.translation, F.f))
    return Wrench(f, m, "A")


def decouple_state(dp_c, offset_RA: FrameOffset, caps=None) -> MotionIncrement:
    """DS: pose correction in {A} to a robot increment in {R}; inverse of the plant's CS.

    ``caps`` = (translation cap m, rotation cap rad) bounds each component.
    Caps never clip a single component of the result: the translation
    carries a w x t lever term, and clipping w alone would swing the {A}
    origin sideways.  An oversized rotation is shrunk in {A} first and the
    lever term recomputed; a translation still over its cap shrinks the
    whole increment.
    """
    dp_c = np.asarray(dp_c, dtype=float).reshape(6)
    R = offset_RA.rotation
    t = offset_RA.translation
    w = R @ dp_c[3:]
    clipped = False
    if caps is not None:
        t_cap, r_cap = (float(c) for c in caps)
        peak = float(np.max(np.abs(w))) / r_cap
        if peak > 1.0:
            clipped = True
            w = w / peak
    v = R @ dp_c[:3] - np.cross(w, t)
    dr = np.concatenate([v, w])
    if caps is not None:
        peak = float(np.max(np.abs(v))) / t_cap
        if peak > 1.0:
            clipped = True
            dr = dr / peak
    return MotionIncrement(dr, clipped)


def compliance_law(F_dec: Wrench, F_rfr: ReferenceWrench, K: ComplianceGains) -> np.ndarray:
    """Constant compliance law: dp_c = diag(K) (F_dec - F_rfr)."""
    return K.as_array() * (F_dec.as_array() - F_rfr.as_array())


def effective_gains(K: ComplianceGains, a: RevisionFactors) -> np.ndarray:
    """K~ = a o K + K."""
    k = K.as_array()
    return a.a * k + k


def adaptive_compliance_law(F_dec: Wrench, F_rfr: ReferenceWrench, K: ComplianceGains,
                            a: RevisionFactors) -> np.ndarray:
    if not np.any(a.a):
        return compliance_law(F_dec, F_rfr, K)
    return effective_gains(K, a) * (F_dec.as_array() - F_rfr.as_array())


def estimate_depth(z_current: float, z_contact: float) -> float:
    """Inserted length from the TCP height: max(0, z_contact - z)."""
    return max(0.0, float(z_contact) - float(z_current))


class DepthEstimator:
    """Tracks the TCP height seen at first contact and turns later heights into depths."""

    def __init__(self, z_contact: float | None = None):
        self.z_contact = z_contact
        self.history: list[float] = []

    def update(self, z: float, in_contact: bool = True) -> float:
        self.history.append(float(z))
        if self.z_contact is None:
            if not in_contact:
                return 0.0
            self.z_contact = float(z)
        return estimate_depth(z, self.z_contact)
