"""Polarization-domain linear optics on the (H, V) modes.

Conventions: H = (1, 0), V = (0, 1); a transform acts on Jones vectors as
``M @ (alpha, beta)`` and lifts to Fock space via
:func:`fockforge.fock_core.sector_unitary`. Wave-plate matrices follow the
``exp(-i w t)`` convention, with retardance applied to the slow (V) axis in
the plate frame. Equality of physical transforms is always tested modulo a
global phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .fock_core import UNITARY_TOL, FockError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class ModeTransform:
    """A 2x2 unitary acting on the (H, V) creation operators."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise FockError(f"mode transform must be 2x2, got {m.shape}")
        if np.max(np.abs(m @ m.conj().T - np.eye(2))) > UNITARY_TOL:
            raise FockError("mode transform is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "ModeTransform":
        return cls(np.eye(2))

    def inverse(self) -> "ModeTransform":
        return ModeTransform(self.matrix.conj().T)

    def __matmul__(self, other: "ModeTransform") -> "ModeTransform":
        return ModeTransform(self.matrix @ other.matrix)


@dataclass(frozen=True)
class WavePlateSetting:
    """SU(2) gadget setting; angles are canonicalized on construction."""

    phi: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)
        object.__setattr__(self, "theta", float(self.theta) % math.pi)

    def to_json(self) -> str:
        return json.dumps({"phi": self.phi, "theta": self.theta})

    @classmethod
    def from_json(cls, text: str) -> "WavePlateSetting":
        doc = json.loads(text)
        return cls(doc["phi"], doc["theta"])


def su2_from_angles(setting: WavePlateSetting) -> ModeTransform:
    """``[[cos t, e^{i p} sin t], [-e^{-i p} sin t, cos t]]``."""
    c, s = math.cos(setting.theta), math.sin(setting.theta)
    e = np.exp(1j * setting.phi)
    return ModeTransform(np.array([[c, e * s], [-s / e, c]]))


def _rotation(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s], [s, c]])


def _retarder(alpha: float, retardance: float) -> np.ndarray:
    r = _rotation(alpha)
    return r @ np.diag([1.0, np.exp(1j * retardance)]) @ r.T


def jones_hwp(plate_angle: float) -> ModeTransform:
    """Half-wave plate with fast axis at ``plate_angle`` from H."""
    return ModeTransform(_retarder(plate_angle, math.pi))


def jones_qwp(plate_angle: float) -> ModeTransform:
    """Quarter-wave plate with fast axis at ``plate_angle`` from H."""
    return ModeTransform(_retarder(plate_angle, math.pi / 2))


def compose(a: ModeTransform, b: ModeTransform) -> ModeTransform:
    """``a`` applied first, then ``b``."""
    return ModeTransform(b.matrix @ a.matrix)


def equal_up_to_phase(a, b, tol: float = 1e-9) -> bool:
    return phase_distance(a, b) <= tol


def phase_distance(a, b) -> float:
    """Max-entry distance between ``a`` and ``b`` after aligning global phase."""
    ma = np.asarray(getattr(a, "matrix", a))
    mb = np.asarray(getattr(b, "matrix", b))
    overlap = np.vdot(mb, ma)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(ma - phase * mb)))


@dataclass(frozen=True)
class PlateAngles:
    """QWP-HWP-QWP angles; ``qwp1`` is traversed first."""

    qwp1: float
    hwp: float
    qwp2: float

    def transform(self) -> ModeTransform:
        return compose(compose(jones_qwp(self.qwp1), jones_hwp(self.hwp)), jones_qwp(self.qwp2))

    def jittered(self, rng: np.random.Generator, sigma: float) -> "PlateAngles":
        d = rng.normal(0.0, sigma, size=3)
        return PlateAngles(self.qwp1 + d[0], self.hwp + d[1], self.qwp2 + d[2])


def _gadget_matrix(x: np.ndarray) -> np.ndarray:
    return _retarder(x[2], math.pi / 2) @ _retarder(x[1], math.pi) @ _retarder(x[0], math.pi / 2)


def _residual(x: np.ndarray, target: np.ndarray) -> np.ndarray:
    m = _gadget_matrix(x)
    overlap = np.vdot(target, m)
    phase = overlap / abs(overlap) if abs(overlap) > 1e-300 else 1.0
    diff = (m / phase - target).reshape(-1)
    return np.concatenate([diff.real, diff.imag])


_STARTS = [
    np.array([a, b, c])
    for a in np.linspace(0, math.pi, 4, endpoint=False)
    for b in np.linspace(0, math.pi, 4, endpoint=False)
    for c in np.linspace(0, math.pi, 4, endpoint=False)
]


def solve_angles_for_target(target: ModeTransform, tol: float = 1e-9) -> PlateAngles:
    """Find QWP-HWP-QWP angles whose product equals ``target`` up to phase."""
    t = target.matrix
    best, best_err = None, np.inf
    for x0 in _STARTS:
        # cheap screening pass before polishing
        if best is not None and np.max(np.abs(_residual(x0, t))) > 1.5:
            continue
        sol = least_squares(_residual, x0, args=(t,), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        err = phase_distance(_gadget_matrix(sol.x), t)
        if err < best_err:
            best, best_err = sol.x, err
        if best_err <= tol * 1e-3:
            break
    if best_err > tol:
        raise FockError(f"wave-plate decomposition failed (residual {best_err:.3e})")
    a = np.mod(best, math.pi)
    return PlateAngles(float(a[0]), float(a[1]), float(a[2]))
