"""Two-mode (H, V) bosonic Fock-space algebra.

Basis labels are ``(n_H, n_V)`` with ``0 <= n_H, n_V <= cutoff``. Flattened
vectors and matrices use row-major order over ``(n_H, n_V)``, i.e. the label
``(n_H, n_V)`` sits at index ``n_H * (cutoff + 1) + n_V``.

A :class:`DensityMatrix` may instead live on a single total-photon-number
sector ``N``; its basis is then ``[(0, N), (1, N - 1), ..., (N, 0)]``, the
row-major order restricted to that sector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CUTOFF = 8
UNITARY_TOL = 1e-12
HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10

H, V = "H", "V"


class FockError(ValueError):
    """Invalid Fock-space input (range, shape or physicality)."""


def _mode_index(mode: str) -> int:
    if mode in (H, "h", 0):
        return 0
    if mode in (V, "v", 1):
        return 1
    raise FockError(f"unknown mode {mode!r}; expected 'H' or 'V'")


@dataclass(frozen=True, eq=False)
class FockVector:
    """Pure state of two polarization modes.

    ``amplitudes[n_H, n_V]`` holds the complex amplitude of ``|n_H n_V>``.
    ``truncated`` accumulates the squared norm discarded at the cutoff by the
    operations that produced this vector.
    """

    cutoff: int
    amplitudes: np.ndarray
    truncated: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.cutoff + 1, self.cutoff + 1):
            raise FockError(
                f"amplitudes must have shape {(self.cutoff + 1,) * 2}, got {amps.shape}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return (self.cutoff + 1) ** 2

    @property
    def vector(self) -> np.ndarray:
        """Flattened amplitudes in row-major ``(n_H, n_V)`` order."""
        return self.amplitudes.reshape(-1)

    def amplitude(self, n: int, n_prime: int) -> complex:
        return complex(self.amplitudes[n, n_prime])

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "FockVector":
        nrm = self.norm()
        if nrm == 0:
            raise FockError("cannot normalize the zero vector")
        return FockVector(self.cutoff, self.amplitudes / nrm, self.truncated)

    def scaled(self, factor: complex) -> "FockVector":
        return FockVector(self.cutoff, self.amplitudes * factor, self.truncated)

    def __add__(self, other: "FockVector") -> "FockVector":
        _check_same_cutoff(self, other)
        return FockVector(
            self.cutoff, self.amplitudes + other.amplitudes, self.truncated + other.truncated
        )

    def sector(self, total: int) -> "FockVector":
        """Projection onto total photon number ``total`` (not renormalized)."""
        mask = _sector_mask(self.cutoff, total)
        return FockVector(self.cutoff, np.where(mask, self.amplitudes, 0), self.truncated)

    def sector_amplitudes(self, total: int) -> np.ndarray:
        """Amplitudes of ``|k, total-k>`` for ``k = 0..total`` (zero beyond cutoff)."""
        out = np.zeros(total + 1, dtype=complex)
        for k in range(total + 1):
            if k <= self.cutoff and total - k <= self.cutoff:
                out[k] = self.amplitudes[k, total - k]
        return out

    def photon_numbers(self) -> list[int]:
        """Total photon numbers with non-zero weight."""
        n_h, n_v = np.nonzero(np.abs(self.amplitudes) > 0)
        return sorted(set((n_h + n_v).tolist()))

    def to_density(self) -> "DensityMatrix":
        v = self.vector
        return DensityMatrix(self.cutoff, np.outer(v, v.conj()))

    def to_json(self) -> str:
        return json.dumps(
            {
                "cutoff": self.cutoff,
                "basis": "nH,nV row-major",
                "re": self.amplitudes.real.tolist(),
                "im": self.amplitudes.imag.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FockVector":
        doc = json.loads(text)
        amps = np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)
        return cls(int(doc["cutoff"]), amps)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density operator on the full truncated basis or on one sector.

    Validation of the physical invariants is explicit (:meth:`validate`) so
    that intermediate, unnormalized operators can share the type.
    """

    cutoff: int
    entries: np.ndarray
    sector: int | None = None

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        d = self.sector + 1 if self.sector is not None else (self.cutoff + 1) ** 2
        if m.shape != (d, d):
            raise FockError(f"density matrix must be {d}x{d}, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def labels(self) -> list[tuple[int, int]]:
        if self.sector is not None:
            return [(k, self.sector - k) for k in range(self.sector + 1)]
        c = self.cutoff + 1
        return [(i // c, i % c) for i in range(c * c)]

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))

    def validate(self, psd_tol: float = PSD_TOL, trace_tol: float = TRACE_TOL) -> "DensityMatrix":
        m = self.entries
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise FockError("density matrix is not Hermitian")
        if self.eigenvalues().min(initial=0.0) < -psd_tol:
            raise FockError("density matrix has negative eigenvalues")
        if abs(self.trace() - 1.0) > trace_tol:
            raise FockError(f"density matrix trace {self.trace()} != 1")
        return self

    def populations(self) -> np.ndarray:
        return np.diag(self.entries).real.copy()

    def embed(self) -> "DensityMatrix":
        """Return the same operator on the full ``cutoff`` basis."""
        if self.sector is None:
            return self
        c = self.cutoff + 1
        idx = []
        for n_h, n_v in self.labels:
            if n_h > self.cutoff or n_v > self.cutoff:
                raise FockError(f"sector {self.sector} does not fit in cutoff {self.cutoff}")
            idx.append(n_h * c + n_v)
        full = np.zeros((c * c, c * c), dtype=complex)
        full[np.ix_(idx, idx)] = self.entries
        return DensityMatrix(self.cutoff, full)

    def restrict(self, total: int) -> "DensityMatrix":
        """Block of this operator on sector ``total`` (not renormalized)."""
        if self.sector is not None:
            if self.sector != total:
                raise FockError(f"matrix lives on sector {self.sector}, not {total}")
            return self
        c = self.cutoff + 1
        idx = [k * c + (total - k) for k in range(total + 1)]
        if any(k > self.cutoff or total - k > self.cutoff for k in range(total + 1)):
            raise FockError(f"sector {total} does not fit in cutoff {self.cutoff}")
        return DensityMatrix(self.cutoff, self.entries[np.ix_(idx, idx)], sector=total)

    def normalized(self) -> "DensityMatrix":
        tr = np.trace(self.entries).real
        if tr <= 0:
            raise FockError("cannot normalize an operator with non-positive trace")
        return DensityMatrix(self.cutoff, self.entries / tr, self.sector)

    def to_json(self) -> str:
        basis = "nH,nV row-major" if self.sector is None else f"sector {self.sector}, nH ascending"
        doc = {
            "cutoff": self.cutoff,
            "basis": basis,
            "re": self.entries.real.tolist(),
            "im": self.entries.imag.tolist(),
        }
        if self.sector is not None:
            doc["sector"] = self.sector
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        doc = json.loads(text)
        m = np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)
        return cls(int(doc["cutoff"]), m, doc.get("sector"))

    @classmethod
    def maximally_mixed(cls, total: int, cutoff: int | None = None) -> "DensityMatrix":
        cutoff = total if cutoff is None else cutoff
        return cls(cutoff, np.eye(total + 1) / (total + 1), sector=total)

    @classmethod
    def from_sector_vector(cls, amplitudes: Sequence[complex], cutoff: int | None = None):
        v = np.asarray(amplitudes, dtype=complex)
        total = len(v) - 1
        return cls(total if cutoff is None else cutoff, np.outer(v, v.conj()), sector=total)


@dataclass(frozen=True)
class LossChannel:
    """Independent binomial photon loss on H and V (transmissivities)."""

    eta_H: float = 1.0
    eta_V: float = 1.0

    def __post_init__(self):
        for name in ("eta_H", "eta_V"):
            eta = getattr(self, name)
            if not 0.0 <= eta <= 1.0:
                raise FockError(f"{name}={eta} outside [0, 1]")

    @classmethod
    def uniform(cls, eta: float) -> "LossChannel":
        return cls(eta, eta)


def _check_same_cutoff(a, b):
    if a.cutoff != b.cutoff:
        raise FockError(f"cutoff mismatch: {a.cutoff} vs {b.cutoff}")


def _sector_mask(cutoff: int, total: int) -> np.ndarray:
    n = np.arange(cutoff + 1)
    return (n[:, None] + n[None, :]) == total


def number_state(n: int, n_prime: int, cutoff: int = DEFAULT_CUTOFF) -> FockVector:
    if not (0 <= n <= cutoff and 0 <= n_prime <= cutoff):
        raise FockError(f"label ({n}, {n_prime}) outside cutoff {cutoff}")
    amps = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    amps[n, n_prime] = 1.0
    return FockVector(cutoff, amps)


def vacuum(cutoff: int = DEFAULT_CUTOFF) -> FockVector:
    return number_state(0, 0, cutoff)


def from_labels(coeffs: dict[tuple[int, int], complex], cutoff: int = DEFAULT_CUTOFF) -> FockVector:
    """Build a vector from ``{(n_H, n_V): amplitude}``."""
    amps = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    for (n, m), a in coeffs.items():
        if not (0 <= n <= cutoff and 0 <= m <= cutoff):
            raise FockError(f"label ({n}, {m}) outside cutoff {cutoff}")
        amps[n, m] = a
    return FockVector(cutoff, amps)


def inner(a: FockVector, b: FockVector) -> complex:
    """``<a|b>``."""
    _check_same_cutoff(a, b)
    return complex(np.vdot(a.vector, b.vector))


def apply_raising(state: FockVector, mode: str) -> FockVector:
    """Apply ``a^dagger`` on ``mode``; weight pushed past the cutoff is dropped.

    The dropped squared norm is added to ``truncated``.
    """
    axis = _mode_index(mode)
    c = state.cutoff
    amps = state.amplitudes
    out = np.zeros_like(amps)
    factors = np.sqrt(np.arange(1, c + 1))
    if axis == 0:
        out[1:, :] = amps[:-1, :] * factors[:, None]
        lost = amps[-1, :] * math.sqrt(c + 1)
    else:
        out[:, 1:] = amps[:, :-1] * factors[None, :]
        lost = amps[:, -1] * math.sqrt(c + 1)
    return FockVector(c, out, state.truncated + float(np.sum(np.abs(lost) ** 2)))


def apply_lowering(state: FockVector, mode: str) -> FockVector:
    axis = _mode_index(mode)
    c = state.cutoff
    amps = state.amplitudes
    out = np.zeros_like(amps)
    factors = np.sqrt(np.arange(1, c + 1))
    if axis == 0:
        out[:-1, :] = amps[1:, :] * factors[:, None]
    else:
        out[:, :-1] = amps[:, 1:] * factors[None, :]
    return FockVector(c, out, state.truncated)


def mean_photon_numbers(rho: DensityMatrix) -> tuple[float, float]:
    """``(<n_H>, <n_V>)``."""
    pops = rho.populations()
    labels = np.array(rho.labels)
    return float(pops @ labels[:, 0]), float(pops @ labels[:, 1])


def _as_matrix(u) -> np.ndarray:
    m = np.asarray(getattr(u, "matrix", u), dtype=complex)
    if m.shape != (2, 2):
        raise FockError(f"mode transform must be 2x2, got {m.shape}")
    if np.max(np.abs(m @ m.conj().T - np.eye(2))) > UNITARY_TOL:
        raise FockError("mode transform is not unitary")
    return m


def _binomial_poly(p: complex, q: complex, n: int) -> np.ndarray:
    """Coefficients of ``(p x + q y)^n`` indexed by the power of ``x``."""
    k = np.arange(n + 1)
    binom = np.array([math.comb(n, j) for j in k], dtype=float)
    return binom * p ** k * q ** (n - k)


def sector_unitary(u, total: int) -> np.ndarray:
    """Lift of a 2x2 mode transform to the ``total``-photon sector.

    The transform sends ``a_j^dagger -> sum_i u[i, j] a_i^dagger``; on one
    photon this is the Jones-vector action ``u @ (alpha, beta)``. Rows and
    columns are indexed by ``n_H`` of ``|n_H, total - n_H>``.
    """
    m = _as_matrix(u)
    lifted = np.zeros((total + 1, total + 1), dtype=complex)
    fact = [math.factorial(j) for j in range(total + 1)]
    for n_h in range(total + 1):
        n_v = total - n_h
        # (u00 x + u10 y)^n_h (u01 x + u11 y)^n_v, x = a_H^dagger, y = a_V^dagger
        poly = np.convolve(
            _binomial_poly(m[0, 0], m[1, 0], n_h), _binomial_poly(m[0, 1], m[1, 1], n_v)
        )
        for k in range(total + 1):
            lifted[k, n_h] = poly[k] * math.sqrt(fact[k] * fact[total - k] / (fact[n_h] * fact[n_v]))
    return lifted


def full_unitary(u, cutoff: int) -> np.ndarray:
    """Block-diagonal lift on the truncated basis (sectors ``<= cutoff`` only).

    Sectors above ``cutoff`` are incomplete in the truncated basis and are
    left as zero blocks; callers dealing with such weight should use
    :func:`induced_unitary`, which reports it as truncation.
    """
    c = cutoff + 1
    out = np.zeros((c * c, c * c), dtype=complex)
    for total in range(cutoff + 1):
        idx = [k * c + (total - k) for k in range(total + 1)]
        out[np.ix_(idx, idx)] = sector_unitary(u, total)
    return out


def induced_unitary(u, state: FockVector) -> FockVector:
    """Apply the Fock-space lift of ``u`` to ``state``, sector by sector."""
    m = _as_matrix(u)
    c = state.cutoff
    out = np.zeros_like(state.amplitudes)
    lost = 0.0
    for total in state.photon_numbers():
        amps_in = state.sector_amplitudes(total)
        amps_out = sector_unitary(m, total) @ amps_in
        for k, a in enumerate(amps_out):
            if k <= c and total - k <= c:
                out[k, total - k] = a
            else:
                lost += abs(a) ** 2
    return FockVector(c, out, state.truncated + lost)


def transform_density(u, rho: DensityMatrix) -> DensityMatrix:
    """``L rho L^dagger`` with ``L`` the lift of ``u``."""
    m = _as_matrix(u)
    if rho.sector is not None:
        lift = sector_unitary(m, rho.sector)
    else:
        lift = full_unitary(m, rho.cutoff)
    return DensityMatrix(rho.cutoff, lift @ rho.entries @ lift.conj().T, rho.sector)


def fidelity_trace(rho_exp: DensityMatrix, rho_th) -> float:
    """``Tr(rho_exp rho_th)``; ``rho_th`` may be a pure FockVector."""
    if isinstance(rho_th, FockVector):
        rho_th = rho_th.to_density()
        if rho_exp.sector is not None:
            rho_th = rho_th.restrict(rho_exp.sector)
    a, b = rho_exp.entries, rho_th.entries
    if a.shape != b.shape:
        raise FockError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.real(np.sum(a * b.T)))


def _loss_kraus(eta: float, cutoff: int) -> list[np.ndarray]:
    """Single-mode binomial-loss Kraus operators ``A_l``, ``l`` photons lost."""
    ops = []
    for lost in range(cutoff + 1):
        a = np.zeros((cutoff + 1, cutoff + 1))
        for n in range(lost, cutoff + 1):
            a[n - lost, n] = math.sqrt(math.comb(n, lost) * eta ** (n - lost) * (1 - eta) ** lost)
        ops.append(a)
    return ops


def apply_loss(rho: DensityMatrix, channel: LossChannel) -> DensityMatrix:
    """Independent binomial loss on each mode (trace preserving).

    Sector-restricted input is embedded in the full basis first since loss
    moves weight to lower sectors.
    """
    rho = rho.embed()
    c = rho.cutoff + 1
    t = rho.entries.reshape(c, c, c, c)  # [h, v, h', v']
    if channel.eta_H < 1.0:
        t = sum(
            np.einsum("ab,bvcw,dc->avdw", k, t, k) for k in _loss_kraus(channel.eta_H, c - 1)
        )
    if channel.eta_V < 1.0:
        t = sum(
            np.einsum("ab,hbkw,dw->hakd", k, t, k) for k in _loss_kraus(channel.eta_V, c - 1)
        )
    return DensityMatrix(rho.cutoff, np.asarray(t).reshape(c * c, c * c))


def dephase_pairs(rho: DensityMatrix, overlap: float) -> DensityMatrix:
    """Scale coherences between different ``n_H`` by ``overlap ** (|dn_H| / 2)``.

    Models partial distinguishability of the photon pairs emitted in the two
    loop directions: each pair exchanged between H and V costs one factor of
    the mode overlap.
    """
    if not 0.0 <= overlap <= 1.0:
        raise FockError(f"overlap {overlap} outside [0, 1]")
    if overlap == 1.0:
        return rho
    n_h = np.array([lab[0] for lab in rho.labels], dtype=float)
    dn = np.abs(n_h[:, None] - n_h[None, :]) / 2.0
    return DensityMatrix(rho.cutoff, rho.entries * overlap ** dn, rho.sector)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    diff = a.entries - b.entries
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def mixture(states: Iterable[tuple[float, DensityMatrix]]) -> DensityMatrix:
    items = list(states)
    first = items[0][1]
    return DensityMatrix(first.cutoff, sum(w * r.entries for w, r in items), first.sector)
