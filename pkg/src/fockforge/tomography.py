"""Polarization tomography of single-spatial-mode N-photon states.

Each setting applies the SU(2) gadget, splits H/V on a PBS and records
N-fold coincidence patterns ``(k, N - k)`` (``k`` distinct clicks on the H
side). The pattern ``(k, N - k)`` is produced by the Fock outcome
``|k, N-k>`` with probability ``eps_k`` (every photon detected, all on
distinct detectors), so expected counts are ``A * eps_k * p_k(rho)`` with a
single flux scale ``A`` fitted alongside ``rho``.

Reconstruction parameterizes ``rho = T^dagger T / Tr(T^dagger T)`` with lower
triangular ``T`` and maximizes the Poisson likelihood by monotone ascent.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .detection import DetectionTree, DetectorModel, IDEAL, fanout_click_probs
from .fock_core import DensityMatrix, FockVector, fidelity_trace, sector_unitary
from .polarization_optics import ModeTransform, WavePlateSetting, su2_from_angles

log = logging.getLogger(__name__)

REL_TOL = 1e-10
MAX_ITER = 100_000


class TomographyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TomoSetting:
    setting: WavePlateSetting
    n_photons: int
    transform: ModeTransform | None = None  # actual transform if it differs from the nominal one

    @property
    def outcomes(self) -> list[tuple[int, int]]:
        return [(k, self.n_photons - k) for k in range(self.n_photons + 1)]

    def unitary(self) -> ModeTransform:
        return self.transform if self.transform is not None else su2_from_angles(self.setting)


@dataclass(frozen=True, eq=False)
class CountRecord:
    setting: TomoSetting
    counts: np.ndarray  # indexed by k (H-side clicks) of pattern (k, N-k)
    integration_s: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (self.setting.n_photons + 1,):
            raise TomographyError(f"expected {self.setting.n_photons + 1} outcome counts, got {c.shape}")
        if np.any(c < 0):
            raise TomographyError("counts must be non-negative")
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class TomoDetection:
    """Detector tree and model used to map Fock outcomes onto patterns.

    ``tree=None`` stands for number-resolving ports: every outcome is
    registered with the same efficiency, which cancels in the likelihood.
    """

    tree: DetectionTree | None = None
    model: DetectorModel = IDEAL

    def efficiencies(self, n_photons: int) -> np.ndarray:
        if self.tree is None:
            return np.full(n_photons + 1, self.model.efficiency ** n_photons)
        eps = np.zeros(n_photons + 1)
        for k in range(n_photons + 1):
            ph = fanout_click_probs(k, self.tree.h_detectors, self.model)
            pv = fanout_click_probs(n_photons - k, self.tree.v_detectors, self.model)
            eps[k] = (ph[k] if k < ph.size else 0.0) * (pv[n_photons - k] if n_photons - k < pv.size else 0.0)
        return eps


def ideal_detection(n_photons: int) -> TomoDetection:
    """Ideal number-resolving detection (``n_photons`` kept for symmetry with trees)."""
    return TomoDetection()


@dataclass
class ReconstructionResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    fidelity: float | None = None
    fidelity_std: float | None = None
    history: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        doc = json.loads(self.rho.to_json())
        doc.update(
            log_likelihood=self.log_likelihood,
            iterations=self.iterations,
            converged=self.converged,
            fidelity=self.fidelity,
            fidelity_std=self.fidelity_std,
        )
        return json.dumps(doc)


def effect_operators(settings: Sequence[TomoSetting], detection: TomoDetection | None = None) -> np.ndarray:
    """``E[s, k]`` = ``eps_k L_s^dagger |k><k| L_s``, shape (S, N+1, D, D)."""
    n = settings[0].n_photons
    eps = (detection or ideal_detection(n)).efficiencies(n)
    out = np.empty((len(settings), n + 1, n + 1, n + 1), dtype=complex)
    for s, st in enumerate(settings):
        if st.n_photons != n:
            raise TomographyError("all settings must share one photon number")
        lift = sector_unitary(st.unitary(), n)
        out[s] = eps[:, None, None] * np.einsum("ki,kj->kij", lift.conj(), lift)
    return out


def _hermitian_basis(d: int) -> np.ndarray:
    """Real-parameter basis of d x d Hermitian matrices, shape (d*d, d, d)."""
    basis = []
    for i in range(d):
        m = np.zeros((d, d), dtype=complex)
        m[i, i] = 1
        basis.append(m)
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = m[j, i] = 1
            basis.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[i, j], m[j, i] = -1j, 1j
            basis.append(m)
    return np.array(basis)


def measurement_matrix(settings: Sequence[TomoSetting], detection: TomoDetection | None = None) -> np.ndarray:
    """Linear map from Hermitian real parameters to all expected outcome weights."""
    eff = effect_operators(settings, detection).reshape(-1, settings[0].n_photons + 1, settings[0].n_photons + 1)
    basis = _hermitian_basis(settings[0].n_photons + 1)
    return np.real(np.einsum("oij,bji->ob", eff, basis))


def _grid_settings(n: int, thetas) -> list[TomoSetting]:
    return [
        TomoSetting(WavePlateSetting(2 * math.pi * j / (n + 1), th), n)
        for th in thetas
        for j in range(n + 1)
    ]


@lru_cache(maxsize=None)
def _best_theta_grid(n: int) -> tuple[float, ...]:
    best, best_cond = None, np.inf
    for start in np.linspace(0.0, math.pi / 4, 10):
        for span in np.linspace(math.pi / 8, math.pi / 2, 13):
            thetas = tuple(float(start + span * k / n) for k in range(n + 1))
            a = measurement_matrix(_grid_settings(n, thetas))
            sv = np.linalg.svd(a, compute_uv=False)
            cond = sv[0] / sv[-1] if sv[-1] > 1e-12 else np.inf
            if cond < best_cond:
                best, best_cond = thetas, cond
    return best


def default_settings(n_photons: int) -> list[TomoSetting]:
    """``(N+1)^2`` settings: ``phi`` on an even grid of N+1 points times N+1
    values of ``theta`` picked to minimize the forward-map condition number."""
    if n_photons < 1:
        raise TomographyError("need at least one photon")
    settings = _grid_settings(n_photons, _best_theta_grid(n_photons))
    log.info("tomography settings for N=%d: condition number %.3g", n_photons, condition_number(settings))
    return settings


def condition_number(settings: Sequence[TomoSetting], detection: TomoDetection | None = None) -> float:
    sv = np.linalg.svd(measurement_matrix(settings, detection), compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf


def forward_probs(rho: DensityMatrix, setting: TomoSetting, detection: TomoDetection | None = None) -> np.ndarray:
    """Pattern probabilities ``(k, N-k)``, conditioned on an N-fold coincidence."""
    if rho.sector != setting.n_photons:
        raise TomographyError(f"rho lives on sector {rho.sector}, setting measures {setting.n_photons} photons")
    eff = effect_operators([setting], detection)[0]
    w = np.real(np.einsum("kij,ji->k", eff, rho.entries))
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise TomographyError("state produces no registered N-fold coincidences")
    return w / total


def expected_counts(rho: DensityMatrix, settings, mean_per_setting: float, detection=None) -> np.ndarray:
    """Mean counts ``A * eps_k * p_k`` with one flux scale ``A`` shared by all
    settings, chosen so the average setting collects ``mean_per_setting``."""
    if rho.sector != settings[0].n_photons:
        raise TomographyError(f"rho lives on sector {rho.sector}, settings measure {settings[0].n_photons} photons")
    w = np.real(np.einsum("skij,ji->sk", effect_operators(settings, detection), rho.entries))
    w = np.clip(w, 0.0, None)
    return mean_per_setting * w / w.sum(axis=1).mean()


def make_records(settings, counts, integration_s: float = 1.0) -> list[CountRecord]:
    return [CountRecord(s, np.asarray(c), integration_s) for s, c in zip(settings, counts)]


def _unpack(records: Sequence[CountRecord], detection):
    if not records:
        raise TomographyError("no count records")
    settings = [r.setting for r in records]
    counts = np.array([r.counts for r in records], dtype=float)
    eff = effect_operators(settings, detection)
    return settings, counts, eff


def linear_inversion(records: Sequence[CountRecord], detection: TomoDetection | None = None) -> DensityMatrix:
    """Unconstrained least-squares estimate (Hermitian, unit trace, maybe not PSD)."""
    settings, counts, eff = _unpack(records, detection)
    n = settings[0].n_photons
    if counts.sum() <= 0:
        raise TomographyError("all counts are zero")
    a = measurement_matrix(settings, detection)
    rank = np.linalg.matrix_rank(a, tol=1e-10 * np.linalg.norm(a, 2))
    if rank < (n + 1) ** 2:
        raise TomographyError(f"settings are not informationally complete: rank {rank} < {(n + 1) ** 2}")
    x, *_ = np.linalg.lstsq(a, counts.reshape(-1), rcond=None)
    m = np.einsum("b,bij->ij", x, _hermitian_basis(n + 1))
    m = 0.5 * (m + m.conj().T)
    tr = np.trace(m).real
    if tr <= 0:
        raise TomographyError("linear inversion produced non-positive trace")
    return DensityMatrix(n, m / tr, sector=n)


class _Likelihood:
    """Poisson log-likelihood with the flux scale profiled out:
    ``sum n_i log w_i(rho) - N_tot log sum_i w_i(rho)`` (constants dropped)."""

    def __init__(self, counts: np.ndarray, eff: np.ndarray):
        self.n = counts.reshape(-1)
        self.eff = eff.reshape(-1, eff.shape[-2], eff.shape[-1])
        self.mask = self.n > 0
        self.total = self.n.sum()
        self.eff_sum = self.eff.sum(axis=0)
        self.const = float(np.sum(self.n[self.mask] * np.log(self.n[self.mask] / self.total)))

    def value(self, rho: np.ndarray) -> float:
        w = np.real(np.einsum("oij,ji->o", self.eff[self.mask], rho))
        if np.any(w <= 0):
            return -math.inf
        z = np.real(np.trace(self.eff_sum @ rho))
        # shifted so a perfect fit of the observed frequencies scores 0
        return float(np.sum(self.n[self.mask] * np.log(w)) - self.total * math.log(z) - self.const)

    def gradient(self, rho: np.ndarray) -> np.ndarray:
        w = np.real(np.einsum("oij,ji->o", self.eff[self.mask], rho))
        z = np.real(np.trace(self.eff_sum @ rho))
        g = np.einsum("o,oij->ij", self.n[self.mask] / w, self.eff[self.mask])
        return g - self.total / z * self.eff_sum


def _rho_from_t(t: np.ndarray) -> np.ndarray:
    x = t.conj().T @ t
    return x / np.trace(x).real


def _tril_pack(t: np.ndarray) -> np.ndarray:
    idx = np.tril_indices(t.shape[0])
    v = t[idx]
    return np.concatenate([v.real, v.imag])


def _tril_unpack(v: np.ndarray, d: int) -> np.ndarray:
    idx = np.tril_indices(d)
    m = len(idx[0])
    t = np.zeros((d, d), dtype=complex)
    t[idx] = v[:m] + 1j * v[m:]
    return t


@dataclass
class MLEOptions:
    rel_tol: float = REL_TOL
    max_iter: int = MAX_ITER
    memory: int = 10
    check_monotone: bool = False
    initial: DensityMatrix | None = None


def _ascent(like: _Likelihood, d: int, opts: MLEOptions):
    """Limited-memory quasi-Newton ascent with backtracking on the Cholesky
    factor. Every accepted step strictly increases the likelihood."""
    if opts.initial is not None:
        rho0 = opts.initial.entries
    else:
        rho0 = np.eye(d) / d
    w, vecs = np.linalg.eigh(0.5 * (rho0 + rho0.conj().T))
    rho0 = (vecs * np.maximum(w, 1e-3 / d)) @ vecs.conj().T
    rho0 /= np.trace(rho0).real
    t = _lower_factor(rho0)
    x = _tril_pack(t)

    def value_grad(v):
        tt = _tril_unpack(v, d)
        xx = tt.conj().T @ tt
        s = np.trace(xx).real
        rho = xx / s
        f = like.value(rho)
        if not math.isfinite(f):
            return f, None
        g = like.gradient(rho)
        h = (g - np.trace(g @ rho).real * np.eye(d)) / s
        gt = 2.0 * tt @ h  # dL/dT* direction (real inner product)
        return f, _tril_pack(np.tril(gt))

    f, g = value_grad(x)
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    step0 = 1.0
    converged = False
    it = 0
    small = 0
    for it in range(1, opts.max_iter + 1):
        # two-loop recursion on -L (minimization form), direction = ascent
        q = -g.copy()
        alphas = []
        for s_, y_ in reversed(list(zip(s_hist, y_hist))):
            rho_ = 1.0 / (y_ @ s_)
            a_ = rho_ * (s_ @ q)
            alphas.append((a_, rho_, s_, y_))
            q -= a_ * y_
        if y_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for a_, rho_, s_, y_ in reversed(alphas):
            b_ = rho_ * (y_ @ q)
            q += s_ * (a_ - b_)
        direction = -q
        slope = direction @ g
        if not slope > 0:
            direction, slope = g.copy(), g @ g
            s_hist.clear()
            y_hist.clear()
        step = step0 if y_hist else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        accepted = False
        for _ in range(60):
            x_new = x + step * direction
            f_new, g_new = value_grad(x_new)
            if math.isfinite(f_new) and f_new >= f + 1e-4 * step * slope and f_new > f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no ascent possible at machine precision
            break
        if opts.check_monotone:
            assert f_new >= f, "log-likelihood decreased"
        s_vec, y_vec = x_new - x, -(g_new - g)
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        change = abs(f_new - f) / max(abs(f_new), 1.0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        small = small + 1 if change < opts.rel_tol else 0
        if small >= 3:
            converged = True
            break
    return _rho_from_t(_tril_unpack(x, d)), f, it, converged, history


def _lower_factor(rho: np.ndarray) -> np.ndarray:
    """Lower-triangular ``T`` with ``T^dagger T = rho`` (rho positive definite)."""
    # T^dagger T with T lower  <=>  J rho J = (J T^dagger J)(J T J), J the exchange matrix
    j = np.eye(rho.shape[0])[::-1]
    c = np.linalg.cholesky(j @ rho @ j)  # lower, c c^dagger = J rho J
    return j @ c.conj().T @ j


def mle_reconstruct(
    records: Sequence[CountRecord],
    options: MLEOptions | None = None,
    detection: TomoDetection | None = None,
    target: FockVector | None = None,
) -> ReconstructionResult:
    """Maximum-likelihood density matrix on the N-photon sector."""
    opts = options or MLEOptions()
    settings, counts, eff = _unpack(records, detection)
    n = settings[0].n_photons
    if counts.sum() <= 0:
        raise TomographyError("total counts must be > 0")
    like = _Likelihood(counts, eff)
    rho, f, iters, converged, history = _ascent(like, n + 1, opts)
    rho = 0.5 * (rho + rho.conj().T)
    result = ReconstructionResult(DensityMatrix(n, rho, sector=n), f, iters, converged, history=history)
    if not converged:
        log.warning("MLE hit %d iterations without converging", iters)
    if target is not None:
        result.fidelity = fidelity_trace(result.rho, target)
    return result


def _resample_fidelity(args):
    records, target, seed, opts, detection = args
    rng = np.random.default_rng(seed)
    redrawn = [CountRecord(r.setting, rng.poisson(r.counts), r.integration_s) for r in records]
    res = mle_reconstruct(redrawn, opts, detection, target)
    return res.fidelity, res.converged


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FOCKFORGE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class FidelityEstimate:
    fidelity: float
    std: float
    point_estimate: float
    failures: int
    resamples: int


def fidelity_with_errorbars(
    records: Sequence[CountRecord],
    target: FockVector,
    resamples: int = 100,
    seed: int = 0,
    options: MLEOptions | None = None,
    detection: TomoDetection | None = None,
) -> FidelityEstimate:
    """Monte Carlo error bar: Poisson-redraw every count, redo the MLE, and
    report mean and standard deviation of the fidelity."""
    if resamples < 2:
        raise ValueError("need at least 2 resamples")
    opts = options or MLEOptions(rel_tol=1e-8, max_iter=20_000)
    point = mle_reconstruct(records, opts, detection, target).fidelity
    seeds = np.random.SeedSequence(seed).spawn(resamples)
    jobs = [(records, target, s, opts, detection) for s in seeds]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        out = list(pool.map(_resample_fidelity, jobs))
    fids = np.array([f for f, _ in out])
    failures = sum(1 for _, ok in out if not ok)
    return FidelityEstimate(float(fids.mean()), float(fids.std(ddof=1)), float(point), failures, resamples)


def fock_state_tomography(
    records: Sequence[CountRecord],
    target: FockVector | None = None,
    options: MLEOptions | None = None,
    detection: TomoDetection | None = None,
) -> ReconstructionResult:
    """Same reconstruction applied to single-direction (Fock-state) data;
    fidelity defaults to the ``|n/2, n/2>`` target."""
    if not records:
        raise TomographyError("no count records")
    from .fock_core import number_state

    n = records[0].setting.n_photons
    if target is None:
        target = number_state(n // 2, n - n // 2, n)
    return mle_reconstruct(records, options, detection, target)


def records_to_csv(records: Sequence[CountRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting_index", "phi", "theta", "outcome_label", "counts", "integration_s"])
    for i, r in enumerate(records):
        for (k, m), c in zip(r.setting.outcomes, r.counts):
            w.writerow([i, repr(r.setting.setting.phi), repr(r.setting.setting.theta), f"{k}_{m}", int(c), repr(float(r.integration_s))])
    return buf.getvalue()


def records_from_csv(text: str) -> list[CountRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    grouped: dict[int, list[dict]] = {}
    for row in rows:
        grouped.setdefault(int(row["setting_index"]), []).append(row)
    out = []
    for idx in sorted(grouped):
        group = grouped[idx]
        n = len(group) - 1
        counts = np.zeros(n + 1, dtype=np.int64)
        for row in group:
            k = int(row["outcome_label"].split("_")[0])
            counts[k] = int(row["counts"])
        st = TomoSetting(WavePlateSetting(float(group[0]["phi"]), float(group[0]["theta"])), n)
        out.append(CountRecord(st, counts, float(group[0]["integration_s"])))
    return out
