"""Measurement side: port photon-number statistics after the SU(2) gadget and
PBS, balanced fan-out onto threshold detectors, count sampling, HOM and
phase-fringe scans, and the curve fits that extract visibilities.

Visibility throughout is ``(C_max - C_min) / C_max`` from fitted extrema.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .fock_core import FockVector, sector_unitary
from .polarization_optics import ModeTransform, WavePlateSetting, su2_from_angles
from .sfwm_source import delay_overlap

DEFAULT_DARK_RATE_HZ = 100.0
TWO_PHOTON_WINDOW_S = 0.8e-9
FOUR_PHOTON_WINDOW_S = 1.0e-9
SNSPD_EFFICIENCY = 0.85


class FitError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    dark_click_prob: float = 0.0
    threshold: bool = True

    def __post_init__(self):
        for name in ("efficiency", "dark_click_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_dark_rate(
        cls, efficiency: float, dark_rate_hz: float = DEFAULT_DARK_RATE_HZ, window_s: float = FOUR_PHOTON_WINDOW_S
    ) -> "DetectorModel":
        return cls(efficiency, -math.expm1(-dark_rate_hz * window_s))

    def click_prob(self, photons: int) -> float:
        """Probability one detector clicks when ``photons`` reach it."""
        return 1.0 - (1.0 - self.dark_click_prob) * (1.0 - self.efficiency) ** photons


IDEAL = DetectorModel()


@dataclass(frozen=True)
class DetectionTree:
    """Threshold detectors fanned out behind each PBS port."""

    h_detectors: int = 1
    v_detectors: int = 1

    def __post_init__(self):
        if self.h_detectors < 1 or self.v_detectors < 1:
            raise ValueError("each monitored port needs at least one detector")


@dataclass(frozen=True)
class ClickPattern:
    """Pattern class: number of distinct detectors clicking on each side."""

    h_clicks: int
    v_clicks: int

    def check(self, tree: DetectionTree) -> None:
        if not (0 <= self.h_clicks <= tree.h_detectors and 0 <= self.v_clicks <= tree.v_detectors):
            raise ValueError(f"pattern {self} incompatible with {tree}")


def _as_transform(setting) -> ModeTransform:
    if isinstance(setting, WavePlateSetting):
        return su2_from_angles(setting)
    if isinstance(setting, ModeTransform):
        return setting
    return ModeTransform(np.asarray(setting))


def _sector_blocks(state) -> dict[int, np.ndarray]:
    """Per-sector density blocks ``{N: (N+1)x(N+1)}`` of a vector or matrix."""
    blocks = {}
    if isinstance(state, FockVector):
        for total in state.photon_numbers():
            v = state.sector_amplitudes(total)
            blocks[total] = np.outer(v, v.conj())
        return blocks
    if state.sector is not None:
        return {state.sector: np.asarray(state.entries)}
    c = state.cutoff + 1
    diag = np.abs(np.diag(state.entries))
    for total in range(2 * state.cutoff + 1):
        ks = [k for k in range(total + 1) if k < c and total - k < c]
        idx = [k * c + (total - k) for k in ks]
        if not np.any(diag[idx] > 0):
            continue
        block = np.zeros((total + 1, total + 1), dtype=complex)
        block[np.ix_(ks, ks)] = state.entries[np.ix_(idx, idx)]
        blocks[total] = block
    return blocks


def port_number_distribution(state, setting) -> np.ndarray:
    """``p[k, m]``: probability of ``k`` photons at the H port and ``m`` at V.

    ``state`` is a normalized FockVector or DensityMatrix; ``setting`` a
    WavePlateSetting or any ModeTransform. The array is square with side
    ``N_max + 1``.
    """
    u = _as_transform(setting)
    blocks = _sector_blocks(state)
    nmax = max(blocks) if blocks else 0
    p = np.zeros((nmax + 1, nmax + 1))
    for total, block in blocks.items():
        lift = sector_unitary(u, total)
        probs = np.real(np.einsum("ij,jk,ik->i", lift, block, lift.conj()))
        for k in range(total + 1):
            p[k, total - k] = probs[k]
    return np.clip(p, 0.0, None)


def _compositions(n: int, parts: int):
    if parts == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=4096)
def _fanout_cached(n: int, detectors: int, model: DetectorModel) -> tuple:
    dist = np.zeros(detectors + 1)
    for occ in _compositions(n, detectors):
        weight = math.factorial(n) / math.prod(math.factorial(o) for o in occ) / detectors ** n
        # distribution of the number of clicking detectors for this occupation
        clicks = np.array([1.0])
        for o in occ:
            q = model.click_prob(o)
            clicks = np.convolve(clicks, [1.0 - q, q])
        dist += weight * clicks
    return tuple(dist)


def fanout_click_probs(n_photons: int, detectors: int, model: DetectorModel = IDEAL) -> np.ndarray:
    """Distribution of the number of clicking detectors behind a balanced
    ``detectors``-way splitter fed with ``n_photons`` in one mode."""
    if n_photons < 0 or detectors < 1:
        raise ValueError("need n_photons >= 0 and detectors >= 1")
    return np.array(_fanout_cached(int(n_photons), int(detectors), model))


def click_matrix(nmax: int, detectors: int, model: DetectorModel = IDEAL) -> np.ndarray:
    """``M[c, n]`` = P(c detectors click | n photons), ``n = 0..nmax``."""
    return np.stack([fanout_click_probs(n, detectors, model) for n in range(nmax + 1)], axis=1)


def pattern_distribution(
    state, setting, tree: DetectionTree = DetectionTree(), model: DetectorModel = IDEAL
) -> np.ndarray:
    """``P[c_H, c_V]`` over all click-pattern classes; sums to 1."""
    p = port_number_distribution(state, setting)
    nmax = p.shape[0] - 1
    mh = click_matrix(nmax, tree.h_detectors, model)
    mv = click_matrix(nmax, tree.v_detectors, model)
    return mh @ p @ mv.T


def coincidence_probability(
    state,
    setting,
    tree: DetectionTree,
    model: DetectorModel = IDEAL,
    target: ClickPattern = ClickPattern(1, 1),
    net: bool = False,
) -> float:
    """Per-pulse probability of the click pattern ``target``.

    With ``net=True`` dark clicks are excluded (accidental-subtracted value);
    the default is the raw rate including dark-click accidentals.
    """
    target.check(tree)
    if net:
        model = DetectorModel(model.efficiency, 0.0, model.threshold)
    return float(pattern_distribution(state, setting, tree, model)[target.h_clicks, target.v_clicks])


def sample_poisson(means, seed) -> np.ndarray | int:
    """Poisson draws; each entry of an array uses its own child stream of
    ``seed`` so a point's counts do not depend on its neighbours."""
    m = np.asarray(means, dtype=float)
    if np.any(m < 0):
        raise ValueError("Poisson means must be >= 0")
    if m.ndim == 0:
        return int(np.random.default_rng(seed).poisson(m))
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = seq.spawn(m.size)
    flat = [np.random.default_rng(s).poisson(v) for s, v in zip(children, m.reshape(-1))]
    return np.array(flat, dtype=np.int64).reshape(m.shape)


def sample_counts(prob_per_pulse, rep_rate: float, integration_s: float, seed) -> np.ndarray | int:
    """Poisson counts with mean ``prob * rep_rate * integration_s``."""
    p = np.asarray(prob_per_pulse, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return sample_poisson(p * rep_rate * integration_s, seed)


@dataclass(frozen=True, eq=False)
class Curve:
    x: np.ndarray
    counts: np.ndarray
    stderr: np.ndarray

    @classmethod
    def from_counts(cls, x, counts) -> "Curve":
        counts = np.asarray(counts, dtype=float)
        return cls(np.asarray(x, dtype=float), counts, np.sqrt(np.maximum(counts, 0.0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "counts", "stderr"])
        for row in zip(self.x, self.counts, self.stderr):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Curve":
        rows = list(csv.DictReader(io.StringIO(text)))
        col = lambda k: np.array([float(r[k]) for r in rows])
        return cls(col("x"), col("counts"), col("stderr"))


def hom_visibility(overlap: float) -> float:
    """Dip visibility for a |1,1> pair on a 50/50 splitter with mode overlap
    ``overlap`` (1 = indistinguishable).

    The overlapping part is propagated bosonically; the orthogonal part
    behaves as two independent particles (coincidence 1/2).
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    bs = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    lift = sector_unitary(bs, 2)
    p_coinc_bosonic = abs(lift[1, 1]) ** 2
    p_coinc = overlap * p_coinc_bosonic + (1.0 - overlap) * 0.5
    return 1.0 - p_coinc / 0.5


@dataclass(frozen=True, eq=False)
class HomScan:
    delays: np.ndarray
    expected: np.ndarray
    visibility: float
    curve: Curve | None = None


def hom_scan(
    delays: Sequence[float],
    overlap: float,
    envelope_fwhm: float,
    c_max: float = 1.0,
    accidental: float = 0.0,
    seed=None,
) -> HomScan:
    """Coincidences ``C(tau) = C_max (1 - V L(tau)) + accidental``.

    ``c_max`` is the expected count per point away from the dip; with a seed
    the curve is Poisson sampled.
    """
    if envelope_fwhm <= 0:
        raise ValueError("envelope FWHM must be > 0")
    tau = np.asarray(delays, dtype=float)
    vis = hom_visibility(overlap)
    expected = c_max * (1.0 - vis * delay_overlap(tau, envelope_fwhm)) + accidental
    curve = None
    if seed is not None:
        curve = Curve.from_counts(tau, sample_poisson(expected, seed))
    return HomScan(tau, expected, vis, curve)


@dataclass(frozen=True)
class DipFit:
    c_max: float
    c_min: float
    visibility: float
    center: float
    width: float
    visibility_err: float
    residual: float

    def to_json(self) -> str:
        return json.dumps(
            {"visibility": self.visibility, "c_max": self.c_max, "c_min": self.c_min,
             "center": self.center, "width": self.width, "residual": self.residual}
        )


def _dip_model(x, c_max, vis, center, width):
    return c_max * (1.0 - vis / (1.0 + (2.0 * (x - center) / width) ** 2))


def fit_dip(x, counts, stderr=None) -> DipFit:
    """Least-squares Lorentzian dip fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 points for a dip fit")
    sigma = None if stderr is None else np.maximum(np.asarray(stderr, dtype=float), 1.0)
    c0 = float(np.max(y)) or 1.0
    i_min = int(np.argmin(y))
    p0 = [c0, 1.0 - y[i_min] / c0, x[i_min], (x.max() - x.min()) / 4]
    try:
        popt, pcov = curve_fit(_dip_model, x, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"dip fit did not converge: {exc}", float(np.std(y))) from exc
    resid = float(np.sqrt(np.mean((_dip_model(x, *popt) - y) ** 2)))
    c_max, vis, center, width = popt
    vis_err = float(np.sqrt(pcov[1, 1])) if np.all(np.isfinite(pcov)) else float("nan")
    return DipFit(float(c_max), float(c_max * (1 - vis)), float(vis), float(center), float(abs(width)), vis_err, resid)


@dataclass(frozen=True)
class FringeFit:
    visibility: float
    frequency: float
    amplitude: float
    offset: float
    phase: float
    residual: float
    visibility_err: float

    def to_json(self) -> str:
        return json.dumps(
            {"visibility": self.visibility, "frequency": self.frequency,
             "offset": self.offset, "residual": self.residual}
        )


def _linear_sinusoid(phi, y, w, freq):
    design = np.column_stack([np.ones_like(phi), np.cos(freq * phi), np.sin(freq * phi)])
    coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    resid = (design @ coef - y) * w
    return coef, float(np.sum(resid ** 2))


def _sinusoid(phi, offset, b, c, freq):
    return offset + b * np.cos(freq * phi) + c * np.sin(freq * phi)


def fit_fringe(phis, counts, stderr=None, frequencies=(1, 2, 4), free: bool = False) -> FringeFit:
    """Fit ``offset + A cos(f phi + delta)``.

    The frequency is chosen from ``frequencies`` by best residual and then
    refined as a free parameter, so ``frequency`` carries the fitted value.
    With ``free=True`` the candidate set is a fine grid instead.
    """
    x = np.asarray(phis, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 points for a fringe fit")
    if stderr is None:
        w = np.ones_like(y)
    else:
        w = 1.0 / np.maximum(np.asarray(stderr, dtype=float), 1e-12 + 1e-9 * np.max(np.abs(y)))
    cands = np.linspace(0.25, 8.0, 311) if free else np.asarray(frequencies, dtype=float)
    fits = [(_linear_sinusoid(x, y, w, f), f) for f in cands]
    (coef, best_ss), f0 = min(fits, key=lambda t: t[0][1])
    amp = math.hypot(coef[1], coef[2])
    params = np.array([coef[0], coef[1], coef[2], f0])
    cov = None
    if amp > 1e-12 * max(1.0, abs(coef[0])):
        try:
            with warnings.catch_warnings():
                # exact (noise-free) curves leave the covariance undefined
                warnings.simplefilter("ignore", OptimizeWarning)
                params, cov = curve_fit(
                    _sinusoid, x, y, p0=params, sigma=1.0 / w, absolute_sigma=stderr is not None, maxfev=20000
                )
        except RuntimeError as exc:
            raise FitError(f"fringe fit did not converge: {exc}", math.sqrt(best_ss / x.size)) from exc
    offset, b, c, freq = (float(v) for v in params)
    amp = math.hypot(b, c)
    c_max = offset + amp
    vis = 0.0 if c_max <= 0 else min(max(2 * amp / c_max, 0.0), 1.0)
    vis_err = float("nan")
    if cov is not None and np.all(np.isfinite(cov)) and c_max > 0 and amp > 0:
        # gradient of 2A / (offset + A) w.r.t. (offset, b, c)
        d_amp = np.array([0.0, b / amp, c / amp, 0.0])
        grad = (2 * d_amp * c_max - 2 * amp * (np.array([1.0, 0, 0, 0]) + d_amp)) / c_max ** 2
        vis_err = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    resid = float(np.sqrt(np.mean((_sinusoid(x, *params) - y) ** 2)))
    return FringeFit(vis, freq, amp, offset, float(math.atan2(-c, b)), resid, vis_err)


def fringe_scan(
    state,
    phis: Sequence[float],
    theta: float = math.pi / 4,
    tree: DetectionTree = DetectionTree(),
    model: DetectorModel = IDEAL,
    target: ClickPattern = ClickPattern(1, 1),
    transforms=None,
) -> np.ndarray:
    """Per-pulse probability of ``target`` at each ``phi`` (``theta`` fixed).

    ``transforms`` optionally supplies the actual (e.g. jittered) transform per
    point instead of the nominal gadget setting.
    """
    phis = np.asarray(phis, dtype=float)
    out = np.empty(phis.size)
    for i, phi in enumerate(phis):
        u = transforms[i] if transforms is not None else WavePlateSetting(phi, theta)
        out[i] = coincidence_probability(state, u, tree, model, target)
    return out


@dataclass(frozen=True)
class PeakFit:
    height: float
    background: float
    center: float
    fwhm: float
    fwhm_err: float
    residual: float


def _peak_model(x, height, background, center, fwhm):
    return background + height / (1.0 + (2.0 * (x - center) / fwhm) ** 2)


def fit_lorentzian_peak(x, counts, stderr=None) -> PeakFit:
    """Lorentzian peak on a flat background (pump-delay scans)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 points for a peak fit")
    sigma = None if stderr is None else np.maximum(np.asarray(stderr, dtype=float), 1.0)
    bg = float(np.min(y))
    i_max = int(np.argmax(y))
    p0 = [float(y[i_max]) - bg, bg, x[i_max], (x.max() - x.min()) / 5]
    try:
        popt, pcov = curve_fit(_peak_model, x, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"peak fit did not converge: {exc}", float(np.std(y))) from exc
    resid = float(np.sqrt(np.mean((_peak_model(x, *popt) - y) ** 2)))
    err = float(np.sqrt(pcov[3, 3])) if np.all(np.isfinite(pcov)) else float("nan")
    return PeakFit(float(popt[0]), float(popt[1]), float(popt[2]), float(abs(popt[3])), err, resid)
