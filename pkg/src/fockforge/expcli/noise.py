"""Ideal and noisy measurement pipelines.

An :class:`IdealPipeline` describes what the experiment intends: a source
(squeezed state post-selected on ``2n`` photons, or a fixed Fock vector), a
list of nominal analyzer settings, a detector tree and the source-side
transmissivity. :func:`realize` turns it into concrete matrices;
:func:`apply_noise_model` does the same with imperfections switched on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..detection import ClickPattern, DetectionTree, DetectorModel, pattern_distribution
from ..fock_core import DensityMatrix, FockVector, LossChannel, apply_loss, dephase_pairs, vacuum
from ..polarization_optics import (
    ModeTransform,
    PlateAngles,
    WavePlateSetting,
    solve_angles_for_target,
    su2_from_angles,
)
from ..sfwm_source import SqueezeParams, post_select_2n, squeezed_two_mode_state


@dataclass(frozen=True)
class NoiseModel:
    waveplate_angle_jitter_rad: float = 0.0
    distinguishability: float = 1.0  # mode overlap of the pairs; 1 = indistinguishable
    include_higher_order: bool = False

    def __post_init__(self):
        if self.waveplate_angle_jitter_rad < 0:
            raise ValueError("jitter must be >= 0")
        if not 0.0 <= self.distinguishability <= 1.0:
            raise ValueError("distinguishability must lie in [0, 1]")

    @property
    def is_zero(self) -> bool:
        return (
            self.waveplate_angle_jitter_rad == 0.0
            and self.distinguishability == 1.0
            and not self.include_higher_order
        )

    @classmethod
    def from_config(cls, section: dict) -> "NoiseModel":
        return cls(
            float(section.get("waveplate_angle_jitter_rad", 0.0)),
            float(section.get("distinguishability", 1.0)),
            bool(section.get("include_higher_order", False)),
        )


@dataclass(frozen=True)
class IdealPipeline:
    settings: tuple[WavePlateSetting, ...]
    tree: DetectionTree
    model: DetectorModel
    eta_source: float = 1.0
    squeeze: SqueezeParams | None = None
    n_pairs: int = 1
    state: FockVector | None = None
    cutoff: int = 8
    state_weight: float = 1.0  # per-pulse probability of ``state``; vacuum otherwise

    def __post_init__(self):
        if (self.squeeze is None) == (self.state is None):
            raise ValueError("give exactly one of squeeze or state")
        if not 0.0 < self.state_weight <= 1.0:
            raise ValueError("state_weight must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class Pipeline:
    """Concrete state entering the analyzer and the transform per setting."""

    rho: DensityMatrix
    transforms: tuple[ModeTransform, ...]
    tree: DetectionTree
    model: DetectorModel

    def pattern_probs(self, index: int) -> np.ndarray:
        return pattern_distribution(self.rho, self.transforms[index], self.tree, self.model)

    def probability(self, index: int, target: ClickPattern) -> float:
        p = self.pattern_probs(index)
        if target.h_clicks >= p.shape[0] or target.v_clicks >= p.shape[1]:
            return 0.0
        return float(p[target.h_clicks, target.v_clicks])


@lru_cache(maxsize=4096)
def _plates_for(phi: float, theta: float) -> PlateAngles:
    return solve_angles_for_target(su2_from_angles(WavePlateSetting(phi, theta)))


def plate_angles(setting: WavePlateSetting) -> PlateAngles:
    """QWP-HWP-QWP angles realizing ``setting`` (cached)."""
    return _plates_for(setting.phi, setting.theta)


def jittered_transform(setting: WavePlateSetting, sigma: float, rng: np.random.Generator) -> ModeTransform:
    """Transform actually applied when every plate angle is off by N(0, sigma)."""
    if sigma == 0.0:
        return su2_from_angles(setting)
    return plate_angles(setting).jittered(rng, sigma).transform()


def _source_density(ideal: IdealPipeline, noise: NoiseModel) -> DensityMatrix:
    if ideal.state is not None:
        rho = ideal.state.to_density()
        if ideal.state_weight < 1.0:
            vac = vacuum(ideal.cutoff).to_density().entries
            rho = DensityMatrix(ideal.cutoff, ideal.state_weight * rho.entries + (1.0 - ideal.state_weight) * vac)
    else:
        sq = squeezed_two_mode_state(ideal.squeeze, ideal.cutoff, warn=False)
        if noise.include_higher_order:
            rho = sq.to_density()
        else:
            # only the wanted sector, at its true per-pulse weight; rest is vacuum
            weight = sq.sector(2 * ideal.n_pairs).norm() ** 2
            target = post_select_2n(sq, ideal.n_pairs).to_density().entries
            vac = vacuum(ideal.cutoff).to_density().entries
            rho = DensityMatrix(ideal.cutoff, weight * target + (1.0 - weight) * vac)
    rho = dephase_pairs(rho, noise.distinguishability)
    if ideal.eta_source < 1.0:
        rho = apply_loss(rho, LossChannel.uniform(ideal.eta_source))
    return rho


def realize(ideal: IdealPipeline) -> Pipeline:
    return apply_noise_model(ideal, NoiseModel(), rng=None)


def apply_noise_model(ideal: IdealPipeline, noise: NoiseModel, rng: np.random.Generator | None) -> Pipeline:
    """Perturb plate angles per setting, scale pair coherences by the mode
    overlap and, if requested, keep every photon-number sector of the
    squeezed state so that lossy higher orders leak into the recorded
    coincidences."""
    if noise.waveplate_angle_jitter_rad > 0 and rng is None:
        raise ValueError("a random generator is required for angle jitter")
    transforms = tuple(
        jittered_transform(s, noise.waveplate_angle_jitter_rad, rng) for s in ideal.settings
    )
    return Pipeline(_source_density(ideal, noise), transforms, ideal.tree, ideal.model)
