"""One runner per experiment kind. Each writes its data files into the output
directory and returns the numbers that go into the run report."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from .. import __version__
from ..detection import (
    ClickPattern,
    Curve,
    DetectionTree,
    DetectorModel,
    fit_dip,
    fit_fringe,
    fit_lorentzian_peak,
    hom_scan,
    sample_counts,
    sample_poisson,
)
from ..fock_core import FockVector, from_labels, number_state
from ..polarization_optics import WavePlateSetting
from ..sfwm_source import (
    LossBudget,
    PumpConfig,
    SqueezeParams,
    brightness_estimate,
    db_to_transmissivity,
    delay_overlap,
    loss_budget_total,
    pair_rate,
    pairs_per_pulse,
    post_select_2n,
    pulse_width_tbp,
    squeezed_two_mode_state,
)
from ..tomography import (
    CountRecord,
    MLEOptions,
    TomoDetection,
    ConvergenceError,
    default_settings,
    fidelity_with_errorbars,
    mle_reconstruct,
    records_to_csv,
)
from .noise import IdealPipeline, NoiseModel, Pipeline, apply_noise_model
from .report import RunReport, sha256_file

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    def __init__(self, kind: str, cause: Exception):
        super().__init__(f"experiment '{kind}' failed: {cause}")
        self.kind = kind
        self.cause = cause


def _streams(seed: int, names: list[str]) -> dict[str, np.random.SeedSequence]:
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def pump_from(cfg: dict) -> PumpConfig:
    p = cfg["pump"]
    return PumpConfig(p["p1"], p["p2"], p["rep_rate"], p["delay"], p["pulse_fwhm"])


def squeeze_from(cfg: dict) -> SqueezeParams:
    """Explicit ``squeeze_r`` or the value calibrated from the reference pair
    probability scaled to the configured pump powers."""
    if "squeeze_r" in cfg:
        return SqueezeParams(cfg["squeeze_r"])
    p = cfg["pump"]
    return SqueezeParams.from_pairs_per_pulse(pairs_per_pulse(pump_from(cfg), p["ref_power"], p["ref_pairs_per_pulse"]))


def budget_from(cfg: dict) -> LossBudget:
    return LossBudget(**cfg["losses"])


def detector_from(cfg: dict) -> DetectorModel:
    d = cfg["detector"]
    if "dark_click_prob" in d:
        return DetectorModel(d["efficiency"], d["dark_click_prob"])
    return DetectorModel.from_dark_rate(d["efficiency"], d["dark_rate_hz"], d["window_s"])


def source_transmissivity(cfg: dict) -> float:
    """Single-photon transmission up to (excluding) the detectors."""
    total = loss_budget_total(budget_from(cfg)).total_db
    return db_to_transmissivity(max(total - cfg["losses"]["detector"], 0.0))


def tree_from(cfg: dict) -> DetectionTree:
    t = cfg.get("tree", {})
    return DetectionTree(t.get("h_detectors", 1), t.get("v_detectors", 1))


def scan_grid(cfg: dict) -> np.ndarray:
    s = cfg["scan"]
    return np.linspace(s["min"], s["max"], s["points"], endpoint=s.get("endpoint", True))


def _write(out: Path, name: str, text: str, files: dict) -> None:
    path = out / name
    path.write_text(text)
    files[name] = sha256_file(path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- source checks


def run_delay_scan(cfg, out, files, seed):
    delays = scan_grid(cfg)
    d = cfg["delay_scan"]
    fwhm = cfg["pump"]["pulse_fwhm"]
    expected = d["peak_counts"] * delay_overlap(delays, fwhm) + d["background_counts"]
    counts = sample_poisson(expected, seed)
    curve = Curve.from_counts(delays, counts)
    fit = fit_lorentzian_peak(curve.x, curve.counts, curve.stderr)
    _write(out, "delay_scan.csv", curve.to_csv(), files)
    return {
        "fitted_fwhm_ps": fit.fwhm,
        "fitted_fwhm_err_ps": fit.fwhm_err,
        "fitted_center_ps": fit.center,
        "tbp_pulse_width_ps": pulse_width_tbp(0.090, 80.0, 0.4),
    }


def run_power_scan(cfg, out, files, seed):
    powers = scan_grid(cfg)
    fixed = cfg["scan"]["fixed_power"]
    rep = cfg["pump"]["rep_rate"]
    t = cfg["integration_s"]
    eta = source_transmissivity(cfg) * cfg["detector"]["efficiency"]
    ref = cfg["pump"]["ref_power"]
    k = cfg["pump"]["ref_pairs_per_pulse"] / ref ** 2  # pairs per pulse per uW^2
    dual = np.array([k * pair_rate(PumpConfig(p, fixed), "dual") for p in powers])
    single = np.array([k * pair_rate(PumpConfig(p, 0.0), "single") for p in powers])
    streams = np.random.SeedSequence(seed).spawn(3)
    coinc_dual = sample_counts(np.clip(dual * eta ** 2 / 2, 0, 1), rep, t, streams[0])
    singles_dual = sample_counts(np.clip(2 * dual * eta, 0, 1), rep, t, streams[1])
    coinc_single = sample_counts(np.clip(single * eta ** 2 / 2, 0, 1), rep, t, streams[2])
    curves = {
        "power_dual_coincidences.csv": coinc_dual,
        "power_dual_singles.csv": singles_dual,
        "power_single_pump_coincidences.csv": coinc_single,
    }
    results = {}
    for name, counts in curves.items():
        _write(out, name, Curve.from_counts(powers, counts).to_csv(), files)
        mask = counts > 0
        slope = float(np.polyfit(np.log(powers[mask]), np.log(counts[mask]), 1)[0])
        results[f"loglog_slope_{name[:-4]}"] = slope
    return results


def run_brightness(cfg, out, files, seed):
    p = cfg["pump"]
    rep = brightness_estimate(
        pump_from(cfg),
        (p["ref_power"], p["ref_pairs_per_pulse"]),
        budget_from(cfg),
        cfg["brightness"]["postprocessing_factor"],
    )
    results = {
        "pairs_per_pulse": rep.pairs_per_pulse,
        "four_photon_per_pulse": rep.four_photon_per_pulse,
        "four_photon_generation_hz": rep.four_photon_generation_hz,
        "four_fold_loss_db": rep.four_fold_loss_db,
        "four_fold_detected_hz": rep.four_fold_detected_hz,
    }
    _write(out, "brightness.json", _json(results), files)
    return results


def run_budget(cfg, out, files, seed):
    budget = budget_from(cfg)
    tot = loss_budget_total(budget)
    results = {
        "components_db": budget.components(),
        "component_sum_db": tot.component_sum_db,
        "total_db": tot.total_db,
        "transmissivity": tot.transmissivity,
        "pulse_width_tbp_ps": pulse_width_tbp(0.090, 80.0, 0.4),
    }
    _write(out, "budget.json", _json(results), files)
    return results


# ---------------------------------------------------------------- interference


def run_hom(cfg, out, files, seed):
    delays = scan_grid(cfg)
    h = cfg["hom"]
    overlap = cfg["noise"]["distinguishability"]
    accidental = h["accidental_fraction"] * h["c_max"]
    scan = hom_scan(delays, overlap, h["envelope_fwhm"], h["c_max"], accidental, seed=seed)
    curve = scan.curve
    raw = fit_dip(curve.x, curve.counts, curve.stderr)
    net_counts = curve.counts - accidental
    net = fit_dip(curve.x, net_counts, np.sqrt(np.maximum(curve.counts, 1.0)))
    _write(out, "hom_scan.csv", curve.to_csv(), files)
    _write(out, "hom_fit.json", raw.to_json() + "\n", files)
    return {
        "visibility": raw.visibility,
        "visibility_err": raw.visibility_err,
        "net_visibility": net.visibility,
        "net_visibility_err": net.visibility_err,
        "model_visibility": scan.visibility,
        "dip_center_ps": raw.center,
        "dip_width_ps": raw.width,
    }


FRINGE_SETUPS = {
    # kind: (pairs, pattern)
    "fringe1": (0, ClickPattern(1, 0)),
    "fringe2": (1, ClickPattern(1, 1)),
    "fringe4": (2, ClickPattern(1, 3)),
}


def _fringe_pipeline(cfg, phis, noise, rng) -> Pipeline:
    kind = cfg["kind"]
    pairs, _ = FRINGE_SETUPS[kind]
    theta = cfg["scan"]["theta"]
    settings = tuple(WavePlateSetting(p, theta) for p in phis)
    tree = tree_from(cfg)
    model = detector_from(cfg)
    if pairs == 0:
        # diagonal CW light behaves as the single-photon state
        state = from_labels({(1, 0): 1 / math.sqrt(2), (0, 1): 1 / math.sqrt(2)}, cfg["cutoff"])
        ideal = IdealPipeline(settings, tree, model, state=state, cutoff=cfg["cutoff"])
        noise = NoiseModel(noise.waveplate_angle_jitter_rad, 1.0, False)
    else:
        ideal = IdealPipeline(
            settings, tree, model, source_transmissivity(cfg), squeeze_from(cfg), pairs, cutoff=cfg["cutoff"]
        )
    return apply_noise_model(ideal, noise, rng)


def fringe_probabilities(cfg: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Scan phases and the per-pulse probability of the monitored pattern,
    before count sampling (jitter drawn from ``seed``)."""
    _, pattern = FRINGE_SETUPS[cfg["kind"]]
    pattern.check(tree_from(cfg))
    phis = scan_grid(cfg)
    noise = NoiseModel.from_config(cfg["noise"])
    streams = _streams(seed, ["jitter", "counts"])
    pipe = _fringe_pipeline(cfg, phis, noise, np.random.default_rng(streams["jitter"]))
    return phis, np.array([pipe.probability(i, pattern) for i in range(len(phis))])


def run_fringe(cfg, out, files, seed):
    kind = cfg["kind"]
    phis, probs = fringe_probabilities(cfg, seed)
    streams = _streams(seed, ["jitter", "counts"])
    counts = sample_counts(probs, cfg["pump"]["rep_rate"], cfg["integration_s"], streams["counts"])
    curve = Curve.from_counts(phis, counts)
    # unweighted: sqrt(n) weights bias V upward at a few counts per point
    fit = fit_fringe(curve.x, curve.counts)
    _write(out, f"{kind}_scan.csv", curve.to_csv(), files)
    _write(out, f"{kind}_fit.json", fit.to_json() + "\n", files)
    return {
        "visibility": fit.visibility,
        "visibility_err": fit.visibility_err,
        "frequency": fit.frequency,
        "period_rad": 2 * math.pi / fit.frequency,
        "mean_rate_hz": float(np.mean(probs) * cfg["pump"]["rep_rate"]),
    }


# ---------------------------------------------------------------- tomography


def _target_for(cfg) -> tuple[int, FockVector]:
    if cfg["kind"] == "tomo_fock":
        nh, nv = cfg["tomography"]["fock_state"]
        return nh + nv, number_state(nh, nv, nh + nv)
    n = 2 if cfg["kind"] == "tomo2" else 4
    return n, post_select_2n(SqueezeParams(0.1), n // 2, cutoff=n)


def simulate_tomography(cfg: dict, seed: int) -> tuple[list[CountRecord], FockVector, TomoDetection]:
    n, target = _target_for(cfg)
    noise = NoiseModel.from_config(cfg["noise"])
    streams = _streams(seed, ["jitter", "counts", "bootstrap"])
    noms = default_settings(n)
    tree = tree_from(cfg)
    model = detector_from(cfg)
    settings = tuple(s.setting for s in noms)
    if cfg["kind"] == "tomo_fock":
        state = number_state(*cfg["tomography"]["fock_state"], cfg["cutoff"])
        # emitted as often as a squeezed source at this pump yields n photons
        weight = squeezed_two_mode_state(squeeze_from(cfg), cfg["cutoff"], warn=False).sector(n).norm() ** 2
        ideal = IdealPipeline(
            settings, tree, model, source_transmissivity(cfg), state=state, cutoff=cfg["cutoff"], state_weight=weight
        )
        noise = NoiseModel(noise.waveplate_angle_jitter_rad, noise.distinguishability, False)
    else:
        ideal = IdealPipeline(
            settings, tree, model, source_transmissivity(cfg), squeeze_from(cfg), n // 2, cutoff=cfg["cutoff"]
        )
    pipe = apply_noise_model(ideal, noise, np.random.default_rng(streams["jitter"]))
    probs = np.array([[pipe.probability(i, ClickPattern(k, n - k)) for k in range(n + 1)] for i in range(len(settings))])
    mean = probs * cfg["pump"]["rep_rate"] * cfg["integration_s"]
    per_setting = cfg.get("tomography", {}).get("counts_per_setting")
    if per_setting:
        mean = mean * per_setting / mean.sum(axis=1).mean()
    rng = np.random.default_rng(streams["counts"])
    counts = rng.poisson(mean)
    records = [CountRecord(s, c, cfg["integration_s"]) for s, c in zip(noms, counts)]
    return records, target, TomoDetection(tree, model)


def run_tomography(cfg, out, files, seed):
    records, target, detection = simulate_tomography(cfg, seed)
    res = mle_reconstruct(records, MLEOptions(), detection, target)
    if not res.converged:
        raise ConvergenceError(f"MLE did not converge in {res.iterations} iterations")
    results = {
        "fidelity": res.fidelity,
        "log_likelihood": res.log_likelihood,
        "iterations": res.iterations,
        "min_eigenvalue": float(res.rho.eigenvalues().min()),
        "total_counts": int(sum(int(r.counts.sum()) for r in records)),
        "settings": len(records),
    }
    resamples = cfg.get("tomography", {}).get("resamples", 0)
    if resamples >= 2:
        seq = _streams(seed, ["jitter", "counts", "bootstrap"])["bootstrap"]
        est = fidelity_with_errorbars(records, target, resamples, int(seq.generate_state(1)[0]), detection=detection)
        results.update(
            fidelity_mc_mean=est.fidelity, fidelity_std=est.std, mc_resamples=est.resamples, mc_failures=est.failures
        )
        res.fidelity_std = est.std
    _write(out, "counts.csv", records_to_csv(records), files)
    _write(out, "reconstruction.json", res.to_json() + "\n", files)
    return results


RUNNERS: dict[str, Callable] = {
    "delay_scan": run_delay_scan,
    "power_scan": run_power_scan,
    "hom": run_hom,
    "tomo2": run_tomography,
    "tomo4": run_tomography,
    "tomo_fock": run_tomography,
    "fringe1": run_fringe,
    "fringe2": run_fringe,
    "fringe4": run_fringe,
    "brightness": run_brightness,
    "budget": run_budget,
}


def run_experiment(cfg: dict, out_dir: str | Path | None = None) -> RunReport:
    """Run a validated config; data files land in ``out_dir`` (or the
    config's ``output``)."""
    kind = cfg["kind"]
    out = Path(out_dir if out_dir is not None else cfg.get("output", f"out/{kind}"))
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    seed = int(cfg["seed"])
    try:
        results = RUNNERS[kind](cfg, out, files, seed)
    except ConvergenceError:
        raise
    except Exception as exc:
        raise ExperimentError(kind, exc) from exc
    echo = {k: v for k, v in cfg.items() if k != "output"}
    return RunReport(
        kind,
        seed,
        echo,
        results,
        dict(sorted(files.items())),
        {"fockforge": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    )
