"""
Experiment orchestration: configuration parsing and validation, seed splitting and the
five experiment families (waveform dump, PSD, ambiguity, Gram/Lambda and BER).
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from pydantic import ValidationError

from src import __version__
from src.conf.config import settings
from src.repository.results import ResultSet
from src.schemas import ExperimentConfig, ManifestModel, OddmParams
from src.services.analog_modem import analog_demodulate, analog_modulate
from src.services.channel import (
    CONVENTIONS,
    DdChannel,
    add_awgn,
    apply_channel,
    check_cp,
    eva_cp_warning,
    eva_profile,
    fixed_channel,
    noise_psd,
)
from src.services.detection import (
    EffectiveChannel,
    ber_from_counts,
    effective_channel,
    lmmse_detect,
    mp_detect,
    otfs_dd_link,
)
from src.services.digital_modem import digital_demodulate, digital_modulate
from src.services.errors import ConfigError, DomainError
from src.services.orthogonality import auto_ambiguity, cross_ambiguity_ce, lambda_metric, off_center_max, to_db
from src.services.otfs_baseline import otfs_demodulate, otfs_modulate
from src.services.params_grid import BITS_PER_SYMBOL, DdGrid, SampledWaveform, qam_demap, qam_map, random_bits
from src.services.pulse import ProtoPulse, srrc_pulse
from src.services.spectrum import (
    PsdCurve,
    oobe_metrics,
    psd_analytic_analog,
    psd_analytic_digital,
    psd_analytic_otfs,
    psd_empirical,
    waveform_difference,
)

logger = logging.getLogger(__name__)

EXPERIMENT_CODES = {"waveform": 0, "psd": 1, "ambiguity": 2, "gram": 3, "ber": 4}
# seed components
BITS, CHANNEL, NOISE = 0, 1, 2

DESCRIPTIONS = {
    "waveform": "Transmit waveforms, pulse taps and the analog/digital waveform difference",
    "psd": "Empirical and closed-form power spectral densities with OOBE metrics",
    "ambiguity": "Auto-ambiguity of the DDOP and cross-ambiguity with the generalized DDOP",
    "gram": "Offset-averaged orthogonality surfaces of the analog and digital bases",
    "ber": "Bit error rate versus Eb/N0 over an on-grid doubly-selective channel",
}

BITS_PER_QAM = BITS_PER_SYMBOL[4]


def rng_for(root: int, experiment: str, trial: int, component: int, *sub: int) -> np.random.Generator:
    """
    Independent generator for one (experiment, trial, component) cell of the seed tree.

    :param root: Root seed of the run.
    :type root: int
    :param experiment: Experiment name.
    :type experiment: str
    :param trial: Trial index.
    :type trial: int
    :param component: Component code (bits, channel, noise).
    :type component: int
    :param sub: Further indices below the component, e.g. the Eb/N0 point.
    :type sub: int
    :return: A fresh generator.
    :rtype: np.random.Generator
    """
    key = (EXPERIMENT_CODES[experiment], trial, component, *sub)
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=key))


def _parallel_map(fn: Callable, items: Iterable) -> Iterator:
    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            yield from pool.map(fn, items)
    else:
        yield from map(fn, items)


def parse_config_text(text: str) -> tuple[dict, list[str]]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment.

    :param text: File contents.
    :type text: str
    :return: Raw values and one issue per malformed line.
    :rtype: tuple[dict, list[str]]
    """
    raw, issues = {}, []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            issues.append(f"line {number}: expected 'key = value', got '{line}'")
            continue
        raw[key] = value.strip()
    return raw, issues


def config_warnings(cfg: ExperimentConfig) -> list[str]:
    """Cross-field warnings that do not invalidate the configuration."""
    warnings = []
    if cfg.experiment == "ber":
        for params in cfg.params_sweep():
            if cfg.channel == "eva":
                warning = eva_cp_warning(params)
            else:
                warning = check_cp(fixed_channel(params), params)
            if warning:
                warnings.append(warning)
                break
    if cfg.experiment == "gram" and "otfs" in cfg.systems:
        warnings.append("gram experiment has no time-domain basis for otfs; the system is skipped")
    return warnings


def validate_config(
    text: str = "",
    overrides: Sequence[str] = (),
    experiment: str | None = None,
    output_dir: str | None = None,
) -> ExperimentConfig:
    """
    Build an experiment configuration from file text and ``key=value`` overrides.

    Every problem is collected before raising, so a single ``ConfigError`` names all
    offending fields.

    :param text: Contents of the configuration file, may be empty.
    :type text: str
    :param overrides: ``key=value`` strings applied after the file.
    :type overrides: Sequence[str]
    :param experiment: Experiment name, overrides the file.
    :type experiment: str | None
    :param output_dir: Output directory, overrides the file.
    :type output_dir: str | None
    :return: The validated configuration.
    :rtype: ExperimentConfig
    """
    raw, issues = parse_config_text(text)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            issues.append(f"override '{item}': expected key=value")
            continue
        raw[key.strip()] = value.strip()
    if experiment is not None:
        raw["experiment"] = experiment
    if output_dir is not None:
        raw["output_dir"] = output_dir

    cfg = None
    try:
        cfg = ExperimentConfig(**raw)
    except ValidationError as exc:
        for error in exc.errors():
            field = ".".join(str(part) for part in error["loc"]) or "config"
            issues.append(f"{field}: {error['msg']}")
    if issues:
        raise ConfigError(issues)
    for warning in config_warnings(cfg):
        logger.warning(warning)
    return cfg


def _label(params: OddmParams) -> str:
    return f"ta{params.ta / params.T:.4g}"


def _modulate(system: str, grid: DdGrid, params: OddmParams, pulse: ProtoPulse) -> SampledWaveform:
    if system == "analog":
        return analog_modulate(grid, params, pulse).wf
    if system == "digital":
        return digital_modulate(grid, params, pulse)
    return otfs_modulate(grid, params)


def _demodulate(system: str, rx: SampledWaveform, params: OddmParams, pulse: ProtoPulse) -> DdGrid:
    if system == "analog":
        return analog_demodulate(rx, params, pulse)
    if system == "digital":
        return digital_demodulate(rx, params, pulse)
    return otfs_demodulate(rx, params)


def _random_grid(cfg: ExperimentConfig, params: OddmParams, trial: int) -> tuple[np.ndarray, DdGrid]:
    rng = rng_for(cfg.seed, cfg.experiment, trial, BITS)
    bits = random_bits(rng, BITS_PER_QAM * params.M * params.N)
    return bits, qam_map(bits, params)


def run_waveform(cfg: ExperimentConfig, results: ResultSet) -> dict:
    rows = []
    for index, params in enumerate(cfg.params_sweep()):
        pulse = srrc_pulse(params)
        _, grid = _random_grid(cfg, params, index)
        label = _label(params)
        results.write_grid(f"grid_{label}.csv", grid)
        results.write_pulse(f"pulse_{label}.csv", pulse)
        for system in cfg.systems:
            results.write_waveform(f"waveform_{system}_{label}.csv", _modulate(system, grid, params, pulse))
        difference = waveform_difference(params, pulse, cfg.trials, cfg.seed)
        rows.append((params.ta / params.T, difference, 10 * np.log10(difference)))
        logger.info("waveform dump for Ta = %.4g T done", params.ta / params.T)
    results.write_csv("waveform_difference.csv", ("ta_over_t", "ratio", "ratio_db"), rows)
    return {}


def run_psd(cfg: ExperimentConfig, results: ResultSet) -> dict:
    points_per_bin = cfg.points_per_bin or settings.points_per_bin
    oobe_rows = []
    fft_len = None
    for params in cfg.params_sweep():
        pulse = srrc_pulse(params)
        label = _label(params)
        fft_len = cfg.fft_len or points_per_bin * params.N * params.samples_per_symbol
        band_edge = (1 + params.beta) * params.M / params.T
        for system in cfg.systems:

            def frame(trial: int, system=system, params=params, pulse=pulse) -> SampledWaveform:
                _, grid = _random_grid(cfg, params, trial)
                return _modulate(system, grid, params, pulse)

            curves: list[PsdCurve] = [psd_empirical(_parallel_map(frame, range(cfg.trials)), cfg.trials, fft_len)]
            freqs = curves[0].freqs
            if system == "analog":
                curves.append(psd_analytic_analog(params, pulse, freqs, kmax=settings.kmax))
            elif system == "digital":
                curves.append(psd_analytic_digital(params, pulse, freqs, kmax=settings.kmax))
            else:
                curves.append(psd_analytic_otfs(params, freqs))

            context = {"params": params.model_dump(), "ta_over_t": params.ta / params.T, "system": system}
            for curve in curves:
                kind = "empirical" if curve.kind == "empirical" else "analytic"
                results.write_psd(f"psd_{system}_{kind}_{label}.csv", curve, context)
                metrics = oobe_metrics(curve, cfg.thresholds_db, band_edge)
                for threshold, width, upper, _ in metrics.rows():
                    oobe_rows.append(
                        (params.ta / params.T, system, kind, threshold, width, upper, metrics.peak_sidelobe_db)
                    )
            logger.info("PSD of %s ODDM frames for Ta = %.4g T done", system, params.ta / params.T)
    header = ("ta_over_t", "system", "kind", "threshold_db", "bandwidth_hz", "upper_edge_hz", "peak_sidelobe_db")
    results.write_csv("oobe.csv", header, oobe_rows)
    return {"fft_len": fft_len, "points_per_bin": points_per_bin, "kmax": settings.kmax}


def run_ambiguity(cfg: ExperimentConfig, results: ResultSet) -> dict:
    rows = []
    for params in cfg.params_sweep():
        pulse = srrc_pulse(params)
        label = _label(params)
        for surface in (auto_ambiguity(params, pulse), cross_ambiguity_ce(params, pulse)):
            results.write_surface(f"ambiguity_{surface.kind}_{label}.csv", surface)
            rows.append(
                (
                    params.ta / params.T,
                    surface.kind,
                    abs(surface.center),
                    float(to_db(off_center_max(surface))),
                    float(to_db(off_center_max(surface, doppler_only=True))),
                )
            )
        logger.info("ambiguity surfaces for Ta = %.4g T done", params.ta / params.T)
    header = ("ta_over_t", "kind", "center_mag", "off_center_max_db", "doppler_off_center_max_db")
    results.write_csv("ambiguity_summary.csv", header, rows)
    return {}


def run_gram(cfg: ExperimentConfig, results: ResultSet) -> dict:
    rows = []
    systems = [system for system in cfg.systems if system != "otfs"]
    if not systems:
        raise DomainError("gram experiment needs the analog or digital system")
    for index, params in enumerate(cfg.params_sweep()):
        pulse = srrc_pulse(params)
        label = _label(params)
        for system in systems:
            surface = lambda_metric(params, pulse, system, cfg.anchors, seed=cfg.seed + index)
            results.write_surface(f"lambda_{system}_{label}.csv", surface)
            rows.append((params.ta / params.T, system, abs(surface.center), float(to_db(off_center_max(surface)))))
            logger.info("Lambda surface of %s basis for Ta = %.4g T done", system, params.ta / params.T)
    results.write_csv("lambda_summary.csv", ("ta_over_t", "system", "center", "off_center_max_db"), rows)
    return {"anchors": cfg.anchors}


def _channel(cfg: ExperimentConfig, params: OddmParams, trial: int) -> DdChannel:
    if cfg.channel == "fixed":
        return fixed_channel(params)
    return eva_profile(cfg.fc_hz, cfg.speed_kmh, params, rng_for(cfg.seed, "ber", trial, CHANNEL))


def _detect(detector: str, Y: DdGrid, H: EffectiveChannel, noise_var: float) -> DdGrid:
    if detector == "lmmse":
        return lmmse_detect(Y, H, noise_var).hard
    return mp_detect(Y, H, noise_var).hard


def _ber_trial(cfg: ExperimentConfig, params: OddmParams, pulse: ProtoPulse, trial: int) -> np.ndarray:
    """Bit errors of one frame, indexed ``[system, detector, ebn0]``."""
    bits, grid = _random_grid(cfg, params, trial)
    ch = _channel(cfg, params, trial)
    errors = np.zeros((len(cfg.systems), len(cfg.detectors), len(cfg.ebn0_db)), dtype=np.int64)
    for s, system in enumerate(cfg.systems):
        H = effective_channel(ch, params, require_cp=system != "otfs", system=system, pulse=pulse)
        rx = None if system == "otfs" else apply_channel(_modulate(system, grid, params, pulse), ch)
        for e, ebn0 in enumerate(cfg.ebn0_db):
            noise_rng = rng_for(cfg.seed, "ber", trial, NOISE, e)
            noise_var = noise_psd(ebn0, BITS_PER_QAM)
            if rx is None:
                Y = otfs_dd_link(grid, H, noise_var, noise_rng)
            else:
                Y = _demodulate(system, add_awgn(rx, ebn0, BITS_PER_QAM, noise_rng), params, pulse)
            for d, detector in enumerate(cfg.detectors):
                detected = qam_demap(_detect(detector, Y, H, noise_var))
                errors[s, d, e] = np.count_nonzero(detected != bits)
    return errors


def run_ber(cfg: ExperimentConfig, results: ResultSet) -> dict:
    bits_per_frame = None
    frames = None
    rows = []
    for params in cfg.params_sweep():
        pulse = srrc_pulse(params)
        bits_per_frame = BITS_PER_QAM * params.M * params.N
        frames = math.ceil(cfg.bits_per_point / bits_per_frame)
        results.write_channel(f"channel_{_label(params)}.csv", _channel(cfg, params, 0))

        total = np.zeros((len(cfg.systems), len(cfg.detectors), len(cfg.ebn0_db)), dtype=np.int64)
        for errors in _parallel_map(lambda trial: _ber_trial(cfg, params, pulse, trial), range(frames)):
            total += errors
        for s, system in enumerate(cfg.systems):
            for d, detector in enumerate(cfg.detectors):
                for e, ebn0 in enumerate(cfg.ebn0_db):
                    result = ber_from_counts(int(total[s, d, e]), frames * bits_per_frame)
                    rows.append(
                        (
                            params.ta / params.T,
                            ebn0,
                            system,
                            detector,
                            result.errors,
                            result.total,
                            result.rate,
                            result.ci_low,
                            result.ci_high,
                            frames,
                        )
                    )
                    logger.info(
                        "BER %s/%s Ta = %.4g T, Eb/N0 = %g dB: %.3e",
                        system,
                        detector,
                        params.ta / params.T,
                        ebn0,
                        result.rate,
                    )
    header = ("ta_over_t", "ebn0_db", "system", "detector", "errors", "bits", "ber", "ci_lo", "ci_hi", "trials")
    results.write_csv("ber.csv", header, rows)
    return {"frames_per_point": frames, "bits_per_frame": bits_per_frame}


RUNNERS: dict[str, Callable[[ExperimentConfig, ResultSet], dict]] = {
    "waveform": run_waveform,
    "psd": run_psd,
    "ambiguity": run_ambiguity,
    "gram": run_gram,
    "ber": run_ber,
}


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> ManifestModel:
    """
    Run one experiment and write its data files plus ``manifest.json``.

    Output is deterministic for a fixed configuration; only ``wall_time_s`` in the
    manifest varies between runs. On failure every file written so far is removed.

    :param cfg: Validated configuration.
    :type cfg: ExperimentConfig
    :param output_dir: Overrides ``cfg.output_dir``.
    :type output_dir: str | Path | None
    :return: The manifest.
    :rtype: ManifestModel
    """
    results = ResultSet(output_dir or cfg.output_dir)
    started = time.perf_counter()
    logger.info("running %s experiment (seed %d) into %s", cfg.experiment, cfg.seed, results.root)
    try:
        extra = RUNNERS[cfg.experiment](cfg, results)
        derived = {"sweep": [params.derived() for params in cfg.params_sweep()], **extra}
        manifest = ManifestModel(
            experiment=cfg.experiment,
            version=__version__,
            seed=cfg.seed,
            config=cfg.model_dump(mode="json"),
            derived=derived,
            warnings=config_warnings(cfg),
            conventions=CONVENTIONS,
            wall_time_s=round(time.perf_counter() - started, 3),
            files=results.entries(),
        )
        results.write_manifest(manifest)
    except Exception:
        logger.error("%s experiment failed, removing partial outputs", cfg.experiment)
        results.cleanup()
        raise
    logger.info("%s experiment finished in %.1f s", cfg.experiment, manifest.wall_time_s)
    return manifest
