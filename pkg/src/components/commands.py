"""
Command implementations behind the command-line front end.

Every command builds the link through the library and writes what the
library returns; nothing is recomputed here.
"""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from src.models.chainrule import cascade_tz
from src.models.kernels import (
    abcd_kernels,
    advance_samples,
    alt_kernels,
    channel_kernel,
    echo_spacing,
    energy_within,
    rms_delay_spread,
)
from src.models.lifting import lift_lti, tz_blocks
from src.models.link import build_link
from src.models.lptv import (
    default_harmonic_order,
    doppler_profile,
    estimate_harmonics,
    feasible_order,
)
from src.models.simulate import (
    impulse_response,
    make_noise,
    simulate_ibi,
    simulate_tz,
    snr_noise_spec,
)
from src.models.twoport import backward, chain_fd
from src.utils.cables import load_cables
from src.utils.export import (
    read_blocks_csv,
    write_blocks_csv,
    write_kernel_csv,
    write_matrix_csv,
    write_report_json,
    write_table_csv,
    write_transfer_csv,
)
from src.utils.helpers import check_status, final_decision, load_config
from src.utils.topology import load_topology
from src.utils.validation import ComputationError, ValidationError, validate_positive

logger = logging.getLogger(__name__)

COMMANDS = ("tf", "kernels", "lift", "simulate", "estimate", "validate")

# Checks whose error follows the kernels' discarded energy
TRUNCATION_LIMITED = ("fd_vs_lifted", "chain_rule_vs_fd", "tz_vs_ibi")


@dataclass
class RunConfig:
    """
    One command invocation.

    Attributes:
        command: One of COMMANDS
        topology: Topology file path
        out: Output directory
        seed: Seed of every random stream
        threshold: Energy-threshold override
        blocks: Number of blocks to simulate
        p: Block-size override
        m: Harmonic-order override
        noise_snr_db: Output SNR of the added white noise
        cables: Cable file (the shipped table when None)
        inputs: Payload and output capture files for estimate
        taps: Taps per harmonic for estimate (L + 1 of the captures when None)
        mode: tz (trailing zeros) or ibi (full blocks) for simulate
        corrupt: Validation test hook, perturbs the lifted cascade
    """

    command: str
    topology: str
    out: str = "out"
    seed: int = 0
    threshold: Optional[float] = None
    blocks: Optional[int] = None
    p: Optional[int] = None
    m: Optional[int] = None
    noise_snr_db: Optional[float] = None
    cables: Optional[str] = None
    inputs: Tuple[str, ...] = field(default_factory=tuple)
    taps: Optional[int] = None
    mode: str = "tz"
    corrupt: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"Unknown command '{self.command}'")
        if self.threshold is not None and not 0 < self.threshold <= 1:
            raise ValidationError("Threshold must be in (0, 1]")
        for name in ("blocks", "p", "taps"):
            value = getattr(self, name)
            if value is not None:
                validate_positive(value, name)
        if self.m is not None and self.m < 0:
            raise ValidationError("Harmonic order must not be negative")
        if self.mode not in ("tz", "ibi"):
            raise ValidationError(f"Unknown simulation mode '{self.mode}'")
        if self.inputs and len(self.inputs) != 2:
            raise ValidationError("estimate needs a payload file and an output file")


def _link(config):
    cables = load_cables(config.cables)
    doc = load_topology(config.topology, cables)
    return build_link(doc, cables, config.threshold, config.p, config.m)


def _path(config, name):
    os.makedirs(config.out, exist_ok=True)
    return os.path.join(config.out, name)


def _blocks(config):
    return config.blocks or load_config()["blocks"]


def cmd_tf(config, link=None):
    """Transfer function CSV: freq_hz, h_re, h_im, h_mag_db."""
    link = link or _link(config)
    path = write_transfer_csv(link.grid, link.spectrum, _path(config, "transfer_function.csv"))
    logger.info(f"Transfer function written to {path}")
    return {"files": [path]}


def _link_kernels(link):
    """ABCD, alternative and channel kernels of the whole cascade."""
    tp = chain_fd([e.two_port for e in link.elements])
    if link.carrier_hz == 0:
        abcd = abcd_kernels(tp, link.filters, link.threshold)
        alt = alt_kernels(tp, link.filters, link.threshold)
        channel = channel_kernel(tp, link.term, link.filters, link.threshold)
    else:
        # lowpass-equivalent kernels through the link's carrier shift
        shaped = [tp.spectrum(n) for n in "abcd"]
        delay = link.spectra.delay(shaped, link.filters, advance_samples(tp.advance_s, link.ts))
        abcd = [link.kernel(s, delay_samples=delay) for s in shaped]
        alt = [link.kernel(s) for s in (1.0 / tp.a, -tp.b / tp.a, 1.0 / tp.d, -tp.c / tp.d)]
        channel = link.kernel(link.fd_reference().spectrum)
    names = ("a", "b", "c", "d", "alpha", "beta", "gamma", "zeta", "h")
    return dict(zip(names, list(abcd) + list(alt) + [channel]))


def cmd_kernels(config, link=None):
    """
    Kernel CSVs for a, b, c, d, alpha, beta, gamma, zeta and h, plus a summary
    of memory, captured energy, delay spread and echo spacing.
    """
    link = link or _link(config)
    defaults = load_config()
    kernels = _link_kernels(link)
    files, rows = [], []
    for name, kernel in kernels.items():
        files.append(write_kernel_csv(kernel, _path(config, f"kernel_{name}.csv"), name))
        row = {
            "kernel": name,
            "memory": kernel.memory,
            "energy_captured": kernel.energy_captured,
            "precursor_energy": kernel.precursor_energy,
            "delay_samples": kernel.delay_samples,
            "rms_delay_spread_s": rms_delay_spread(kernel),
            "energy_within_window": energy_within(kernel, defaults["reporting_window_s"]),
            "echo_spacing_s": np.nan,
        }
        if name in ("alpha", "beta", "gamma", "zeta"):
            spacing = echo_spacing(kernel, defaults["echo_min_spacing_s"])
            row["echo_spacing_s"] = np.nan if spacing is None else spacing
        rows.append(row)
    files.append(write_table_csv(rows, _path(config, "kernels_summary.csv")))
    logger.info(f"Wrote {len(kernels)} kernels to {config.out}")
    return {"files": files, "summary": rows}


def cmd_lift(config, link=None):
    """
    Lifted matrices of the cascade (intra- and inter-block) at the first
    block indices, and the lifted channel matrices of an LTI link. A
    time-varying link also gets the Doppler profile of every switching
    element over one block period.
    """
    link = link or _link(config)
    model = link.model
    indices = [1]
    if model.time_varying:
        indices = list(range(1, min(_blocks(config), model.period_blocks) + 1))
    files = []
    for i in indices:
        cascade = model.ibi_at(i)
        for name in "abcd":
            for level in "01":
                files.append(write_matrix_csv(
                    getattr(cascade, name + level),
                    _path(config, f"lifted_{name}{level}_block{i}.csv"),
                    model.p, cascade.memory, i, name=f"{name.upper()}{level}",
                ))
    if not model.time_varying:
        pair = lift_lti(link.channel, model.p)
        for level, matrix in (("0", pair.h0), ("1", pair.h1)):
            files.append(write_matrix_csv(
                matrix, _path(config, f"channel_h{level}.csv"), model.p, pair.memory, 0,
                name=f"H{level}",
            ))
    if model.time_varying:
        rows = []
        for index, kernel in link.harmonic_kernels().items():
            freqs, power = doppler_profile(kernel, model.p, model.period_blocks)
            rows.extend({"element": index, "doppler_hz": f, "power": w}
                        for f, w in zip(freqs, power))
        files.append(write_table_csv(rows, _path(config, "doppler_profile.csv")))
    logger.info(f"Wrote {len(files)} lifted matrices (P={model.p}, L={model.memory})")
    return {"files": files}


def _payloads(rng, n_blocks, width, complex_values=False):
    values = rng.standard_normal((n_blocks, width))
    if complex_values:
        values = values + 1j * rng.standard_normal((n_blocks, width))
    return values


def cmd_simulate(config, link=None):
    """Random payloads through the lifted link; payload, output and report files."""
    link = link or _link(config)
    model = link.model
    rng = np.random.default_rng(config.seed)
    n_blocks = _blocks(config)
    complex_values = link.carrier_hz > 0

    if config.mode == "tz":
        payloads = _payloads(rng, n_blocks, model.p - model.memory, complex_values)
        result = simulate_tz(model, payloads)
    else:
        payloads = _payloads(rng, n_blocks, model.p, complex_values)
        result = simulate_ibi(model, payloads)
    outputs = result.outputs
    noise = None
    if config.noise_snr_db is not None:
        noise = snr_noise_spec(outputs, config.noise_snr_db, config.seed + 1)
        outputs = outputs + make_noise(noise, model.p, n_blocks)

    files = [
        write_blocks_csv(payloads, _path(config, "payloads.csv"), model.p, model.memory, model.ts),
        write_blocks_csv(outputs, _path(config, "outputs.csv"), model.p, model.memory, model.ts),
    ]
    report = {
        "mode": config.mode,
        "P": model.p,
        "L": model.memory,
        "ts_s": model.ts,
        "blocks": n_blocks,
        "seed": config.seed,
        "delay_samples": model.delay_samples,
        "condition": result.condition,
        "noise_variance": None if noise is None else noise.variance,
        "time_varying": model.time_varying,
    }
    files.append(write_report_json(report, _path(config, "simulation_report.json")))
    return {"files": files, "report": report, "payloads": payloads, "outputs": outputs}


def cmd_estimate(config, link=None):
    """
    Harmonic-response estimate from captured (or freshly simulated) blocks;
    writes one kernel CSV per harmonic and a JSON report.
    """
    link = link or _link(config)
    if config.inputs:
        payloads, meta = read_blocks_csv(config.inputs[0])
        outputs, _ = read_blocks_csv(config.inputs[1])
        p, memory, ts = meta["P"], meta["L"], meta["ts_s"]
    else:
        simulated = cmd_simulate(replace(config, command="simulate", mode="tz"), link)
        payloads, outputs = simulated["payloads"], simulated["outputs"]
        p, memory, ts = link.model.p, link.model.memory, link.model.ts

    if config.m is not None:
        order = config.m
    elif link.time_varying:
        cap = feasible_order(p, memory)
        order = max(default_harmonic_order(k, cap=cap) for k in link.harmonic_kernels().values())
    else:
        order = 0
    if order > 0 and link.f0 is None:
        raise ValidationError("Estimating harmonics m != 0 needs a time-varying topology")
    f0 = link.f0 or 1.0
    taps = config.taps or memory + 1
    estimate = estimate_harmonics(payloads, outputs, f0, order, taps, ts, first_block=1)

    files = []
    kernel = estimate.to_kernel(f0, ts)
    for m, harmonic in kernel.harmonics.items():
        files.append(write_kernel_csv(harmonic, _path(config, f"estimate_h{m:+d}.csv"),
                                      f"h{m:+d}"))
    report = {
        "M": order,
        "L": taps,
        "P": p,
        "blocks": estimate.n_blocks,
        "seed": config.seed,
        "residual_mse": estimate.residual_mse,
        "noise_floor_mse": estimate.noise_floor_mse,
        "condition": estimate.condition,
    }
    files.append(write_report_json(report, _path(config, "estimate_report.json")))
    logger.info(f"Estimate: residual MSE {estimate.residual_mse:.3e}")
    return {"files": files, "report": report, "estimate": estimate}


def _relative(error, reference):
    scale = float(np.linalg.norm(reference))
    return float(np.linalg.norm(error)) / scale if scale > 0 else float(np.linalg.norm(error))


def _check_reciprocity(link):
    """Backward matrix of each element against (D, -B, -C, A), which holds when AD - BC = 1."""
    worst = 0.0
    for element in link.elements:
        tp = element.two_port
        back = backward(tp)
        entries = np.abs(tp.matrices()).reshape(-1, 4)
        scale = np.max(entries, axis=1) * (1.0 + np.abs(tp.a * tp.d))
        for got, want in zip((back.a, back.b, back.c, back.d), (tp.d, -tp.b, -tp.c, tp.a)):
            worst = max(worst, float(np.max(np.abs(got - want) / scale)))
    return worst


def _check_fd_vs_lifted(link):
    """Spectrum of the simulated impulse response against H over the flat passband."""
    model = link.model
    h_sim = impulse_response(model)
    freqs = link.grid.frequencies
    response = link.reference_filters.response(freqs)
    band = response >= 1.0 - 1e-12
    k = np.arange(h_sim.size)
    phase = np.exp(-2j * np.pi * np.outer(freqs[band], k) * model.ts)
    simulated = phase @ h_sim * np.exp(2j * np.pi * freqs[band] * model.delay_samples * model.ts)
    return _relative(simulated - link.spectrum[band], link.spectrum[band])


def _check_chain_rule_vs_fd(link, cascade):
    tp = chain_fd([e.two_port for e in link.elements])
    model = link.model
    width = model.p - model.memory
    worst = 0.0
    for name in "abcd":
        kernel = link.spectra.window(tp.spectrum(name), link.reference_filters,
                                     model.delay_samples, model.memory + 1)
        expected = lift_lti(kernel, model.p).h0[:, :width]
        got = getattr(cascade, name + "0")[:, :width]
        worst = max(worst, _relative(got - expected, expected))
    return worst


def _check_tz_vs_ibi(link, rng):
    model = link.model
    payloads = rng.standard_normal((4, model.p - model.memory))
    tz = simulate_tz(model, payloads).outputs
    ibi = simulate_ibi(model, tz_blocks(payloads, model.memory)).outputs
    return _relative(tz - ibi, tz)


def _tolerances(link):
    """Configured tolerances, widened to the truncation bound for the cross-model checks."""
    tolerances = dict(load_config()["tolerances"])
    for name in TRUNCATION_LIMITED:
        tolerances[name] = max(tolerances[name], link.truncation_bound)
    return tolerances


def cmd_validate(config, link=None):
    """
    Cross-model consistency checks with a PASS/MARGINAL/FAIL status each.

    Returns:
        dict with the report rows and the overall verdict
    """
    link = link or _link(config)
    tolerances = _tolerances(link)
    rng = np.random.default_rng(config.seed)
    model = link.model

    cascade = model.tz_at(1)
    recursive = cascade_tz([_at(e, 1) for e in model.elements], recursive=True)
    if config.corrupt:
        a0 = np.array(cascade.a0)
        a0[0, -1] += 1.0
        cascade = replace(cascade, a0=a0)

    measured = {
        "reciprocity": _check_reciprocity(link),
        "structure": 0.0 if cascade.has_structure() else 1.0,
        "chain_rule_paths": max(
            _relative(getattr(cascade, n + "0") - getattr(recursive, n + "0"),
                      getattr(recursive, n + "0"))
            for n in "abcd"
        ),
    }
    notes = {}
    if link.time_varying:
        notes["fd_vs_lifted"] = "time-varying link: the frequency-domain reference is approximate"
        notes["chain_rule_vs_fd"] = notes["fd_vs_lifted"]
    else:
        measured["fd_vs_lifted"] = _check_fd_vs_lifted(link)
        measured["chain_rule_vs_fd"] = _check_chain_rule_vs_fd(link, cascade)
    try:
        measured["tz_vs_ibi"] = _check_tz_vs_ibi(link, rng)
    except ComputationError as e:
        logger.error(f"tz_vs_ibi: {e}")
        measured["tz_vs_ibi"] = np.nan

    statuses, rows = {}, []
    for name, error in measured.items():
        statuses[name] = check_status(error, tolerances[name])
        rows.append({"check": name, "error": error, "tolerance": tolerances[name],
                     "status": statuses[name], "note": ""})
    for name, note in notes.items():
        rows.append({"check": name, "error": np.nan, "tolerance": tolerances[name],
                     "status": "SKIPPED", "note": note})
    verdict = final_decision(statuses)
    for row in rows:
        level = logging.INFO if row["status"] != "FAIL" else logging.ERROR
        logger.log(level, f"{row['check']}: {row['status']} (error {row['error']:.3e})")
    path = write_table_csv(rows, _path(config, "validation_report.csv"))
    return {"files": [path], "rows": rows, "verdict": verdict,
            "passed": not verdict.startswith("FAIL")}


def _at(element, i):
    return element(i) if callable(element) else element


HANDLERS = {
    "tf": cmd_tf,
    "kernels": cmd_kernels,
    "lift": cmd_lift,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "validate": cmd_validate,
}


def run(config):
    """Dispatch a RunConfig to its command."""
    return HANDLERS[config.command](config)
