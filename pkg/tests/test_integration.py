"""
Integration testing for the channel toolkit.

This module verifies the flow from topology files through link assembly
to the command implementations and the files they write.
"""

import unittest
import sys
import os
import json
import tempfile
from dataclasses import replace

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pandas as pd

# Import application modules
from src.components.commands import (
    RunConfig,
    _link,
    _link_kernels,
    cmd_estimate,
    cmd_kernels,
    cmd_lift,
    cmd_simulate,
    cmd_tf,
    cmd_validate,
    run,
)
from src.models.kernels import channel_kernel
from src.models.lifting import tz_blocks
from src.models.lptv import LpTvKernel, zadeh_apply
from src.models.twoport import chain_fd
from src.utils.export import (
    read_blocks_csv,
    read_kernel_csv,
    read_matrix_csv,
    write_blocks_csv,
)
from src.utils.validation import ValidationError

TOPOLOGIES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          "topologies")


def _topology(name):
    return os.path.join(TOPOLOGIES, name)


class IntegrationTests(unittest.TestCase):
    """Test integration between topology parsing, models and commands."""

    def setUp(self):
        """Set up a temporary output directory and a divider run configuration."""
        self.tmp = tempfile.TemporaryDirectory()
        self.config = RunConfig("tf", _topology("resistive_divider.topo"), out=self.tmp.name,
                                blocks=8)
        self.link = _link(self.config)

    def tearDown(self):
        """Remove the temporary directory."""
        self.tmp.cleanup()

    def test_run_config_validation(self):
        """Invalid invocations are rejected before any work is done."""
        with self.assertRaises(ValidationError):
            RunConfig("plot", self.config.topology)
        with self.assertRaises(ValidationError):
            replace(self.config, threshold=0.0)
        with self.assertRaises(ValidationError):
            replace(self.config, mode="overlap")
        with self.assertRaises(ValidationError):
            replace(self.config, inputs=("only_one.csv",))
        with self.assertRaises(ValidationError):
            replace(self.config, blocks=0)

    def test_transfer_function_file(self):
        """The divider is -6.02 dB at DC; one row per grid bin."""
        result = cmd_tf(self.config, self.link)
        frame = pd.read_csv(result["files"][0])
        self.assertEqual(len(frame), self.link.grid.n_points)
        self.assertTrue(frame["freq_hz"].is_monotonic_increasing)
        self.assertAlmostEqual(frame["h_mag_db"].iloc[0], 20 * np.log10(0.5), places=9)

    def test_kernel_files_match_library(self):
        """Written kernels equal what the library computes."""
        config = replace(self.config, command="kernels")
        result = cmd_kernels(config, self.link)
        self.assertEqual(len(result["summary"]), 9)
        written = read_kernel_csv(os.path.join(config.out, "kernel_h.csv"))
        tp = chain_fd([e.two_port for e in self.link.elements])
        expected = channel_kernel(tp, self.link.term, self.link.filters, self.link.threshold)
        np.testing.assert_allclose(written.taps, expected.taps, atol=1e-15)
        self.assertEqual(written.delay_samples, expected.delay_samples)
        summary = pd.read_csv(os.path.join(config.out, "kernels_summary.csv"))
        self.assertEqual(list(summary["kernel"]),
                         ["a", "b", "c", "d", "alpha", "beta", "gamma", "zeta", "h"])
        self.assertEqual(set(_link_kernels(self.link)), set(summary["kernel"]))

    def test_lift_files(self):
        """Lifted cascade matrices are written per entry and level."""
        config = replace(self.config, command="lift")
        result = cmd_lift(config, self.link)
        self.assertEqual(len(result["files"]), 10)
        a0, meta = read_matrix_csv(os.path.join(config.out, "lifted_a0_block1.csv"))
        np.testing.assert_allclose(a0, np.eye(16))
        self.assertEqual(meta["P"], "16")
        h0, _ = read_matrix_csv(os.path.join(config.out, "channel_h0.csv"))
        np.testing.assert_allclose(h0, 0.5 * np.eye(16), atol=1e-12)

    def test_simulation_files(self):
        """Payload and output files hold the simulated blocks."""
        config = replace(self.config, command="simulate")
        result = cmd_simulate(config, self.link)
        payloads, meta = read_blocks_csv(os.path.join(config.out, "payloads.csv"))
        outputs, _ = read_blocks_csv(os.path.join(config.out, "outputs.csv"))
        self.assertEqual(meta["blocks"], 8)
        np.testing.assert_allclose(outputs, 0.5 * payloads, atol=1e-12)
        with open(os.path.join(config.out, "simulation_report.json"), encoding="utf-8") as f:
            report = json.load(f)
        self.assertEqual(report["P"], 16)
        self.assertEqual(report["L"], 0)
        self.assertIsNone(report["noise_variance"])
        self.assertEqual(result["report"]["mode"], "tz")

    def test_simulation_is_seeded(self):
        """The same seed reproduces the same payloads and noise."""
        config = replace(self.config, command="simulate", noise_snr_db=20.0, seed=4)
        first = cmd_simulate(config, self.link)
        second = cmd_simulate(config, self.link)
        np.testing.assert_array_equal(first["outputs"], second["outputs"])
        self.assertAlmostEqual(first["report"]["noise_variance"],
                               np.mean(np.abs(0.5 * first["payloads"]) ** 2) / 100.0)

    def test_full_block_simulation(self):
        """Full blocks of a memoryless link are halved too."""
        config = replace(self.config, command="simulate", mode="ibi")
        result = cmd_simulate(config, self.link)
        np.testing.assert_allclose(result["outputs"], 0.5 * result["payloads"], atol=1e-12)

    def test_estimate_from_simulation(self):
        """The zeroth harmonic of the divider is 0.5."""
        config = replace(self.config, command="estimate", blocks=4)
        result = cmd_estimate(config, self.link)
        kernel = read_kernel_csv(os.path.join(config.out, "estimate_h+0.csv"))
        np.testing.assert_allclose(kernel.taps, [0.5], atol=1e-10)
        self.assertLess(result["report"]["residual_mse"], 1e-20)
        self.assertEqual(result["report"]["M"], 0)

    def test_estimate_from_files(self):
        """Captured payload and output files feed the estimator."""
        simulate = replace(self.config, command="simulate")
        cmd_simulate(simulate, self.link)
        files = (os.path.join(self.tmp.name, "payloads.csv"),
                 os.path.join(self.tmp.name, "outputs.csv"))
        result = cmd_estimate(replace(self.config, command="estimate", inputs=files), self.link)
        np.testing.assert_allclose(result["estimate"].harmonics[0], [0.5], atol=1e-10)
        self.assertEqual(result["report"]["blocks"], 8)

    def test_estimate_needs_time_varying_link(self):
        """Harmonics m != 0 need a switching load."""
        with self.assertRaises(ValidationError):
            cmd_estimate(replace(self.config, command="estimate", m=1), self.link)

    def test_validation_passes_on_divider(self):
        """Every check passes on the resistive divider."""
        result = cmd_validate(replace(self.config, command="validate"), self.link)
        self.assertTrue(result["passed"])
        self.assertEqual(result["verdict"], "PASS")
        checks = {row["check"] for row in result["rows"]}
        self.assertEqual(checks, {"reciprocity", "structure", "chain_rule_paths", "fd_vs_lifted",
                                  "chain_rule_vs_fd", "tz_vs_ibi"})
        report = pd.read_csv(result["files"][0])
        self.assertEqual(set(report["status"]), {"PASS"})

    def test_validation_on_cable_topologies(self):
        """Filtered cable links pass every check, with no check skipped."""
        for name in ("minimal.topo", "bridged_tap.topo"):
            with self.subTest(topology=name):
                config = RunConfig("validate", _topology(name), out=self.tmp.name)
                link = _link(config)
                result = cmd_validate(config, link)
                self.assertTrue(result["passed"])
                rows = {row["check"]: row for row in result["rows"]}
                self.assertNotIn("SKIPPED", {row["status"] for row in rows.values()})
                self.assertIn(rows["tz_vs_ibi"]["status"], ("PASS", "MARGINAL"))
                self.assertTrue(np.isfinite(rows["tz_vs_ibi"]["error"]))
                for check in ("fd_vs_lifted", "chain_rule_vs_fd", "tz_vs_ibi"):
                    self.assertEqual(rows[check]["tolerance"], link.truncation_bound)
                self.assertEqual(rows["structure"]["status"], "PASS")

    def test_corrupted_cascade_fails(self):
        """A perturbed lifted matrix fails the structure check."""
        result = cmd_validate(replace(self.config, command="validate", corrupt=True), self.link)
        self.assertFalse(result["passed"])
        statuses = {row["check"]: row["status"] for row in result["rows"]}
        self.assertEqual(statuses["structure"], "FAIL")

    def test_time_varying_validation_skips_fd_checks(self):
        """Frequency-domain checks are skipped, not failed, on switching links."""
        config = RunConfig("validate", _topology("lptv_load.topo"), out=self.tmp.name)
        result = run(config)
        statuses = {row["check"]: row["status"] for row in result["rows"]}
        self.assertEqual(statuses["fd_vs_lifted"], "SKIPPED")
        self.assertEqual(statuses["chain_rule_vs_fd"], "SKIPPED")
        self.assertEqual(statuses["structure"], "PASS")

    def test_time_varying_estimate(self):
        """Harmonic estimation runs end to end on a switching link."""
        config = RunConfig("estimate", _topology("lptv_load.topo"), out=self.tmp.name, m=1,
                           blocks=16)
        result = run(config)
        for m in (-1, 0, 1):
            self.assertTrue(os.path.exists(os.path.join(self.tmp.name, f"estimate_h{m:+d}.csv")))
        self.assertEqual(result["report"]["M"], 1)

    def test_estimate_recovers_captured_harmonics(self):
        """Captures of a known first-order kernel are estimated back to 1e-6."""
        config = RunConfig("estimate", _topology("lptv_load.topo"), out=self.tmp.name, m=1,
                           taps=3)
        link = _link(config)
        p, memory, ts = 16, 2, 1e-6
        h1 = np.array([0.2 + 0.1j, -0.05j, 0.02])
        truth = LpTvKernel.from_taps(
            {-1: np.conj(h1), 0: np.array([1.0, 0.5, -0.25]), 1: h1}, link.f0, ts
        )
        payloads = np.random.default_rng(8).standard_normal((12, p - memory))
        stream = tz_blocks(payloads, memory).reshape(-1)
        outputs = zadeh_apply(truth, stream, p, start_sample=p).reshape(-1, p)
        inputs = (
            write_blocks_csv(payloads, os.path.join(self.tmp.name, "x.csv"), p, memory, ts),
            write_blocks_csv(outputs, os.path.join(self.tmp.name, "y.csv"), p, memory, ts),
        )
        result = cmd_estimate(replace(config, inputs=inputs), link)
        self.assertEqual(result["report"]["M"], 1)
        for m in (-1, 0, 1):
            expected = truth.taps(m)
            error = np.linalg.norm(result["estimate"].harmonics[m] - expected)
            self.assertLessEqual(error / np.linalg.norm(expected), 1e-6)

    def test_time_varying_lift(self):
        """Lifted matrices are written for every block of one period."""
        config = RunConfig("lift", _topology("lptv_load.topo"), out=self.tmp.name, blocks=3)
        result = run(config)
        self.assertEqual(len(result["files"]), 3 * 8 + 1)
        profile = pd.read_csv(os.path.join(self.tmp.name, "doppler_profile.csv"))
        self.assertEqual(set(profile.columns), {"element", "doppler_hz", "power"})
        self.assertEqual(profile["power"].idxmax(), profile["doppler_hz"].abs().idxmin())


if __name__ == '__main__':
    unittest.main()
