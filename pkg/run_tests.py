#!/usr/bin/env python
"""
Test runner for the transmission-line channel toolkit.

Runs the test suites under coverage (settings from setup.cfg) and prints a
summary with missing lines. Name suites to run a subset:

    python run_tests.py                 # everything
    python run_tests.py lifting lptv    # tests/test_lifting.py, tests/test_lptv.py
    python run_tests.py --no-html
"""

import argparse
import os
import sys
import unittest

import coverage

ROOT = os.path.dirname(os.path.abspath(__file__))
TESTS_DIR = os.path.join(ROOT, "tests")


def build_suite(names):
    """All suites under tests/, or only test_<name>.py for each name given."""
    loader = unittest.TestLoader()
    if not names:
        return loader.discover(TESTS_DIR, top_level_dir=ROOT)
    suite = unittest.TestSuite()
    for name in names:
        pattern = name if name.startswith("test_") else f"test_{name}"
        suite.addTests(loader.discover(TESTS_DIR, pattern=f"{pattern}.py", top_level_dir=ROOT))
    return suite


def run_tests_with_coverage(names=(), html=True):
    """Run the selected suites and report coverage of src/."""
    cov = coverage.Coverage(config_file=os.path.join(ROOT, "setup.cfg"))
    cov.start()
    suite = build_suite(names)
    if suite.countTestCases() == 0:
        cov.stop()
        print(f"No tests matched {', '.join(names)}")
        return None
    result = unittest.TextTestRunner(verbosity=2).run(suite)
    cov.stop()

    print("\nCoverage Summary:")
    cov.report(show_missing=True, skip_covered=True)
    if html:
        print("\nWriting HTML coverage report to 'htmlcov'...")
        cov.html_report(directory=os.path.join(ROOT, "htmlcov"))
    return result


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the test suites under coverage")
    parser.add_argument("suites", nargs="*", help="suite names, e.g. lifting or test_lptv")
    parser.add_argument("--no-html", action="store_true", help="skip the HTML report")
    args = parser.parse_args()

    sys.path.insert(0, ROOT)
    result = run_tests_with_coverage(args.suites, html=not args.no_html)
    sys.exit(1 if result is None or not result.wasSuccessful() else 0)
