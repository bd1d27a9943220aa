"""
Helper functions for the channel toolkit: default configuration and
check-status bookkeeping for the cross-model validation report.
"""


def traffic(value, pass_fn, marginal_fn):
    """
    Classify a measured value.

    Args:
        value: The value to evaluate
        pass_fn: Returns True if value comfortably meets the criterion
        marginal_fn: Returns True if value meets the criterion with little margin

    Returns:
        str: PASS, MARGINAL or FAIL
    """
    if pass_fn(value):
        return "PASS"
    elif marginal_fn(value):
        return "MARGINAL"
    else:
        return "FAIL"


def check_status(error, tolerance):
    """PASS within a tenth of the tolerance, MARGINAL up to it, FAIL beyond or on NaN."""
    return traffic(
        error,
        lambda v: v == v and v <= 0.1 * tolerance,
        lambda v: v == v and v <= tolerance,
    )


def final_decision(statuses):
    """
    Overall verdict of a validation run.

    Args:
        statuses (dict): Check name -> PASS/MARGINAL/FAIL

    Returns:
        str: PASS when no check failed, else FAIL
    """
    score_map = {"PASS": 2, "MARGINAL": 1, "FAIL": 0}
    score = sum(score_map[s] for s in statuses.values())
    fails = sum(1 for s in statuses.values() if s == "FAIL")
    n = len(statuses)

    if fails == 0 and score == 2 * n:
        return "PASS"
    elif fails == 0:
        return "PASS (marginal)"
    else:
        return "FAIL"


def load_config():
    """
    Default settings for models and commands.

    Returns:
        dict: Configuration settings
    """
    return {
        "energy_threshold": 0.9999,
        "filter_kind": "raised_cosine",
        "rolloff": 0.5,
        "seed": 0,
        "blocks": 16,
        "noise_snr_db": None,
        "echo_min_spacing_s": 1e-6,
        "reporting_window_s": 0.75e-6,
        "tolerances": {
            "fd_vs_lifted": 1e-3,
            "chain_rule_paths": 1e-12,
            "chain_rule_vs_fd": 1e-6,
            "tz_vs_ibi": 1e-9,
            "reciprocity": 1e-9,
            "structure": 0.0,
        },
    }
