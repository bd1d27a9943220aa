"""
Cable-parameter library: one section per cable label with its primary
line parameters per foot.
"""
import configparser
import logging
import os

from src.models.twoport import CableParams
from src.utils.validation import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_CABLES = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "cables.cfg")

FIELDS = {
    "r0": "r0_ohm_per_ft",
    "l0": "l0_h_per_ft",
    "c0": "c0_f_per_ft",
    "g0": "g0_s_per_ft",
    "skin_freq": "skin_freq_hz",
}


def parse_cables(text, source="<string>"):
    """
    Parse cable sections from text.

    Returns:
        dict: label -> CableParams

    Raises:
        ValidationError: On a malformed file, a missing field or a bad value
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ValidationError(f"Malformed cable file {source}: {e}") from e

    cables = {}
    for label in parser.sections():
        section = parser[label]
        values = {}
        for attr, key in FIELDS.items():
            if key not in section:
                raise ValidationError(f"Cable '{label}' in {source} lacks {key}")
            try:
                values[attr] = float(section[key])
            except ValueError as e:
                raise ValidationError(f"Cable '{label}': {key} is not a number") from e
        unknown = set(section) - set(FIELDS.values())
        if unknown:
            raise ValidationError(f"Cable '{label}' has unknown fields {sorted(unknown)}")
        cables[label] = CableParams(label=label, **values)
    if not cables:
        raise ValidationError(f"No cable sections in {source}")
    return cables


def load_cables(path=None):
    """Load the shipped cable table, or a user file."""
    path = path or DEFAULT_CABLES
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ValidationError(f"Cannot read cable file {path}: {e}") from e
    cables = parse_cables(text, source=path)
    logger.debug(f"Loaded {len(cables)} cable types from {path}")
    return cables
