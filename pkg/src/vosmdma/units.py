"""dB/dBm unit conversions, done once at construction time everywhere else."""

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s


def dbm_to_watts(dbm):
    """Convert a power level in dBm to Watts."""
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    """Convert a power level in Watts to dBm."""
    w = np.asarray(watts, dtype=float)
    return 10.0 * np.log10(w) + 30.0


def db_to_linear(db):
    """Convert a gain in dB to a linear ratio."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)
