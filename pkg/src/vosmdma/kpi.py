"""Achieved-KPI models for the three service classes.

Communication: decode-ordered SINR under power-domain sharing with successive
interference cancellation, then Shannon rate. Positioning: round-trip echo
Fisher information aggregated over antennas/subcarriers/symbols, inverted into
angle/distance/velocity error bounds scaled by an effective SNR. Sensing:
square-law detection probability of an energy detector at fixed false-alarm
rate, driven by the post-matched-filter SNR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularFimError, UnassignedQueryError
from .types import ServiceType

_FIM_COND_LIMIT = 1e12
_BLOCK_PARAM_NAMES = ("angle", "distance", "velocity", "phase")


def chi2_cdf(x):
    """CDF of a chi-square variable with 2 degrees of freedom: 1 - exp(-x/2)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi-square CDF argument must be nonnegative")
    return -np.expm1(-x / 2.0)


def chi2_inv(p):
    """Inverse CDF of the 2-dof chi-square: -2*log(1-p) for p in [0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p >= 1):
        raise ValueError("chi-square inverse CDF argument must lie in [0, 1)")
    return -2.0 * np.log1p(-p)


def comm_rate(z):
    """Spectral efficiency in bits/s/Hz from SINR z."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("SINR must be nonnegative")
    return np.log2(1.0 + z)


def latency(n, grid):
    """Completion latency of a service assigned to sub-frame n (1-based): n*L*T."""
    if not 1 <= n <= grid.n_subframes:
        raise ValueError(f"sub-frame index {n} outside 1..{grid.n_subframes}")
    return n * grid.l_symbols * grid.symbol_duration_s


def detect_prob(z, false_alarm):
    """Detection probability of the energy detector at SNR z and fixed FA rate.

    Equals the false-alarm probability at z = 0 and increases to 1 with z.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("sensing SNR must be nonnegative")
    if not 0 < false_alarm < 1:
        raise ValueError(f"false-alarm probability must lie in (0,1), got {false_alarm}")
    return 1.0 - chi2_cdf(chi2_inv(1.0 - false_alarm) / (z + 1.0))


def d_detect_prob_dz(z, false_alarm):
    """Derivative of detect_prob w.r.t. z (positive for all z >= 0)."""
    w = float(chi2_inv(1.0 - false_alarm))
    z = np.asarray(z, dtype=float)
    return w / (2.0 * (z + 1.0) ** 2) * np.exp(-w / (2.0 * (z + 1.0)))


def _sum_i(n):
    return n * (n - 1) / 2.0


def _sum_i2(n):
    return (n - 1) * n * (2 * n - 1) / 6.0


def fim_from_parts(rho, angle_rad, grid, n_tx):
    """5x5 Fisher information template from raw parts (see fim)."""
    ltx = n_tx
    b_cnt, l_cnt = grid.b_subcarriers, grid.l_symbols
    rho2 = float(rho) ** 2
    c = np.cos(angle_rad)
    s_l, s_l2 = _sum_i(ltx), _sum_i2(ltx)
    s_b, s_b2 = _sum_i(b_cnt), _sum_i2(b_cnt)
    s_t, s_t2 = _sum_i(l_cnt), _sum_i2(l_cnt)
    total = b_cnt * l_cnt * ltx

    j = np.zeros((5, 5))
    j[0, 0] = c * c * s_l2 * b_cnt * l_cnt
    j[0, 1] = j[1, 0] = c * s_l * s_b * l_cnt
    j[0, 2] = j[2, 0] = c * s_l * s_t * b_cnt
    j[0, 4] = j[4, 0] = c * s_l * b_cnt * l_cnt
    j[1, 1] = s_b2 * l_cnt * ltx
    j[1, 2] = j[2, 1] = s_b * s_t * ltx
    j[1, 4] = j[4, 1] = s_b * l_cnt * ltx
    j[2, 2] = s_t2 * b_cnt * ltx
    j[2, 4] = j[4, 2] = s_t * b_cnt * ltx
    j[4, 4] = total
    j *= rho2
    j[3, 3] = total  # amplitude row: rho^2 * (1/rho^2) per term
    return j


def fim(scenario, k, m, n):
    """5x5 Fisher information template for positioning user k on RB (m, n).

    Parameter order: scaled angle, scaled delay, scaled Doppler, round-trip
    amplitude, phase offset. Accumulated in closed form over antennas,
    subcarriers and symbols; equals the brute-force triple sum exactly.
    """
    user = scenario.users[k]
    if user.service is not ServiceType.POS:
        raise UnassignedQueryError(f"user {k} is not a positioning user")
    return fim_from_parts(scenario.coeffs.rho[k, m - 1, n - 1], user.angle_rad,
                          scenario.grid, scenario.params.n_tx_antennas)


@dataclass(frozen=True)
class CrbConstants:
    """SNR-independent numerators of the positioning error bounds (rad^2, m^2, (m/s)^2)."""

    theta: float
    dist: float
    vel: float

    def as_tuple(self):
        return (self.theta, self.dist, self.vel)


def crb_constants_from_parts(rho, angle_rad, grid, n_tx, c_o, m) -> CrbConstants:
    """Invert the positioning Fisher information and apply unit prefactors.

    The amplitude parameter is exactly decoupled from the rest, so the
    (angle, delay, Doppler, phase) block is inverted on its own after symmetric
    equilibration; the conditioning test runs on the equilibrated block, which
    keeps the pass/fail decision independent of the physical unit scales.
    """
    j = fim_from_parts(rho, angle_rad, grid, n_tx)
    block = j[np.ix_((0, 1, 2, 4), (0, 1, 2, 4))]
    diag = np.diag(block)
    if np.any(diag <= 0):
        bad = int(np.argmin(diag))
        raise SingularFimError(
            f"Fisher information singular: {_BLOCK_PARAM_NAMES[bad]} unobservable",
            parameter=_BLOCK_PARAM_NAMES[bad],
        )
    # the block is unit-homogeneous (the amplitude row was split off), so its
    # raw condition number is scale-free and meaningful
    cond = np.linalg.cond(block)
    if not np.isfinite(cond) or cond > _FIM_COND_LIMIT:
        _, eigvecs = np.linalg.eigh(block / np.abs(block).max())
        bad = int(np.argmax(np.abs(eigvecs[:, 0])))
        raise SingularFimError(
            f"Fisher information singular (condition {cond:.3g}): "
            f"{_BLOCK_PARAM_NAMES[bad]} unobservable",
            parameter=_BLOCK_PARAM_NAMES[bad],
        )
    d = np.sqrt(diag)
    inv = np.linalg.inv(block / np.outer(d, d)) / np.outer(d, d)
    f_m = grid.band_freq_hz(m)
    return CrbConstants(
        theta=0.5 * inv[0, 0],
        dist=c_o**2 / (32.0 * (np.pi * grid.subcarrier_spacing_hz) ** 2) * inv[1, 1],
        vel=c_o**2 / (32.0 * (np.pi * grid.symbol_duration_s * f_m) ** 2) * inv[2, 2],
    )


def crb_constants(scenario, k, m, n) -> CrbConstants:
    """SNR-independent error-bound numerators for positioning user k on sub-band m.

    Constant across sub-frames; cached per (user, sub-band) on the scenario.
    """
    cache = scenario._crb_cache
    key = (k, m)
    if key in cache:
        return cache[key]
    user = scenario.users[k]
    if user.service is not ServiceType.POS:
        raise UnassignedQueryError(f"user {k} is not a positioning user")
    consts = crb_constants_from_parts(
        rho=scenario.coeffs.rho[k, m - 1, n - 1], angle_rad=user.angle_rad,
        grid=scenario.grid, n_tx=scenario.params.n_tx_antennas,
        c_o=scenario.params.speed_of_light, m=m)
    cache[key] = consts
    return consts


def pos_crb(z, consts: CrbConstants):
    """Angle/distance/velocity error bounds at effective SNR z: numerator / z."""
    if z < 0:
        raise ValueError("positioning SNR must be nonnegative")
    if z == 0:
        return (np.inf, np.inf, np.inf)
    return (consts.theta / z, consts.dist / z, consts.vel / z)


def _assignment_array(a):
    return np.asarray(getattr(a, "a", a))


def _power_array(p):
    return np.asarray(getattr(p, "p", p), dtype=float)


def comm_sinr(scenario, a, p, k, m, n):
    """Decode-limited SINR of communication user k on RB (m, n).

    Minimum over all co-assigned communication users with smaller-or-equal
    index of the SINR they see when decoding k's signal; residual interference
    comes only from lower-indexed (stronger-channel) co-assigned signals.
    """
    arr, pw = _assignment_array(a), _power_array(p)
    mi, ni = m - 1, n - 1
    user = scenario.users[k]
    if user.service is not ServiceType.COMM or not arr[k, mi, ni]:
        raise UnassignedQueryError(f"comm SINR queried for unassigned/non-comm user {k} on ({m},{n})")
    chic = scenario.coeffs.chi_comm
    comm = [q for q in scenario.comm_indices if arr[q, mi, ni]]
    best = np.inf
    for q in comm:
        if q > k:
            continue
        interf = sum(pw[j, mi, ni] * chic[q, j, mi, ni] for j in comm if j < k)
        gamma = pw[k, mi, ni] * chic[q, k, mi, ni] / (interf + scenario.users[q].noise_w)
        best = min(best, gamma)
    return float(best)


def pos_snr(scenario, a, p, k, m, n):
    """Effective positioning SNR: total illuminating BS power through the echo path."""
    arr, pw = _assignment_array(a), _power_array(p)
    mi, ni = m - 1, n - 1
    if scenario.users[k].service is not ServiceType.POS or not arr[k, mi, ni]:
        raise UnassignedQueryError(f"positioning SNR queried for unassigned/non-pos user {k} on ({m},{n})")
    chip = scenario.coeffs.chi_pos
    total = 0.0
    for kp in scenario.bs_powered_indices:
        if arr[kp, mi, ni]:
            total += pw[kp, mi, ni] * chip[k, kp, mi, ni]
    return float(total / scenario.params.pos_noise_w)


def sense_snr(scenario, a, p, k, m, n):
    """Post-matched-filter SNR of sensing user k on RB (m, n).

    The user transmits at its own fixed power; co-channel BS transmissions
    enter as interference, other sensing users are removed by the filter.
    """
    arr, pw = _assignment_array(a), _power_array(p)
    mi, ni = m - 1, n - 1
    user = scenario.users[k]
    if user.service is not ServiceType.SENSE or not arr[k, mi, ni]:
        raise UnassignedQueryError(f"sensing SNR queried for unassigned/non-sensing user {k} on ({m},{n})")
    chis = scenario.coeffs.chi_sense
    interf = 0.0
    for kp in scenario.bs_powered_indices:
        if arr[kp, mi, ni]:
            interf += pw[kp, mi, ni] * chis[k, kp, mi, ni]
    grid = scenario.grid
    num = grid.b_subcarriers * grid.l_symbols * user.sense_power_w
    num *= scenario.coeffs.lam[k, mi, ni]
    return float(num / (interf + user.noise_w))


def sinr_from_powers(scenario, a, p) -> np.ndarray:
    """Full auxiliary SNR tensor induced by (assignment, powers); zero when unassigned."""
    arr = _assignment_array(a)
    out = np.zeros(arr.shape, dtype=float)
    for k, mi, ni in zip(*np.nonzero(arr)):
        service = scenario.users[k].service
        if service is ServiceType.COMM:
            out[k, mi, ni] = comm_sinr(scenario, a, p, int(k), int(mi) + 1, int(ni) + 1)
        elif service is ServiceType.POS:
            out[k, mi, ni] = pos_snr(scenario, a, p, int(k), int(mi) + 1, int(ni) + 1)
        else:
            out[k, mi, ni] = sense_snr(scenario, a, p, int(k), int(mi) + 1, int(ni) + 1)
    return out


def achieved_kpis(scenario, k, m, n, z):
    """Achieved KPI values for user k on RB (m, n) at auxiliary SNR z.

    Ordered to match the user's KPI spec list (the z-driven KPIs first, the
    sub-frame latency last).
    """
    user = scenario.users[k]
    lat = latency(n, scenario.grid)
    if user.service is ServiceType.COMM:
        return (float(comm_rate(z)), lat)
    if user.service is ServiceType.POS:
        return (*pos_crb(z, crb_constants(scenario, k, m, n)), lat)
    return (float(detect_prob(z, user.false_alarm)), lat)
