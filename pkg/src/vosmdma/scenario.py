"""Frozen problem instances: users, geometry, channels, beamformers and every
precomputed channel-gain coefficient the KPI formulas consume."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kpi
from .types import Direction, KpiSpec, RbGrid, ServiceType, SystemParams, UserService
from .units import SPEED_OF_LIGHT, dbm_to_watts


def steering_vector(theta, n_tx):
    """Half-wavelength ULA steering vector at angle theta (conjugate convention).

    Element l is exp(-1j*pi*l*sin(theta)); unit modulus per element.
    """
    if n_tx < 1:
        raise ValueError("antenna count must be at least 1")
    l_idx = np.arange(n_tx)
    return np.exp(-1j * np.pi * l_idx * np.sin(theta))


def path_loss_linear(d):
    """Linear power gain of the distance-d link: 10**(-(74.2 + 16.8*log10(d))/10)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return 10.0 ** (-(74.2 + 16.8 * np.log10(d)) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario template; defaults follow the simulation setup this models."""

    n_comm: int = 3
    n_pos: int = 2
    n_sense: int = 1
    m_subbands: int = 1
    n_subframes: int = 3
    b_subcarriers: int = 8
    l_symbols: int = 8
    subcarrier_spacing_hz: float = 156.25e3
    symbol_duration_s: float = 8e-6
    carrier_freq_hz: float = 5.9e9
    n_tx_antennas: int = 4
    p_max_dbm: float = 30.0
    a_max: int = 2
    bs_noise_dbm: float = -114.0
    rician_factor: float = 1.0
    pos_snr_halved: bool = False
    alpha_cap: float = 0.3
    beta_cap: float = 0.3
    comm_rate_target: float = 4.0
    pos_crb_divisor: float = 20.0
    sense_detect_target: float = 0.8
    sense_false_alarm: float = 0.3
    comm_distance_range: tuple[float, float] = (30.0, 1000.0)
    pos_distance_range: tuple[float, float] = (30.0, 200.0)
    sense_distance_range: tuple[float, float] = (30.0, 1000.0)
    velocity_range: tuple[float, float] = (-30.0, 30.0)
    angle_range: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    sense_range_m: float = 30.0
    rcs_m2: float = 1.0
    sense_power_dbm: float = -5.0
    user_noise_dbm: float = -114.0
    elasticity_floor: float = 1e-3

    def to_dict(self):
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        for key in ("comm_distance_range", "pos_distance_range", "sense_distance_range",
                    "velocity_range", "angle_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @property
    def n_users(self):
        return self.n_comm + self.n_pos + self.n_sense


@dataclass(frozen=True)
class CoefficientSet:
    """Precomputed channel-gain coefficients, indexed 0-based.

    h: downlink channel vectors (K, M, N, L_tx); w_tx: unit-norm transmit
    beamformers, zero rows for sensing users; chi_comm[q, k] = |h_q^H w_k|^2 on
    comm x comm; chi_pos[k, k'] = |v(theta_k)^H w_k'|^2 on pos x BS-powered;
    chi_sense[k, k'] = |h_k^H w_k'|^2 on sense x BS-powered; lam / rho are the
    sensing echo covariance and positioning round-trip amplitude.
    """

    h: np.ndarray
    w_tx: np.ndarray
    chi_comm: np.ndarray
    chi_pos: np.ndarray
    chi_sense: np.ndarray
    lam: np.ndarray
    rho: np.ndarray


@dataclass(frozen=True)
class Scenario:
    """Immutable, seeded problem instance; safe for shared concurrent reads."""

    users: tuple[UserService, ...]
    grid: RbGrid
    params: SystemParams
    coeffs: CoefficientSet
    seed: int
    config: ScenarioConfig
    _crb_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.coeffs.h, self.coeffs.w_tx, self.coeffs.chi_comm,
                    self.coeffs.chi_pos, self.coeffs.chi_sense, self.coeffs.lam,
                    self.coeffs.rho):
            arr.flags.writeable = False
        by_type = {ServiceType.COMM: [], ServiceType.POS: [], ServiceType.SENSE: []}
        for u in self.users:
            by_type[u.service].append(u.index)
        object.__setattr__(self, "_comm", tuple(by_type[ServiceType.COMM]))
        object.__setattr__(self, "_pos", tuple(by_type[ServiceType.POS]))
        object.__setattr__(self, "_sense", tuple(by_type[ServiceType.SENSE]))

    @property
    def n_users(self):
        return len(self.users)

    @property
    def comm_indices(self):
        return self._comm

    @property
    def pos_indices(self):
        return self._pos

    @property
    def sense_indices(self):
        return self._sense

    @property
    def bs_powered_indices(self):
        return self._comm + self._pos

    @property
    def rb_capacity(self):
        return self.grid.m_subbands * self.grid.n_subframes * self.params.a_max

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(scenario_to_dict(self), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return scenario_from_dict(json.load(fh))


def _clip_elastic(x, cap, floor):
    return float(np.clip(x, floor, cap))


def _attenuation_sq(c_o, rcs, f_m, r):
    """Two-way echo power gain c^2 * rcs / ((4 pi)^3 f^2 r^4)."""
    return c_o**2 * rcs / ((4.0 * np.pi) ** 3 * f_m**2 * r**4)


def generate(config: ScenarioConfig, seed: int) -> Scenario:
    """Draw a full scenario from the template; identical seeds give identical bits.

    Communication users are re-indexed by increasing distance so the path-loss
    component of their channel powers is nonincreasing in the index, matching
    the decode-order convention every SINR formula assumes. Per-realization
    small-scale fading can still invert adjacent norms; that is tolerated.
    """
    if config.n_users == 0:
        raise ValueError("scenario needs at least one user")
    rng = np.random.default_rng(seed)
    grid = RbGrid(config.m_subbands, config.n_subframes, config.b_subcarriers,
                  config.l_symbols, config.subcarrier_spacing_hz,
                  config.symbol_duration_s, config.carrier_freq_hz)
    params = SystemParams(
        n_tx_antennas=config.n_tx_antennas,
        p_max_w=float(dbm_to_watts(config.p_max_dbm)),
        a_max=config.a_max,
        bs_noise_w=float(dbm_to_watts(config.bs_noise_dbm)),
        rician_factor=config.rician_factor,
        pos_snr_halved=config.pos_snr_halved,
    )
    k_total = config.n_users
    if grid.m_subbands * grid.n_subframes * params.a_max < k_total:
        warnings.warn(
            f"RB capacity {grid.m_subbands * grid.n_subframes * params.a_max} below "
            f"user count {k_total}; assignments will be infeasible", stacklevel=2)

    lo_a, hi_a = config.angle_range
    angles_comm = rng.uniform(lo_a, hi_a, config.n_comm)
    dists_comm = np.sort(rng.uniform(*config.comm_distance_range, config.n_comm))
    angles_pos = rng.uniform(lo_a, hi_a, config.n_pos)
    dists_pos = rng.uniform(*config.pos_distance_range, config.n_pos)
    vels_pos = rng.uniform(*config.velocity_range, config.n_pos)
    angles_sense = rng.uniform(lo_a, hi_a, config.n_sense)
    dists_sense = rng.uniform(*config.sense_distance_range, config.n_sense)

    def draw_specs(count):
        alphas = [_clip_elastic(rng.uniform(0.0, config.alpha_cap), config.alpha_cap,
                                config.elasticity_floor) for _ in range(count)]
        betas = [_clip_elastic(rng.uniform(0.0, config.beta_cap), min(config.beta_cap, 1 - 1e-9),
                               config.elasticity_floor) for _ in range(count)]
        weights = [float(rng.uniform(0.0, 1.0)) for _ in range(count)]
        return alphas, betas, weights

    elastic = [draw_specs({ServiceType.COMM: 2, ServiceType.POS: 4, ServiceType.SENSE: 2}[svc])
               for svc in ([ServiceType.COMM] * config.n_comm
                           + [ServiceType.POS] * config.n_pos
                           + [ServiceType.SENSE] * config.n_sense)]

    m_cnt, n_cnt, ltx = grid.m_subbands, grid.n_subframes, params.n_tx_antennas
    small = (rng.standard_normal((k_total, m_cnt, n_cnt, ltx))
             + 1j * rng.standard_normal((k_total, m_cnt, n_cnt, ltx))) / np.sqrt(2.0)

    all_angles = np.concatenate([angles_comm, angles_pos, angles_sense])
    all_dists = np.concatenate([dists_comm, dists_pos, dists_sense])
    kappa = params.rician_factor
    los_w = 1.0 / np.sqrt(1.0 + 1.0 / kappa) if kappa > 0 else 0.0  # -> 1 as kappa -> inf
    nlos_w = 1.0 / np.sqrt(1.0 + kappa)

    h = np.zeros((k_total, m_cnt, n_cnt, ltx), dtype=complex)
    for k in range(k_total):
        los = steering_vector(all_angles[k], ltx)
        scale = np.sqrt(path_loss_linear(all_dists[k]))
        h[k] = scale * (los_w * los + nlos_w * small[k])

    w_tx = np.zeros_like(h)
    n_c, n_p = config.n_comm, config.n_pos
    for k in range(n_c):
        norms = np.linalg.norm(h[k], axis=-1, keepdims=True)
        w_tx[k] = h[k] / norms
    for k in range(n_c, n_c + n_p):
        w_tx[k] = steering_vector(all_angles[k], ltx) / np.sqrt(ltx)

    f_m = np.array([grid.band_freq_hz(m + 1) for m in range(m_cnt)])
    c_o = params.speed_of_light

    chi_comm = np.zeros((k_total, k_total, m_cnt, n_cnt))
    for q in range(n_c):
        for k in range(n_c):
            chi_comm[q, k] = np.abs(np.einsum("mnl,mnl->mn", h[q].conj(), w_tx[k])) ** 2
    chi_pos = np.zeros((k_total, k_total, m_cnt, n_cnt))
    for k in range(n_c, n_c + n_p):
        steer = steering_vector(all_angles[k], ltx)
        for kp in range(n_c + n_p):
            chi_pos[k, kp] = np.abs(np.einsum("l,mnl->mn", steer.conj(), w_tx[kp])) ** 2
    chi_sense = np.zeros((k_total, k_total, m_cnt, n_cnt))
    for k in range(n_c + n_p, k_total):
        for kp in range(n_c + n_p):
            chi_sense[k, kp] = np.abs(np.einsum("mnl,mnl->mn", h[k].conj(), w_tx[kp])) ** 2

    lam = np.zeros((k_total, m_cnt, n_cnt))
    rho = np.zeros((k_total, m_cnt, n_cnt))
    for k in range(n_c, n_c + n_p):
        for m in range(m_cnt):
            rho[k, m, :] = np.sqrt(_attenuation_sq(c_o, config.rcs_m2, f_m[m], all_dists[k]))
    for k in range(n_c + n_p, k_total):
        for m in range(m_cnt):
            lam[k, m, :] = _attenuation_sq(c_o, config.rcs_m2, f_m[m], config.sense_range_m)

    noise_w = float(dbm_to_watts(config.user_noise_dbm))
    sense_p_w = float(dbm_to_watts(config.sense_power_dbm))
    lat_target = grid.l_symbols * grid.symbol_duration_s

    users = []
    for k in range(k_total):
        alphas, betas, weights = elastic[k]
        if k < n_c:
            svc, vel, r_s, pfa, p_s = ServiceType.COMM, 0.0, 0.0, 0.0, 0.0
            targets = [config.comm_rate_target, lat_target]
            dirs = [Direction.HIGH, Direction.LOW]
        elif k < n_c + n_p:
            svc, vel, r_s, pfa, p_s = ServiceType.POS, float(vels_pos[k - n_c]), 0.0, 0.0, 0.0
            consts = kpi.crb_constants_from_parts(
                rho=float(rho[k, 0, 0]), angle_rad=float(all_angles[k]), grid=grid,
                n_tx=ltx, c_o=c_o, m=1)
            targets = [c / config.pos_crb_divisor for c in consts.as_tuple()] + [lat_target]
            dirs = [Direction.LOW, Direction.LOW, Direction.LOW, Direction.LOW]
        else:
            svc, vel = ServiceType.SENSE, 0.0
            r_s, pfa, p_s = config.sense_range_m, config.sense_false_alarm, sense_p_w
            targets = [config.sense_detect_target, lat_target]
            dirs = [Direction.HIGH, Direction.LOW]
        specs = tuple(
            KpiSpec(direction=d, target=t, alpha=a, beta=b, weight=w)
            for d, t, a, b, w in zip(dirs, targets, alphas, betas, weights))
        users.append(UserService(
            index=k, service=svc, angle_rad=float(all_angles[k]),
            distance_m=float(all_dists[k]), velocity_mps=vel, rcs_m2=config.rcs_m2,
            noise_w=noise_w, kpis=specs, sense_range_m=r_s, false_alarm=pfa,
            sense_power_w=p_s))

    coeffs = CoefficientSet(h=h, w_tx=w_tx, chi_comm=chi_comm, chi_pos=chi_pos,
                            chi_sense=chi_sense, lam=lam, rho=rho)
    return Scenario(users=tuple(users), grid=grid, params=params, coeffs=coeffs,
                    seed=seed, config=config)


# --- serialization -----------------------------------------------------------

def _enc(arr):
    if np.iscomplexobj(arr):
        return {"shape": list(arr.shape), "re": arr.real.ravel().tolist(),
                "im": arr.imag.ravel().tolist()}
    return {"shape": list(arr.shape), "re": arr.ravel().tolist()}


def _dec(d):
    re = np.array(d["re"], dtype=float).reshape(d["shape"])
    if "im" in d:
        return re + 1j * np.array(d["im"], dtype=float).reshape(d["shape"])
    return re


def scenario_to_dict(sc: Scenario) -> dict:
    users = []
    for u in sc.users:
        users.append({
            "index": u.index, "service": u.service.value, "angle_rad": u.angle_rad,
            "distance_m": u.distance_m, "velocity_mps": u.velocity_mps,
            "rcs_m2": u.rcs_m2, "noise_w": u.noise_w,
            "sense_range_m": u.sense_range_m, "false_alarm": u.false_alarm,
            "sense_power_w": u.sense_power_w,
            "kpis": [{"direction": s.direction.value, "target": s.target,
                      "alpha": s.alpha, "beta": s.beta, "weight": s.weight}
                     for s in u.kpis],
        })
    return {
        "format": "vosmdma-scenario-v1",
        "seed": sc.seed,
        "config": sc.config.to_dict(),
        "grid": asdict(sc.grid),
        "params": asdict(sc.params),
        "users": users,
        "coeffs": {name: _enc(getattr(sc.coeffs, name))
                   for name in ("h", "w_tx", "chi_comm", "chi_pos", "chi_sense",
                                "lam", "rho")},
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != "vosmdma-scenario-v1":
        raise ValueError(f"unrecognized scenario format {d.get('format')!r}")
    users = tuple(
        UserService(
            index=u["index"], service=ServiceType(u["service"]),
            angle_rad=u["angle_rad"], distance_m=u["distance_m"],
            velocity_mps=u["velocity_mps"], rcs_m2=u["rcs_m2"], noise_w=u["noise_w"],
            kpis=tuple(KpiSpec(direction=Direction(s["direction"]), target=s["target"],
                               alpha=s["alpha"], beta=s["beta"], weight=s["weight"])
                       for s in u["kpis"]),
            sense_range_m=u["sense_range_m"], false_alarm=u["false_alarm"],
            sense_power_w=u["sense_power_w"])
        for u in d["users"])
    coeffs = CoefficientSet(**{name: _dec(d["coeffs"][name])
                               for name in ("h", "w_tx", "chi_comm", "chi_pos",
                                            "chi_sense", "lam", "rho")})
    return Scenario(users=users, grid=RbGrid(**d["grid"]),
                    params=SystemParams(**d["params"]), coeffs=coeffs,
                    seed=d["seed"], config=ScenarioConfig.from_dict(d["config"]))
