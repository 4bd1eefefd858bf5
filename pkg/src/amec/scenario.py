"""Problem instances: physical model, deterministic generation, config I/O.

All quantities are SI base units throughout (bits, Hz, s, W, J, cycles);
nothing is rescaled at this layer.  Randomness comes exclusively from
numpy's PCG64 generator so that a (config, seed) pair reproduces the same
scenario bit-for-bit on any platform; per-instance streams for sweeps are
derived with :func:`substream_seed`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

LIGHT_SPEED = 3.0e8  # m/s


@dataclass(frozen=True)
class PhysicalParams:
    """Channel and energy constants shared by all devices."""

    antenna_gain: float = 3.0
    carrier_hz: float = 915e6
    path_loss_exp: float = 3.0
    light_speed: float = LIGHT_SPEED
    rician_gamma: float = 0.3       # LoS-to-scatter power ratio
    p0_w: float = 3.0               # server transmit power
    eta: float = 0.51               # harvest efficiency
    kappa: float = 1e-26            # server energy coefficient, E = kappa f^3 dt
    lam: float = 1e-25              # transmit energy coefficient, p = lam r^3 / h
    monomial_order: int = 3

    def __post_init__(self):
        for name in ("antenna_gain", "carrier_hz", "path_loss_exp", "light_speed",
                     "p0_w", "eta", "kappa", "lam"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"PhysicalParams.{name} must be > 0")
        if self.rician_gamma < 0:
            raise ConfigError("PhysicalParams.rician_gamma must be >= 0")
        if self.eta > 1.0:
            raise ConfigError("PhysicalParams.eta must be <= 1")
        if self.monomial_order != 3:
            raise ConfigError("monomial_order is fixed at 3")


@dataclass(frozen=True)
class DeviceTask:
    """One device's task and link state."""

    data_bits: float
    intensity: float      # cycles per bit
    distance_m: float
    gain: float           # sampled channel power gain h_k

    def __post_init__(self):
        if self.data_bits <= 0 or self.intensity <= 0:
            raise ConfigError("task size and intensity must be > 0")
        if self.distance_m <= 0 or self.gain <= 0:
            raise ConfigError("distance and channel gain must be > 0")

    @property
    def cycles(self) -> float:
        return self.data_bits * self.intensity


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance for K devices and horizon T."""

    k: int
    t_s: float
    f_max_hz: float
    params: PhysicalParams
    tasks: tuple[DeviceTask, ...]
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("K must be >= 1")
        if self.t_s <= 0 or self.f_max_hz <= 0:
            raise ConfigError("T and F_max must be > 0")
        if len(self.tasks) != self.k:
            raise ConfigError("need exactly K tasks")

    @property
    def data_bits(self) -> np.ndarray:
        return np.array([t.data_bits for t in self.tasks])

    @property
    def gains(self) -> np.ndarray:
        return np.array([t.gain for t in self.tasks])

    @property
    def cycles(self) -> np.ndarray:
        return np.array([t.cycles for t in self.tasks])


@dataclass(frozen=True)
class Schedule:
    """Offload order: ``order[n]`` is the device (0-based) using slot n+1."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ConfigError("schedule must be a permutation of 0..K-1")

    @classmethod
    def identity(cls, k: int) -> "Schedule":
        return cls(tuple(range(k)))

    def slot_of(self, device: int) -> int:
        """1-based offload slot used by `device`."""
        return self.order.index(device) + 1

    def __len__(self):
        return len(self.order)


@dataclass(frozen=True)
class TimeAllocation:
    """Slot durations dt[0..K+1]: harvest, K offload slots, final compute slot."""

    dt: tuple[float, ...]

    def __post_init__(self):
        if any(d < 0 for d in self.dt):
            raise ConfigError("slot durations must be >= 0")

    @classmethod
    def from_array(cls, arr) -> "TimeAllocation":
        return cls(tuple(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.array(self.dt)

    @property
    def total(self) -> float:
        return float(sum(self.dt))

    def __len__(self):
        return len(self.dt)


# ---------------------------------------------------------------------------
# physics

def path_loss(distance_m: float, params: PhysicalParams) -> float:
    """Mean channel power gain at the given distance (far-field monomial model)."""
    if distance_m <= 0:
        raise ValueError("distance must be > 0")
    ratio = params.light_speed / (4.0 * math.pi * params.carrier_hz * distance_m)
    return params.antenna_gain * ratio ** params.path_loss_exp


def sample_channel(mean_gain: float, gamma: float, rng: np.random.Generator,
                   size: int | None = None):
    """Draw Rician-faded power gain(s) with E[h] = mean_gain.

    The fading amplitude is nu = sqrt(gamma/(1+gamma)) + sqrt(1/(2(1+gamma))) (z1 + i z2)
    with z1, z2 standard normal, i.e. the unit-mean-power K-factor convention;
    gamma = 0 degenerates to Rayleigh and gamma -> inf to a pure LoS link.
    """
    if mean_gain <= 0:
        raise ValueError("mean gain must be > 0")
    if gamma < 0:
        raise ValueError("Rician factor must be >= 0")
    n = 1 if size is None else size
    z = rng.standard_normal((2, n))
    los = math.sqrt(gamma / (1.0 + gamma))
    scatter = math.sqrt(1.0 / (2.0 * (1.0 + gamma)))
    h = mean_gain * ((los + scatter * z[0]) ** 2 + (scatter * z[1]) ** 2)
    return float(h[0]) if size is None else h


def harvested_energy(schedule: Schedule, dt, n: int, gain: float,
                     params: PhysicalParams) -> float:
    """Energy collected by the slot-n offloader during slots 0..n-1 (J)."""
    durations = dt.as_array() if isinstance(dt, TimeAllocation) else np.asarray(dt)
    if not 1 <= n <= len(schedule):
        raise ValueError(f"slot index {n} outside 1..{len(schedule)}")
    return float(np.sum(durations[:n]) * gain * params.eta * params.p0_w)


def offload_power(a_bits: float, gain: float, dt_n: float, lam: float) -> float:
    """Transmit power needed to push a_bits through slot duration dt_n (W)."""
    if gain <= 0:
        raise ValueError("channel gain must be > 0")
    if dt_n <= 0:
        raise ValueError("cannot transmit in a zero-length slot")
    return lam * a_bits ** 3 / (gain * dt_n ** 3)


# ---------------------------------------------------------------------------
# configuration and generation

@dataclass(frozen=True)
class Tolerances:
    eps0: float = 1e-5          # bisection bracket accuracy
    eps1: float = 1e-5          # objective convergence accuracy
    eps_gbd: float = 1e-4       # relative upper/lower bound gap
    feas_tol: float = 1e-7      # normalized feasibility slack treated as zero
    max_iter_freq: int = 10000
    max_iter_bcd: int = 300
    max_iter_gbd: int = 200


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator settings; JSON schema documented in the README."""

    k: int = 10
    t_s: float = 1.0
    f_max_hz: float = 1e9
    p0_w: float = 3.0
    eta: float = 0.51
    kappa: float = 1e-26
    lam: float = 1e-25
    a_bits_range: tuple[float, float] = (1e4, 5e4)
    i_cpb_range: tuple[float, float] = (500.0, 1500.0)
    distance_m_range: tuple[float, float] = (0.3, 0.8)
    rician_gamma: float = 0.3
    antenna_gain: float = 3.0
    carrier_hz: float = 915e6
    path_loss_exp: float = 3.0
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("K must be >= 1")
        for name in ("t_s", "f_max_hz", "p0_w", "eta", "kappa", "lam"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("a_bits_range", "i_cpb_range", "distance_m_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi")

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(
            antenna_gain=self.antenna_gain, carrier_hz=self.carrier_hz,
            path_loss_exp=self.path_loss_exp, rician_gamma=self.rician_gamma,
            p0_w=self.p0_w, eta=self.eta, kappa=self.kappa, lam=self.lam)


# JSON key <-> attribute mapping; "lambda" is reserved in Python.
_CONFIG_KEYS = {
    "K": "k", "T_s": "t_s", "F_max_Hz": "f_max_hz", "P0_W": "p0_w",
    "eta": "eta", "kappa": "kappa", "lambda": "lam",
    "A_bits_range": "a_bits_range", "I_cpb_range": "i_cpb_range",
    "distance_m_range": "distance_m_range", "rician_gamma": "rician_gamma",
    "antenna_gain": "antenna_gain", "carrier_Hz": "carrier_hz",
    "path_loss_exp": "path_loss_exp", "seed": "seed", "tolerances": "tolerances",
}
_TOL_KEYS = ("eps0", "eps1", "eps_gbd", "feas_tol",
             "max_iter_freq", "max_iter_bcd", "max_iter_gbd")
_RANGE_KEYS = ("a_bits_range", "i_cpb_range", "distance_m_range")
_REQUIRED_KEYS = ("K",)


def config_from_dict(raw: dict) -> ScenarioConfig:
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required config key(s): {missing}")
    kwargs = {}
    for key, value in raw.items():
        attr = _CONFIG_KEYS[key]
        if attr == "tolerances":
            if not isinstance(value, dict):
                raise ConfigError("tolerances must be an object")
            bad = set(value) - set(_TOL_KEYS)
            if bad:
                raise ConfigError(f"unknown tolerance key(s): {sorted(bad)}")
            kwargs[attr] = Tolerances(**value)
        elif attr in _RANGE_KEYS:
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(f"{key} must be a [lo, hi] pair")
            kwargs[attr] = (float(value[0]), float(value[1]))
        else:
            kwargs[attr] = value
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: ScenarioConfig) -> dict:
    out = {}
    for key, attr in _CONFIG_KEYS.items():
        value = getattr(config, attr)
        if attr == "tolerances":
            value = {k: getattr(value, k) for k in _TOL_KEYS}
        elif attr in _RANGE_KEYS:
            value = list(value)
        out[key] = value
    return out


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def save_config(path, config: ScenarioConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def save_report(path, report: dict) -> None:
    """Write a solve/validation report as JSON (numpy scalars coerced)."""

    def _default(obj):
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        raise TypeError(f"unserializable object of type {type(obj)!r}")

    Path(path).write_text(json.dumps(report, indent=2, default=_default) + "\n")


def substream_seed(root_seed: int, instance_index: int) -> int:
    """Derived stream for parallel sweeps: root seed XOR instance index."""
    return (int(root_seed) ^ int(instance_index)) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def generate_scenario(config: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Sample a scenario; deterministic for a fixed (config, seed).

    Draw order is fixed per device: task bits, intensity, distance, then the
    two fading normals, so adding devices never perturbs earlier ones.
    """
    root = config.seed if seed is None else seed
    rng = make_rng(root)
    params = config.physical_params()
    tasks = []
    for _ in range(config.k):
        a = rng.uniform(*config.a_bits_range)
        i = rng.uniform(*config.i_cpb_range)
        d = rng.uniform(*config.distance_m_range)
        h = sample_channel(path_loss(d, params), params.rician_gamma, rng)
        tasks.append(DeviceTask(data_bits=a, intensity=i, distance_m=d, gain=h))
    return Scenario(k=config.k, t_s=config.t_s, f_max_hz=config.f_max_hz,
                    params=params, tasks=tuple(tasks), seed=root)


def with_axis_value(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Return a config with one sweep axis modified."""
    if axis == "K":
        return replace(config, k=int(value))
    if axis == "T":
        return replace(config, t_s=float(value))
    if axis == "Fmax":
        return replace(config, f_max_hz=float(value))
    if axis == "Amin":
        # keep the mean task size fixed while narrowing the spread
        lo, hi = config.a_bits_range
        mean = 0.5 * (lo + hi)
        new_lo = float(value)
        if new_lo > mean:
            raise ConfigError(f"Amin {new_lo} exceeds fixed mean {mean}")
        return replace(config, a_bits_range=(new_lo, 2.0 * mean - new_lo))
    raise ConfigError(f"unknown sweep axis {axis!r}")
