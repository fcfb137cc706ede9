"""Synthetic SFC monitoring data with injected faults and SLA-derived labels.

Each VNF metric follows ``mean + slow sinusoidal drift + Gaussian noise``.
A fault raises a per-(VNF, kind) stress envelope: three ramp-in steps,
a plateau at the fault's severity, three ramp-out steps. Stress shifts the
target VNF's metrics by a kind-specific signature and shifts the network
metrics of every downstream VNF by half as much.

Labels come from a latent service model that is not measured anywhere, it
is made up for this generator: response time grows linearly with stress,
the success rate falls off with a saturating curve in packet-loss and
traffic-surge stress, and a step is anomalous when either breaks the SLA.

Stress tools run in duty cycles. With ``dip_rate > 0`` the plateau of a
fault contains pauses during which the sampled metrics fall back to
baseline while the service-level impact (averaged over the SLA probing
interval) persists. The labels therefore carry state that a single frame
does not show.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import D_INPUT, METRICS, Dataset, write_csv
from .errors import ConfigError

FAULT_KINDS = ("cpu_stress", "mem_stress", "disk_io_stress", "net_latency", "packet_loss", "traffic_surge")
_M = {name: j for j, name in enumerate(METRICS)}
NETWORK_METRICS = tuple(m for m in METRICS if m.startswith("network_"))
_IS_NETWORK = np.array([m in NETWORK_METRICS for m in METRICS])
_RATES = np.array([m.startswith("cpu_") for m in METRICS])

# mean, noise std; cpu in percent, memory in MB, disk in GB, io in KB/s and ms,
# network in KB/s, packets/s and ms
BASELINE = {
    "cpu_idle": (72.0, 1.5), "cpu_interrupt": (0.5, 0.08), "cpu_nice": (0.2, 0.04),
    "cpu_softirq": (1.5, 0.25), "cpu_steal": (0.3, 0.06), "cpu_system": (6.0, 0.6),
    "cpu_user": (18.0, 1.2), "cpu_wait": (1.0, 0.2),
    "mem_free": (1500.0, 15.0), "mem_buffered": (120.0, 3.0), "mem_cached": (600.0, 8.0),
    "mem_used": (1800.0, 15.0),
    "disk_free": (30.0, 0.02), "reserved": (2.0, 0.0), "disk_used": (10.0, 0.02),
    "io_read": (50.0, 6.0), "io_write": (80.0, 8.0), "io_time": (5.0, 0.8),
    "network_rx_bytes": (5000.0, 250.0), "network_tx_bytes": (4950.0, 250.0),
    "network_rx_packets": (4000.0, 200.0), "network_tx_packets": (3960.0, 200.0),
    "network_latency": (2.0, 0.15),
}

# relative CPU load of each VNF type
VNF_LOAD = {"FW": 0.8, "IDS": 1.4, "FM": 1.0, "DPI": 1.3, "LB": 0.9}

# metric shift at severity 1.0
SIGNATURES = {
    "cpu_stress": {"cpu_user": 40.0, "cpu_system": 10.0, "cpu_idle": -50.0, "network_latency": 1.0},
    "mem_stress": {"mem_used": 1000.0, "mem_free": -900.0, "mem_cached": -100.0, "cpu_system": 2.0,
                   "network_latency": 0.6},
    "disk_io_stress": {"io_read": 300.0, "io_write": 500.0, "io_time": 40.0, "cpu_wait": 15.0,
                       "cpu_idle": -15.0, "network_latency": 0.6},
    "net_latency": {"network_latency": 20.0, "network_tx_packets": -150.0, "network_tx_bytes": -200.0},
    # strong enough that it still stands out after z-scoring against traffic surges
    "packet_loss": {"network_rx_packets": -3000.0, "network_tx_packets": -3000.0,
                    "network_rx_bytes": -3600.0, "network_tx_bytes": -3600.0, "network_latency": 6.0},
    "traffic_surge": {"network_rx_bytes": 8000.0, "network_tx_bytes": 8000.0, "network_rx_packets": 6000.0,
                      "network_tx_packets": 6000.0, "cpu_softirq": 6.0, "cpu_system": 5.0, "cpu_idle": -11.0,
                      "network_latency": 3.0},
}


def _signature_matrix() -> np.ndarray:
    out = np.zeros((len(FAULT_KINDS), D_INPUT))
    for k, kind in enumerate(FAULT_KINDS):
        for metric, delta in SIGNATURES[kind].items():
            out[k, _M[metric]] = delta
    return out


@dataclass(frozen=True)
class SLA:
    response_time_ms: float = 250.0
    success_rate: float = 0.9995


SLA_PRESETS = {"default": SLA(250.0, 0.9995), "strict": SLA(200.0, 0.9999)}


@dataclass(frozen=True)
class ServiceModel:
    """Latent response-time / availability model (invented, not measured)."""

    base_rt_ms: float = 100.0
    rt_noise_ms: float = 2.0
    # With severities in [0.9, 1] and a 3-step ramp, these weights put the
    # default SLA crossing at stress ~0.59, midway between the 0.5 and 0.75
    # ramp levels, about 10 response-time noise deviations from either.
    rt_weights: dict = field(default_factory=lambda: {
        "cpu_stress": 2.55, "mem_stress": 2.55, "disk_io_stress": 2.55,
        "net_latency": 2.55, "packet_loss": 0.5, "traffic_surge": 0.9,
    })
    loss_cap: float = 0.02
    loss_rate: float = 0.043
    loss_kinds: tuple = ("packet_loss", "traffic_surge")


@dataclass(frozen=True)
class Fault:
    start: int
    duration: int
    kind: str
    severity: float
    target: int


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    vnf_chain: tuple
    T: int
    faults: tuple = ()
    sla: SLA = SLA()
    seed: int = 0
    drift_amplitude: float = 1.0
    drift_period: tuple = (800.0, 4000.0)
    ramp: int = 3
    dip_rate: float = 0.0
    dip_max_len: int = 10
    service: ServiceModel = ServiceModel()

    def __post_init__(self):
        object.__setattr__(self, "vnf_chain", tuple(self.vnf_chain))
        object.__setattr__(self, "faults", tuple(f if isinstance(f, Fault) else Fault(**f) for f in self.faults))
        if isinstance(self.sla, dict):
            object.__setattr__(self, "sla", SLA(**self.sla))
        if isinstance(self.service, dict):
            object.__setattr__(self, "service", ServiceModel(**self.service))
        self.validate()

    @property
    def V(self) -> int:
        return len(self.vnf_chain)

    def validate(self):
        if self.T < 1 or self.V < 1:
            raise ConfigError("scenario needs T >= 1 and at least one VNF")
        if not 0.0 <= self.dip_rate < 1.0 or self.dip_max_len < 1:
            raise ConfigError("dip_rate must lie in [0, 1) and dip_max_len >= 1")
        for f in self.faults:
            if f.kind not in FAULT_KINDS:
                raise ConfigError(f"unknown fault kind {f.kind!r}")
            if f.duration < 1:
                raise ConfigError(f"fault at {f.start}: duration must be >= 1")
            if f.start < 0 or f.start + f.duration > self.T:
                raise ConfigError(f"fault window [{f.start}, {f.start + f.duration}) outside [0, {self.T})")
            if not 0.0 < f.severity <= 1.0:
                raise ConfigError(f"fault at {f.start}: severity {f.severity} outside (0, 1]")
            if not 0 <= f.target < self.V:
                raise ConfigError(f"fault at {f.start}: target VNF {f.target} outside chain of length {self.V}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vnf_chain"] = list(self.vnf_chain)
        d["drift_period"] = list(self.drift_period)
        d["service"]["loss_kinds"] = list(self.service.loss_kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "drift_period" in d:
            d["drift_period"] = tuple(d["drift_period"])
        if isinstance(d.get("service"), dict) and "loss_kinds" in d["service"]:
            d["service"] = dict(d["service"], loss_kinds=tuple(d["service"]["loss_kinds"]))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LatentServiceState:
    response_time: np.ndarray
    success_rate: np.ndarray


@dataclass(frozen=True)
class Simulation:
    dataset: Dataset
    stress: np.ndarray      # (T, V, kinds) envelope stress driving the service model
    activity: np.ndarray    # (T, V, kinds) stress visible in the metrics (dips applied)
    state: LatentServiceState


def envelope(duration: int, ramp: int = 3) -> np.ndarray:
    """Stress profile of one fault at severity 1."""
    k = np.arange(duration)
    return np.minimum(np.minimum(k + 1, duration - k) / (ramp + 1), 1.0)


def _stress(config: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    stress = np.zeros((config.T, config.V, len(FAULT_KINDS)))
    activity = np.zeros_like(stress)
    for f in config.faults:
        env = envelope(f.duration, config.ramp)
        duty = np.ones(f.duration)
        if config.dip_rate > 0:
            plateau = np.flatnonzero(env >= 1.0)
            if plateau.size:
                # dips must end before the ramp-out begins
                last = plateau[-1] - 1
                pos = plateau[0]
                while pos < last:
                    if rng.random() < config.dip_rate:
                        length = int(rng.integers(1, config.dip_max_len + 1))
                        end = min(pos + length, last)
                        duty[pos:end] = 0.0
                        pos = end + 1
                    else:
                        pos += 1
        k = FAULT_KINDS.index(f.kind)
        sl = slice(f.start, f.start + f.duration)
        stress[sl, f.target, k] += f.severity * env
        activity[sl, f.target, k] += f.severity * env * duty
    return stress, activity


def _baseline_means(chain) -> np.ndarray:
    means = np.empty((len(chain), D_INPUT))
    for v, vnf in enumerate(chain):
        load = VNF_LOAD.get(vnf, 1.0)
        for m, (mu, _) in BASELINE.items():
            means[v, _M[m]] = mu * load if m in ("cpu_user", "cpu_system", "cpu_softirq") else mu
        other_cpu = sum(means[v, _M[m]] for m in METRICS if m.startswith("cpu_") and m != "cpu_idle")
        means[v, _M["cpu_idle"]] = 100.0 - other_cpu
    return means


def derive_service_state(stress: np.ndarray, config: ScenarioConfig,
                         noise: np.ndarray | None = None, rng=None) -> LatentServiceState:
    """Response time and success rate per step from envelope stress (T, V, kinds).

    ``noise`` is the response-time noise in ms; when omitted it is drawn from
    ``rng`` (or a generator seeded with ``config.seed``).
    """
    svc = config.service
    w = np.array([svc.rt_weights[k] for k in FAULT_KINDS])
    load = (stress * w).sum(axis=(1, 2))
    if noise is None:
        rng = np.random.default_rng(config.seed) if rng is None else rng
        noise = rng.normal(0.0, svc.rt_noise_ms, size=stress.shape[0])
    rt = np.maximum(svc.base_rt_ms * (1.0 + load) + noise, 1e-3)
    idx = [FAULT_KINDS.index(k) for k in svc.loss_kinds]
    x = stress[:, :, idx].sum(axis=(1, 2))
    sr = 1.0 - svc.loss_cap * (1.0 - np.exp(-svc.loss_rate * x))
    return LatentServiceState(rt, np.clip(sr, 0.0, 1.0))


def sla_label(state: LatentServiceState, sla: SLA | str = "default") -> np.ndarray:
    """1 where the response time exceeds the limit or availability drops below the floor."""
    sla = SLA_PRESETS[sla] if isinstance(sla, str) else sla
    bad = (state.response_time > sla.response_time_ms) | (state.success_rate < sla.success_rate)
    return bad.astype(np.int64)


def simulate(config: ScenarioConfig) -> Simulation:
    rng = np.random.default_rng(config.seed)
    T, V = config.T, config.V
    stress, activity = _stress(config, rng)

    means = _baseline_means(config.vnf_chain)
    std = np.array([BASELINE[m][1] for m in METRICS])
    lo_p, hi_p = config.drift_period
    period = rng.uniform(lo_p, hi_p, size=(V, D_INPUT))
    phase = rng.uniform(0.0, 2 * np.pi, size=(V, D_INPUT))
    # traffic flows through the whole chain: network drift is shared
    period[:, _IS_NETWORK] = period[0, _IS_NETWORK]
    phase[:, _IS_NETWORK] = phase[0, _IS_NETWORK]
    t = np.arange(T)[:, None, None]
    drift = config.drift_amplitude * std * np.sin(2 * np.pi * t / period + phase)
    noise = rng.normal(size=(T, V, D_INPUT)) * std

    sig = _signature_matrix()
    shift = activity @ sig
    # downstream VNFs see the network part of upstream faults at half strength
    upstream = np.cumsum(activity, axis=1) - activity
    shift += 0.5 * (upstream @ sig) * _IS_NETWORK

    frames = means + drift + noise + shift
    frames = np.maximum(frames, 0.0)
    frames[..., _RATES] = np.minimum(frames[..., _RATES], 100.0)

    state = derive_service_state(stress, config, rng=rng)
    labels = sla_label(state, config.sla)
    manifest = {
        "name": config.name,
        "vnf_chain": list(config.vnf_chain),
        "sla": asdict(config.sla),
        "seed": config.seed,
        "generator": "sfcad.synth",
    }
    ds = Dataset(config.name, frames, labels, config.vnf_chain, np.arange(T, dtype=np.int64), manifest=manifest)
    return Simulation(ds, stress, activity, state)


def generate(config: ScenarioConfig) -> Dataset:
    return simulate(config).dataset


def generate_to_dir(config: ScenarioConfig, out_dir) -> Path:
    out = Path(out_dir) / f"{config.name}.csv"
    write_csv(generate(config), out)
    return out


# --- presets ---------------------------------------------------------------

CHAINS = {
    "wsd-like": ("FW", "IDS", "FM", "DPI", "LB"),
    "lad-like": ("FW", "FM", "DPI", "IDS"),
}


def random_schedule(T: int, V: int, rng: np.random.Generator, duration=(30, 70), gap=(50, 150),
                    severity=(0.9, 1.0), kinds=FAULT_KINDS) -> tuple:
    """Non-overlapping faults separated by normal gaps."""
    faults = []
    pos = int(rng.integers(gap[0], gap[1] + 1))
    while True:
        dur = int(rng.integers(duration[0], duration[1] + 1))
        if pos + dur > T:
            break
        faults.append(Fault(pos, dur, str(kinds[int(rng.integers(len(kinds)))]),
                            float(rng.uniform(*severity)), int(rng.integers(V))))
        pos += dur + int(rng.integers(gap[0], gap[1] + 1))
    return tuple(faults)


def preset(name: str, T: int = 20_000, seed: int = 0, sla: str = "default", **overrides) -> ScenarioConfig:
    """``wsd-like`` (5 VNFs) or ``lad-like`` (4 VNFs) with a seeded fault schedule."""
    if name not in CHAINS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(CHAINS)}")
    chain = CHAINS[name]
    sched_rng = np.random.default_rng([seed, 7919, sorted(CHAINS).index(name)])
    faults = random_schedule(T, len(chain), sched_rng)
    cfg = ScenarioConfig(name=name if sla == "default" else f"{name}-{sla}", vnf_chain=chain, T=T,
                         faults=faults, sla=SLA_PRESETS[sla], seed=seed, dip_rate=0.05, dip_max_len=10)
    return replace(cfg, **overrides) if overrides else cfg
