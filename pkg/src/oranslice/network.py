"""Physical-layer model of a sliced O-RAN downlink.

Implements:
- scenario description (RUs, slices, PRBs, power/QoS budgets)
- log-distance path loss with Rayleigh (exponential power) fading
- per-PRB SINR with inter-cell and external interference
- Shannon rates, transmission delay, RU capacity
- constraint checking and the total-rate objective

All power arithmetic is done in watts; dBm appears only in the
configuration layer. Every type is an immutable value and every
operation is a pure function, so evaluation is safe from concurrent
workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

EMBB = "eMBB"
URLLC = "URLLC"
MMTC = "mMTC"
SERVICES = (EMBB, URLLC, MMTC)

# reference distance of the path-loss law; distances are clamped to it
REFERENCE_DISTANCE_M = 1.0

# interference accounting modes (see NetworkConfig.interference_mode)
INTERFERENCE_CROSS_SLICE = "cross-slice"   # other RUs, other slices only
INTERFERENCE_ALL_RUS = "all-rus"            # every co-PRB transmission from other RUs


class ConfigError(ValueError):
    """Raised when a scenario description violates its invariants."""


def dbm_to_watts(level_dbm: float) -> float:
    """Convert a power level in dBm to watts: 10^((dBm - 30)/10)."""
    return 10.0 ** ((level_dbm - 30.0) / 10.0)


def watts_to_dbm(level_w: float) -> float:
    """Convert watts to dBm; 0 W maps to -inf."""
    if level_w <= 0.0:
        return float("-inf")
    return 10.0 * math.log10(level_w) + 30.0


def noise_power(psd_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Thermal noise power in watts over `bandwidth_hz` for a flat PSD."""
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    return dbm_to_watts(psd_dbm_per_hz) * bandwidth_hz


@dataclass(frozen=True)
class SliceSpec:
    """QoS profile and sizing of one network slice.

    min_rate is in bit/s (0 disables the check), max_delay in seconds
    (None disables it), packet_bits is the average packet size used by
    the delay model D = L / R. prb_quota is this slice's share of the
    PRB partition; power_cap_dbm optionally caps the power each RU may
    spend on this slice's PRBs.
    """

    service: str
    num_ues: int
    packet_bits: float = 12000.0
    min_rate: float = 0.0
    max_delay: float | None = None
    power_cap_dbm: float | None = None
    prb_quota: int = 0

    def __post_init__(self):
        if self.service not in SERVICES:
            raise ConfigError(f"unknown service {self.service!r}; expected one of {SERVICES}")
        if self.num_ues < 0:
            raise ConfigError(f"num_ues must be >= 0, got {self.num_ues}")
        if self.packet_bits <= 0:
            raise ConfigError(f"packet_bits must be > 0, got {self.packet_bits}")
        if self.max_delay is not None and self.max_delay <= 0:
            raise ConfigError(f"max_delay must be > 0 when set, got {self.max_delay}")
        if self.min_rate < 0:
            raise ConfigError(f"min_rate must be >= 0, got {self.min_rate}")
        if self.prb_quota < 0:
            raise ConfigError(f"prb_quota must be >= 0, got {self.prb_quota}")


def proportional_quotas(total_prbs: int, weights=(0.4, 0.4, 0.2)) -> tuple[int, ...]:
    """Split `total_prbs` into integer quotas, largest remainder method."""
    raw = [total_prbs * w for w in weights]
    quotas = [int(math.floor(x)) for x in raw]
    remainders = [x - q for x, q in zip(raw, quotas)]
    for _ in range(total_prbs - sum(quotas)):
        i = max(range(len(weights)), key=lambda j: (remainders[j], -j))
        quotas[i] += 1
        remainders[i] = -1.0
    return tuple(quotas)


@dataclass(frozen=True)
class NetworkConfig:
    """Static scenario: RU/slice/PRB counts, budgets, QoS targets.

    PRBs are partitioned among slices by the per-slice quotas; every RU
    reuses the full PRB grid (spatial reuse), which is what creates
    inter-cell interference. The optional external interferer transmits
    at `interference_power_dbm` from `interferer_position` on all PRBs.
    """

    num_rus: int
    slices: tuple[SliceSpec, ...]
    total_prbs: int
    prb_bandwidth: float = 180e3
    noise_psd_dbm: float = -174.0
    ru_max_power_dbm: float = 46.0
    ru_max_capacity: float = math.inf
    cell_radius: float = 400.0
    path_loss_exponent: float = 3.76
    interference_power_dbm: float | None = None
    interferer_position: tuple[float, float] = (800.0, 0.0)
    interference_mode: str = INTERFERENCE_CROSS_SLICE

    def __post_init__(self):
        if self.num_rus < 1:
            raise ConfigError(f"num_rus must be >= 1, got {self.num_rus}")
        if self.total_prbs < 1:
            raise ConfigError(f"total_prbs must be >= 1, got {self.total_prbs}")
        if self.prb_bandwidth <= 0:
            raise ConfigError(f"prb_bandwidth must be > 0, got {self.prb_bandwidth}")
        if self.cell_radius <= 0:
            raise ConfigError(f"cell_radius must be > 0, got {self.cell_radius}")
        if not math.isfinite(self.ru_max_power_dbm):
            raise ConfigError("ru_max_power_dbm must be finite")
        if not math.isfinite(self.noise_psd_dbm):
            raise ConfigError("noise_psd_dbm must be finite")
        if not isinstance(self.slices, tuple):
            object.__setattr__(self, "slices", tuple(self.slices))
        quota_sum = sum(s.prb_quota for s in self.slices)
        if quota_sum > self.total_prbs:
            raise ConfigError(
                f"slice PRB quotas sum to {quota_sum} > total_prbs {self.total_prbs}")
        if self.interference_mode not in (INTERFERENCE_CROSS_SLICE, INTERFERENCE_ALL_RUS):
            raise ConfigError(f"unknown interference_mode {self.interference_mode!r}")

    # -- derived index maps ------------------------------------------------

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    @property
    def num_ues(self) -> int:
        return sum(s.num_ues for s in self.slices)

    def ue_slice(self) -> np.ndarray:
        """Slice index of each UE; UEs are ordered slice by slice."""
        out = np.concatenate(
            [np.full(s.num_ues, i, dtype=np.int64) for i, s in enumerate(self.slices)]
        ) if self.slices else np.zeros(0, dtype=np.int64)
        return out

    def prb_slice(self) -> np.ndarray:
        """Slice index of each PRB per the quota partition; -1 = unallocated."""
        out = np.full(self.total_prbs, -1, dtype=np.int64)
        k = 0
        for i, s in enumerate(self.slices):
            out[k:k + s.prb_quota] = i
            k += s.prb_quota
        return out

    @property
    def ru_max_power_w(self) -> float:
        return dbm_to_watts(self.ru_max_power_dbm)

    @property
    def noise_power_w(self) -> float:
        """Noise power B*N0 over one PRB."""
        return noise_power(self.noise_psd_dbm, self.prb_bandwidth)


@dataclass(frozen=True)
class ChannelRealization:
    """Per-(UE, RU, PRB) channel power gains |h|^2 for one coherence block.

    ext_gain holds the external interferer's gain to each (UE, PRB) and
    is zero-filled when no interferer is configured.
    """

    gain: np.ndarray       # (U, R, K)
    ext_gain: np.ndarray   # (U, K)
    seed: int

    def __post_init__(self):
        self.gain.flags.writeable = False
        self.ext_gain.flags.writeable = False
        if np.any(self.gain < 0) or not np.all(np.isfinite(self.gain)):
            raise ValueError("channel gains must be nonnegative and finite")


@dataclass(frozen=True)
class Allocation:
    """Decision variables: association alpha, PRB assignment beta, powers p.

    assoc[u, r] and prb[u, r, k] are 0/1; power[u, r, k] is in watts and
    must be zero wherever prb is zero.
    """

    assoc: np.ndarray   # (U, R)
    prb: np.ndarray     # (U, R, K)
    power: np.ndarray   # (U, R, K)

    def __post_init__(self):
        for a in (self.assoc, self.prb, self.power):
            a.flags.writeable = False

    @staticmethod
    def empty(num_ues: int, num_rus: int, num_prbs: int) -> "Allocation":
        return Allocation(
            assoc=np.zeros((num_ues, num_rus), dtype=np.int8),
            prb=np.zeros((num_ues, num_rus, num_prbs), dtype=np.int8),
            power=np.zeros((num_ues, num_rus, num_prbs)),
        )


@dataclass(frozen=True)
class LinkMetrics:
    """Evaluated link quantities for one allocation on one channel block."""

    sinr: np.ndarray        # (U, K), at each UE's serving RU
    rate_ue: np.ndarray     # (U,) bit/s
    rate_slice: np.ndarray  # (S,) bit/s
    rate_total: float
    delay: np.ndarray       # (U,) seconds; inf for starved UEs
    ru_capacity: np.ndarray  # (R,) bit/s


def config_to_dict(config: NetworkConfig) -> dict:
    """JSON-ready description of a scenario; inverse of config_from_dict."""
    return {
        "num_rus": config.num_rus,
        "slices": [
            {
                "service": s.service,
                "num_ues": s.num_ues,
                "packet_bits": s.packet_bits,
                "min_rate": s.min_rate,
                "max_delay": s.max_delay,
                "power_cap_dbm": s.power_cap_dbm,
                "prb_quota": s.prb_quota,
            }
            for s in config.slices
        ],
        "total_prbs": config.total_prbs,
        "prb_bandwidth": config.prb_bandwidth,
        "noise_psd_dbm": config.noise_psd_dbm,
        "ru_max_power_dbm": config.ru_max_power_dbm,
        "ru_max_capacity": None if math.isinf(config.ru_max_capacity)
        else config.ru_max_capacity,
        "cell_radius": config.cell_radius,
        "path_loss_exponent": config.path_loss_exponent,
        "interference_power_dbm": config.interference_power_dbm,
        "interferer_position": list(config.interferer_position),
        "interference_mode": config.interference_mode,
    }


def config_from_dict(d: dict) -> NetworkConfig:
    d = dict(d)
    slices = tuple(SliceSpec(**s) for s in d.pop("slices"))
    cap = d.pop("ru_max_capacity", None)
    pos = d.pop("interferer_position", (800.0, 0.0))
    return NetworkConfig(slices=slices,
                         ru_max_capacity=math.inf if cap is None else cap,
                         interferer_position=tuple(pos), **d)


def config_digest(config: NetworkConfig) -> str:
    """Stable short hash of the scenario, for stamping output files."""
    blob = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# geometry and channel sampling
# ---------------------------------------------------------------------------

def ru_positions(config: NetworkConfig) -> np.ndarray:
    """Deterministic RU layout: single RU at the origin, otherwise evenly
    spaced on a circle of half the cell radius."""
    R = config.num_rus
    if R == 1:
        return np.zeros((1, 2))
    ang = 2.0 * np.pi * np.arange(R) / R
    rad = config.cell_radius / 2.0
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def sample_ue_positions(config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """UEs uniform on the disc of radius cell_radius, resampled until each
    lies within cell_radius of at least one RU."""
    rus = ru_positions(config)
    out = np.zeros((config.num_ues, 2))
    for u in range(config.num_ues):
        while True:
            r = config.cell_radius * np.sqrt(rng.uniform())
            ang = rng.uniform(0.0, 2.0 * np.pi)
            p = np.array([r * np.cos(ang), r * np.sin(ang)])
            if np.min(np.hypot(*(rus - p).T)) <= config.cell_radius:
                out[u] = p
                break
    return out


def sample_channel(config: NetworkConfig, ue_pos: np.ndarray,
                   ru_pos: np.ndarray, seed: int) -> ChannelRealization:
    """Draw one coherence block of channel gains.

    gain[u, r, k] = max(d_ur, d0)^(-eta) * X with X ~ Exp(1) i.i.d. per
    (u, r, k); eta is the path-loss exponent. Rayleigh amplitude fading
    corresponds exactly to exponential power fading. Bit-reproducible
    for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    U, R, K = config.num_ues, config.num_rus, config.total_prbs
    d = np.hypot(ue_pos[:, None, 0] - ru_pos[None, :, 0],
                 ue_pos[:, None, 1] - ru_pos[None, :, 1])
    d = np.maximum(d, REFERENCE_DISTANCE_M)
    path = d ** (-config.path_loss_exponent)          # (U, R)
    fading = rng.exponential(1.0, size=(U, R, K))
    gain = path[:, :, None] * fading

    ext = np.zeros((U, K))
    if config.interference_power_dbm is not None:
        ip = np.asarray(config.interferer_position, dtype=float)
        d_ext = np.maximum(np.hypot(ue_pos[:, 0] - ip[0], ue_pos[:, 1] - ip[1]),
                           REFERENCE_DISTANCE_M)
        ext = d_ext[:, None] ** (-config.path_loss_exponent) \
            * rng.exponential(1.0, size=(U, K))
    return ChannelRealization(gain=gain, ext_gain=ext, seed=seed)


def draw_instance(config: NetworkConfig, seed: int):
    """One full scenario draw: UE positions plus a channel block.

    Returns (ue_pos, ru_pos, ChannelRealization); deterministic in seed.
    """
    ss = np.random.SeedSequence(seed)
    pos_seed, chan_seed = ss.spawn(2)
    ue_pos = sample_ue_positions(config, np.random.default_rng(pos_seed))
    rus = ru_positions(config)
    chan = sample_channel(config, ue_pos, rus,
                          int(chan_seed.generate_state(1, np.uint64)[0]))
    return ue_pos, rus, chan


# ---------------------------------------------------------------------------
# SINR / rates / delay / capacity
# ---------------------------------------------------------------------------

def _tx_power_gain(alloc: Allocation, chan: ChannelRealization) -> np.ndarray:
    """alpha * beta * p * |h|^2 per (u, r, k)."""
    return alloc.assoc[:, :, None] * alloc.prb * alloc.power * chan.gain


def _interferer_mask(config: NetworkConfig) -> np.ndarray:
    """mask[u, i] = 1 if UE i's transmissions may interfere with UE u."""
    sl = config.ue_slice()
    if config.interference_mode == INTERFERENCE_CROSS_SLICE:
        return (sl[:, None] != sl[None, :]).astype(float)
    return np.ones((config.num_ues, config.num_ues))


def interference(alloc: Allocation, chan: ChannelRealization,
                 config: NetworkConfig) -> np.ndarray:
    """Inter-cell plus external interference I[u, r, k] in watts.

    Sums co-PRB transmissions from RUs other than r; in the default
    cross-slice mode only transmissions to UEs of other slices count,
    in all-rus mode every co-PRB transmission from another RU counts.
    The external interferer, when configured, adds its max power times
    its gain on every PRB.
    """
    tx = _tx_power_gain(alloc, chan)                    # (U, R, K)
    mask = _interferer_mask(config)                      # (U, U)
    # masked totals per (u, r, k): sum over allowed interferers i of tx[i, r, k]
    masked = np.einsum("ui,irk->urk", mask, tx)
    total_over_rus = masked.sum(axis=1, keepdims=True)   # (U, 1, K)
    inter = total_over_rus - masked                      # (U, R, K): sum over j != r
    if config.interference_power_dbm is not None:
        p_ext = dbm_to_watts(config.interference_power_dbm)
        inter = inter + (p_ext * chan.ext_gain)[:, None, :]
    return inter


def sinr(alloc: Allocation, chan: ChannelRealization, config: NetworkConfig,
         u: int, k: int, r: int) -> float:
    """SINR of UE u on PRB k served by RU r; 0 when the PRB is unassigned."""
    if not (alloc.assoc[u, r] and alloc.prb[u, r, k]):
        return 0.0
    signal = alloc.power[u, r, k] * chan.gain[u, r, k]
    inter = interference(alloc, chan, config)[u, r, k]
    return signal / (config.noise_power_w + inter)


def sinr_matrix(alloc: Allocation, chan: ChannelRealization,
                config: NetworkConfig) -> np.ndarray:
    """SINR[u, k] at each UE's serving RU; zero rows for unattached UEs."""
    signal = _tx_power_gain(alloc, chan)                 # (U, R, K)
    inter = interference(alloc, chan, config)            # (U, R, K)
    ratio = signal / (config.noise_power_w + inter)
    # each UE has at most one serving RU; summing over r picks it out
    return (ratio * alloc.prb * alloc.assoc[:, :, None]).sum(axis=1)


def rate_ue(alloc: Allocation, chan: ChannelRealization, config: NetworkConfig,
            u: int) -> float:
    """Shannon rate of UE u: sum over its assigned PRBs of B log2(1+SINR)."""
    return float(rate_per_ue(alloc, chan, config)[u])


def rate_per_ue(alloc: Allocation, chan: ChannelRealization,
                config: NetworkConfig) -> np.ndarray:
    rho = sinr_matrix(alloc, chan, config)               # (U, K)
    return config.prb_bandwidth * np.log2(1.0 + rho).sum(axis=1)


def rate_slice(alloc, chan, config: NetworkConfig) -> np.ndarray:
    per_ue = rate_per_ue(alloc, chan, config)
    sl = config.ue_slice()
    out = np.zeros(config.num_slices)
    np.add.at(out, sl, per_ue)
    return out


def rate_total(alloc, chan, config: NetworkConfig) -> float:
    return float(rate_per_ue(alloc, chan, config).sum())


def delay(packet_bits: float, rate: float) -> float:
    """Transmission delay D = L / R; +inf sentinel for a starved link."""
    if packet_bits <= 0:
        raise ValueError(f"packet_bits must be > 0, got {packet_bits}")
    if rate <= 0.0:
        return math.inf
    return packet_bits / rate


def ru_capacity(alloc: Allocation, chan: ChannelRealization,
                config: NetworkConfig, r: int) -> float:
    """Aggregate rate of all UEs served by RU r."""
    per_ue = rate_per_ue(alloc, chan, config)
    return float((alloc.assoc[:, r] * per_ue).sum())


def link_metrics(alloc: Allocation, chan: ChannelRealization,
                 config: NetworkConfig) -> LinkMetrics:
    """Evaluate every link quantity for one allocation in a single pass."""
    rho = sinr_matrix(alloc, chan, config)
    per_ue = config.prb_bandwidth * np.log2(1.0 + rho).sum(axis=1)
    sl = config.ue_slice()
    per_slice = np.zeros(config.num_slices)
    np.add.at(per_slice, sl, per_ue)
    packet = np.array([config.slices[s].packet_bits for s in sl]) \
        if len(sl) else np.zeros(0)
    with np.errstate(divide="ignore"):
        d = np.where(per_ue > 0.0, packet / np.maximum(per_ue, 1e-300), math.inf)
    cap = (alloc.assoc * per_ue[:, None]).sum(axis=0)
    return LinkMetrics(sinr=rho, rate_ue=per_ue, rate_slice=per_slice,
                       rate_total=float(per_ue.sum()), delay=d, ru_capacity=cap)


def objective(alloc: Allocation, chan: ChannelRealization,
              config: NetworkConfig) -> float:
    """The optimization objective: total achievable rate in bit/s."""
    return rate_total(alloc, chan, config)


# ---------------------------------------------------------------------------
# constraint checking
# ---------------------------------------------------------------------------

POWER_TOL_W = 1e-9

STRUCTURAL_CHECKS = ("association", "prb_requires_association",
                     "prb_exclusivity", "prb_partition")


@dataclass(frozen=True)
class ConstraintCheck:
    """One constraint family: satisfied flag, raw and normalized magnitude.

    `violation` is in the constraint's native unit (seconds, watts,
    bit/s, or a violation count); `normalized` is a dimensionless
    magnitude capped to [0, 1] per violating element so families are
    commensurate in the reward.
    """

    name: str
    ok: bool
    violation: float
    normalized: float


@dataclass(frozen=True)
class ConstraintReport:
    checks: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> ConstraintCheck:
        return self.checks[name]

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.checks.values())

    @property
    def structural_ok(self) -> bool:
        return all(self.checks[n].ok for n in STRUCTURAL_CHECKS)

    def structural_violations(self) -> float:
        return sum(self.checks[n].violation for n in STRUCTURAL_CHECKS)

    def normalized_total(self) -> float:
        return sum(c.normalized for c in self.checks.values())


def check_constraints(alloc: Allocation, chan: ChannelRealization,
                      config: NetworkConfig) -> ConstraintReport:
    """Check every constraint of the allocation problem.

    Families: delay (per-UE D <= Dmax), power (per-RU sum <= Pmax),
    capacity (per-RU C <= Cmax), association (exactly one RU per UE),
    prb_requires_association (beta <= alpha), prb_exclusivity (one UE
    per (RU, PRB)), prb_partition (PRBs only within the owning slice's
    quota), min_rate (per-UE R >= min rate), and slice_power when any
    slice cap is configured.
    """
    U, R, K = config.num_ues, config.num_rus, config.total_prbs
    sl = config.ue_slice()
    prb_sl = config.prb_slice()
    metrics = link_metrics(alloc, chan, config)
    checks = {}

    # delay: UEs of slices with a delay target
    raw = norm = 0.0
    for u in range(U):
        spec = config.slices[sl[u]]
        if spec.max_delay is None:
            continue
        d = metrics.delay[u]
        if d > spec.max_delay:
            raw += d - spec.max_delay
            # equivalent rate-domain shortfall, bounded even when starved
            need = spec.packet_bits / spec.max_delay
            norm += min(1.0, max(0.0, (need - metrics.rate_ue[u]) / need))
    checks["delay"] = ConstraintCheck("delay", raw == 0.0, raw, norm)

    # per-RU power budget
    used = (alloc.assoc[:, :, None] * alloc.prb * alloc.power).sum(axis=(0, 2))
    over = np.maximum(0.0, used - config.ru_max_power_w)
    over[over <= POWER_TOL_W] = 0.0
    raw = float(over.sum())
    checks["power"] = ConstraintCheck(
        "power", raw == 0.0, raw,
        float(np.minimum(1.0, over / config.ru_max_power_w).sum()))

    # per-RU capacity
    if math.isfinite(config.ru_max_capacity):
        overc = np.maximum(0.0, metrics.ru_capacity - config.ru_max_capacity)
        raw = float(overc.sum())
        normc = float(np.minimum(1.0, overc / config.ru_max_capacity).sum())
    else:
        raw, normc = 0.0, 0.0
    checks["capacity"] = ConstraintCheck("capacity", raw == 0.0, raw, normc)

    # association: exactly one RU per UE
    bad = int(np.sum(alloc.assoc.sum(axis=1) != 1))
    checks["association"] = ConstraintCheck(
        "association", bad == 0, float(bad), float(bad))

    # beta requires alpha
    bad = int(np.sum((alloc.prb == 1) & (alloc.assoc[:, :, None] == 0)))
    checks["prb_requires_association"] = ConstraintCheck(
        "prb_requires_association", bad == 0, float(bad), float(bad))

    # per-(RU, PRB) exclusivity
    per_rk = (alloc.assoc[:, :, None] * alloc.prb).sum(axis=0)
    bad = int(np.sum(per_rk > 1))
    checks["prb_exclusivity"] = ConstraintCheck(
        "prb_exclusivity", bad == 0, float(bad), float(bad))

    # slice partition: assigned PRBs must belong to the UE's slice
    owner = prb_sl[None, None, :] if K else prb_sl
    bad = int(np.sum((alloc.prb == 1) & (sl[:, None, None] != owner))) if U else 0
    checks["prb_partition"] = ConstraintCheck(
        "prb_partition", bad == 0, float(bad), float(bad))

    # minimum rate targets
    raw = norm = 0.0
    for u in range(U):
        spec = config.slices[sl[u]]
        if spec.min_rate <= 0:
            continue
        short = spec.min_rate - metrics.rate_ue[u]
        if short > 0:
            raw += short
            norm += min(1.0, short / spec.min_rate)
    checks["min_rate"] = ConstraintCheck("min_rate", raw == 0.0, raw, norm)

    # optional per-slice power caps (per RU)
    if any(s.power_cap_dbm is not None for s in config.slices):
        raw = norm = 0.0
        spent = (alloc.assoc[:, :, None] * alloc.prb * alloc.power)  # (U,R,K)
        for i, spec in enumerate(config.slices):
            if spec.power_cap_dbm is None:
                continue
            cap = dbm_to_watts(spec.power_cap_dbm)
            per_ru = spent[sl == i].sum(axis=(0, 2)) if np.any(sl == i) \
                else np.zeros(R)
            over = np.maximum(0.0, per_ru - cap)
            over[over <= POWER_TOL_W] = 0.0
            raw += float(over.sum())
            norm += float(np.minimum(1.0, over / cap).sum())
        checks["slice_power"] = ConstraintCheck(
            "slice_power", raw == 0.0, raw, norm)

    return ConstraintReport(checks=checks)
