"""MDP wrapper around the network model.

The agent emits one flat continuous action in [-1, 1]^d per step; a
deterministic projection turns it into a structurally feasible
allocation (association, PRB assignment, powers). The observation is
the QoS outcome of the previous step: one served/violated bit per UE
plus each RU's quantized power utilization. Rewards blend normalized
throughput against normalized constraint violations, so they stay
finite even when a delay-constrained UE is starved.

Channel fading is redrawn every step (block fading); UE positions are
redrawn at episode boundaries. All randomness descends from the
constructor seed through numpy SeedSequence spawning, which is what
makes whole training runs replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import (
    Allocation,
    NetworkConfig,
    check_constraints,
    dbm_to_watts,
    link_metrics,
    ru_positions,
    sample_channel,
    sample_ue_positions,
)

SINR_REF_DB = 15.0  # reference spectral efficiency anchor for reward scaling
POWER_OBS_LEVELS = 8


class EpisodeOver(RuntimeError):
    """step() was called on a finished episode."""


@dataclass(frozen=True)
class ActionLayout:
    """Index map of the flat action vector.

    Segments, in order: association scores (U x R), PRB claim scores
    (U x K), power scores (U x K). Everything lives in [-1, 1].
    """

    num_ues: int
    num_rus: int
    num_prbs: int

    @property
    def assoc_dim(self) -> int:
        return self.num_ues * self.num_rus

    @property
    def prb_dim(self) -> int:
        return self.num_ues * self.num_prbs

    @property
    def dim(self) -> int:
        return self.assoc_dim + 2 * self.prb_dim

    def split(self, action: np.ndarray):
        """Views of the three segments, reshaped to (U,R), (U,K), (U,K)."""
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.dim,):
            raise ValueError(f"action must have shape ({self.dim},), got {a.shape}")
        u, r, k = self.num_ues, self.num_rus, self.num_prbs
        assoc = a[:u * r].reshape(u, r)
        prb = a[u * r:u * r + u * k].reshape(u, k)
        power = a[u * r + u * k:].reshape(u, k)
        return assoc, prb, power


def layout_for(config: NetworkConfig) -> ActionLayout:
    return ActionLayout(config.num_ues, config.num_rus, config.total_prbs)


def project_action(config: NetworkConfig, action: np.ndarray,
                   layout: ActionLayout | None = None,
                   uniform_power: bool = False) -> Allocation:
    """Map a raw score vector to a feasible allocation.

    - association: each UE attaches to its highest-scoring RU (ties to
      the lowest index);
    - PRBs: per (RU, PRB), the strictly-positive top scorer among that
      RU's attached UEs of the owning slice wins; no positive claim
      leaves the PRB dark;
    - power: score v maps to (v+1)/2 of the RU's fair share
      P_max / n_assigned across its lit PRBs, then per-slice caps and
      the RU budget are enforced by downscaling. With uniform_power
      the scores are ignored and every lit PRB gets the full share.

    The result satisfies every structural constraint by construction.
    """
    layout = layout or layout_for(config)
    assoc_s, prb_s, pow_s = layout.split(action)
    U, R, K = config.num_ues, config.num_rus, config.total_prbs
    sl = config.ue_slice()
    owner = config.prb_slice()

    assoc = np.zeros((U, R), dtype=np.int8)
    if U:
        assoc[np.arange(U), np.argmax(assoc_s, axis=1)] = 1

    prb = np.zeros((U, R, K), dtype=np.int8)
    r_star = np.argmax(assoc_s, axis=1) if U else np.zeros(0, dtype=int)
    # claims are valid only on the owning slice's PRBs and must be positive
    claim = np.where((sl[:, None] == owner[None, :]) & (prb_s > 0.0),
                     prb_s, -np.inf)
    for r in range(R):
        rows = np.nonzero(r_star == r)[0]
        if rows.size == 0:
            continue
        sub = claim[rows]                       # (n_attached, K)
        win = np.argmax(sub, axis=0)            # first max, so lowest UE
        lit = sub[win, np.arange(K)] > 0.0
        prb[rows[win[lit]], r, np.nonzero(lit)[0]] = 1

    power = np.zeros((U, R, K))
    n_lit = prb.sum(axis=(0, 2))                        # per RU
    p_max = config.ru_max_power_w
    for r in range(R):
        if n_lit[r] == 0:
            continue
        share = p_max / n_lit[r]
        us, ks = np.nonzero(prb[:, r, :])
        frac = 1.0 if uniform_power else (pow_s[us, ks] + 1.0) / 2.0
        power[us, r, ks] = frac * share
        # per-slice power caps at this RU
        for i, spec in enumerate(config.slices):
            if spec.power_cap_dbm is None:
                continue
            cap = dbm_to_watts(spec.power_cap_dbm)
            mask = sl[us] == i
            spent = power[us[mask], r, ks[mask]].sum()
            if spent > cap:
                power[us[mask], r, ks[mask]] *= cap / spent
        total = power[:, r, :].sum()
        if total > p_max:
            power[:, r, :] *= p_max / total
    return Allocation(assoc=assoc, prb=prb, power=power)


def quantize_fraction(frac: float, levels: int = POWER_OBS_LEVELS) -> float:
    """Snap a [0, 1] fraction onto `levels` evenly spaced values."""
    frac = min(1.0, max(0.0, frac))
    return round(frac * (levels - 1)) / (levels - 1)


def encode_state(config: NetworkConfig, metrics=None, alloc=None,
                 levels: int = POWER_OBS_LEVELS) -> np.ndarray:
    """Observation: per-UE QoS bit, then per-RU quantized power use.

    The QoS bit is 1 only when the UE is actually served (rate > 0)
    and meets its slice's rate floor and delay ceiling. Before any
    allocation exists the observation is all zeros.
    """
    U, R = config.num_ues, config.num_rus
    out = np.zeros(U + R)
    if metrics is None or alloc is None:
        return out
    sl = config.ue_slice()
    for u in range(U):
        spec = config.slices[sl[u]]
        ok = metrics.rate_ue[u] > 0.0
        if spec.min_rate > 0:
            ok = ok and metrics.rate_ue[u] >= spec.min_rate
        if spec.max_delay is not None:
            ok = ok and metrics.delay[u] <= spec.max_delay
        out[u] = 1.0 if ok else 0.0
    used = (alloc.assoc[:, :, None] * alloc.prb * alloc.power).sum(axis=(0, 2))
    for r in range(R):
        out[U + r] = quantize_fraction(used[r] / config.ru_max_power_w, levels)
    return out


@dataclass(frozen=True)
class RewardWeights:
    """reward = rate * throughput/scale + violation * sum(norm) + bias."""

    rate: float = 1.0
    violation: float = -1.0
    bias: float = 0.0


def rate_scale(config: NetworkConfig, ref_db: float = SINR_REF_DB) -> float:
    """Throughput normalizer: all PRBs at the reference SINR."""
    se = math.log2(1.0 + 10.0 ** (ref_db / 10.0))
    return config.total_prbs * config.prb_bandwidth * se


class SliceEnv:
    """Episodic slicing environment over a fixed scenario config."""

    def __init__(self, config: NetworkConfig, *, episode_len: int = 50,
                 seed: int = 0, weights: RewardWeights = RewardWeights(),
                 uniform_power: bool = False,
                 power_obs_levels: int = POWER_OBS_LEVELS):
        if episode_len < 1:
            raise ValueError(f"episode_len must be >= 1, got {episode_len}")
        self.config = config
        self.layout = layout_for(config)
        self.episode_len = episode_len
        self.weights = weights
        self.uniform_power = uniform_power
        self.power_obs_levels = power_obs_levels
        self._scale = rate_scale(config)
        self._seed_seq = np.random.SeedSequence(seed)
        self._episode_rng = None
        self._chan = None
        self._steps = 0
        self._done = True

    @property
    def action_dim(self) -> int:
        return self.layout.dim

    @property
    def state_dim(self) -> int:
        return self.config.num_ues + self.config.num_rus

    def _next_channel(self):
        seed = int(self._episode_rng.integers(0, 2 ** 63 - 1))
        self._chan = sample_channel(self.config, self._ue_pos, self._ru_pos,
                                    seed)

    def reset(self) -> np.ndarray:
        child = self._seed_seq.spawn(1)[0]
        self._episode_rng = np.random.default_rng(child)
        self._ru_pos = ru_positions(self.config)
        self._ue_pos = sample_ue_positions(self.config, self._episode_rng)
        self._next_channel()
        self._steps = 0
        self._done = False
        return encode_state(self.config, levels=self.power_obs_levels)

    def step(self, action: np.ndarray):
        """Apply one action; returns (state, reward, done, info)."""
        if self._done:
            raise EpisodeOver("episode finished; call reset() first")
        alloc = project_action(self.config, action, self.layout,
                               uniform_power=self.uniform_power)
        metrics = link_metrics(alloc, self._chan, self.config)
        report = check_constraints(alloc, self._chan, self.config)
        violation = report.normalized_total()
        reward = (self.weights.rate * metrics.rate_total / self._scale
                  + self.weights.violation * violation
                  + self.weights.bias)
        state = encode_state(self.config, metrics, alloc,
                             levels=self.power_obs_levels)
        self._steps += 1
        self._done = self._steps >= self.episode_len
        info = {
            "alloc": alloc,
            "metrics": metrics,
            "report": report,
            "rate_total": metrics.rate_total,
            "violation": violation,
        }
        self._next_channel()  # block fading for the next step
        return state, float(reward), self._done, info
