import numpy as np
import pytest

from oranslice.network import (
    Allocation,
    NetworkConfig,
    SliceSpec,
)


def desk_config(**overrides) -> NetworkConfig:
    """Small 1-RU scenario: 4 UEs (2 eMBB, 1 URLLC, 1 mMTC), 4 PRBs."""
    kw = dict(
        num_rus=1,
        slices=(
            SliceSpec("eMBB", 2, min_rate=10e6, prb_quota=2),
            SliceSpec("URLLC", 1, min_rate=2e6, max_delay=1e-3,
                      packet_bits=1600.0, prb_quota=1),
            SliceSpec("mMTC", 1, prb_quota=1),
        ),
        total_prbs=4,
    )
    kw.update(overrides)
    return NetworkConfig(**kw)


def two_ru_config(**overrides) -> NetworkConfig:
    kw = dict(
        num_rus=2,
        slices=(
            SliceSpec("eMBB", 2, prb_quota=1),
            SliceSpec("URLLC", 1, max_delay=1e-3, packet_bits=1600.0,
                      prb_quota=1),
        ),
        total_prbs=2,
    )
    kw.update(overrides)
    return NetworkConfig(**kw)


def manual_channel(config: NetworkConfig, gain: np.ndarray,
                   ext_gain=None, seed: int = 0):
    from oranslice.network import ChannelRealization

    if ext_gain is None:
        ext_gain = np.zeros((config.num_ues, config.total_prbs))
    return ChannelRealization(gain=np.asarray(gain, dtype=float),
                              ext_gain=np.asarray(ext_gain, dtype=float),
                              seed=seed)


def make_alloc(config: NetworkConfig, assoc, prb, power) -> Allocation:
    return Allocation(
        assoc=np.asarray(assoc, dtype=np.int8),
        prb=np.asarray(prb, dtype=np.int8),
        power=np.asarray(power, dtype=float),
    )


def random_tiny_config(rng) -> NetworkConfig:
    """Random scenario small enough for exhaustive enumeration."""
    num_rus = int(rng.integers(1, 3))
    total_prbs = int(rng.integers(1, 3))
    n_slices = int(rng.integers(1, 3))
    services = ["eMBB", "URLLC"][:n_slices]
    ue_counts = [0] * n_slices
    for _ in range(int(rng.integers(1, 3))):  # 1..2 UEs total
        ue_counts[int(rng.integers(0, n_slices))] += 1
    quotas = [0] * n_slices
    for k in range(total_prbs):
        quotas[int(rng.integers(0, n_slices))] += 1
    slices = []
    for i, svc in enumerate(services):
        min_rate = float(rng.choice([0.0, 1e5, 1e9]))
        max_delay = float(rng.choice([1e-3, 5e-4])) if svc == "URLLC" else None
        slices.append(SliceSpec(svc, ue_counts[i], packet_bits=1600.0,
                                min_rate=min_rate, max_delay=max_delay,
                                prb_quota=quotas[i]))
    return NetworkConfig(num_rus=num_rus, slices=tuple(slices),
                         total_prbs=total_prbs)


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)
