"""Exhaustive search over the discretized allocation space.

The search enumerates, exactly:

- every association of UEs to RUs (R^U combinations),
- per (RU, PRB) cell, either dark or one attached UE of the owning
  slice,
- per lit cell, a transmit power from the grid
  {i / L * P_max / n_lit(r) : i = 1..L}, where n_lit(r) is the number
  of lit cells at that RU in the current combination.

The winner is the feasible allocation with the highest total rate;
ties go to the lexicographically smallest solution encoding (see
encode_solution). When nothing is feasible the least-violating
allocation is returned with feasible=False.

Because the discrete space multiplies out exactly, the search cost is
predictable up front (predicted_count), which is the point of keeping
this solver around as a ground-truth oracle for small scenes: its
results are emitted as JSONL datasets that other policies are scored
against.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np

from .network import (
    Allocation,
    NetworkConfig,
    check_constraints,
    config_digest,
    config_to_dict,
    config_from_dict,
    draw_instance,
    link_metrics,
    objective,
)

DATASET_KIND = "allocation-oracle"
DATASET_VERSION = 1


@dataclass(frozen=True)
class EsaConfig:
    power_levels: int = 3

    def __post_init__(self):
        if self.power_levels < 1:
            raise ValueError(
                f"power_levels must be >= 1, got {self.power_levels}")


@dataclass(frozen=True)
class EsaResult:
    alloc: Allocation
    objective: float
    feasible: bool
    violation: float
    encoding: tuple
    evaluated: int


def encode_solution(assoc_tuple, combo) -> tuple:
    """Canonical integer encoding used for lexicographic tie-breaking.

    assoc_tuple lists each UE's RU; combo lists, per (r, k) cell in
    row-major order, either None (dark) or (ue, level) with level in
    1..L. Dark encodes as (-1, 0).
    """
    enc = list(assoc_tuple)
    for cell in combo:
        if cell is None:
            enc.extend((-1, 0))
        else:
            enc.extend(cell)
    return tuple(enc)


def _candidates(config: NetworkConfig, assoc_tuple):
    """Per (r, k) cell: attached UEs of the owning slice, ascending."""
    sl = config.ue_slice()
    owner = config.prb_slice()
    cells = []
    for r in range(config.num_rus):
        for k in range(config.total_prbs):
            if owner[k] < 0:
                cells.append(((r, k), ()))
                continue
            cands = tuple(u for u in range(config.num_ues)
                          if assoc_tuple[u] == r and sl[u] == owner[k])
            cells.append(((r, k), cands))
    return cells


def _build_alloc(config: NetworkConfig, assoc_tuple, cells, combo,
                 levels: int) -> Allocation:
    U, R, K = config.num_ues, config.num_rus, config.total_prbs
    assoc = np.zeros((U, R), dtype=np.int8)
    for u, r in enumerate(assoc_tuple):
        assoc[u, r] = 1
    prb = np.zeros((U, R, K), dtype=np.int8)
    power = np.zeros((U, R, K))
    n_lit = np.zeros(R, dtype=int)
    for ((r, _), _), cell in zip(cells, combo):
        if cell is not None:
            n_lit[r] += 1
    p_max = config.ru_max_power_w
    for ((r, k), _), cell in zip(cells, combo):
        if cell is None:
            continue
        u, level = cell
        prb[u, r, k] = 1
        power[u, r, k] = (level / levels) * (p_max / n_lit[r])
    return Allocation(assoc=assoc, prb=prb, power=power)


def predicted_count(config: NetworkConfig, esa: EsaConfig) -> int:
    """Exact number of allocations the search will evaluate."""
    total = 0
    for assoc_tuple in itertools.product(range(config.num_rus),
                                         repeat=config.num_ues):
        combos = 1
        for _, cands in _candidates(config, assoc_tuple):
            combos *= 1 + len(cands) * esa.power_levels
        total += combos
    return total


def esa_search(config: NetworkConfig, chan, esa: EsaConfig = EsaConfig()) \
        -> EsaResult:
    """Enumerate the full space and return the optimum."""
    L = esa.power_levels
    best_feas = None   # (-obj, encoding, alloc)
    best_any = None    # (violation, -obj, encoding, alloc)
    evaluated = 0
    for assoc_tuple in itertools.product(range(config.num_rus),
                                         repeat=config.num_ues):
        cells = _candidates(config, assoc_tuple)
        options = [
            [None] + [(u, lv) for u in cands for lv in range(1, L + 1)]
            for _, cands in cells
        ]
        for combo in itertools.product(*options):
            alloc = _build_alloc(config, assoc_tuple, cells, combo, L)
            obj = objective(alloc, chan, config)
            report = check_constraints(alloc, chan, config)
            enc = encode_solution(assoc_tuple, combo)
            evaluated += 1
            if report.all_ok:
                key = (-obj, enc)
                if best_feas is None or key < best_feas[0]:
                    best_feas = (key, alloc)
            vio = report.normalized_total()
            key = (vio, -obj, enc)
            if best_any is None or key < best_any[0]:
                best_any = (key, alloc)
    if best_feas is not None:
        (nobj, enc), alloc = best_feas
        return EsaResult(alloc=alloc, objective=-nobj, feasible=True,
                         violation=0.0, encoding=enc, evaluated=evaluated)
    (vio, nobj, enc), alloc = best_any
    return EsaResult(alloc=alloc, objective=-nobj, feasible=False,
                     violation=vio, encoding=enc, evaluated=evaluated)


# ---------------------------------------------------------------------------
# oracle datasets
# ---------------------------------------------------------------------------

def _solve_record(args):
    config_dict, levels, instance, seed = args
    config = config_from_dict(config_dict)
    _, _, chan = draw_instance(config, seed)
    res = esa_search(config, chan, EsaConfig(power_levels=levels))
    m = link_metrics(res.alloc, chan, config)
    us, rs, ks = np.nonzero(res.alloc.prb)
    return {
        "instance": instance,
        "seed": seed,
        "objective": res.objective,
        "feasible": res.feasible,
        "violation": res.violation,
        "evaluated": res.evaluated,
        "assoc": np.argmax(res.alloc.assoc, axis=1).tolist(),
        "prb": [[int(u), int(r), int(k)] for u, r, k in zip(us, rs, ks)],
        "power": [[int(u), int(r), int(k), float(res.alloc.power[u, r, k])]
                  for u, r, k in zip(us, rs, ks)],
        "encoding": list(res.encoding),
        "rate_ue": [float(x) for x in m.rate_ue],
    }


def write_dataset(path, config: NetworkConfig, esa: EsaConfig,
                  seeds, workers: int = 1) -> dict:
    """Solve one instance per seed and write JSONL: header, then records.

    Records are ordered by seed position regardless of worker count, so
    the file bytes depend only on config, seeds, and power levels.
    """
    jobs = [(config_to_dict(config), esa.power_levels, i, int(s))
            for i, s in enumerate(seeds)]
    if workers > 1:
        with Pool(processes=workers) as pool:
            records = pool.map(_solve_record, jobs)
    else:
        records = [_solve_record(j) for j in jobs]
    header = {
        "kind": DATASET_KIND,
        "version": DATASET_VERSION,
        "config_digest": config_digest(config),
        "config": config_to_dict(config),
        "power_levels": esa.power_levels,
        "count": len(records),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return header


def load_dataset(path):
    """Read a JSONL oracle file; returns (header, records)."""
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset")
    header, records = lines[0], lines[1:]
    if header.get("kind") != DATASET_KIND:
        raise ValueError(f"{path}: not an allocation oracle file")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    if header.get("count") != len(records):
        raise ValueError(f"{path}: header count {header.get('count')} "
                         f"!= records {len(records)}")
    return header, records


def record_to_alloc(record: dict, config: NetworkConfig) -> Allocation:
    """Rebuild the stored optimal allocation as dense arrays."""
    U, R, K = config.num_ues, config.num_rus, config.total_prbs
    assoc = np.zeros((U, R), dtype=np.int8)
    for u, r in enumerate(record["assoc"]):
        assoc[u, r] = 1
    prb = np.zeros((U, R, K), dtype=np.int8)
    for u, r, k in record["prb"]:
        prb[u, r, k] = 1
    power = np.zeros((U, R, K))
    for u, r, k, w in record["power"]:
        power[u, r, k] = w
    return Allocation(assoc=assoc, prb=prb, power=power)
