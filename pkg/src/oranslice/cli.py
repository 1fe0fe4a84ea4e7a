"""Command-line experiment harness.

Subcommands
-----------
train      seeded training run: learning-curve CSV + figure, checkpoint, manifest
oracle     exhaustive-search labels for held-out instances (JSONL)
evaluate   checkpointed or random policy vs oracle labels: metrics CSV + figure
sweep      scenario sweeps over num_ues / ru_power / slice_power /
           interference_power, one CSV + figure per sweep

Configuration is YAML with full defaulting; an empty file selects the
documented full-scale scenario. Every output file embeds the resolved
config hash, and data rows are pure functions of (config, seeds), so
reruns reproduce files byte for byte. Figures are rendered next to each
CSV. Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agent import (
    DqnConfig,
    DqnResult,
    TrainConfig,
    TrainResult,
    build_catalog,
    diffusion_policy_fn,
    dqn_policy_fn,
    rollout_on_instance,
    train,
    train_dqn,
)
from .diffusion import build_schedule
from .env import RewardWeights, SliceEnv, layout_for
from .esa import EsaConfig, esa_search, load_dataset, predicted_count, \
    record_to_alloc, write_dataset
from .metrics import aggregate_report, alloc_to_vector, baep, \
    cosine_similarity, mae, r2
from .network import ConfigError, config_digest, config_from_dict, \
    draw_instance, link_metrics, proportional_quotas, rate_total
from .nn import DenseNet, load_checkpoint, save_checkpoint
from .plotting import save_learning_curve, save_metric_bars, save_sweep_curve

SWEEP_VARS = ("num_ues", "ru_power", "slice_power", "interference_power")
WORKERS_ENV = "ORANSLICE_WORKERS"

# CSV schema tags; bump on any column change
SCHEMA_CURVE = "learning-curve-v1"
SCHEMA_EVAL = "evaluation-v1"
SCHEMA_SUMMARY = "evaluation-summary-v1"
SCHEMA_SWEEP = "sweep-v1"


class UsageError(Exception):
    """Bad invocation or configuration; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def default_config() -> dict:
    """Fully resolved default experiment: the documented scenario scale
    (50 PRBs, 46 dBm, -174 dBm/Hz, 400 m cell, exponent 3.76, UE split
    40/40/20) and the documented training hyperparameters."""
    network = {
        "num_rus": 2,
        "total_prbs": 50,
        "prb_bandwidth": 180e3,
        "noise_psd_dbm": -174.0,
        "ru_max_power_dbm": 46.0,
        "ru_max_capacity": None,
        "cell_radius": 400.0,
        "path_loss_exponent": 3.76,
        "interference_power_dbm": None,
        "interferer_position": [800.0, 0.0],
        "interference_mode": "cross-slice",
        "slices": [
            {"service": "eMBB", "num_ues": 4, "min_rate": 10e6},
            {"service": "URLLC", "num_ues": 4, "min_rate": 2e6,
             "max_delay": 1e-3, "packet_bits": 1600.0},
            {"service": "mMTC", "num_ues": 2},
        ],
    }
    return {
        "network": network,
        "env": {"episode_len": 50, "uniform_power": False,
                "power_obs_levels": 8},
        "reward": {"rate": 1.0, "violation": -1.0, "bias": 0.0},
        "train": _as_plain(dataclasses.asdict(TrainConfig())),
        "dqn": _as_plain(dataclasses.asdict(DqnConfig())),
        "esa": {"power_levels": 3, "max_enumeration": 5_000_000},
    }


def _as_plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


SLICE_KEYS = ("service", "num_ues", "packet_bits", "min_rate", "max_delay",
              "power_cap_dbm", "prb_quota")


def _merge_section(name: str, base: dict, override) -> dict:
    if override is None:
        return dict(base)
    if not isinstance(override, dict):
        raise UsageError(f"config: section {name!r} must be a mapping")
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise UsageError(f"config: unknown key {name}.{key}")
        out[key] = val
    return out


def _resolve_slices(raw, total_prbs: int) -> list:
    if not isinstance(raw, list) or not raw:
        raise UsageError("config: network.slices must be a non-empty list")
    out, quota_given = [], False
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise UsageError(f"config: network.slices[{i}] must be a mapping")
        for key in entry:
            if key not in SLICE_KEYS:
                raise UsageError(f"config: unknown key network.slices[{i}].{key}")
        if "service" not in entry or "num_ues" not in entry:
            raise UsageError(
                f"config: network.slices[{i}] needs service and num_ues")
        quota_given = quota_given or "prb_quota" in entry
        row = {"packet_bits": 12000.0, "min_rate": 0.0, "max_delay": None,
               "power_cap_dbm": None, "prb_quota": 0}
        row.update(entry)
        out.append(row)
    if not quota_given:
        # no explicit PRB partition: split proportionally to UE counts
        counts = [s["num_ues"] for s in out]
        total_ues = sum(counts)
        weights = [c / total_ues for c in counts] if total_ues else \
            [1.0 / len(out)] * len(out)
        for s, q in zip(out, proportional_quotas(total_prbs, weights)):
            s["prb_quota"] = q
    return out


def load_config(path) -> dict:
    """Read a YAML experiment file and resolve every default."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise UsageError(f"config: cannot read {path}: {e.strerror or e}")
    except yaml.YAMLError as e:
        raise UsageError(f"config: {path} is not valid YAML: {e}")
    if not isinstance(raw, dict):
        raise UsageError(f"config: {path} must contain a mapping")
    base = default_config()
    for section in raw:
        if section not in base:
            raise UsageError(f"config: unknown section {section!r}")
    resolved = {}
    for section, defaults in base.items():
        resolved[section] = _merge_section(section, defaults,
                                           raw.get(section))
    net = resolved["network"]
    net["slices"] = _resolve_slices(net["slices"], int(net["total_prbs"]))
    try:
        config_from_dict(net)   # fail fast with the library's diagnostics
    except (ConfigError, TypeError) as e:
        raise UsageError(f"config: {e}")
    return resolved


def run_digest(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _train_config(resolved: dict, episodes=None) -> TrainConfig:
    d = dict(resolved["train"])
    d["hidden"] = tuple(int(h) for h in d["hidden"])
    if episodes is not None:
        d["episodes"] = episodes
    try:
        return TrainConfig(**d)
    except TypeError as e:
        raise UsageError(f"config: train section: {e}")


def _dqn_config(resolved: dict, episodes=None) -> DqnConfig:
    d = dict(resolved["dqn"])
    d["hidden"] = tuple(int(h) for h in d["hidden"])
    if episodes is not None:
        d["episodes"] = episodes
    try:
        return DqnConfig(**d)
    except TypeError as e:
        raise UsageError(f"config: dqn section: {e}")


def _build_env(resolved: dict, config, seed: int) -> SliceEnv:
    envd, rw = resolved["env"], resolved["reward"]
    return SliceEnv(config,
                    episode_len=int(envd["episode_len"]),
                    seed=seed,
                    weights=RewardWeights(rate=float(rw["rate"]),
                                          violation=float(rw["violation"]),
                                          bias=float(rw["bias"])),
                    uniform_power=bool(envd["uniform_power"]),
                    power_obs_levels=int(envd["power_obs_levels"]))


# ---------------------------------------------------------------------------
# deterministic output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, schema: str, digest: str, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema={schema} config={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_manifest(path, command: str, resolved: dict, digest: str,
                   extra: dict) -> None:
    body = {
        "command": command,
        "config": resolved,
        "config_digest": digest,
        "versions": {"oranslice": __version__,
                     "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    body.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    resolved = load_config(args.config)
    digest = run_digest(resolved)
    config = config_from_dict(resolved["network"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    env = _build_env(resolved, config, args.seed)

    payload = {
        "kind": "policy-checkpoint",
        "agent": args.agent,
        "config_digest": digest,
        "network": resolved["network"],
        "env": resolved["env"],
        "reward": resolved["reward"],
        "state_dim": env.state_dim,
        "action_dim": env.action_dim,
        "seed": args.seed,
    }
    if args.agent == "diffusion":
        cfg = _train_config(resolved, episodes=args.episodes)
        result = train(env, cfg, seed=args.seed)
        payload["train"] = {**resolved["train"], "episodes": cfg.episodes}
        payload["policy"] = result.policy.state_dict()
        payload["critic1"] = result.critic1.state_dict()
        payload["critic2"] = result.critic2.state_dict()
    else:
        cfg = _dqn_config(resolved, episodes=args.episodes)
        result = train_dqn(env, cfg, seed=args.seed)
        payload["dqn"] = {**resolved["dqn"], "episodes": cfg.episodes}
        payload["net"] = result.net.state_dict()
    rewards = result.episode_rewards

    save_checkpoint(out / "checkpoint.npz", payload)
    write_csv(out / "learning_curve.csv", SCHEMA_CURVE, digest,
              ["episode", "reward"],
              [[i, r] for i, r in enumerate(rewards)])
    outputs = ["checkpoint.npz", "learning_curve.csv", "manifest.json"]
    if rewards.size:
        save_learning_curve(out / "learning_curve.png",
                            {args.agent: rewards})
        outputs.append("learning_curve.png")
    write_manifest(out / "manifest.json", "train", resolved, digest,
                   {"agent": args.agent, "seed": args.seed,
                    "episodes": int(rewards.size),
                    "network_digest": config_digest(config),
                    "outputs": sorted(outputs)})
    print(f"trained {args.agent} for {rewards.size} episodes -> {out}")
    return 0


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def _check_ceiling(config, esa_cfg, limit: int) -> int:
    predicted = predicted_count(config, esa_cfg)
    if predicted > limit:
        raise UsageError(
            f"instance too large for exhaustive search: {predicted} "
            f"allocations to evaluate exceeds the limit {limit}; shrink "
            "the scenario or raise esa.max_enumeration")
    return predicted


def cmd_oracle(args) -> int:
    resolved = load_config(args.config)
    config = config_from_dict(resolved["network"])
    esa_cfg = EsaConfig(power_levels=int(resolved["esa"]["power_levels"]))
    predicted = _check_ceiling(config, esa_cfg,
                               int(resolved["esa"]["max_enumeration"]))
    if args.instances < 0:
        raise UsageError("--instances must be >= 0")
    seeds = [] if args.instances == 0 else \
        [int(s) for s in
         np.random.SeedSequence(args.seed).generate_state(args.instances)]
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    header = write_dataset(out, config, esa_cfg, seeds, workers=_workers())
    print(f"wrote {header['count']} oracle records "
          f"({predicted} allocations per instance) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _policy_from_checkpoint(path, config, state_dim: int, action_dim: int,
                            eval_seed: int):
    try:
        ck = load_checkpoint(path)
    except OSError as e:
        raise UsageError(f"cannot read checkpoint {path}: {e.strerror or e}")
    if ck.get("kind") != "policy-checkpoint":
        raise UsageError(f"{path} is not a policy checkpoint")
    if (int(ck["state_dim"]), int(ck["action_dim"])) != (state_dim, action_dim):
        raise UsageError(
            f"checkpoint shapes (state {ck['state_dim']}, action "
            f"{ck['action_dim']}) do not match the dataset scenario "
            f"(state {state_dim}, action {action_dim})")
    agent = ck["agent"]
    if agent == "diffusion":
        tr = dict(ck["train"])
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        tr["hidden"] = tuple(tr.get("hidden", TrainConfig.hidden))
        cfg = TrainConfig(**{k: v for k, v in tr.items() if k in known})
        result = TrainResult(
            episode_rewards=np.zeros(0),
            policy=DenseNet.from_state(ck["policy"]),
            critic1=DenseNet.from_state(ck["critic1"]),
            critic2=DenseNet.from_state(ck["critic2"]),
            schedule=build_schedule(cfg.diffusion_steps, cfg.beta_start,
                                    cfg.beta_end))
        return "diffusion", diffusion_policy_fn(result, cfg, state_dim,
                                                seed=eval_seed)
    if agent == "dqn":
        result = DqnResult(episode_rewards=np.zeros(0),
                           net=DenseNet.from_state(ck["net"]),
                           catalog=build_catalog(config))
        return "dqn", dqn_policy_fn(result, config)
    raise UsageError(f"unknown agent kind {agent!r} in {path}")


def cmd_evaluate(args) -> int:
    try:
        header, records = load_dataset(args.dataset)
    except OSError as e:
        raise UsageError(f"cannot read dataset {args.dataset}: "
                         f"{e.strerror or e}")
    except ValueError as e:
        raise UsageError(str(e))
    if not records:
        raise UsageError(f"{args.dataset} has no oracle records")
    config = config_from_dict(header["config"])
    state_dim = config.num_ues + config.num_rus
    action_dim = layout_for(config).dim

    if args.random_policy:
        rng = np.random.default_rng(args.eval_seed)
        label = "random"

        def policy_fn(state):
            return rng.uniform(-1.0, 1.0, action_dim)
    else:
        if not args.checkpoint:
            raise UsageError("evaluate needs --checkpoint or --random-policy")
        label, policy_fn = _policy_from_checkpoint(
            args.checkpoint, config, state_dim, action_dim, args.eval_seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs, rows = [], []
    for rec in records:
        alloc = rollout_on_instance(policy_fn, config, int(rec["seed"]),
                                    steps=args.steps)
        ref = record_to_alloc(rec, config)
        pairs.append((alloc, ref))
        pv, rv = alloc_to_vector(alloc, config), alloc_to_vector(ref, config)
        _, _, chan = draw_instance(config, int(rec["seed"]))
        rows.append([rec["instance"], rec["seed"], mae(pv, rv), r2(rv, pv),
                     cosine_similarity(pv, rv), baep(alloc, ref, config),
                     rate_total(alloc, chan, config), rec["objective"]])
    report = aggregate_report(pairs, config)

    digest = config_digest(config)
    write_csv(out / "evaluation.csv", SCHEMA_EVAL, digest,
              ["instance", "seed", "mae", "r2", "cosine", "baep",
               "policy_throughput", "oracle_throughput"], rows)
    write_csv(out / "summary.csv", SCHEMA_SUMMARY, digest,
              ["policy", "n", "mae", "r2", "cosine", "baep"],
              [[label, report["n"], report["mae"], report["r2"],
                report["cosine"], report["baep"]]])
    save_metric_bars(out / "metrics.png", {label: report},
                     metrics=("mae", "r2", "cosine", "baep"))
    write_manifest(out / "manifest.json", "evaluate",
                   {"network": header["config"]}, digest,
                   {"policy": label, "dataset": str(args.dataset),
                    "eval_seed": args.eval_seed, "steps": args.steps,
                    "aggregate": report,
                    "outputs": ["evaluation.csv", "manifest.json",
                                "metrics.png", "summary.csv"]})
    print(f"{label}: mae={report['mae']:.4f} r2={report['r2']:.4f} "
          f"cosine={report['cosine']:.4f} baep={report['baep']:.2f}% "
          f"on {report['n']} instances -> {out}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _scaled_ue_counts(base_counts, total: int) -> list:
    weight_sum = sum(base_counts)
    weights = [c / weight_sum for c in base_counts] if weight_sum else \
        [1.0 / len(base_counts)] * len(base_counts)
    return list(proportional_quotas(total, weights))


def _apply_sweep(network: dict, var: str, value: float) -> dict:
    net = json.loads(json.dumps(network))   # deep copy, JSON types only
    if var == "num_ues":
        total = int(value)
        if total < 1:
            raise UsageError("num_ues sweep points must be >= 1")
        counts = _scaled_ue_counts([s["num_ues"] for s in net["slices"]],
                                   total)
        for s, c in zip(net["slices"], counts):
            s["num_ues"] = c
    elif var == "ru_power":
        net["ru_max_power_dbm"] = float(value)
    elif var == "slice_power":
        for s in net["slices"]:
            s["power_cap_dbm"] = float(value)
    elif var == "interference_power":
        net["interference_power_dbm"] = float(value)
    else:
        raise UsageError(f"unknown sweep variable {var!r}; "
                         f"expected one of {SWEEP_VARS}")
    return net


def _parse_list(text, kind, what):
    try:
        vals = [kind(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} list {text!r}")
    return vals


def cmd_sweep(args) -> int:
    resolved = load_config(args.config)
    digest = run_digest(resolved)
    seeds = _parse_list(args.seeds, int, "seed")
    if not seeds:
        raise UsageError("sweep needs at least one seed")
    points = _parse_list(args.points, float, "point")
    if not points:
        raise UsageError("sweep needs at least one point")
    esa_cfg = EsaConfig(power_levels=int(resolved["esa"]["power_levels"]))
    limit = int(resolved["esa"]["max_enumeration"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    n_slices = len(resolved["network"]["slices"])
    columns = ["sweep", "value", "seed", "esa_feasible", "esa_violation",
               "esa_throughput"] + [f"esa_rate_s{i}" for i in range(n_slices)]
    if args.train:
        columns += ["agent_throughput"]
    rows, mean_esa, mean_agent = [], [], []
    for value in points:
        net = _apply_sweep(resolved["network"], args.sweep, value)
        config = config_from_dict(net)
        _check_ceiling(config, esa_cfg, limit)
        agent_fn = None
        if args.train:
            env = _build_env(resolved, config, args.train_seed)
            cfg = _train_config(resolved, episodes=args.episodes)
            result = train(env, cfg, seed=args.train_seed)
            agent_fn = diffusion_policy_fn(result, cfg, env.state_dim,
                                           seed=args.eval_seed)
        esa_vals, agent_vals = [], []
        for seed in seeds:
            _, _, chan = draw_instance(config, seed)
            res = esa_search(config, chan, esa_cfg)
            m = link_metrics(res.alloc, chan, config)
            per_slice = [float(x) for x in m.rate_slice]
            row = [args.sweep, value, seed, res.feasible, res.violation,
                   res.objective] + per_slice
            esa_vals.append(res.objective)
            if agent_fn is not None:
                alloc = rollout_on_instance(agent_fn, config, seed,
                                            steps=args.steps)
                thr = rate_total(alloc, chan, config)
                row.append(thr)
                agent_vals.append(thr)
            rows.append(row)
        mean_esa.append(float(np.mean(esa_vals)))
        if agent_vals:
            mean_agent.append(float(np.mean(agent_vals)))

    name = f"sweep_{args.sweep}"
    write_csv(out / f"{name}.csv", SCHEMA_SWEEP, digest, columns, rows)
    series = {"esa": mean_esa}
    if mean_agent:
        series["diffusion"] = mean_agent
    save_sweep_curve(out / f"{name}.png", points, series,
                     xlabel=args.sweep, ylabel="throughput (bit/s)")
    write_manifest(out / "manifest.json", "sweep", resolved, digest,
                   {"sweep": args.sweep, "points": points, "seeds": seeds,
                    "trained": bool(args.train),
                    "outputs": [f"{name}.csv", f"{name}.png",
                                "manifest.json"]})
    print(f"swept {args.sweep} over {points} x {len(seeds)} seeds -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oranslice",
                description="O-RAN slicing simulator and RL harness")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent and save artifacts")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--agent", choices=("diffusion", "dqn"),
                   default="diffusion")
    t.add_argument("--episodes", type=int, default=None,
                   help="override the configured episode count")
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("oracle", help="write an exhaustive-search dataset")
    o.add_argument("--config", required=True)
    o.add_argument("--instances", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("evaluate", help="score a policy against oracle labels")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--random-policy", action="store_true",
                   help="evaluate a uniform-random policy instead")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--eval-seed", type=int, default=0)
    e.add_argument("--steps", type=int, default=4,
                   help="feedback rounds per instance")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="sweep one scenario variable")
    s.add_argument("--config", required=True)
    s.add_argument("--sweep", required=True, choices=SWEEP_VARS)
    s.add_argument("--points", required=True,
                   help="comma-separated sweep values")
    s.add_argument("--seeds", required=True,
                   help="comma-separated instance seeds")
    s.add_argument("--out", required=True)
    s.add_argument("--train", action="store_true",
                   help="also train one agent per sweep point")
    s.add_argument("--train-seed", type=int, default=0)
    s.add_argument("--eval-seed", type=int, default=0)
    s.add_argument("--episodes", type=int, default=None)
    s.add_argument("--steps", type=int, default=4)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:  # runtime failure contract
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
