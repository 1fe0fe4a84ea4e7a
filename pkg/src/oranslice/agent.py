"""RL agents for the slicing environment.

Two learners share the environment:

- a diffusion-policy actor-critic: the policy is the reverse diffusion
  chain (see diffusion.py), trained by a behavior-cloning denoising
  loss on replayed actions minus a critic-value term whose weight is
  renormalized by the batch's mean |Q|; twin critics with target
  copies supply TD targets from target-policy samples, and the critic's
  action gradient steers every sampling chain;

- a per-PRB value learner: each environment step is factored into one
  discrete decision per PRB (serve nobody, or pick a UE/RU/power level
  from a catalog), scored by a masked value net; the K decisions are
  then recombined into the same continuous action vector the
  environment projects, so both agents are measured on identical
  ground.

A uniform-random actor rounds out the set as the floor baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import (
    NoiseSchedule,
    build_schedule,
    chain_backward,
    denoise_loss,
    make_denoiser,
    sample_action,
    sample_action_tape,
)
from .env import SliceEnv, encode_state, layout_for, project_action
from .network import NetworkConfig, draw_instance, link_metrics
from .nn import Adam, DenseNet, soft_update


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Flat circular buffer of transitions on preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self._n = 0
        self._head = 0

    def __len__(self):
        return self._n

    def add(self, s, a, r, s2, done) -> None:
        i = self._head
        self.state[i] = s
        self.action[i] = a
        self.reward[i] = r
        self.next_state[i] = s2
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, batch: int, rng) -> dict:
        idx = rng.integers(0, self._n, size=batch)
        return {
            "state": self.state[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "next_state": self.next_state[idx],
            "done": self.done[idx],
        }


# ---------------------------------------------------------------------------
# critics
# ---------------------------------------------------------------------------

def make_critic(state_dim: int, action_dim: int, hidden=(128, 128, 128),
                activation: str = "mish", rng=None) -> DenseNet:
    return DenseNet([state_dim + action_dim, *hidden, 1],
                    activation=activation, rng=rng)


def q_value(critic: DenseNet, state: np.ndarray, action: np.ndarray):
    x = np.concatenate([np.atleast_2d(state), np.atleast_2d(action)], axis=1)
    return critic.forward(x)[:, 0]


def make_q_guidance(critic: DenseNet, state_dim: int):
    """dQ/da as a callable(state, action) for guided sampling."""

    def grad(state, action):
        st = np.atleast_2d(state)
        ac = np.atleast_2d(action)
        x = np.concatenate([st, ac], axis=1)
        out, cache = critic.forward_cached(x)
        _, gin = critic.backward(cache, np.ones_like(out))
        return gin[:, state_dim:]

    return grad


# ---------------------------------------------------------------------------
# diffusion-policy training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    episodes: int = 300
    steps_per_episode: int | None = None   # None: the env's own length
    batch_size: int = 128
    buffer_capacity: int = 200_000
    warmup_steps: int = 256
    update_every: int = 1
    gamma: float = 0.98
    rho: float = 0.005                     # target blend fraction per update
    lr_policy: float = 1e-4
    lr_critic: float = 3e-4
    hidden: tuple = (128, 128, 128)
    activation: str = "mish"
    diffusion_steps: int = 20
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    guidance_weight: float = 1.2
    guidance_in_training: bool = True
    guidance_in_eval: bool = True
    eval_candidates: int = 8               # sampled actions ranked per greedy act
    lambda0: float = 1.0                   # critic-term weight before |Q| norm


@dataclass
class TrainResult:
    episode_rewards: np.ndarray
    policy: DenseNet
    critic1: DenseNet
    critic2: DenseNet
    schedule: NoiseSchedule
    diagnostics: dict = field(default_factory=dict)


def td_target(batch: dict, policy_t: DenseNet, q1_t: DenseNet, q2_t: DenseNet,
              sched: NoiseSchedule, cfg: TrainConfig, rng,
              state_dim: int) -> np.ndarray:
    """r + gamma (1 - done) min_i Q'_i(s', a'), a' from the target policy."""
    guidance = make_q_guidance(q1_t, state_dim) if cfg.guidance_in_training \
        else None
    a2 = sample_action(policy_t, sched, batch["next_state"], rng=rng,
                       q_grad=guidance, w=cfg.guidance_weight)
    q1 = q_value(q1_t, batch["next_state"], a2)
    q2 = q_value(q2_t, batch["next_state"], a2)
    return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) \
        * np.minimum(q1, q2)


def critic_update(batch: dict, y: np.ndarray, q1: DenseNet, q2: DenseNet,
                  opt1: Adam, opt2: Adam) -> float:
    """One MSE step on both critics; returns the summed loss."""
    x = np.concatenate([batch["state"], batch["action"]], axis=1)
    n = x.shape[0]
    loss = 0.0
    for net, opt in ((q1, opt1), (q2, opt2)):
        out, cache = net.forward_cached(x)
        diff = out[:, 0] - y
        loss += float(np.mean(diff * diff))
        grads, _ = net.backward(cache, (2.0 * diff / n)[:, None])
        opt.step(grads)
    return loss


def policy_update(batch: dict, policy: DenseNet, q1: DenseNet, opt: Adam,
                  sched: NoiseSchedule, cfg: TrainConfig, rng,
                  state_dim: int) -> dict:
    """Denoising loss on replayed actions minus the critic value term.

    The value term's weight is lambda0 / mean|Q(s, a0)| computed on the
    freshly sampled batch, so the two loss parts stay on comparable
    scales as Q grows.
    """
    states = batch["state"]
    n = states.shape[0]
    guidance = make_q_guidance(q1, state_dim) if cfg.guidance_in_training \
        else None
    a0, tape = sample_action_tape(policy, sched, states, rng=rng,
                                  q_grad=guidance, w=cfg.guidance_weight)
    x = np.concatenate([states, a0], axis=1)
    q, qcache = q1.forward_cached(x)
    lam = cfg.lambda0 / (float(np.mean(np.abs(q))) + 1e-8)
    # d(-lam * mean Q)/d a0, holding the critic fixed
    _, gin = q1.backward(qcache, np.full_like(q, -lam / n))
    value_grads = chain_backward(policy, sched, tape, gin[:, state_dim:])

    bc_loss, bc_grads = denoise_loss(policy, sched, batch["action"], states,
                                     rng=rng)
    opt.step([b + v for b, v in zip(bc_grads, value_grads)])
    return {"bc_loss": bc_loss, "q_mean": float(np.mean(q)), "lambda": lam}


def train(env: SliceEnv, cfg: TrainConfig = TrainConfig(), seed: int = 0,
          on_episode=None) -> TrainResult:
    """Train the diffusion policy on the given environment."""
    ss = np.random.SeedSequence(seed)
    init_rng, act_rng, batch_rng, train_rng = \
        (np.random.default_rng(s) for s in ss.spawn(4))
    sd, ad = env.state_dim, env.action_dim
    sched = build_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)

    policy = make_denoiser(ad, sd, hidden=cfg.hidden,
                           activation=cfg.activation, rng=init_rng)
    q1 = make_critic(sd, ad, cfg.hidden, cfg.activation, init_rng)
    q2 = make_critic(sd, ad, cfg.hidden, cfg.activation, init_rng)
    policy_t, q1_t, q2_t = policy.copy(), q1.copy(), q2.copy()
    opt_p = Adam(policy.params, lr=cfg.lr_policy)
    opt_1 = Adam(q1.params, lr=cfg.lr_critic)
    opt_2 = Adam(q2.params, lr=cfg.lr_critic)

    buffer = ReplayBuffer(cfg.buffer_capacity, sd, ad)
    steps_per_ep = cfg.steps_per_episode or env.episode_len
    rewards = np.zeros(cfg.episodes)
    total_steps = 0
    for ep in range(cfg.episodes):
        state = env.reset()
        ep_reward = 0.0
        for _ in range(steps_per_ep):
            if total_steps < cfg.warmup_steps:
                action = act_rng.uniform(-1.0, 1.0, ad)
            else:
                guidance = make_q_guidance(q1, sd) \
                    if cfg.guidance_in_training else None
                action = sample_action(policy, sched, state, rng=act_rng,
                                       q_grad=guidance,
                                       w=cfg.guidance_weight)
            nstate, reward, done, _ = env.step(action)
            buffer.add(state, action, reward, nstate, done)
            state = nstate
            ep_reward += reward
            total_steps += 1
            if len(buffer) >= max(cfg.batch_size, cfg.warmup_steps) \
                    and total_steps % cfg.update_every == 0:
                batch = buffer.sample(cfg.batch_size, batch_rng)
                y = td_target(batch, policy_t, q1_t, q2_t, sched, cfg,
                              train_rng, sd)
                critic_update(batch, y, q1, q2, opt_1, opt_2)
                policy_update(batch, policy, q1, opt_p, sched, cfg,
                              train_rng, sd)
                soft_update(policy_t, policy, 1.0 - cfg.rho)
                soft_update(q1_t, q1, 1.0 - cfg.rho)
                soft_update(q2_t, q2, 1.0 - cfg.rho)
            if done:
                break
        rewards[ep] = ep_reward
        if on_episode is not None:
            on_episode(ep, ep_reward)
    return TrainResult(episode_rewards=rewards, policy=policy,
                       critic1=q1, critic2=q2, schedule=sched,
                       diagnostics={"total_steps": total_steps})


def diffusion_policy_fn(result: TrainResult, cfg: TrainConfig,
                        state_dim: int, seed: int = 0):
    """Deterministic-seeded greedy policy closure for evaluation.

    Draws cfg.eval_candidates reverse-chain samples per state (as one
    batch, rows differing only in noise) and returns the one the first
    critic scores highest. A single reverse-chain sample is spread over
    every near-optimal mode the policy has learned; ranking a small
    pool by Q collapses that spread without retraining anything.
    eval_candidates = 1 recovers plain single-sample acting.
    """
    rng = np.random.default_rng(seed)
    guidance = make_q_guidance(result.critic1, state_dim) \
        if cfg.guidance_in_eval else None
    n = max(1, cfg.eval_candidates)

    def act(state):
        st = np.repeat(np.atleast_2d(state), n, axis=0)
        cands = sample_action(result.policy, result.schedule, st, rng=rng,
                              q_grad=guidance, w=cfg.guidance_weight)
        if n == 1:
            return cands[0]
        q = q_value(result.critic1, st, cands)
        return cands[int(np.argmax(q))]

    return act


def run_random(env: SliceEnv, episodes: int, seed: int = 0) -> np.ndarray:
    """Uniform-random actor; the floor every learner must beat."""
    rng = np.random.default_rng(seed)
    out = np.zeros(episodes)
    for ep in range(episodes):
        env.reset()
        total, done = 0.0, False
        while not done:
            _, r, done, _ = env.step(rng.uniform(-1.0, 1.0, env.action_dim))
            total += r
        out[ep] = total
    return out


# ---------------------------------------------------------------------------
# per-PRB value learner
# ---------------------------------------------------------------------------

POWER_LEVELS_DQN = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Catalog:
    """Discrete micro-action set: skip, or (ue, ru, power level)."""

    entries: tuple   # entry 0 is "skip"; others are (u, r, level_fraction)

    @property
    def size(self) -> int:
        return len(self.entries)


def build_catalog(config: NetworkConfig) -> Catalog:
    entries = [None]
    for u in range(config.num_ues):
        for r in range(config.num_rus):
            for lv in POWER_LEVELS_DQN:
                entries.append((u, r, lv))
    return Catalog(entries=tuple(entries))


def valid_mask(config: NetworkConfig, catalog: Catalog, k: int,
               chosen_ru: np.ndarray) -> np.ndarray:
    """Which catalog entries are legal for PRB k given earlier picks.

    A UE already serving PRBs at one RU may only appear again at that
    same RU; PRBs outside every quota admit only skip.
    """
    sl = config.ue_slice()
    owner = config.prb_slice()[k]
    mask = np.zeros(catalog.size, dtype=bool)
    mask[0] = True
    if owner < 0:
        return mask
    for i, entry in enumerate(catalog.entries[1:], start=1):
        u, r, _ = entry
        if sl[u] != owner:
            continue
        if chosen_ru[u] >= 0 and chosen_ru[u] != r:
            continue
        mask[i] = True
    return mask


def micro_state(env_state: np.ndarray, config: NetworkConfig, k: int,
                chosen_ru: np.ndarray) -> np.ndarray:
    """Value-net input: env observation, PRB progress, per-UE picks."""
    U = config.num_ues
    prog = np.array([k / config.total_prbs])
    assigned = (chosen_ru >= 0).astype(float)
    ru_norm = np.where(chosen_ru >= 0,
                       chosen_ru / max(config.num_rus - 1, 1), -1.0)
    return np.concatenate([env_state, prog, assigned, ru_norm])


def micro_state_dim(config: NetworkConfig, env_state_dim: int) -> int:
    return env_state_dim + 1 + 2 * config.num_ues


def compose_action(config: NetworkConfig, picks) -> np.ndarray:
    """Turn K per-PRB picks into the flat continuous action vector.

    picks[k] is None or (u, r, level). Power scores are set so the
    projection's fair-share mapping lands exactly on
    level * P_max / K for every lit PRB.
    """
    layout = layout_for(config)
    action = np.full(layout.dim, -1.0)
    assoc_s, prb_s, pow_s = layout.split(action)
    K = config.total_prbs
    n_lit = np.zeros(config.num_rus, dtype=int)
    for pick in picks:
        if pick is not None:
            n_lit[pick[1]] += 1
    for k, pick in enumerate(picks):
        if pick is None:
            continue
        u, r, lv = pick
        assoc_s[u, :] = -1.0
        assoc_s[u, r] = 1.0
        prb_s[u, k] = 1.0
        pow_s[u, k] = 2.0 * lv * n_lit[r] / K - 1.0
    return action


@dataclass
class DqnConfig:
    episodes: int = 300
    batch_size: int = 128
    buffer_capacity: int = 200_000
    warmup_steps: int = 512                # micro-steps before updates
    gamma: float = 0.98
    rho: float = 0.005
    lr: float = 3e-4
    hidden: tuple = (128, 128, 128)
    activation: str = "mish"
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal: float = 0.6                # fraction of episodes to anneal over


@dataclass
class DqnResult:
    episode_rewards: np.ndarray
    net: DenseNet
    catalog: Catalog
    diagnostics: dict = field(default_factory=dict)


class _MicroBuffer:
    """Replay over discrete micro-transitions, with next-step masks."""

    def __init__(self, capacity: int, state_dim: int, mask_dim: int):
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.next_mask = np.zeros((capacity, mask_dim), dtype=bool)
        self.done = np.zeros(capacity)
        self._n = 0
        self._head = 0

    def __len__(self):
        return self._n

    def add(self, s, a, r, s2, mask2, done):
        i = self._head
        self.state[i] = s
        self.action[i] = a
        self.reward[i] = r
        self.next_state[i] = s2
        self.next_mask[i] = mask2
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, batch: int, rng):
        idx = rng.integers(0, self._n, size=batch)
        return {k: getattr(self, k)[idx]
                for k in ("state", "action", "reward", "next_state",
                          "next_mask", "done")}


def _masked_argmax(qvals: np.ndarray, mask: np.ndarray) -> int:
    masked = np.where(mask, qvals, -np.inf)
    return int(np.argmax(masked))


def dqn_episode_picks(net: DenseNet, env_state, config: NetworkConfig,
                      catalog: Catalog, eps: float, rng):
    """Run the K per-PRB decisions for one env step.

    Returns (picks, trajectory) where trajectory holds the micro
    transitions minus rewards, to be finalized once the env reward for
    the composed action is known.
    """
    K = config.total_prbs
    chosen_ru = np.full(config.num_ues, -1, dtype=int)
    picks, traj = [], []
    s = micro_state(env_state, config, 0, chosen_ru)
    for k in range(K):
        mask = valid_mask(config, catalog, k, chosen_ru)
        if eps > 0.0 and rng.uniform() < eps:
            a_idx = int(rng.choice(np.nonzero(mask)[0]))
        else:
            a_idx = _masked_argmax(net.forward(s), mask)
        pick = catalog.entries[a_idx]
        picks.append(pick)
        if pick is not None:
            chosen_ru[pick[0]] = pick[1]
        last = k == K - 1
        s2 = micro_state(env_state, config, min(k + 1, K - 1) if not last
                         else K - 1, chosen_ru)
        mask2 = valid_mask(config, catalog, k + 1, chosen_ru) if not last \
            else np.zeros(catalog.size, dtype=bool)
        traj.append([s, a_idx, 0.0, s2, mask2, last])
        s = s2
    return picks, traj


def train_dqn(env: SliceEnv, cfg: DqnConfig = DqnConfig(),
              seed: int = 0, on_episode=None) -> DqnResult:
    """Train the per-PRB value learner on the environment."""
    ss = np.random.SeedSequence(seed)
    init_rng, act_rng, batch_rng = (np.random.default_rng(s)
                                    for s in ss.spawn(3))
    config = env.config
    catalog = build_catalog(config)
    msd = micro_state_dim(config, env.state_dim)
    net = DenseNet([msd, *cfg.hidden, catalog.size],
                   activation=cfg.activation, rng=init_rng)
    target = net.copy()
    opt = Adam(net.params, lr=cfg.lr)
    buffer = _MicroBuffer(cfg.buffer_capacity, msd, catalog.size)

    rewards = np.zeros(cfg.episodes)
    anneal = max(1, int(cfg.episodes * cfg.eps_anneal))
    micro_steps = 0
    for ep in range(cfg.episodes):
        eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) \
            * min(1.0, ep / anneal)
        state = env.reset()
        total, done = 0.0, False
        while not done:
            picks, traj = dqn_episode_picks(net, state, config, catalog,
                                            eps, act_rng)
            action = compose_action(config, picks)
            state, r, done, _ = env.step(action)
            traj[-1][2] = r  # env reward lands on the last micro-step
            for s, a, rr, s2, mask2, last in traj:
                buffer.add(s, a, rr, s2, mask2, last)
                micro_steps += 1
                if len(buffer) >= max(cfg.batch_size, cfg.warmup_steps):
                    batch = buffer.sample(cfg.batch_size, batch_rng)
                    _dqn_update(net, target, opt, batch, cfg)
                    soft_update(target, net, 1.0 - cfg.rho)
            total += r
        rewards[ep] = total
        if on_episode is not None:
            on_episode(ep, total)
    return DqnResult(episode_rewards=rewards, net=net, catalog=catalog,
                     diagnostics={"micro_steps": micro_steps})


def _dqn_update(net: DenseNet, target: DenseNet, opt: Adam, batch: dict,
                cfg: DqnConfig) -> float:
    qs, cache = net.forward_cached(batch["state"])
    n = qs.shape[0]
    idx = np.arange(n)
    chosen = qs[idx, batch["action"]]
    tq = target.forward(batch["next_state"])
    tq = np.where(batch["next_mask"], tq, -np.inf)
    best_next = np.max(tq, axis=1)
    best_next = np.where(np.isfinite(best_next), best_next, 0.0)
    y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * best_next
    diff = chosen - y
    grad_out = np.zeros_like(qs)
    grad_out[idx, batch["action"]] = 2.0 * diff / n
    grads, _ = net.backward(cache, grad_out)
    opt.step(grads)
    return float(np.mean(diff * diff))


def dqn_policy_fn(result: DqnResult, config: NetworkConfig):
    """Greedy composed-action policy closure for evaluation."""

    def act(state):
        picks, _ = dqn_episode_picks(result.net, state, config,
                                     result.catalog, eps=0.0,
                                     rng=np.random.default_rng(0))
        return compose_action(config, picks)

    return act


# ---------------------------------------------------------------------------
# instance evaluation
# ---------------------------------------------------------------------------

def rollout_on_instance(policy_fn, config: NetworkConfig, seed: int,
                        steps: int = 4, uniform_power: bool = False):
    """Run a policy on one frozen channel draw and return its final
    allocation.

    The channel stays fixed so the observed QoS feedback lets the
    policy settle on this specific instance; the allocation produced
    at the last step is the policy's answer for it.
    """
    _, _, chan = draw_instance(config, seed)
    state = encode_state(config)
    alloc = None
    for _ in range(steps):
        action = policy_fn(state)
        alloc = project_action(config, action, uniform_power=uniform_power)
        m = link_metrics(alloc, chan, config)
        state = encode_state(config, m, alloc)
    return alloc
