"""Conditional denoising-diffusion machinery for action generation.

The action is treated as the diffusion variable. A forward process
gradually mixes unit Gaussian noise into a clean action a0 over T
steps; a noise-prediction net learns to invert it, conditioned on the
environment state. Sampling runs the learned reverse chain from pure
noise, optionally nudging each step mean along a critic's action
gradient (weighted by the per-step posterior variance, so the nudge
fades to zero at the final step).

Step indices t run 1..T. For step t:

    a_t = sqrt(abar_t) a0 + sqrt(1 - abar_t) eps,  abar_t = prod alpha_i
    mu(a_t) = (a_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
    a_{t-1} = mu + w * sigma2_t * q_grad + sqrt(sigma2_t) * z

with sigma2_t = beta_t (1 - abar_{t-1}) / (1 - abar_t) and abar_0 = 1,
hence sigma2_1 = 0 and the last step is deterministic.

`chain_backward` differentiates a scalar loss on a0 through the whole
unrolled reverse chain with respect to the net parameters. The
guidance displacement is held constant during that backward pass; only
the denoiser invocations carry gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet, time_embedding

TIME_EMBED_DIM = 16


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step constants; index with integer t in 1..T."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bars_prev: np.ndarray
    sigma2: np.ndarray          # posterior variance of each reverse step
    T: int

    def __post_init__(self):
        for a in (self.betas, self.alphas, self.alpha_bars,
                  self.alpha_bars_prev, self.sigma2):
            a.flags.writeable = False

    def _at(self, arr, t):
        idx = np.asarray(t) - 1
        if np.any(idx < 0) or np.any(idx >= self.T):
            raise IndexError(f"step index out of range 1..{self.T}")
        return arr[idx]

    def beta(self, t):
        return self._at(self.betas, t)

    def alpha(self, t):
        return self._at(self.alphas, t)

    def alpha_bar(self, t):
        return self._at(self.alpha_bars, t)

    def alpha_bar_prev(self, t):
        return self._at(self.alpha_bars_prev, t)

    def sigma2_at(self, t):
        return self._at(self.sigma2, t)


def build_schedule(T: int = 20, beta_start: float = 1e-4,
                   beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear beta schedule; endpoints are hit exactly."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 \
        else np.array([beta_end])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigma2 = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         alpha_bars_prev=alpha_bars_prev, sigma2=sigma2, T=T)


def make_denoiser(act_dim: int, state_dim: int, hidden=(128, 128, 128),
                  activation: str = "mish", rng=None) -> DenseNet:
    """Noise-prediction net over [a_t, time embedding, state]."""
    sizes = [act_dim + TIME_EMBED_DIM + state_dim, *hidden, act_dim]
    return DenseNet(sizes, activation=activation, rng=rng)


def _stack_inputs(a_t: np.ndarray, t, state: np.ndarray) -> np.ndarray:
    a_t = np.atleast_2d(a_t)
    state = np.atleast_2d(state)
    n = a_t.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    emb = time_embedding(t_arr, TIME_EMBED_DIM)
    if state.shape[0] == 1 and n > 1:
        state = np.broadcast_to(state, (n, state.shape[1]))
    return np.concatenate([a_t, emb, state], axis=1)


def predict_eps(net: DenseNet, a_t, t, state) -> np.ndarray:
    """eps_hat(a_t, t, state); keeps the caller's 1-D/2-D shape."""
    single = np.asarray(a_t).ndim == 1
    out = net.forward(_stack_inputs(a_t, t, state))
    return out[0] if single else out


def predict_eps_cached(net: DenseNet, a_t, t, state):
    out, cache = net.forward_cached(_stack_inputs(a_t, t, state))
    return out, cache


# ---------------------------------------------------------------------------
# forward process and training loss
# ---------------------------------------------------------------------------

def forward_sample(sched: NoiseSchedule, a0: np.ndarray, t, *,
                   eps: np.ndarray | None = None, rng=None):
    """Draw a_t | a0 for per-sample steps t; returns (a_t, eps)."""
    a0 = np.asarray(a0, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(a0.shape)
    ab = np.asarray(sched.alpha_bar(t), dtype=np.float64)
    ab = ab.reshape((-1,) + (1,) * (a0.ndim - 1)) if a0.ndim > 1 else ab
    a_t = np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps
    return a_t, eps


def denoise_loss(net: DenseNet, sched: NoiseSchedule, a0: np.ndarray,
                 state: np.ndarray, *, t=None, eps=None, rng=None):
    """Mean squared noise-prediction error and its parameter gradients.

    Loss = mean over the batch of |eps - eps_hat|^2 (summed over action
    dims). Steps t and noise eps are drawn uniformly when not given.
    """
    a0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
    state = np.atleast_2d(state)
    n = a0.shape[0]
    if t is None:
        t = rng.integers(1, sched.T + 1, size=n)
    t = np.broadcast_to(np.asarray(t), (n,))
    a_t, eps = forward_sample(sched, a0, t, eps=eps, rng=rng)
    pred, cache = predict_eps_cached(net, a_t, t, state)
    diff = pred - eps
    loss = float(np.sum(diff * diff) / n)
    grads, _ = net.backward(cache, 2.0 * diff / n)
    return loss, grads


# ---------------------------------------------------------------------------
# reverse process
# ---------------------------------------------------------------------------

def reverse_mean(net: DenseNet, sched: NoiseSchedule, a_t, t, state,
                 *, eps=None):
    """Unguided posterior mean mu(a_t, t); eps may be precomputed."""
    if eps is None:
        eps = predict_eps(net, a_t, t, state)
    beta = sched.beta(t)
    coef = beta / np.sqrt(1.0 - sched.alpha_bar(t))
    return (a_t - coef * eps) / np.sqrt(sched.alpha(t))


def reverse_step(net: DenseNet, sched: NoiseSchedule, a_t, t: int, state, *,
                 rng=None, z=None, q_grad=None, w: float = 0.0):
    """One reverse transition a_t -> a_{t-1} for a whole batch at step t.

    q_grad(state, a_t) -> dQ/da supplies guidance; its displacement is
    w * sigma2_t * q_grad. The noise term vanishes at t = 1 because
    sigma2_1 = 0, so no z is consumed there.
    """
    mu = reverse_mean(net, sched, a_t, t, state)
    s2 = float(sched.sigma2_at(t))
    if q_grad is not None and w != 0.0:
        mu = mu + (w * s2) * q_grad(state, a_t)
    if t > 1:
        if z is None:
            z = rng.standard_normal(np.shape(mu))
        return mu + np.sqrt(s2) * z
    return mu


def sample_action(net: DenseNet, sched: NoiseSchedule, state, *, rng,
                  q_grad=None, w: float = 0.0, clip: bool = True):
    """Run the full reverse chain from unit noise; clips into [-1, 1]."""
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    st = np.atleast_2d(state)
    act_dim = net.sizes[-1]
    a = rng.standard_normal((st.shape[0], act_dim))
    for t in range(sched.T, 0, -1):
        a = reverse_step(net, sched, a, t, st, rng=rng, q_grad=q_grad, w=w)
    if clip:
        a = np.clip(a, -1.0, 1.0)
    return a[0] if single else a


def sample_action_tape(net: DenseNet, sched: NoiseSchedule, state, *, rng,
                       q_grad=None, w: float = 0.0):
    """sample_action that records everything chain_backward needs.

    Returns (a0_clipped, tape). The tape stores, per step, the net
    cache of the denoiser call; clipping happens at the very end and
    its mask is recorded too.
    """
    st = np.atleast_2d(np.asarray(state, dtype=np.float64))
    act_dim = net.sizes[-1]
    a = rng.standard_normal((st.shape[0], act_dim))
    steps = []
    for t in range(sched.T, 0, -1):
        eps, cache = predict_eps_cached(net, a, t, st)
        beta = float(sched.beta(t))
        coef = beta / np.sqrt(1.0 - float(sched.alpha_bar(t)))
        mu = (a - coef * eps) / np.sqrt(float(sched.alpha(t)))
        s2 = float(sched.sigma2_at(t))
        if q_grad is not None and w != 0.0:
            mu = mu + (w * s2) * q_grad(st, a)
        steps.append((t, cache))
        a = mu + np.sqrt(s2) * rng.standard_normal(mu.shape) if t > 1 else mu
    a0_raw = a
    a0 = np.clip(a0_raw, -1.0, 1.0)
    tape = {"steps": steps, "clip_mask": (np.abs(a0_raw) < 1.0),
            "a0": a0, "a0_raw": a0_raw}
    return a0, tape


def chain_backward(net: DenseNet, sched: NoiseSchedule, tape, grad_a0):
    """Backprop d(loss)/d(a0) through the recorded reverse chain.

    Returns parameter gradients (summed over the batch and all steps)
    ordered like net.params. Guidance displacements recorded on the
    tape are constants here by construction.
    """
    act_dim = net.sizes[-1]
    g = np.asarray(grad_a0, dtype=np.float64) * tape["clip_mask"]
    total = [np.zeros_like(p) for p in net.params]
    for t, cache in reversed(tape["steps"]):
        inv_sqrt_alpha = 1.0 / np.sqrt(float(sched.alpha(t)))
        coef = float(sched.beta(t)) / np.sqrt(1.0 - float(sched.alpha_bar(t)))
        # a_{t-1} = (a_t - coef * eps(a_t)) / sqrt(alpha_t) + const
        upstream = (-inv_sqrt_alpha * coef) * g
        grads, gin = net.backward(cache, upstream)
        for acc, gr in zip(total, grads):
            acc += gr
        g = inv_sqrt_alpha * g + gin[:, :act_dim]
    return total
