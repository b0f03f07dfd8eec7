"""Tanh-Gaussian actor, value critic, latent imagination and lambda-returns."""

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import constant, ops
from .nets import mlp, mlp_params
from .worldmodel import LatentState

HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)
MEAN_SCALE = 5.0


@dataclass
class ActionDistribution:
    """Pre-tanh Gaussian N(mean, std); actions are ``scale * tanh(sample)``."""

    mean: ops.Node  # (n, D_a)
    std: ops.Node
    scale: float


@dataclass
class ImaginedRollout:
    latents: list  # H+1 LatentStates, index 0 is the seed
    actions: list  # H nodes (n, D_a)
    dists: list  # H ActionDistributions, dists[i] taken at latents[i]
    rewards: ops.Node  # (n, H); rewards[:, i] predicted at latents[i+1]
    values: ops.Node  # (n, H+1)
    lambda_targets: ops.Node = None  # (n, H)
    entropies: ops.Node = None  # (n, H), filled by the soft variant

    @property
    def horizon(self):
        return len(self.actions)

    @property
    def batch_size(self):
        return self.rewards.shape[0]


class Policy:
    def __init__(self, feature_dim, act_dim, units=64, action_scale=1.0, std_floor=1e-4, init_std=5.0):
        if not init_std > std_floor:
            raise ValueError("init_std must exceed std_floor")
        self.feature_dim = feature_dim
        self.act_dim = act_dim
        self.units = units
        self.action_scale = action_scale
        self.std_floor = std_floor
        self.init_std = init_std

    def init_params(self, rng):
        p = mlp_params(rng, "pi", [self.feature_dim, self.units, self.units, 2 * self.act_dim])
        # start broad: the std output bias is the softplus inverse of init_std
        p["pi/2/b"][self.act_dim:] = np.log(np.expm1(self.init_std - self.std_floor))
        return p

    def distribution(self, p, latent):
        raw = mlp(p, "pi", latent.features(), 3)
        a = self.act_dim
        mean = MEAN_SCALE * ops.tanh(raw[:, :a] * (1.0 / MEAN_SCALE))
        std = ops.softplus(raw[:, a:]) + self.std_floor
        return ActionDistribution(mean, std, self.action_scale)


class ValueNet:
    def __init__(self, feature_dim, units=64):
        self.feature_dim = feature_dim
        self.units = units

    def init_params(self, rng):
        return mlp_params(rng, "v", [self.feature_dim, self.units, self.units, 1])

    def __call__(self, p, latent):
        return mlp(p, "v", latent.features(), 3)[:, 0]


def policy_distribution(policy, p, latent):
    return policy.distribution(p, latent)


def sample_action(dist, noise):
    """``scale * tanh(mean + std * noise)``, differentiable through mean and std."""
    pre = ops.gaussian_sample(dist.mean, dist.std, noise)
    return dist.scale * ops.tanh(pre)


def mean_action(dist):
    return dist.scale * np.tanh(dist.mean.value)


def policy_entropy(dist):
    """Entropy of the pre-tanh Gaussian, summed over action dims: (n,)."""
    return ops.sum(ops.log(dist.std), axis=-1) + HALF_LOG_2PIE * dist.std.shape[-1]


def imagine_rollout(model, policy, value_net, p_model, p_policy, p_value, seeds, horizon, noises):
    """Unroll the prior dynamics under the policy for ``horizon`` steps.

    ``noises`` is ``(policy_noise, model_noise)`` with shapes (H, n, D_a) and (H, n, D_s).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    act_noise, model_noise = noises
    n = seeds.deter.shape[0]
    if act_noise.shape != (horizon, n, policy.act_dim) or model_noise.shape != (horizon, n, model.stoch):
        raise ValueError("noise arrays do not match (H, n, dim)")
    latents, actions, dists = [seeds], [], []
    state = seeds
    for i in range(horizon):
        dist = policy.distribution(p_policy, state)
        action = sample_action(dist, act_noise[i])
        state = model.imagine_step(p_model, state, action, model_noise[i])
        latents.append(state)
        actions.append(action)
        dists.append(dist)
    feats_next = _stack_latents(latents[1:])
    feats_all = _stack_latents(latents)
    rewards = ops.reshape(model.predict_reward(p_model, feats_next), (horizon, n))
    values = ops.reshape(value_net(p_value, feats_all), (horizon + 1, n))
    return ImaginedRollout(latents, actions, dists, ops.transpose(rewards), ops.transpose(values))


def _stack_latents(latents):
    """Concatenate a list of (n, .) latents along the batch axis (time-major)."""
    return LatentState(*(ops.concat([getattr(s, f) for s in latents], axis=0)
                         for f in ("deter", "mean", "std", "sample")))


def lambda_values(rewards, values, gamma, lam):
    """TD(lambda) targets; accepts arrays or Nodes with a leading batch axis or none.

    V(x) = r_x + gamma * ((1 - lam) * v_{x+1} + lam * V(x+1)),  V(H-1) = r_{H-1} + gamma * v_H.
    """
    if not 0.0 <= lam <= 1.0 or not 0.0 < gamma <= 1.0:
        raise ValueError("require 0 <= lambda <= 1 and 0 < gamma <= 1")
    if isinstance(rewards, ops.Node) or isinstance(values, ops.Node):
        return ops.lambda_return(rewards, values, gamma, lam)
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape[:-1] != v.shape[:-1] or v.shape[-1] != r.shape[-1] + 1:
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}")
    lead = r.shape[:-1]
    out = ops.lambda_return(r.reshape(-1, r.shape[-1]), v.reshape(-1, v.shape[-1]), gamma, lam)
    return out.value.reshape(*lead, r.shape[-1])


def attach_lambda_targets(rollout, gamma, lam):
    rollout.lambda_targets = lambda_values(rollout.rewards, rollout.values, gamma, lam)
    return rollout


def svg_objective(rollout):
    """Mean lambda-return over batch and imagined steps (to be maximized)."""
    return ops.mean(rollout.lambda_targets)


def td_loss(rollout, value_net, p_value):
    """Mean squared error between v(s_x) and stop-gradient lambda targets, x < H."""
    horizon = rollout.horizon
    latents = _stack_latents([s.detached() for s in rollout.latents[:horizon]])
    pred = value_net(p_value, latents)
    targets = ops.stop_gradient(rollout.lambda_targets).value.T.reshape(-1)
    return ops.mean(ops.square(pred - constant(targets)))
