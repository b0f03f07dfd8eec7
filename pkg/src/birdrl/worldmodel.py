"""Recurrent latent world model: representation, transition, observation and reward heads.

The latent is the pair (deterministic GRU state, diagonal-Gaussian stochastic
state). All heads are evaluated on the autodiff graph so the same code serves
training (parameters as graph leaves) and acting (parameters as constants).
"""

from dataclasses import dataclass

import numpy as np

from .diffcore import DivergenceError, constant, ops
from .nets import bind, dense, dense_params, glorot, mlp, mlp_params


@dataclass
class SequenceBatch:
    """Real experience segments: (o_t, a_{t-1}, r_t) at index t."""

    observations: np.ndarray  # (B, L, D_o)
    actions: np.ndarray  # (B, L, D_a)
    rewards: np.ndarray  # (B, L)

    def __post_init__(self):
        o, a, r = self.observations, self.actions, self.rewards
        if o.ndim != 3 or a.ndim != 3 or r.ndim != 2 or not (o.shape[:2] == a.shape[:2] == r.shape):
            raise ValueError(f"inconsistent batch shapes {o.shape}, {a.shape}, {r.shape}")
        if r.size and (r.min() < 0.0 or r.max() > 1.0):
            raise ValueError("rewards must lie in [0, 1]")

    @property
    def shape(self):
        return self.rewards.shape


@dataclass
class LatentState:
    deter: ops.Node  # (..., D_h)
    mean: ops.Node  # (..., D_s)
    std: ops.Node
    sample: ops.Node

    def features(self):
        return ops.concat([self.deter, self.sample], axis=-1)

    def detached(self):
        return LatentState(*(ops.stop_gradient(n) for n in (self.deter, self.mean, self.std, self.sample)))

    def arrays(self):
        return LatentState(self.deter.value, self.mean.value, self.std.value, self.sample.value)


@dataclass
class Observed:
    """Posterior latents of a real batch plus the matched prior parameters, all (B, L, .)."""

    posterior: LatentState
    prior_mean: ops.Node
    prior_std: ops.Node


@dataclass
class ModelLoss:
    loss: ops.Node
    observed: Observed
    obs_nll: float
    reward_nll: float
    kl: float


class WorldModel:
    def __init__(self, obs_dim, act_dim, deter=64, stoch=16, units=64, std_floor=1e-4):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.deter = deter
        self.stoch = stoch
        self.units = units
        self.std_floor = std_floor

    @property
    def feature_dim(self):
        return self.deter + self.stoch

    def init_params(self, rng):
        u, d, s = self.units, self.deter, self.stoch
        p = {}
        p.update(dense_params(rng, "wm/img_in", s + self.act_dim, u))
        p["wm/gru/wx"] = glorot(rng, u, 3 * d)
        p["wm/gru/wh"] = glorot(rng, d, 3 * d)
        p["wm/gru/b"] = np.zeros(3 * d)
        p.update(mlp_params(rng, "wm/prior", [d, u, 2 * s]))
        p.update(mlp_params(rng, "wm/enc", [self.obs_dim, u, u]))
        p.update(mlp_params(rng, "wm/post", [d + u, u, 2 * s]))
        p.update(mlp_params(rng, "wm/dec", [d + s, u, u, self.obs_dim]))
        p.update(mlp_params(rng, "wm/rew", [d + s, u, u, 1]))
        return p

    def initial_state(self, n):
        z = np.zeros((n, self.stoch))
        return LatentState(constant(np.zeros((n, self.deter))), constant(z),
                           constant(np.ones((n, self.stoch))), constant(z.copy()))

    # building blocks ---------------------------------------------------------

    def _advance(self, p, prev, action):
        x = ops.elu(dense(p, "wm/img_in", ops.concat([prev.sample, action], axis=-1)))
        return ops.gru_cell(x, prev.deter, p["wm/gru/wx"], p["wm/gru/wh"], p["wm/gru/b"])

    def _gaussian_head(self, raw):
        s = self.stoch
        mean = raw[:, :s]
        std = ops.softplus(raw[:, s:]) + self.std_floor
        return mean, std

    def _prior(self, p, deter):
        return self._gaussian_head(mlp(p, "wm/prior", deter, 2))

    def _posterior(self, p, deter, embed):
        return self._gaussian_head(mlp(p, "wm/post", ops.concat([deter, embed], axis=-1), 2))

    def encode(self, p, obs):
        return ops.elu(mlp(p, "wm/enc", obs, 2))

    # public heads --------------------------------------------------------------

    def represent(self, p, prev, action, obs, noise):
        """Posterior latent s_t from (s_{t-1}, a_{t-1}, o_t)."""
        _check_finite(action, obs, noise)
        deter = self._advance(p, prev, action)
        mean, std = self._posterior(p, deter, self.encode(p, obs))
        return LatentState(deter, mean, std, ops.gaussian_sample(mean, std, noise))

    def imagine_step(self, p, prev, action, noise):
        """Prior latent s_t from (s_{t-1}, a_{t-1}) alone."""
        _check_finite(action, noise)
        deter = self._advance(p, prev, action)
        mean, std = self._prior(p, deter)
        return LatentState(deter, mean, std, ops.gaussian_sample(mean, std, noise))

    def decode_observation(self, p, latent):
        return mlp(p, "wm/dec", latent.features(), 3)

    def predict_reward(self, p, latent):
        """Predicted reward mean, shape (n,)."""
        return mlp(p, "wm/rew", latent.features(), 3)[:, 0]

    # sequences -------------------------------------------------------------------

    def observe_sequence(self, p, batch, noises, init=None):
        b, length = batch.shape
        if length == 0:
            raise ValueError("cannot observe an empty sequence")
        noises = np.asarray(noises, dtype=np.float64)
        if noises.shape != (b, length, self.stoch):
            raise ValueError(f"noise shape {noises.shape} != {(b, length, self.stoch)}")
        _check_finite(batch.observations, batch.actions)
        obs = np.ascontiguousarray(batch.observations.transpose(1, 0, 2)).reshape(length * b, -1)
        embed = ops.reshape(self.encode(p, constant(obs)), (length, b, self.units))
        actions = np.ascontiguousarray(batch.actions.transpose(1, 0, 2))
        state = init if init is not None else self.initial_state(b)
        posts, prior_m, prior_s = [], [], []
        for t in range(length):
            deter = self._advance(p, state, constant(actions[t]))
            pm, ps = self._prior(p, deter)
            mean, std = self._posterior(p, deter, embed[t])
            state = LatentState(deter, mean, std, ops.gaussian_sample(mean, std, noises[:, t]))
            posts.append(state)
            prior_m.append(pm)
            prior_s.append(ps)

        def stacked(nodes):
            return ops.stack(nodes, axis=1)

        posterior = LatentState(*(stacked([getattr(s, f) for s in posts])
                                  for f in ("deter", "mean", "std", "sample")))
        return Observed(posterior, stacked(prior_m), stacked(prior_s))

    def model_loss(self, p, batch, beta, noises):
        """Negated VAE-style objective averaged over the B*L steps."""
        if beta < 0:
            raise ValueError("beta must be non-negative")
        b, length = batch.shape
        n = b * length
        observed = self.observe_sequence(p, batch, noises)
        post = observed.posterior
        flat = LatentState(*(ops.reshape(x, (n, -1)) for x in (post.deter, post.mean, post.std, post.sample)))
        obs_mean = self.decode_observation(p, flat)
        rew_mean = ops.reshape(self.predict_reward(p, flat), (n, 1))
        obs_ll = ops.gaussian_logpdf(constant(batch.observations.reshape(n, -1)), obs_mean,
                                     constant(np.ones((n, self.obs_dim))))
        rew_ll = ops.gaussian_logpdf(constant(batch.rewards.reshape(n, 1)), rew_mean, constant(np.ones((n, 1))))
        kl = ops.gaussian_kl(flat.mean, flat.std, ops.reshape(observed.prior_mean, (n, -1)),
                             ops.reshape(observed.prior_std, (n, -1)))
        loss = -ops.mean(obs_ll + rew_ll - beta * kl)
        if not np.isfinite(loss.value):
            raise DivergenceError("model loss is not finite")
        return ModelLoss(loss, observed, -float(np.mean(obs_ll.value)), -float(np.mean(rew_ll.value)),
                         float(np.mean(kl.value)))

    def latent_prediction_error(self, params, batch, k, noises=None):
        """Mean squared distance between k-step open-loop prior means and posterior means.

        Open-loop rollouts start from every posterior state that has k recorded
        actions after it and use the prior mean as the next stochastic input.
        """
        b, length = batch.shape
        if not 1 <= k < length:
            raise ValueError(f"k must satisfy 1 <= k < L (k={k}, L={length})")
        p = bind(params, trainable=False)
        if noises is None:
            noises = np.zeros((b, length, self.stoch))
        post = self.observe_sequence(p, batch, noises).posterior
        starts = length - k
        deter = post.deter.value[:, :starts].reshape(b * starts, -1)
        sample = post.sample.value[:, :starts].reshape(b * starts, -1)
        state = LatentState(constant(deter), constant(sample), constant(np.ones_like(sample)), constant(sample))
        zero = np.zeros_like(sample)
        for j in range(1, k + 1):
            act = batch.actions[:, j:j + starts].reshape(b * starts, -1)
            prior = self.imagine_step(p, state, constant(act), zero)
            state = prior
        target = post.mean.value[:, k:].reshape(b * starts, -1)
        return float(np.mean(np.sum((state.mean.value - target) ** 2, axis=1)))


def _check_finite(*xs):
    for x in xs:
        v = x.value if isinstance(x, ops.Node) else x
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite input to world model")
