"""Imagination/reality bridging: confidence-weighted SVG, entropy bonus, Soft-BIRD, and the update step.

Three variants share one model step and differ only in the policy objective:

* ``dreamer`` maximizes the mean lambda-return of imagined rollouts.
* ``bird`` reweights each real sequence's rollouts by how well the prior
  explains its posterior latents, and adds ``w_mi`` times the policy entropy
  on real latents.
* ``soft-bird`` adds ``alpha_soft`` times the policy entropy to every
  imagined reward instead.
"""

from dataclasses import dataclass

import numpy as np

from . import agent as ag
from .diffcore import DivergenceError, OptimizerState, adam_step, clip_gradient_norm, constant, grad, ops
from .nets import bind
from .worldmodel import LatentState

VARIANTS = ("dreamer", "bird", "soft-bird")
CLIP_LOW, CLIP_HIGH = 0.1, 10.0


@dataclass
class ConfidenceBatch:
    raw: np.ndarray  # (B,) mean prior log-density of posterior samples
    weights: np.ndarray  # (B,) mean-one, stop-gradient
    clipped: np.ndarray  # (B,) weights after clipping, before the final renormalization


@dataclass
class Nets:
    model: object
    policy: object
    value: object


@dataclass
class AgentState:
    psi: dict
    theta: dict
    phi: dict
    opt_psi: OptimizerState
    opt_theta: OptimizerState
    opt_phi: OptimizerState

    @classmethod
    def fresh(cls, psi, theta, phi):
        return cls(psi, theta, phi, OptimizerState.zeros_like(psi), OptimizerState.zeros_like(theta),
                   OptimizerState.zeros_like(phi))

    def arrays(self):
        """Flat name -> array view of parameters and optimizer moments (for checkpoints)."""
        out = {}
        for tag in ("psi", "theta", "phi"):
            params = getattr(self, tag)
            opt = getattr(self, "opt_" + tag)
            for k, a in params.items():
                out[f"{tag}:{k}"] = a
                out[f"adam_m:{tag}:{k}"] = opt.m[k]
                out[f"adam_v:{tag}:{k}"] = opt.v[k]
        return out

    def steps(self):
        return {"psi": self.opt_psi.step, "theta": self.opt_theta.step, "phi": self.opt_phi.step}


# confidence ------------------------------------------------------------------------

def normalize_confidence(raw):
    """Max-subtract, exponentiate, mean-one, clip to [0.1, 10], renormalize to mean one.

    Returns ``(weights, clipped)``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("empty confidence batch")
    w = np.exp(raw - raw.max())
    w = w / w.mean()
    clipped = np.clip(w, CLIP_LOW, CLIP_HIGH)
    return clipped / clipped.mean(), clipped


def confidence_weights(observed):
    """Per-sequence confidence from the prior log-density of the posterior samples."""
    post = observed.posterior
    b, length, d = post.sample.shape
    if b == 0:
        raise ValueError("empty confidence batch")
    flat = (post.sample.value.reshape(-1, d), observed.prior_mean.value.reshape(-1, d),
            observed.prior_std.value.reshape(-1, d))
    logp = ops.gaussian_logpdf(*(constant(np.ascontiguousarray(x)) for x in flat)).value
    raw = logp.reshape(b, length).mean(axis=1)
    weights, clipped = normalize_confidence(raw)
    return ConfidenceBatch(raw, weights, clipped)


# policy objectives ------------------------------------------------------------------

def bird_policy_objective(rollout, weights, real_entropy, w):
    """Confidence-weighted mean lambda-return plus ``w`` times mean real-latent entropy.

    Rollout seeds are ordered sequence-major, so seed ``i`` belongs to sequence
    ``i // (n / B)``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = rollout.batch_size
    b = weights.shape[0]
    if b == 0 or n % b:
        raise ValueError(f"{n} rollout seeds cannot be split over {b} sequences")
    per_seed = np.repeat(weights, n // b)[:, None]
    weighted = ops.mean(rollout.lambda_targets * constant(per_seed))
    return weighted + w * ops.mean(real_entropy)


def soft_value_target(rewards, entropies, values, gamma, lam, alpha):
    """Lambda-returns of entropy-augmented rewards ``r + alpha * H``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if isinstance(rewards, ops.Node) or isinstance(entropies, ops.Node):
        augmented = rewards + alpha * entropies
    else:
        augmented = np.asarray(rewards, dtype=np.float64) + alpha * np.asarray(entropies, dtype=np.float64)
    return ag.lambda_values(augmented, values, gamma, lam)


def attach_soft_targets(rollout, gamma, lam, alpha):
    rollout.entropies = ops.stack([ag.policy_entropy(d) for d in rollout.dists], axis=1)
    rollout.lambda_targets = soft_value_target(rollout.rewards, rollout.entropies, rollout.values,
                                               gamma, lam, alpha)
    return rollout


def soft_bird_objective(rollout):
    return ops.mean(rollout.lambda_targets)


def mi_model_objective(model, p_model, batch, beta, noises):
    """Model part of the mutual-information term: the negated model loss."""
    return -model.model_loss(p_model, batch, beta, noises).loss


def bird_model_gradient(model, psi, batch, beta, noises):
    """Gradient of the mutual-information objective with respect to the world model."""
    p = bind(psi)
    objective = mi_model_objective(model, p, batch, beta, noises)
    if not np.isfinite(objective.value):
        raise DivergenceError("mutual-information objective is not finite")
    g = grad(objective, list(p.values()))
    return {k: g[node.id] for k, node in p.items()}


# update ----------------------------------------------------------------------------

def flatten_seeds(observed):
    """Detached posterior latents of a (B, L) batch as B*L imagination seeds."""
    post = observed.posterior
    return LatentState(*(constant(x.value.reshape(-1, x.shape[-1]))
                         for x in (post.deter, post.mean, post.std, post.sample)))


def policy_objective(variant, rollout, conf_weights, cfg):
    if variant == "dreamer":
        ag.attach_lambda_targets(rollout, cfg.gamma, cfg.lam)
        return ag.svg_objective(rollout)
    if variant == "bird":
        ag.attach_lambda_targets(rollout, cfg.gamma, cfg.lam)
        real_entropy = ag.policy_entropy(rollout.dists[0])
        return bird_policy_objective(rollout, conf_weights, real_entropy, cfg.w_mi)
    if variant == "soft-bird":
        attach_soft_targets(rollout, cfg.gamma, cfg.lam, cfg.alpha_soft)
        return soft_bird_objective(rollout)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _named_grad(loss, nodes):
    g = grad(loss, list(nodes.values()))
    return {k: g[n.id] for k, n in nodes.items()}


def _finite(x, what):
    if not np.isfinite(x):
        raise DivergenceError(f"{what} is not finite")
    return float(x)


def combined_update(nets, state, batch, cfg, rng, unit_confidence=False):
    """One learning step on a real batch: model, then policy, then value.

    All three losses are evaluated at the incoming parameters; the returned
    state holds the three Adam updates. ``cfg`` needs the variant,
    coefficients, horizon, learning rates and clip norm (see ``RunConfig``).
    """
    b, length = batch.shape
    model, policy, value_net = nets.model, nets.policy, nets.value

    post_noise = rng.standard_normal((b, length, model.stoch))
    p_psi = bind(state.psi)
    ml = model.model_loss(p_psi, batch, cfg.beta, post_noise)
    g_psi = clip_gradient_norm(_named_grad(ml.loss, p_psi), cfg.grad_clip)

    conf = confidence_weights(ml.observed)
    weights = np.ones(b) if unit_confidence else conf.weights
    seeds = flatten_seeds(ml.observed)
    n = seeds.deter.shape[0]
    noises = (rng.standard_normal((cfg.horizon, n, policy.act_dim)),
              rng.standard_normal((cfg.horizon, n, model.stoch)))
    p_theta = bind(state.theta)
    rollout = ag.imagine_rollout(model, policy, value_net, bind(state.psi, False), p_theta,
                                 bind(state.phi, False), seeds, cfg.horizon, noises)
    objective = policy_objective(cfg.variant, rollout, weights, cfg)
    g_theta = clip_gradient_norm(_named_grad(-objective, p_theta), cfg.grad_clip)

    p_phi = bind(state.phi)
    v_loss = ag.td_loss(rollout, value_net, p_phi)
    g_phi = clip_gradient_norm(_named_grad(v_loss, p_phi), cfg.grad_clip)

    metrics = {
        "model_loss": _finite(ml.loss.value, "model loss"),
        "obs_nll": ml.obs_nll,
        "reward_nll": ml.reward_nll,
        "kl": ml.kl,
        "policy_objective": _finite(objective.value, "policy objective"),
        "value_loss": _finite(v_loss.value, "value loss"),
        "entropy": float(np.mean(ag.policy_entropy(rollout.dists[0]).value)),
        "confidence_weight": float(np.mean(weights)),
        "confidence_loglik": float(np.mean(conf.raw)),
    }
    psi, opt_psi = adam_step(state.psi, g_psi, state.opt_psi, cfg.lr_model)
    theta, opt_theta = adam_step(state.theta, g_theta, state.opt_theta, cfg.lr_actor)
    phi, opt_phi = adam_step(state.phi, g_phi, state.opt_phi, cfg.lr_value)
    return AgentState(psi, theta, phi, opt_psi, opt_theta, opt_phi), metrics
