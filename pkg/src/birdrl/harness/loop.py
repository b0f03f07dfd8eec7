"""Training loop: prefill, then alternate C learning steps with one real episode."""

import logging
import math
import os
import time

import numpy as np

from .. import agent as ag
from ..agent import Policy, ValueNet
from ..bird import AgentState, Nets, combined_update
from ..diffcore import DivergenceError, OptimizerState, Streams, constant
from ..envs import ACTION_REPEAT, exploration_noise, make_env
from ..nets import bind
from ..worldmodel import WorldModel
from . import checkpoint as ck
from .alloc import tune_allocator
from .buffer import Episode, ReplayBuffer
from .config import RunConfig
from .metrics import LATENT_ERROR_KS, MetricsRecord, MetricsWriter

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, episode, cause):
        self.episode = episode
        super().__init__(f"training diverged during episode {episode}: {cause}")


def build_nets(cfg, env):
    model = WorldModel(env.observation_dim, env.act_dim, cfg.deter, cfg.stoch, cfg.units, cfg.std_floor)
    policy = Policy(model.feature_dim, env.act_dim, cfg.units, env.action_scale, cfg.std_floor,
                    cfg.init_std)
    return Nets(model, policy, ValueNet(model.feature_dim, cfg.units))


def _env(cfg, rng):
    seed = int(rng.integers(2 ** 63))
    return make_env(cfg.env, seed=seed, image=cfg.image, episode_substeps=cfg.episode_steps * ACTION_REPEAT)


def rollout_episode(env, nets, state, rng, mode, sigma=0.0):
    """Play one episode. ``mode`` is "random", "explore" (sampled action + noise) or "eval" (mean action).

    Returns the Episode and its undiscounted return.
    """
    obs = env.reset()
    act_dim, scale = env.act_dim, env.action_scale
    observations, actions, rewards = [obs], [np.zeros(act_dim)], [0.0]
    if mode != "random":
        model, policy = nets.model, nets.policy
        p_model = bind(state.psi, trainable=False)
        p_policy = bind(state.theta, trainable=False)
        latent = model.initial_state(1)
    prev = np.zeros(act_dim)
    done = False
    while not done:
        if mode == "random":
            action = rng.uniform(-scale, scale, size=act_dim)
        else:
            noise = np.zeros((1, model.stoch)) if mode == "eval" else rng.standard_normal((1, model.stoch))
            latent = model.represent(p_model, latent, constant(prev[None]), constant(obs[None]), noise)
            dist = policy.distribution(p_policy, latent)
            if mode == "eval":
                action = ag.mean_action(dist)[0]
            else:
                action = ag.sample_action(dist, rng.standard_normal((1, act_dim))).value[0]
                action = exploration_noise(action, sigma, rng, scale)
        result = env.step(action)
        obs, done = result.observation, result.done
        prev = np.asarray(action, dtype=np.float64)
        observations.append(obs)
        actions.append(prev)
        rewards.append(result.reward)
    ep = Episode(np.array(observations), np.array(actions), np.array(rewards))
    return ep, float(np.sum(rewards))


class Trainer:
    def __init__(self, cfg):
        if cfg.batch_length > cfg.episode_steps + 1:
            raise ValueError("batch_length cannot exceed episode_steps + 1")
        tune_allocator()
        self.cfg = cfg
        self.streams = Streams(cfg.seed)
        self.env = _env(cfg, self.streams["env"])
        self.eval_env = _env(cfg, self.streams["eval"])
        self.nets = build_nets(cfg, self.env)
        init = self.streams["init"]
        self.state = AgentState.fresh(self.nets.model.init_params(init), self.nets.policy.init_params(init),
                                      self.nets.value.init_params(init))
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.episode = 0
        self.env_steps = 0
        self.prefilled = False

    # interaction ---------------------------------------------------------------

    def _play(self, env, mode):
        ep, ret = rollout_episode(env, self.nets, self.state, self.streams["act"], mode, self.cfg.explore_sigma)
        return ep, ret

    def prefill(self):
        if self.prefilled:
            return
        for _ in range(self.cfg.prefill_episodes):
            ep, _ = self._play(self.env, "random")
            self.buffer.add(ep)
            self.env_steps += (len(ep) - 1) * ACTION_REPEAT
        self.prefilled = True

    def evaluate_policy(self, episodes):
        returns = []
        for _ in range(episodes):
            _, ret = rollout_episode(self.eval_env, self.nets, self.state, None, "eval")
            returns.append(ret)
        return returns

    # learning --------------------------------------------------------------------

    def train_episode(self):
        cfg = self.cfg
        self.prefill()
        index = self.episode + 1
        sums = {}
        try:
            for _ in range(cfg.learn_steps):
                batch = self.buffer.sample(cfg.batch_size, cfg.batch_length, self.streams["buffer"])
                self.state, m = combined_update(self.nets, self.state, batch, cfg, self.streams["learn"])
                for k, v in m.items():
                    sums[k] = sums.get(k, 0.0) + v
        except (DivergenceError, FloatingPointError) as exc:
            raise TrainingDiverged(index, exc) from exc
        ep, ret = self._play(self.env, "explore")
        self.buffer.add(ep)
        self.env_steps += (len(ep) - 1) * ACTION_REPEAT
        self.episode = index
        eval_return = float(np.mean(self.evaluate_policy(cfg.eval_episodes))) if cfg.eval_episodes else math.nan
        errors = self.latent_errors()
        mean = {k: v / cfg.learn_steps for k, v in sums.items()}
        return MetricsRecord(
            episode=index, env_steps=self.env_steps, episode_return=ret, eval_return=eval_return,
            model_loss=mean["model_loss"], policy_objective=mean["policy_objective"],
            value_loss=mean["value_loss"], entropy=mean["entropy"],
            confidence_weight=mean["confidence_weight"], confidence_loglik=mean["confidence_loglik"],
            latent_error_k1=errors[1], latent_error_k5=errors[5], latent_error_k15=errors[15])

    def latent_errors(self):
        cfg = self.cfg
        batch = self.buffer.sample(cfg.diag_batch_size, cfg.batch_length, self.streams["diag"])
        return {k: (self.nets.model.latent_prediction_error(self.state.psi, batch, k)
                    if k < cfg.batch_length else math.nan) for k in LATENT_ERROR_KS}

    # checkpoints -------------------------------------------------------------------

    def to_checkpoint(self):
        arrays = dict(self.state.arrays())
        for i, ep in enumerate(self.buffer.episodes):
            arrays[f"buffer/{i:06d}/obs"] = ep.observations
            arrays[f"buffer/{i:06d}/act"] = ep.actions
            arrays[f"buffer/{i:06d}/rew"] = ep.rewards
        state = {
            "rng": self.streams.state(),
            "env_rng": self.env.rng.bit_generator.state,
            "eval_env_rng": self.eval_env.rng.bit_generator.state,
            "episode": self.episode,
            "env_steps": self.env_steps,
            "prefilled": self.prefilled,
            "opt_steps": self.state.steps(),
            "buffer_episodes": len(self.buffer),
            "buffer_total_added": self.buffer.total_added,
        }
        return ck.Checkpoint(self.cfg.to_dict(), arrays, state)

    @classmethod
    def from_checkpoint(cls, ckpt, **overrides):
        cfg = RunConfig.from_dict(ckpt.config).replace(**overrides)
        trainer = cls(cfg)
        trainer.load_state(ckpt)
        return trainer

    def load_state(self, ckpt):
        arrays, meta = ckpt.arrays, ckpt.state
        ck.check_shapes(self.state.arrays(), arrays)
        steps = meta["opt_steps"]
        parts = {}
        for tag in ("psi", "theta", "phi"):
            names = getattr(self.state, tag).keys()
            params = {k: arrays[f"{tag}:{k}"].copy() for k in names}
            opt = OptimizerState({k: arrays[f"adam_m:{tag}:{k}"].copy() for k in names},
                                 {k: arrays[f"adam_v:{tag}:{k}"].copy() for k in names}, int(steps[tag]))
            parts[tag] = (params, opt)
        self.state = AgentState(parts["psi"][0], parts["theta"][0], parts["phi"][0],
                                parts["psi"][1], parts["theta"][1], parts["phi"][1])
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity)
        for i in range(meta["buffer_episodes"]):
            self.buffer.add(Episode(arrays[f"buffer/{i:06d}/obs"], arrays[f"buffer/{i:06d}/act"],
                                    arrays[f"buffer/{i:06d}/rew"]))
        self.buffer.total_added = meta["buffer_total_added"]
        self.streams.set_state(meta["rng"])
        self.env.rng.bit_generator.state = meta["env_rng"]
        self.eval_env.rng.bit_generator.state = meta["eval_env_rng"]
        self.episode = meta["episode"]
        self.env_steps = meta["env_steps"]
        self.prefilled = meta["prefilled"]


def train(cfg, out_dir, resume=None, progress=None):
    """Prefill, then train until ``cfg.total_episodes``; returns the final Trainer.

    Writes ``config.json``, ``metrics.csv``, ``timing.csv`` and ``final.ckpt`` into ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    if resume is not None:
        trainer = Trainer.from_checkpoint(ck.load_checkpoint(resume) if isinstance(resume, str) else resume,
                                          total_episodes=cfg.total_episodes)
        writer = MetricsWriter(out_dir, keep_through=trainer.episode)
    else:
        trainer = Trainer(cfg)
        writer = MetricsWriter(out_dir)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(trainer.cfg.dumps())
    trainer.prefill()
    start = time.perf_counter()
    while trainer.episode < trainer.cfg.total_episodes:
        record = trainer.train_episode()
        writer.write(record, time.perf_counter() - start)
        if progress is not None:
            progress(record)
        every = trainer.cfg.checkpoint_every
        if every and trainer.episode % every == 0:
            ck.save_checkpoint(os.path.join(out_dir, f"episode_{trainer.episode:05d}.ckpt"), trainer.to_checkpoint())
    ck.save_checkpoint(os.path.join(out_dir, "final.ckpt"), trainer.to_checkpoint())
    return trainer


def evaluate(checkpoint, episodes, seed=0):
    """Mean and population std of noise-free episode returns for a saved agent."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ckpt = ck.load_checkpoint(checkpoint) if isinstance(checkpoint, str) else checkpoint
    cfg = RunConfig.from_dict(ckpt.config)
    env = make_env(cfg.env, seed=seed, image=cfg.image, episode_substeps=cfg.episode_steps * ACTION_REPEAT)
    nets = build_nets(cfg, env)
    rng = np.random.Generator(np.random.PCG64(0))
    shapes = {"psi": nets.model.init_params(rng), "theta": nets.policy.init_params(rng)}
    for tag, expected in shapes.items():
        ck.check_shapes(expected, ckpt.arrays, prefix=f"{tag}:")
    state = AgentState.fresh({k: ckpt.arrays[f"psi:{k}"] for k in shapes["psi"]},
                             {k: ckpt.arrays[f"theta:{k}"] for k in shapes["theta"]}, {})
    returns = [rollout_episode(env, nets, state, None, "eval")[1] for _ in range(episodes)]
    return float(np.mean(returns)), float(np.std(returns))


def random_policy_returns(env_name, episodes, seed=0, episode_steps=500):
    """Returns of the uniform-random agent (the baseline for learning checks)."""
    env = make_env(env_name, seed=seed, episode_substeps=episode_steps * ACTION_REPEAT)
    rng = np.random.Generator(np.random.PCG64(seed))
    return [rollout_episode(env, None, None, rng, "random")[1] for _ in range(episodes)]
