"""Small deterministic continuous-control tasks with action repeat 2 and rewards in [0, 1].

``pendulum-swingup``: theta'' = (g/l) sin(theta) + tau/(m l^2), theta = 0 upright,
observation [cos, sin, theta_dot / 8], torque in [-2, 2].

``pointmass-reach``: 2-D double integrator in the box [-1, 1]^2 pushed by a
force in [-1, 1]^2, reward exp(-4 * distance to goal), observation
[x, y, vx, vy, goal_x, goal_y].
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

ACTION_REPEAT = 2
EPISODE_SUBSTEPS = 1000
DT = 0.05


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


class EpisodeDone(RuntimeError):
    pass


class UnsupportedRender(NotImplementedError):
    pass


class Env:
    name = "base"
    obs_dim = 0
    act_dim = 0
    action_scale = 1.0

    def __init__(self, seed=0, image=False, action_repeat=ACTION_REPEAT, episode_substeps=EPISODE_SUBSTEPS):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.image = image
        self.action_repeat = action_repeat
        self.max_steps = episode_substeps // action_repeat
        self.steps = 0
        self.done = True

    @property
    def observation_dim(self):
        return 64 if self.image else self.obs_dim

    def reset(self):
        self._reset_physics()
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action):
        if self.done:
            raise EpisodeDone("episode finished; call reset()")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.act_dim),
                         -self.action_scale, self.action_scale)
        total = self._advance(action, self.action_repeat)
        self.steps += 1
        self.done = self.steps >= self.max_steps
        reward = min(1.0, max(0.0, total / self.action_repeat))
        return StepResult(self.observation(), reward, self.done)

    def observation(self):
        return render_tiny_image(self).reshape(-1) if self.image else self._vector_obs()

    def render(self):
        raise UnsupportedRender(f"{self.name} cannot render")

    def get_state(self):
        raise NotImplementedError

    def set_state(self, state):
        raise NotImplementedError


class Pendulum(Env):
    name = "pendulum-swingup"
    obs_dim = 3
    act_dim = 1
    action_scale = 2.0

    def __init__(self, seed=0, image=False, gravity=10.0, mass=1.0, length=1.0, damping=0.0, **kw):
        super().__init__(seed, image, **kw)
        self.gravity = gravity
        self.mass = mass
        self.length = length
        self.damping = damping
        self.theta = math.pi
        self.omega = 0.0

    def _reset_physics(self):
        self.theta = math.pi + self.rng.uniform(-0.1, 0.1)
        self.omega = self.rng.uniform(-0.1, 0.1)

    def _advance(self, action, substeps):
        torque = float(action[0]) / (self.mass * self.length ** 2)
        self.theta, self.omega, reward = kernels.pendulum_integrate(
            self.theta, self.omega, torque, substeps, DT, self.gravity / self.length, self.damping)
        return reward

    def _vector_obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.omega / 8.0])

    def energy(self):
        """Kinetic plus potential energy per unit m l^2 (conserved without torque or damping)."""
        return 0.5 * self.omega ** 2 + (self.gravity / self.length) * math.cos(self.theta)

    def render(self):
        tip = np.array([math.sin(self.theta), math.cos(self.theta)])
        return _segment_image(np.zeros(2), tip)

    def get_state(self):
        return np.array([self.theta, self.omega])

    def set_state(self, state):
        self.theta, self.omega = float(state[0]), float(state[1])
        self.done = False


class PointMass(Env):
    name = "pointmass-reach"
    obs_dim = 6
    act_dim = 2
    action_scale = 1.0

    def __init__(self, seed=0, image=False, **kw):
        super().__init__(seed, image, **kw)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.goal = np.zeros(2)

    def _reset_physics(self):
        self.pos = self.rng.uniform(-0.8, 0.8, size=2)
        self.vel = np.zeros(2)
        self.goal = self.rng.uniform(-0.8, 0.8, size=2)

    def _advance(self, action, substeps):
        reward = 0.0
        for _ in range(substeps):
            self.vel = self.vel + DT * action
            self.pos = self.pos + DT * self.vel
            hit = np.abs(self.pos) > 1.0
            self.pos = np.clip(self.pos, -1.0, 1.0)
            self.vel = np.where(hit, 0.0, self.vel)
            reward += math.exp(-4.0 * float(np.linalg.norm(self.pos - self.goal)))
        return reward

    def _vector_obs(self):
        return np.concatenate([self.pos, self.vel, self.goal])

    def render(self):
        img = _blob_image(self.pos, 1.0)
        return np.maximum(img, _blob_image(self.goal, 0.5))

    def get_state(self):
        return np.concatenate([self.pos, self.vel, self.goal])

    def set_state(self, state):
        state = np.asarray(state, dtype=np.float64)
        self.pos, self.vel, self.goal = state[:2].copy(), state[2:4].copy(), state[4:6].copy()
        self.done = False


ENVS = {Pendulum.name: Pendulum, PointMass.name: PointMass}


def make_env(name, seed=0, image=False, **kw):
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; valid names: {', '.join(sorted(ENVS))}") from None
    return cls(seed=seed, image=image, **kw)


def exploration_noise(action, sigma, rng, scale):
    """Add N(0, sigma^2) noise and clip to [-scale, scale]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    action = np.asarray(action, dtype=np.float64)
    if sigma == 0:
        return np.clip(action, -scale, scale)
    return np.clip(action + rng.normal(0.0, sigma, size=action.shape), -scale, scale)


def render_tiny_image(env):
    """8x8 grayscale rendering in [0, 1]."""
    return env.render()


_GRID = (np.arange(8) + 0.5) / 8 * 2.4 - 1.2
_PX, _PY = np.meshgrid(_GRID, -_GRID)  # row 0 is the top of the image


def _segment_image(a, b, width=0.3):
    d = b - a
    t = np.clip(((_PX - a[0]) * d[0] + (_PY - a[1]) * d[1]) / float(d @ d), 0.0, 1.0)
    dist = np.hypot(_PX - (a[0] + t * d[0]), _PY - (a[1] + t * d[1]))
    return np.clip(1.0 - dist / width, 0.0, 1.0)


def _blob_image(center, peak, width=0.3):
    dist = np.hypot(_PX - center[0], _PY - center[1])
    return peak * np.clip(1.0 - dist / width, 0.0, 1.0)
