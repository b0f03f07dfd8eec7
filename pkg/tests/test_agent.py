import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birdrl import agent as ag
from birdrl.agent import Policy, ValueNet
from birdrl.diffcore import constant, finite_difference_check, grad, ops, parameter
from birdrl.nets import bind, zero_like
from birdrl.worldmodel import LatentState, WorldModel

D_H, D_S, UNITS, SCALE = 8, 4, 8, 2.0
FEAT = D_H + D_S


def brute_force_lambda(rewards, values, gamma, lam):
    """Explicit (1-lam) lam^(k-1) mixture of k-step returns with the tail on the full expansion."""
    horizon = len(rewards)
    out = []
    for x in range(horizon):
        n = horizon - x

        def k_step(k):
            return sum(gamma ** i * rewards[x + i] for i in range(k)) + gamma ** k * values[x + k]

        total = sum((1 - lam) * lam ** (k - 1) * k_step(k) for k in range(1, n))
        out.append(total + lam ** (n - 1) * k_step(n))
    return np.array(out)


@pytest.fixture
def nets():
    model = WorldModel(3, 1, deter=D_H, stoch=D_S, units=UNITS)
    return model, Policy(FEAT, 1, UNITS, SCALE), ValueNet(FEAT, UNITS)


@pytest.fixture
def params(nets):
    r = np.random.default_rng(0)
    return tuple(net.init_params(r) for net in nets)


def random_latent(r, n, d_h=D_H, d_s=D_S):
    mean = r.standard_normal((n, d_s))
    std = np.abs(r.standard_normal((n, d_s))) + 0.1
    return LatentState(constant(r.standard_normal((n, d_h))), constant(mean), constant(std),
                       constant(mean + std * r.standard_normal((n, d_s))))


def rollout_noises(r, horizon, n, act_dim=1, stoch=D_S):
    return r.standard_normal((horizon, n, act_dim)), r.standard_normal((horizon, n, stoch))


# policy ----------------------------------------------------------------------------------

def test_zero_policy_and_value(nets, params, rng):
    _, policy, value = nets
    lat = random_latent(rng, 5)
    dist = policy.distribution(bind(zero_like(params[1]), False), lat)
    assert np.array_equal(dist.mean.value, np.zeros((5, 1)))
    np.testing.assert_allclose(dist.std.value, math.log(2) + 1e-4, rtol=1e-15)
    assert np.array_equal(value(bind(zero_like(params[2]), False), lat).value, np.zeros(5))


def test_policy_and_value_are_deterministic(nets, params, rng):
    _, policy, value = nets
    lat = random_latent(rng, 4)
    a = policy.distribution(bind(params[1], False), lat)
    b = ag.policy_distribution(policy, bind(params[1], False), lat)
    assert np.array_equal(a.mean.value, b.mean.value) and np.array_equal(a.std.value, b.std.value)
    assert np.array_equal(value(bind(params[2], False), lat).value, value(bind(params[2], False), lat).value)


@pytest.mark.parametrize("which", ["policy", "value"])
def test_head_gradients(nets, params, rng, which):
    _, policy, value = nets
    lat = random_latent(rng, 3)
    arrays = params[1] if which == "policy" else params[2]
    names = sorted(arrays)
    w1, w2 = rng.standard_normal((3, 1)), rng.standard_normal((3, 1))

    def f(nodes):
        p = dict(zip(names, nodes))
        if which == "value":
            return ops.sum(value(p, lat) * constant(w1[:, 0]))
        dist = policy.distribution(p, lat)
        return ops.sum(dist.mean * constant(w1) + dist.std * constant(w2))

    assert finite_difference_check(f, [arrays[k] for k in names]) < 1e-6


def test_sample_action_closed_forms():
    dist = ag.ActionDistribution(constant([[0.3, -1.2]]), constant([[0.5, 2.0]]), SCALE)
    np.testing.assert_array_equal(ag.sample_action(dist, np.zeros((1, 2))).value, SCALE * np.tanh([[0.3, -1.2]]))
    np.testing.assert_array_equal(ag.mean_action(dist), SCALE * np.tanh([[0.3, -1.2]]))
    unit = ag.ActionDistribution(constant([[0.0]]), constant([[1.0]]), SCALE)
    acts = [float(ag.sample_action(unit, np.array([[eta]])).value[0, 0]) for eta in (0.0, 1.0, 3.0, 10.0, 30.0)]
    assert all(a < b for a, b in zip(acts[:-2], acts[1:-1])) and acts[-1] <= SCALE
    assert SCALE - acts[-2] < 1e-7


@pytest.mark.parametrize("eta", [-1.7, -0.2, 0.4, 2.5])
def test_action_derivative_wrt_std(eta):
    m = parameter([[0.0]])
    v = parameter([[1.0]])
    out = ag.sample_action(ag.ActionDistribution(m, v, SCALE), np.array([[eta]]))
    g = float(grad(ops.sum(out), [v])[v.id][0, 0])
    assert abs(g - SCALE * (1 - math.tanh(eta) ** 2) * eta) < 1e-14

    def f(nodes):
        return ops.sum(ag.sample_action(ag.ActionDistribution(constant([[0.0]]), nodes[0], SCALE), np.array([[eta]])))

    assert finite_difference_check(f, [np.array([[1.0]])]) < 1e-6


@settings(max_examples=50, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_actions_stay_inside_bounds(seed):
    r = np.random.default_rng(seed)
    # a moderate std keeps tanh below 1.0 in float64 (it rounds to 1.0 past about 19)
    policy = Policy(FEAT, 2, UNITS, SCALE, init_std=1.0)
    dist = policy.distribution(bind(policy.init_params(r), False), random_latent(r, 64))
    act = ag.sample_action(dist, r.standard_normal((64, 2))).value
    assert np.all(np.abs(act) < SCALE)


# entropy ------------------------------------------------------------------------------------

def test_entropy_closed_forms():
    one = ag.ActionDistribution(constant([[0.0]]), constant([[1.0]]), 1.0)
    assert abs(float(ag.policy_entropy(one).value[0]) - 1.4189385332046727) < 1e-15
    sigma = np.array([[0.3, 1.7, 0.01]])
    lo = ag.policy_entropy(ag.ActionDistribution(constant(np.zeros((1, 3))), constant(sigma), 1.0)).value[0]
    hi = ag.policy_entropy(ag.ActionDistribution(constant(np.zeros((1, 3))), constant(math.e * sigma), 1.0)).value[0]
    assert abs((hi - lo) - 3.0) < 1e-12
    ref = sum(0.5 * math.log(2 * math.pi * math.e * s * s) for s in sigma[0])
    assert abs(lo - ref) < 1e-12


def test_entropy_matches_monte_carlo(rng):
    mean = np.array([0.4, -1.0])
    std = np.array([0.7, 1.9])
    x = mean + std * rng.standard_normal((10 ** 6, 2))
    logp = -0.5 * (((x - mean) / std) ** 2 + np.log(2 * np.pi * std ** 2))
    mc = -float(np.mean(logp.sum(axis=1)))
    analytic = float(ag.policy_entropy(ag.ActionDistribution(constant([mean]), constant([std]), 1.0)).value[0])
    assert abs(mc - analytic) < 1e-2


# imagination ------------------------------------------------------------------------------------

def _rollout(nets, params, seeds, horizon, noises, trainable_policy=False):
    model, policy, value = nets
    return ag.imagine_rollout(model, policy, value, bind(params[0], False), bind(params[1], trainable_policy),
                              bind(params[2], False), seeds, horizon, noises)


def test_single_step_rollout(nets, params, rng):
    ro = _rollout(nets, params, random_latent(rng, 3), 1, rollout_noises(rng, 1, 3))
    assert ro.horizon == 1 and len(ro.latents) == 2 and len(ro.dists) == 1
    assert ro.rewards.shape == (3, 1) and ro.values.shape == (3, 2)


def test_rollout_requires_positive_horizon(nets, params, rng):
    with pytest.raises(ValueError):
        _rollout(nets, params, random_latent(rng, 3), 0, rollout_noises(rng, 0, 3))


def test_rollout_follows_imagine_step_exactly(nets, params, rng):
    model = nets[0]
    seeds = random_latent(rng, 4)
    noises = rollout_noises(rng, 3, 4)
    ro = _rollout(nets, params, seeds, 3, noises)
    again = _rollout(nets, params, seeds, 3, noises)
    p = bind(params[0], False)
    for i in range(3):
        nxt = model.imagine_step(p, ro.latents[i], ro.actions[i], noises[1][i])
        assert np.array_equal(nxt.sample.value, ro.latents[i + 1].sample.value)
        assert np.array_equal(ro.latents[i + 1].sample.value, again.latents[i + 1].sample.value)
    assert np.array_equal(ro.values.value, again.values.value)
    assert np.array_equal(ro.rewards.value[:, 1], model.predict_reward(p, ro.latents[2]).value)


class ToyModel:
    """One-dimensional latent with identity dynamics s' = s + a and reward r = s."""

    stoch = 1

    def imagine_step(self, p, prev, action, noise):
        s = prev.sample + action
        return LatentState(prev.deter, s, constant(np.ones(s.shape)), s)

    def predict_reward(self, p, latent):
        return latent.sample[:, 0]


class ToyPolicy:
    act_dim = 1

    def distribution(self, p, latent):
        n = latent.sample.shape[0]
        mean = ops.linear(latent.sample, p["w"], p["b"])
        return ag.ActionDistribution(mean, constant(np.full((n, 1), 0.5)), 1.0)


def zero_value(p, latent):
    return ops.sum(latent.sample * 0.0, axis=-1)


def _toy_rollout(bias, seeds, noises, horizon=4):
    p = {"w": constant([[0.3]]), "b": bias}
    return ag.imagine_rollout(ToyModel(), ToyPolicy(), zero_value, {}, p, {}, seeds, horizon, noises)


def test_toy_reward_gradient_wrt_policy_bias(rng):
    n = 3
    seeds = LatentState(constant(np.zeros((n, 0))), *(constant(rng.standard_normal((n, 1))) for _ in range(3)))
    noises = (rng.standard_normal((4, n, 1)), np.zeros((4, n, 1)))

    def total_reward(nodes):
        return ops.sum(_toy_rollout(nodes[0], seeds, noises).rewards)

    assert finite_difference_check(total_reward, [np.array([0.1])]) < 1e-6

    b = parameter([0.1])
    ro = ag.attach_lambda_targets(_toy_rollout(b, seeds, noises), 0.99, 0.95)
    assert float(grad(ag.svg_objective(ro), [b])[b.id][0]) > 0


def test_svg_gradient_small_dims(nets, params, rng):
    seeds = random_latent(rng, 3)
    noises = rollout_noises(rng, 3, 3)
    names = sorted(params[1])
    model, policy, value = nets

    def f(nodes):
        ro = ag.imagine_rollout(model, policy, value, bind(params[0], False), dict(zip(names, nodes)),
                                bind(params[2], False), seeds, 3, noises)
        return ag.svg_objective(ag.attach_lambda_targets(ro, 0.99, 0.95))

    assert finite_difference_check(f, [params[1][k] for k in names]) < 1e-4


def test_svg_zero_world_has_zero_objective_and_gradient(nets, params, rng):
    psi = dict(params[0])
    for k in psi:
        if k.startswith("wm/rew/"):
            psi[k] = np.zeros_like(psi[k])
    p_theta = bind(params[1])
    model, policy, value = nets
    ro = ag.imagine_rollout(model, policy, value, bind(psi, False), p_theta, bind(zero_like(params[2]), False),
                            random_latent(rng, 3), 3, rollout_noises(rng, 3, 3))
    j = ag.svg_objective(ag.attach_lambda_targets(ro, 0.99, 0.95))
    assert float(j.value) == 0.0
    g = grad(j, list(p_theta.values()))
    assert all(not np.any(g[n.id]) for n in p_theta.values())


def test_svg_is_permutation_invariant(nets, params, rng):
    seeds = random_latent(rng, 5)
    noises = rollout_noises(rng, 3, 5)
    perm = rng.permutation(5)
    shuffled = LatentState(*(constant(getattr(seeds, f).value[perm]) for f in ("deter", "mean", "std", "sample")))
    a = ag.svg_objective(ag.attach_lambda_targets(_rollout(nets, params, seeds, 3, noises), 0.99, 0.95))
    b = ag.svg_objective(ag.attach_lambda_targets(
        _rollout(nets, params, shuffled, 3, (noises[0][:, perm], noises[1][:, perm])), 0.99, 0.95))
    assert abs(float(a.value) - float(b.value)) < 1e-12


def test_svg_with_one_step_and_zero_lambda(nets, params, rng):
    ro = ag.attach_lambda_targets(_rollout(nets, params, random_latent(rng, 4), 1, rollout_noises(rng, 1, 4)),
                                  0.99, 0.0)
    expected = np.mean(ro.rewards.value[:, 0] + 0.99 * ro.values.value[:, 1])
    assert abs(float(ag.svg_objective(ro).value) - expected) < 1e-12


# lambda returns ------------------------------------------------------------------------------------

def test_lambda_hand_example():
    targets = ag.lambda_values(np.array([1.0, 0.0]), np.array([0.0, 0.0, 10.0]), 0.99, 0.95)
    expected = brute_force_lambda([1.0, 0.0], [0.0, 0.0, 10.0], 0.99, 0.95)
    assert np.max(np.abs(targets - expected)) < 1e-12
    # one-step then full expansion, written out: x=1 -> 0 + .99*10; x=0 -> 1 + .99*(.05*0 + .95*9.9)
    assert abs(targets[1] - 9.9) < 1e-12 and abs(targets[0] - (1 + 0.99 * 0.95 * 9.9)) < 1e-12


def test_lambda_limits(rng):
    r, v = rng.random(6), rng.standard_normal(7)
    np.testing.assert_allclose(ag.lambda_values(r, v, 0.9, 0.0), r + 0.9 * v[1:], rtol=0, atol=1e-14)
    mc = sum(0.9 ** i * r[i] for i in range(6)) + 0.9 ** 6 * v[6]
    assert abs(ag.lambda_values(r, v, 0.9, 1.0)[0] - mc) < 1e-12


@settings(max_examples=300, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2 ** 32 - 1), horizon=st.integers(1, 6))
def test_lambda_matches_enumeration(seed, horizon):
    r = np.random.default_rng(seed)
    gamma, lam = r.uniform(0.01, 1.0), r.uniform(0.0, 1.0)
    rewards, values = r.random(horizon), 10 * r.standard_normal(horizon + 1)
    out = ag.lambda_values(rewards, values, gamma, lam)
    assert np.max(np.abs(out - brute_force_lambda(rewards, values, gamma, lam))) < 1e-12


def test_lambda_values_batched_and_node_inputs(rng):
    r, v = rng.random((2, 3, 4)), rng.standard_normal((2, 3, 5))
    out = ag.lambda_values(r, v, 0.95, 0.7)
    assert out.shape == (2, 3, 4)
    np.testing.assert_array_equal(out[1, 2], ag.lambda_values(r[1, 2], v[1, 2], 0.95, 0.7))
    node = ag.lambda_values(constant(r[0]), constant(v[0]), 0.95, 0.7)
    np.testing.assert_array_equal(node.value, out[0])


@pytest.mark.parametrize("args", [
    (np.ones(3), np.ones(3), 0.9, 0.5),
    (np.ones(3), np.ones(4), 0.0, 0.5),
    (np.ones(3), np.ones(4), 0.9, 1.5),
    (np.ones(3), np.ones(4), 1.1, 0.5),
])
def test_lambda_values_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        ag.lambda_values(*args)


# TD loss ----------------------------------------------------------------------------------------

class ConstantValue:
    """Value net stub that returns fixed per-seed values at every step."""

    def __init__(self, per_seed):
        self.per_seed = per_seed

    def __call__(self, p, latent):
        return constant(np.tile(self.per_seed, latent.sample.shape[0] // len(self.per_seed)))


def test_td_loss_hand_batch(rng):
    seeds = random_latent(rng, 2, d_h=1, d_s=1)
    ro = ag.ImaginedRollout([seeds, seeds], [None], [None], constant(np.zeros((2, 1))), constant(np.zeros((2, 2))),
                            lambda_targets=constant(np.zeros((2, 1))))
    loss = ag.td_loss(ro, ConstantValue(np.array([1.0, 2.0])), {})
    assert float(loss.value) == 2.5


def test_td_loss_zero_when_values_match_targets(nets, params, rng):
    model, policy, value = nets
    ro = ag.attach_lambda_targets(_rollout(nets, params, random_latent(rng, 3), 2, rollout_noises(rng, 2, 3)),
                                  0.99, 0.95)
    preds = value(bind(params[2], False), ag._stack_latents(ro.latents[:2])).value
    ro.lambda_targets = constant(preds.reshape(2, 3).T)
    assert float(ag.td_loss(ro, value, bind(params[2])).value) == 0.0


def test_td_loss_ignores_policy_parameters(nets, params, rng):
    p_theta = bind(params[1])
    model, policy, value = nets
    ro = ag.imagine_rollout(model, policy, value, bind(params[0], False), p_theta, bind(params[2], False),
                            random_latent(rng, 3), 3, rollout_noises(rng, 3, 3))
    ag.attach_lambda_targets(ro, 0.99, 0.95)
    p_phi = bind(params[2])
    loss = ag.td_loss(ro, value, p_phi)
    g = grad(loss, list(p_theta.values()) + list(p_phi.values()))
    assert all(not np.any(g[n.id]) for n in p_theta.values())
    assert any(np.any(g[n.id]) for n in p_phi.values())
