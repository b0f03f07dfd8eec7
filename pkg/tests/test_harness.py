import hashlib
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birdrl.harness import checkpoint as ck
from birdrl.harness.buffer import BufferError, Episode, ReplayBuffer
from birdrl.harness.cli import main
from birdrl.harness.config import ConfigError, RunConfig, load_config
from birdrl.harness.loop import Trainer, evaluate, random_policy_returns, train
from birdrl.harness.metrics import FIELDS, read_metrics

# measured once: 20 uniform-random pendulum episodes, seed 0
RANDOM_MEAN, RANDOM_STD = 18.236110993608694, 15.374159364927396

TINY = dict(deter=8, stoch=4, units=8, horizon=3, learn_steps=2, batch_size=2, batch_length=5,
            episode_steps=20, prefill_episodes=1, eval_episodes=1, diag_batch_size=4)


def tiny(**kw):
    return RunConfig(**{**TINY, **kw})


def episode(n, fill=0.0, obs_dim=3):
    return Episode(np.full((n, obs_dim), fill), np.zeros((n, 1)), np.zeros(n))


def file_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# buffer --------------------------------------------------------------------------------

def test_fifo_eviction_by_whole_episodes():
    buf = ReplayBuffer(250)
    for i in range(3):
        buf.add(episode(100, fill=i))
    assert len(buf) == 2 and buf.steps == 200
    assert [e.observations[0, 0] for e in buf.episodes] == [1.0, 2.0]


@settings(max_examples=100, deadline=None, derandomize=True)
@given(capacity=st.integers(10, 200), lengths=st.lists(st.integers(1, 60), min_size=1, max_size=30))
def test_buffer_never_exceeds_capacity(capacity, lengths):
    buf = ReplayBuffer(capacity)
    added = []
    for i, n in enumerate(lengths):
        if n > capacity:
            with pytest.raises(BufferError):
                buf.add(episode(n, fill=i))
            continue
        buf.add(episode(n, fill=i))
        added.append(i)
        assert buf.steps <= capacity
        assert buf.steps == sum(len(e) for e in buf.episodes)
        kept = [int(e.observations[0, 0]) for e in buf.episodes]
        assert kept == added[-len(kept):] and kept[-1] == i


def test_single_episode_of_length_l_is_returned_whole():
    ep = Episode(np.arange(15.0).reshape(5, 3), np.ones((5, 1)), np.linspace(0, 1, 5))
    buf = ReplayBuffer(100)
    buf.add(ep)
    batch = buf.sample(3, 5, np.random.default_rng(0))
    for b in range(3):
        assert np.array_equal(batch.observations[b], ep.observations)
        assert np.array_equal(batch.rewards[b], ep.rewards)


def test_segment_sampling_is_uniform():
    buf = ReplayBuffer(1000)
    lengths = (5, 8, 12)
    for n in lengths:
        buf.add(episode(n))
    length, draws = 4, 10 ** 5
    which, offsets = buf.sample_index(draws, length, np.random.default_rng(0))
    cells = [(e, o) for e, n in enumerate(lengths) for o in range(n - length + 1)]
    p = 1.0 / len(cells)
    sigma = math.sqrt(draws * p * (1 - p))
    counts = {c: 0 for c in cells}
    for e, o in zip(which.tolist(), offsets.tolist()):
        counts[(e, o)] += 1  # a KeyError here would mean a segment crossed an episode end
    assert all(abs(c - draws * p) <= 3 * sigma for c in counts.values())


def test_insufficient_buffer_is_an_error():
    buf = ReplayBuffer(100)
    with pytest.raises(BufferError):
        buf.sample(1, 3, np.random.default_rng(0))
    buf.add(episode(2))
    with pytest.raises(BufferError):
        buf.sample(1, 3, np.random.default_rng(0))


# config -----------------------------------------------------------------------------------

def test_config_defaults_are_the_published_values():
    c = RunConfig()
    assert (c.horizon, c.learn_steps, c.batch_size, c.batch_length) == (15, 100, 50, 50)
    assert (c.gamma, c.lam, c.beta, c.w_mi) == (0.99, 0.95, 1.0, 1e-8)
    assert (c.lr_model, c.lr_actor, c.lr_value, c.grad_clip) == (6e-4, 8e-5, 8e-5, 100.0)
    assert (c.buffer_capacity, c.prefill_episodes, c.explore_sigma, c.episode_steps) == (100_000, 5, 0.3, 500)


@pytest.mark.parametrize("bad", [dict(gamma=0.0), dict(lam=1.5), dict(horizon=0), dict(variant="ppo"),
                                 dict(env="cartpole"), dict(beta=-1.0), dict(lr_actor=0.0),
                                 dict(prefill_episodes=0), dict(init_std=1e-5)])
def test_invalid_config_values(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_config_file_round_trip_and_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(tiny(seed=4).dumps())
    assert load_config(str(path)) == tiny(seed=4)
    path.write_text(json.dumps({"seed": 1, "learning_rate": 0.1}))
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(str(path))
    path.write_text(json.dumps({"seed": 1.5}))
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(path))


# checkpoints ---------------------------------------------------------------------------

def sample_checkpoint():
    r = np.random.default_rng(0)
    arrays = {"a": r.standard_normal((3, 4)), "b": np.arange(5, dtype=np.int64), "c": np.float64(2.5) * np.ones(())}
    return ck.Checkpoint({"seed": 1}, arrays, {"episode": 3, "rng": [1, 2]})


def test_checkpoint_round_trip(tmp_path):
    path = str(tmp_path / "x.ckpt")
    src = sample_checkpoint()
    ck.save_checkpoint(path, src)
    got = ck.load_checkpoint(path)
    assert got.config == src.config and got.state == src.state
    for k, a in src.arrays.items():
        assert got.arrays[k].dtype == a.dtype and np.array_equal(got.arrays[k], a)


def test_checkpoint_errors_are_distinct():
    data = ck.dumps(sample_checkpoint())
    with pytest.raises(ck.CheckpointTruncatedError):
        ck.loads(data[:40])
    flipped = bytearray(data)
    flipped[60] ^= 0xFF
    with pytest.raises(ck.CheckpointChecksumError):
        ck.loads(bytes(flipped))
    with pytest.raises(ck.CheckpointFormatError):
        ck.loads(b"NOTACKPT" + data[8:])
    with pytest.raises(ck.CheckpointVersionError):
        ck.loads(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(ck.CheckpointShapeError):
        ck.check_shapes({"a": np.zeros((4, 3))}, ck.loads(data).arrays)
    with pytest.raises(ck.CheckpointShapeError):
        ck.check_shapes({"missing": np.zeros(1)}, ck.loads(data).arrays)


def test_corrupt_tail_applies_no_state(tmp_path):
    run = str(tmp_path / "run")
    trainer = train(tiny(total_episodes=1), run)
    before = {k: v.copy() for k, v in trainer.state.arrays().items()}
    path = os.path.join(run, "final.ckpt")
    data = file_bytes(path)
    with open(path, "wb") as fh:
        fh.write(data[:-10])
    with pytest.raises(ck.CheckpointError):
        trainer.load_state(ck.load_checkpoint(path))
    assert all(np.array_equal(before[k], v) for k, v in trainer.state.arrays().items())


# training loop --------------------------------------------------------------------------

def test_same_config_gives_byte_identical_outputs(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    train(tiny(total_episodes=3, variant="bird"), a)
    train(tiny(total_episodes=3, variant="bird"), b)
    for name in ("metrics.csv", "final.ckpt", "config.json"):
        assert file_bytes(os.path.join(a, name)) == file_bytes(os.path.join(b, name))


@pytest.mark.parametrize("variant", ["dreamer", "bird", "soft-bird"])
def test_resume_matches_uninterrupted_training(tmp_path, variant):
    full, part = str(tmp_path / "full"), str(tmp_path / "part")
    train(tiny(total_episodes=10, variant=variant), full)
    train(tiny(total_episodes=5, variant=variant), part)
    train(tiny(total_episodes=10, variant=variant), part, resume=os.path.join(part, "final.ckpt"))
    assert file_bytes(os.path.join(full, "metrics.csv")) == file_bytes(os.path.join(part, "metrics.csv"))
    a = ck.load_checkpoint(os.path.join(full, "final.ckpt"))
    b = ck.load_checkpoint(os.path.join(part, "final.ckpt"))
    assert a.state == b.state and a.arrays.keys() == b.arrays.keys()
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)


def test_env_step_accounting(tmp_path):
    cfg = tiny(total_episodes=2, episode_steps=500, prefill_episodes=2, eval_episodes=0)
    train(cfg, str(tmp_path))
    rows = read_metrics(str(tmp_path / "metrics.csv"))
    assert [r["env_steps"] for r in rows] == [(2 + 1) * 1000, (2 + 2) * 1000]
    assert all(math.isnan(r["eval_return"]) for r in rows)


def test_zero_episodes_only_prefills(tmp_path):
    cfg = tiny(total_episodes=0, prefill_episodes=3)
    trainer = train(cfg, str(tmp_path))
    fresh = Trainer(cfg)
    assert len(trainer.buffer) == 3 and trainer.env_steps == 3 * 40
    for k, a in fresh.state.arrays().items():
        assert np.array_equal(a, trainer.state.arrays()[k])
    assert read_metrics(str(tmp_path / "metrics.csv")) == []


def test_metrics_have_fixed_fields_and_monotone_steps(tmp_path):
    train(tiny(total_episodes=4, batch_length=17), str(tmp_path))
    with open(tmp_path / "metrics.csv") as fh:
        assert fh.readline().strip().split(",") == list(FIELDS)
    rows = read_metrics(str(tmp_path / "metrics.csv"))
    assert [r["episode"] for r in rows] == [1, 2, 3, 4]
    assert all(b["env_steps"] > a["env_steps"] for a, b in zip(rows, rows[1:]))
    assert all(np.isfinite(r["latent_error_k15"]) and np.isfinite(r["latent_error_k1"]) for r in rows)
    assert os.path.exists(tmp_path / "timing.csv")


def test_loop_runs_learning_steps_before_each_episode(tmp_path, monkeypatch):
    from birdrl.harness import loop
    events = []
    real_update, real_play = loop.combined_update, Trainer._play
    monkeypatch.setattr(loop, "combined_update", lambda *a, **k: (events.append("u"), real_update(*a, **k))[1])
    monkeypatch.setattr(Trainer, "_play", lambda self, env, mode: (events.append(mode[0]), real_play(self, env, mode))[1])
    train(tiny(total_episodes=2, prefill_episodes=2), str(tmp_path))
    assert "".join(events) == "rr" + "uue" * 2


# evaluation ------------------------------------------------------------------------------

def test_evaluate_single_episode_and_no_mutation(tmp_path):
    train(tiny(total_episodes=1), str(tmp_path))
    path = str(tmp_path / "final.ckpt")
    digest = hashlib.sha256(file_bytes(path)).hexdigest()
    mean, std = evaluate(path, 1)
    assert std == 0.0 and np.isfinite(mean)
    assert evaluate(path, 2) == evaluate(path, 2)
    assert hashlib.sha256(file_bytes(path)).hexdigest() == digest


def test_evaluate_rejects_incompatible_checkpoint(tmp_path):
    train(tiny(total_episodes=0), str(tmp_path))
    ckpt = ck.load_checkpoint(str(tmp_path / "final.ckpt"))
    ckpt.config["units"] = 16
    with pytest.raises(ck.CheckpointShapeError):
        evaluate(ckpt, 1)


def test_random_baseline_measurement_is_reproducible():
    returns = random_policy_returns("pendulum-swingup", 20, seed=0)
    assert abs(np.mean(returns) - RANDOM_MEAN) < 1e-9 and abs(np.std(returns) - RANDOM_STD) < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_init_policy_is_within_random_band(seed):
    trainer = Trainer(RunConfig(seed=seed, total_episodes=0))
    mean = float(np.mean(trainer.evaluate_policy(2)))
    assert max(0.0, RANDOM_MEAN - 3 * RANDOM_STD) <= mean <= RANDOM_MEAN + 3 * RANDOM_STD


# CLI -------------------------------------------------------------------------------------

def write_config(path, **kw):
    path.write_text(json.dumps({**TINY, **kw}))
    return str(path)


def test_train_without_config_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--checkpoint", "x", "--episodes", "1", "--bogus"])
    assert exc.value.code == 2


def test_train_variant_flag_reaches_config_dump(tmp_path):
    cfg = write_config(tmp_path / "c.json", total_episodes=1, variant="dreamer")
    out = str(tmp_path / "run")
    assert main(["train", "--config", cfg, "--variant", "bird", "--seed", "3", "--out", out]) == 0
    dumped = json.loads((tmp_path / "run" / "config.json").read_text())
    assert dumped["variant"] == "bird" and dumped["seed"] == 3


def test_eval_prints_json(tmp_path, capsys):
    out = str(tmp_path / "run")
    train(tiny(total_episodes=0), out)
    assert main(["eval", "--checkpoint", os.path.join(out, "final.ckpt"), "--episodes", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 1 and report["std"] == 0.0


def test_failures_give_one_line_diagnostic(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--episodes", "1"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("birdrl: error:") and "\n" not in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"horizon": 0}')
    assert main(["train", "--config", str(bad)]) == 1


@pytest.mark.parametrize("jobs", [1, 3])
def test_compare_writes_runs_and_merged_table(tmp_path, jobs):
    a = write_config(tmp_path / "dreamer.json", total_episodes=2, variant="dreamer")
    b = write_config(tmp_path / "bird.json", total_episodes=2, variant="bird")
    out = tmp_path / "cmp"
    assert main(["compare", "--configs", a, b, "--seeds", "0", "1", "2", "--out", str(out), "--jobs", str(jobs)]) == 0
    files = sorted(out.glob("*/seed*/metrics.csv"))
    assert len(files) == 6
    per_run = sum(len(read_metrics(str(f))) for f in files)
    with open(out / "merged.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0].split(",") == ["config", "variant", "seed"] + list(FIELDS)
    assert len(lines) - 1 == per_run == 12
    # threaded runs reproduce the sequential ones
    solo = tmp_path / "solo"
    train(tiny(total_episodes=2, variant="bird", seed=1), str(solo))
    assert file_bytes(out / "bird" / "seed1" / "metrics.csv") == file_bytes(solo / "metrics.csv")


def test_compare_rejects_duplicate_names(tmp_path):
    (tmp_path / "x").mkdir()
    a = write_config(tmp_path / "c.json")
    b = write_config(tmp_path / "x" / "c.json")
    assert main(["compare", "--configs", a, b, "--out", str(tmp_path / "o")]) == 1


def test_baseline_command(capsys):
    assert main(["baseline", "--episodes", "2", "--episode-steps", "50"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 2 and report["mean"] >= 0
