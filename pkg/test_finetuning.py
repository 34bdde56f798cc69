"""
BandINR - Stage II Tests
Reward, episode buffer, retrieval and alignment, InfoNCE, EMA keys, SAC and the training loop
"""

import sys
import tempfile
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent))

import logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.config import RunConfig, SacConfig
from src.core.exceptions import BufferTooSmallError, ParameterRangeError, ShapeMismatchError
from src.modules.data import read_table
from src.modules.diffcore import Tape, backward
from src.modules.geometry import chamfer
from src.modules.finetuning import (PRESETS, BandEnv, ContrastiveBatch, Episode, EpisodeRecorder,
                                    KeyEmbeddingCache, ReplayBuffer, SacAgent, actor_loss,
                                    alpha_loss, critic_loss, critic_targets, d_sg, dtw_align,
                                    ema_update, info_nce, matched_index, reward, reward_from_cd,
                                    sac_update, select_query_key, soft_update, top_m_similar)
from src.modules.finetuning.trainer import CURVE_COLUMNS, FinetuneTrainer, finetune_run, load_agent
from src.modules.networks import EncoderArch, PolicyArch, embed, encoder_init, load_checkpoint

TINY_ENCODER = EncoderArch(latent_dim=4, point_widths=(8, 8), head_widths=(8,))
TINY_POLICY = PolicyArch(latent_dim=4, hidden=(8,))


def random_episode(rng, steps=3, points=8, success=False) -> Episode:
    return Episode(rng.normal(size=(steps + 1, 14)),
                   rng.uniform(-0.05, 0.05, (steps + 1, points, 3)),
                   rng.uniform(-1, 1, (steps, 7)), rng.normal(size=steps),
                   np.arange(steps) == steps - 1, success)


def tiny_agent(seed=0) -> SacAgent:
    rng = np.random.default_rng(seed)
    return SacAgent.create(TINY_POLICY, TINY_ENCODER, encoder_init(TINY_ENCODER, rng), rng)


# ==================== Reward and presets ====================

def test_reward_examples():
    assert reward_from_cd(0.005, 0.01, 10.0) == pytest.approx(100.0 - 0.05)
    assert reward_from_cd(0.02, 0.01, 10.0) == pytest.approx(-0.2)
    assert reward_from_cd(0.01, 0.01, 10.0) == pytest.approx(100.0 - 0.1)
    cloud = np.random.default_rng(0).normal(size=(32, 3))
    assert reward(cloud, cloud) == pytest.approx(100.0)


def test_preset_masks():
    assert PRESETS["stretch-place"].dof == 4
    assert PRESETS["untwist"].dof == 5
    assert PRESETS["install"].dof == 4
    assert all(len(p.mask) == 7 and p.mask[-1] == 1 for p in PRESETS.values())
    assert PRESETS["untwist"].gravity and not PRESETS["install"].gravity


def test_stretch_place_goal_is_reached_by_the_reference_pull():
    config = RunConfig().with_overrides(**{"data.inside_diameters": [0.14],
                                           "data.cross_section_diameters": [0.02]})
    env = BandEnv(config.task, config.sac, config.data, seed=5)
    env.reset()
    start = env.layout.band.nodes[env.layout.grasp_node].copy()
    assert len(env.layout.obstacles) == 1
    assert chamfer(env.current_cloud(), env.goal_cloud) > env.delta

    result = env.step(env.scripted_action())
    while not result.done:
        result = env.step(env.scripted_action())
    assert result.success
    assert result.cd <= env.delta
    assert np.linalg.norm(env.scene.gripper.position - start) > 0.05


def test_presets_without_reference_motion_have_no_script():
    config = RunConfig().with_overrides(**{"task.preset": "install", "data.n_nodes": 16,
                                           "data.cloud_points": 32})
    env = BandEnv(config.task, config.sac, config.data, seed=0)
    env.reset()
    assert env.layout.target is None
    with pytest.raises(ParameterRangeError):
        env.scripted_action()


# ==================== Episodes and buffer ====================

def test_episode_arrays_are_read_only():
    episode = random_episode(np.random.default_rng(0))
    with pytest.raises(ValueError):
        episode.rewards[0] = 1.0
    with pytest.raises(ValueError):
        episode.clouds[0, 0, 0] = 1.0
    t = episode.transition(1)
    assert np.array_equal(t.next_proprio, episode.proprio[2])


def test_episode_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatchError):
        Episode(rng.normal(size=(3, 14)), rng.normal(size=(3, 8, 3)), rng.normal(size=(3, 7)),
                np.zeros(3), np.zeros(3, dtype=bool))
    with pytest.raises(ParameterRangeError):
        Episode(rng.normal(size=(4, 14)), rng.normal(size=(4, 8, 3)), rng.normal(size=(3, 7)),
                np.array([0.0, np.nan, 0.0]), np.zeros(3, dtype=bool))


def test_recorder_seals_consistent_episode():
    rng = np.random.default_rng(1)
    recorder = EpisodeRecorder(np.zeros(14), rng.normal(size=(8, 3)))
    for t in range(3):
        recorder.add(np.zeros(7), -1.0, t == 2, np.full(14, t + 1.0), rng.normal(size=(8, 3)),
                     success=t == 1)
    episode = recorder.seal()
    assert len(episode) == 3 and episode.success
    assert episode.episode_return == pytest.approx(-3.0)
    assert episode.proprio[3, 0] == 3.0


def test_ring_buffer_overwrites_oldest():
    rng = np.random.default_rng(2)
    buffer = ReplayBuffer(capacity=2)
    episodes = [random_episode(rng, steps=s) for s in (2, 3, 4)]
    for e in episodes:
        buffer.add(e)
    assert len(buffer) == 2
    assert buffer.added == 3
    assert {e.episode_id for e in buffer.stored()} == {1, 2}
    assert buffer.n_transitions == 7
    batch = buffer.sample(5, rng)
    assert batch.proprio.shape == (5, 14)
    assert batch.clouds.shape == (5, 8, 3)
    assert batch.dones.shape == (5,)


# ==================== Retrieval and alignment ====================

def test_d_sg_uses_start_and_goal():
    a = np.array([[1.0, 0.0], [5.0, 5.0], [0.0, 1.0]])
    b = np.array([[2.0, 0.0], [0.0, 3.0]])
    assert d_sg(a, b) == pytest.approx(2.0 + 3.0)
    with pytest.raises(ParameterRangeError):
        d_sg(a[:1], b)


def test_top_m_matches_exhaustive_ranking():
    rng = np.random.default_rng(3)
    endpoints = [rng.normal(size=(2, 4)) for _ in range(9)]
    scores = {j: d_sg(endpoints[4], endpoints[j]) for j in range(9) if j != 4}
    expected = sorted(scores, key=lambda j: (-scores[j], j))[:3]
    assert top_m_similar(endpoints, 4, 3) == expected


def _exhaustive_dtw(a, b):
    local = cdist(a, b)
    n, m = local.shape
    best = np.inf

    def walk(i, j, cost):
        nonlocal best
        cost += local[i, j]
        if (i, j) == (n - 1, m - 1):
            best = min(best, cost)
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best


@pytest.mark.parametrize("n,m", [(1, 1), (2, 5), (4, 4), (6, 3), (6, 6)])
def test_dtw_matches_exhaustive_alignment(n, m):
    rng = np.random.default_rng(n * 10 + m)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    cost, path = dtw_align(a, b)
    assert cost == pytest.approx(_exhaustive_dtw(a, b), rel=1e-12)
    assert path[0] == (0, 0) and path[-1] == (n - 1, m - 1)
    assert all(0 <= i2 - i1 <= 1 and 0 <= j2 - j1 <= 1
               for (i1, j1), (i2, j2) in zip(path, path[1:]))
    local = cdist(a, b)
    assert sum(local[i, j] for i, j in path) == pytest.approx(cost, rel=1e-12)


def test_dtw_of_identical_sequences_is_the_diagonal():
    seq = np.random.default_rng(4).normal(size=(5, 4))
    cost, path = dtw_align(seq, seq)
    assert cost == 0.0
    assert path == [(i, i) for i in range(5)]
    assert matched_index([(0, 0), (1, 1), (1, 2), (1, 3), (2, 4)], 1) == 2


def test_identical_episodes_give_same_time_positive():
    rng = np.random.default_rng(5)
    episode = random_episode(rng, steps=4)
    twin = Episode(episode.proprio, episode.clouds, episode.actions, episode.rewards,
                   episode.dones)
    encoder = encoder_init(TINY_ENCODER, rng)
    cache = KeyEmbeddingCache(encoder, TINY_ENCODER, points=4)
    batch = select_query_key([episode, twin], 0, 2, m=1, k=3, rng=rng, cache=cache,
                             encode_query=lambda c: embed(encoder, c, TINY_ENCODER))
    assert batch.positive_episode == 1
    assert batch.t_prime == 2
    assert batch.z_minus.shape == (3, 4)
    assert all(j != 0 for j, _ in batch.negative_sources)
    assert np.allclose(batch.z_plus, embed(encoder, episode.clouds[2].astype(np.float64),
                                           TINY_ENCODER))


def test_key_selection_needs_m_plus_one_episodes():
    rng = np.random.default_rng(6)
    encoder = encoder_init(TINY_ENCODER, rng)
    cache = KeyEmbeddingCache(encoder, TINY_ENCODER)
    with pytest.raises(BufferTooSmallError):
        select_query_key([random_episode(rng)], 0, 0, m=1, k=2, rng=rng, cache=cache,
                         encode_query=lambda c: embed(encoder, c, TINY_ENCODER))


# ==================== InfoNCE and EMA ====================

def test_info_nce_closed_forms():
    keys = np.random.default_rng(7).normal(size=(5, 3))
    uniform = ContrastiveBatch(np.zeros(3), keys[0], keys[1:], tau=0.1)
    assert info_nce(uniform).item() == pytest.approx(np.log(5.0))
    confident = ContrastiveBatch(np.array([10.0]), np.array([1.0]), np.array([[0.0]]), tau=1.0)
    assert info_nce(confident).item() == pytest.approx(np.log1p(np.exp(-10.0)))


def test_info_nce_falls_as_the_positive_logit_rises():
    rng = np.random.default_rng(9)
    z_q, base, negatives = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(5, 4))
    losses = []
    for lift in np.linspace(-2.0, 2.0, 9):
        z_plus = base + lift * z_q / (z_q @ z_q)
        losses.append(info_nce(ContrastiveBatch(z_q, z_plus, negatives, tau=0.5)).item())
    assert np.all(np.diff(losses) < 0.0)


def test_info_nce_gradient_matches_closed_form():
    rng = np.random.default_rng(8)
    z_q, keys, tau = rng.normal(size=4), rng.normal(size=(6, 4)), 0.5
    tape = Tape()
    leaf = tape.leaf(z_q)
    loss = info_nce(ContrastiveBatch(leaf, keys[0], keys[1:], tau))
    grad = backward(tape, loss, wrt=[leaf])[leaf.index]
    logits = keys @ z_q / tau
    p = np.exp(logits - logits.max())
    p /= p.sum()
    assert np.allclose(grad, (p @ keys - keys[0]) / tau, rtol=1e-10, atol=1e-12)


def test_ema_update_limits():
    rng = np.random.default_rng(9)
    key = encoder_init(TINY_ENCODER, rng)
    online = encoder_init(TINY_ENCODER, rng)
    assert np.array_equal(ema_update(key, online, 0.0).data, online.data)
    assert np.array_equal(ema_update(key, online, 1.0).data, key.data)
    mixed = ema_update(key, online, 0.99)
    assert np.allclose(mixed.data, 0.99 * key.data + 0.01 * online.data)
    with pytest.raises(ParameterRangeError):
        ema_update(key, online, 1.5)
    assert np.array_equal(soft_update(key, online, 1.0).data, online.data)


# ==================== SAC ====================

@pytest.fixture
def sac_batch():
    rng = np.random.default_rng(10)
    buffer = ReplayBuffer(4)
    for _ in range(2):
        buffer.add(random_episode(rng, steps=3))
    return buffer.sample(4, rng)


def test_terminal_targets_equal_rewards(sac_batch):
    agent = tiny_agent()
    sac_batch.dones[:] = 1.0
    targets = critic_targets(agent, sac_batch, SacConfig(), np.random.default_rng(0))
    assert np.array_equal(targets, sac_batch.rewards)


def test_critic_loss_gradient_matches_finite_differences(sac_batch):
    agent = tiny_agent(1)
    targets = np.random.default_rng(1).normal(size=len(sac_batch))

    def evaluate(critic, encoder):
        tape = Tape()
        loss, _, _ = critic_loss(critic, encoder, agent, sac_batch, targets, tape)
        return loss, tape

    loss, tape = evaluate(agent.critic, agent.encoder)
    grads = backward(tape, loss)
    h = 1e-6
    for name in ("critic", "encoder"):
        params = getattr(agent, name)
        for index in np.random.default_rng(2).choice(len(params), size=5, replace=False):
            values = []
            for sign in (1.0, -1.0):
                data = params.data.copy()
                data[index] += sign * h
                shifted = {"critic": agent.critic, "encoder": agent.encoder, name: params.like(data)}
                values.append(evaluate(shifted["critic"], shifted["encoder"])[0].item())
            numeric = (values[0] - values[1]) / (2 * h)
            assert numeric == pytest.approx(grads[name].data[index], rel=1e-4, abs=1e-7)


def test_actor_loss_gradient_matches_finite_differences(sac_batch):
    agent = tiny_agent(2)
    z = np.random.default_rng(3).normal(size=(len(sac_batch), 4))

    def evaluate(actor):
        tape = Tape()
        loss, _ = actor_loss(actor, agent, sac_batch.proprio, z, np.random.default_rng(4), tape)
        return loss, tape

    loss, tape = evaluate(agent.actor)
    grad = backward(tape, loss)["actor"].data
    h = 1e-6
    for index in np.random.default_rng(5).choice(len(agent.actor), size=6, replace=False):
        values = []
        for sign in (1.0, -1.0):
            data = agent.actor.data.copy()
            data[index] += sign * h
            values.append(evaluate(agent.actor.like(data))[0].item())
        assert (values[0] - values[1]) / (2 * h) == pytest.approx(grad[index], rel=1e-4, abs=1e-7)


def test_alpha_gradient_tracks_the_entropy_target():
    agent = tiny_agent()
    # entropy -2 above a target of -7: positive gradient, alpha shrinks
    tape = Tape()
    loss = alpha_loss(agent.log_alpha, np.full(4, 2.0), -7.0, tape)
    assert backward(tape, loss)["log_alpha"].data[0] == pytest.approx(5.0)
    tape = Tape()
    # entropy -10 below the target: alpha grows
    loss = alpha_loss(agent.log_alpha, np.full(4, 10.0), -7.0, tape)
    assert backward(tape, loss)["log_alpha"].data[0] < 0.0


def test_sac_update_leaves_the_key_encoder_alone(sac_batch):
    agent = tiny_agent(3)
    key_before = agent.key_encoder.data.copy()
    encoder_before = agent.encoder.data.copy()
    target_before = agent.critic_target.data.copy()
    losses = sac_update(agent, sac_batch, SacConfig(batch_size=4), np.random.default_rng(6))
    assert np.array_equal(agent.key_encoder.data, key_before)
    assert not np.array_equal(agent.encoder.data, encoder_before)
    assert not np.array_equal(agent.critic_target.data, target_before)
    assert all(np.isfinite(v) for v in losses.as_dict().values())


# ==================== Training loop ====================

def tiny_finetune_config(**overrides) -> RunConfig:
    base = {
        "finetune_variant": "no-pretrain",
        "architecture.latent_dim": 4,
        "architecture.encoder_point_widths": [8, 8],
        "architecture.encoder_head_widths": [8],
        "architecture.policy_hidden": [8],
        "data.inside_diameters": [0.06],
        "data.cross_section_diameters": [0.01],
        "data.n_nodes": 16,
        "data.cloud_points": 32,
        "task.max_steps": 3,
        "sac.warmup_steps": 2,
        "sac.batch_size": 4,
        "contrastive.top_m": 1,
        "contrastive.negatives": 2,
        "contrastive.episodes_per_batch": 1,
        "contrastive.retrieval_points": 8,
    }
    base.update(overrides)
    return RunConfig(stage="finetune").with_overrides(**base)


def test_finetune_run_writes_curve_and_checkpoint():
    config = tiny_finetune_config()
    with tempfile.TemporaryDirectory() as tmp:
        result = finetune_run(config, Path(tmp), episodes=2)
        curve = read_table(Path(tmp) / "reward_curve.csv")
        checkpoint = load_checkpoint(result.checkpoint)
        agent = load_agent(result.checkpoint, config)

    assert list(curve.columns) == CURVE_COLUMNS
    assert curve["episode"].tolist() == [0, 1]
    assert (curve["length"] <= 3).all()
    assert np.isnan(curve["infonce_loss"][0])
    assert np.isfinite(curve["infonce_loss"][1])
    assert {"encoder", "key_encoder", "actor", "critic", "critic_target",
            "log_alpha"} <= set(checkpoint.params)
    assert checkpoint.meta["variant"] == "no-pretrain"
    assert np.array_equal(agent.actor.data, result.agent.actor.data)


def test_no_contrastive_variant_skips_infonce():
    with tempfile.TemporaryDirectory() as tmp:
        trainer = FinetuneTrainer(tiny_finetune_config(), Path(tmp))
    trainer.variant = "no-contrastive"
    rows = [trainer.run_episode() for _ in range(2)]
    assert len(trainer.buffer) == 2
    assert all(np.isnan(row["infonce_loss"]) for row in rows)


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("BandINR - Stage II Tests")
    logger.info("=" * 60)
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
