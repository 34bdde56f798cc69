"""
BandINR - Pipeline Tests
Run configuration, evaluation stages and the command-line entry point
"""

import json
import sys
import tempfile
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent))

import logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

import numpy as np
import pandas as pd
import pytest

from src.config import RunConfig
from src.core.exceptions import ConfigError
from src.main import main as cli_main
from src.modules.data import Dataset, gen_data, make_record, read_header, read_table
from src.modules.evaluation import (LABEL_COLUMNS, RECON_COLUMNS, SUMMARY_COLUMNS, class_means,
                                    eval_policy, eval_recon, export_embeddings, holdout_for,
                                    oracle_score, score_field, twist_separability,
                                    wilson_interval, z_columns)
from src.modules.networks import ShapeModel
from src.modules.pretraining import QueryCounts
from src.modules.simulation import true_sdf


# ==================== Run configuration ====================

def test_overrides_reach_nested_sections():
    config = RunConfig().with_overrides(**{"task.preset": "untwist", "seed": 4, "sac.gamma": None})
    assert config.task.preset == "untwist"
    assert config.seed == 4
    assert config.sac.gamma == RunConfig().sac.gamma


def test_unknown_override_keys_are_rejected():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**{"task.speed": 1})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**{"nowhere.preset": "untwist"})


def test_config_hash_is_stable_and_sensitive():
    a, b = RunConfig(seed=1), RunConfig(seed=1)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_overrides(**{"contrastive.tau": 0.2}).config_hash()
    assert RunConfig.from_dict(a.to_dict()).config_hash() == a.config_hash()
    assert f"config_hash={a.config_hash()}" in a.header()


def test_config_file_round_trip():
    config = RunConfig().with_overrides(**{"task.preset": "install", "budget.eval_trials": 5})
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "run.json"
        path.write_text(config.to_json(), encoding="utf-8")
        assert RunConfig.load(path).config_hash() == config.config_hash()
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.load(path)


@pytest.mark.parametrize("overrides", [
    {"stage": "eval-policy", "task.preset": "juggle"},
    {"stage": "eval-policy", "sac.gamma": 1.0},
    {"stage": "eval-policy", "contrastive.momentum": 1.5},
    {"stage": "eval-policy", "losses.kl": -1.0},
    {"stage": "eval-recon", "dataset": "/nonexistent/bandinr"},
])
def test_validate_rejects_bad_settings(overrides):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**overrides).validate()


def test_finetune_without_pretraining_needs_no_checkpoint():
    RunConfig().with_overrides(stage="finetune", finetune_variant="no-pretrain").validate()
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(stage="finetune").validate()


# ==================== Policy evaluation ====================

def test_wilson_interval_known_values():
    low, high = wilson_interval(5, 10)
    assert low == pytest.approx(0.2366, abs=1e-4)
    assert high == pytest.approx(0.7634, abs=1e-4)
    low, high = wilson_interval(0, 20)
    assert low == pytest.approx(0.0, abs=1e-12) and 0.0 < high < 0.2
    assert all(np.isnan(v) for v in wilson_interval(0, 0))


def tiny_policy_config() -> RunConfig:
    return RunConfig(stage="eval-policy", policy="random").with_overrides(**{
        "data.n_nodes": 16,
        "data.cloud_points": 32,
        "task.max_steps": 3,
    })


def test_zero_trials_give_an_empty_report():
    report = eval_policy(tiny_policy_config(), None, 0)
    assert report.trials.empty
    assert report.summary["n_trials"] == 0
    assert np.isnan(report.rate)


def test_random_policy_rollouts_respect_the_step_limit():
    report = eval_policy(tiny_policy_config(), None, 2)
    assert len(report.trials) == 2
    assert (report.trials["steps"] <= 3).all()
    assert (report.trials["best_cd"] <= report.trials["final_cd"]).all()
    assert report.summary["policy"] == "random"
    assert 0.0 <= report.summary["ci_low"] <= report.summary["ci_high"] <= 1.0


# ==================== Reconstruction ====================

@pytest.fixture(scope="module")
def ring_record():
    return make_record(0.06, 0.01, twist=0, stretch=1.0, seed=2, class_id="class_060_10",
                       record_id="class_060_10/rec_00000",
                       counts=QueryCounts(on=8, near=8, off=8, medial=4),
                       cloud_points=256, n_nodes=24)


def test_true_field_reconstructs_within_tube_radius(ring_record):
    rng = np.random.default_rng(0)
    oracle = oracle_score(ring_record, 48, rng)
    assert not oracle.empty_mesh
    assert oracle.emd_solver == "hungarian"
    assert oracle.cd < 0.5 * ring_record.d_csd
    state = ring_record.band_state()
    offset = np.array([0.02, 0.0, 0.0])
    shifted = score_field(lambda x: true_sdf(state, x - offset), ring_record, 48, rng)
    assert shifted.cd > oracle.cd
    assert shifted.emd > oracle.emd


def test_field_without_surface_scores_nan(ring_record):
    score = score_field(lambda x: np.ones(len(x)), ring_record, 16, np.random.default_rng(0))
    assert score.empty_mesh
    assert np.isnan(score.cd) and np.isnan(score.emd)
    assert score.row()["empty_mesh"] == 1


@pytest.fixture(scope="module")
def tiny_dataset():
    config = RunConfig(seed=1).with_overrides(**{
        "architecture.latent_dim": 4,
        "architecture.encoder_point_widths": [8, 8],
        "architecture.encoder_head_widths": [8],
        "architecture.hyper_hidden_width": 8,
        "architecture.hyper_hidden_layers": 1,
        "architecture.sdf_width": 8,
        "architecture.sdf_hidden_layers": 1,
        "data.inside_diameters": [0.06],
        "data.cross_section_diameters": [0.01, 0.02],
        "data.records_per_class": 2,
        "data.n_nodes": 16,
        "data.cloud_points": 32,
        "data.query_on": 8,
        "data.query_near": 8,
        "data.query_off": 8,
        "data.medial_points": 4,
        "data.workers": 1,
    })
    with tempfile.TemporaryDirectory() as tmp:
        dataset = Dataset.open(gen_data(config, Path(tmp) / "dataset"))
        model = ShapeModel.create(config.architecture, np.random.default_rng(0))
        yield model, dataset


def test_eval_recon_scores_every_record_in_order(tiny_dataset):
    model, dataset = tiny_dataset
    entries = dataset.select("all")
    frame = eval_recon(model, dataset, entries, resolution=12, seed=0)
    assert list(frame.columns) == RECON_COLUMNS
    assert frame["record"].tolist() == [e["record_id"] for e in entries]
    for _, row in frame.iterrows():
        assert row["empty_mesh"] == 1 or np.isfinite(row["cd"])


def test_eval_recon_repeats_bit_exactly(tiny_dataset):
    model, dataset = tiny_dataset
    entries = dataset.select("all")
    first = eval_recon(model, dataset, entries, resolution=12, seed=0)
    again = eval_recon(model, dataset, entries, resolution=12, seed=0)
    pd.testing.assert_frame_equal(first, again, check_exact=True)
    assert first[["cd", "emd"]].to_numpy().tobytes() == again[["cd", "emd"]].to_numpy().tobytes()


def test_export_embeddings_carries_labels(tiny_dataset):
    model, dataset = tiny_dataset
    entries = dataset.select("all")
    frame = export_embeddings(model.encoder, model.encoder_arch, dataset, entries)
    assert list(frame.columns) == z_columns(4) + LABEL_COLUMNS
    assert len(frame) == 4
    record = dataset.load(entries[0])
    assert np.allclose(frame.loc[0, z_columns(4)].to_numpy(dtype=np.float64),
                       model.embed(record.partial))
    assert set(frame["class"]) == {e["class_id"] for e in entries}


def test_class_means_skip_empty_meshes():
    frame = pd.DataFrame([
        {"record": "a/0", "class": "a", "cd": 1.0, "emd": 2.0, "emd_solver": "hungarian", "empty_mesh": 0},
        {"record": "a/1", "class": "a", "cd": 3.0, "emd": 4.0, "emd_solver": "hungarian", "empty_mesh": 0},
        {"record": "a/2", "class": "a", "cd": np.nan, "emd": np.nan, "emd_solver": "none", "empty_mesh": 1},
    ])
    means = class_means(frame)
    assert means.loc[0, "cd"] == pytest.approx(2.0)
    assert means.loc[0, "records"] == 3
    assert means.loc[0, "empty_meshes"] == 1


def test_holdout_prefers_the_checkpoint():
    assert holdout_for({"holdout_class": "class_060_10"}, "class_100_10") == "class_060_10"
    assert holdout_for({}, "class_100_10") == "class_100_10"
    assert holdout_for({}, None) is None


# ==================== Separability ====================

def synthetic_embeddings(n=40, seed=0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    twist = np.where(np.arange(n) % 2 == 0, 1, -1)
    return pd.DataFrame({
        "z_0": twist + 0.1 * rng.normal(size=n),
        "z_1": rng.normal(size=n),
        "record": [f"c/rec_{i:05d}" for i in range(n)],
        "class": "c",
        "seed": np.arange(n),
        "twist": twist,
        "stretch": 1.0,
        "d_id": 0.06,
        "d_csd": 0.01,
    })


def test_separable_twist_embeddings_classify_perfectly():
    result = twist_separability(synthetic_embeddings())
    assert result.test_accuracy == 1.0
    assert result.n_train + result.n_test == 40
    assert result.n_test == 12


def test_separability_needs_both_signs():
    frame = synthetic_embeddings()
    with pytest.raises(ConfigError):
        twist_separability(frame[frame["twist"] > 0])


# ==================== Command line ====================

def test_cli_reports_configuration_errors_with_exit_code_two():
    with tempfile.TemporaryDirectory() as tmp:
        code = cli_main(["eval-recon", "--dataset", str(Path(tmp) / "missing"),
                         "--checkpoint", str(Path(tmp) / "none"), "--out", tmp])
    assert code == 2


def test_cli_random_policy_with_no_trials_writes_an_empty_summary():
    with tempfile.TemporaryDirectory() as tmp:
        config = Path(tmp) / "run.json"
        config.write_text(json.dumps({"data": {"n_nodes": 16, "cloud_points": 32}}), encoding="utf-8")
        code = cli_main(["eval-policy", "--config", str(config), "--policy", "random",
                         "--trials", "0", "--seed", "3", "--out", tmp])
        summary = read_table(Path(tmp) / "policy_summary.csv")
        header = read_header(Path(tmp) / "policy_summary.csv")

    assert code == 0
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert summary.loc[0, "n_trials"] == 0
    assert header["seed"] == "3"
    assert header["policy"] == "random"


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("BandINR - Pipeline Tests")
    logger.info("=" * 60)
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
