"""
BandINR - Stage I Tests
Loss terms, objective gradients, dataset records, manifest audit and the training loop
"""

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

from src.config import LossWeights, RunConfig
from src.core.exceptions import ConfigError, LayoutMismatchError
from src.modules.data import BandRecord, Dataset, gen_data, make_record, read_header, read_table
from src.modules.diffcore import Adam, SirenArch, Tape, backward, siren_init, siren_with_derivs
from src.modules.diffcore.tensor import abs_, mean, sqrt, square, sum_
from src.modules.networks import EncoderArch, HyperArch, encoder_init, hyper_init, load_checkpoint
from src.modules.pretraining import (QueryCounts, loss_cns, loss_kl, loss_sdf, loss_skel,
                                     loss_weight, pretrain_objective, sample_queries, sdf_terms,
                                     skeleton_term)
from src.modules.pretraining.trainer import LOSS_COLUMNS, pretrain_run, split_entries
from src.modules.simulation import init_band, render_complete, render_partial, sample_viewpoint

TINY_SIREN = SirenArch(latent_dim=4, hidden=(8, 8), first_omega=5.0, input_scale=1.0)
TINY_ENCODER = EncoderArch(latent_dim=4, point_widths=(8, 8), head_widths=(8,))
TINY_HYPER = HyperArch(TINY_SIREN, hidden_width=8, hidden_layers=1, output_scale=1.0)
TINY_COUNTS = QueryCounts(on=8, near=8, off=8, medial=4)


def tiny_run_config(**overrides) -> RunConfig:
    base = {
        "architecture.latent_dim": 4,
        "architecture.encoder_point_widths": [8, 8],
        "architecture.encoder_head_widths": [8],
        "architecture.hyper_hidden_width": 8,
        "architecture.hyper_hidden_layers": 1,
        "architecture.sdf_width": 8,
        "architecture.sdf_hidden_layers": 1,
        "data.inside_diameters": [0.06, 0.10],
        "data.cross_section_diameters": [0.01],
        "data.records_per_class": 2,
        "data.n_nodes": 16,
        "data.cloud_points": 32,
        "data.query_on": 8,
        "data.query_near": 8,
        "data.query_off": 8,
        "data.medial_points": 4,
        "data.workers": 1,
    }
    base.update(overrides)
    return RunConfig().with_overrides(**base)


def constant(values):
    return Tape(enabled=False).constant(np.asarray(values, dtype=np.float64))


# ==================== Loss terms ====================

def test_sdf_terms_vanish_for_an_exact_plane():
    """f(x) = x . n has unit gradient, zero value on the plane and aligned normals"""
    normal = np.array([0.0, 0.0, 1.0])
    rng = np.random.default_rng(0)
    on = np.column_stack([rng.uniform(-1, 1, (5, 2)), np.zeros(5)])
    off = rng.uniform(-1, 1, (7, 3))
    points = np.vstack([on, off])
    tape = Tape(enabled=False)
    values = tape.constant(points @ normal)
    grads = tape.constant(np.tile(normal, (len(points), 1)))
    terms = sdf_terms(values, grads, np.tile(normal, (5, 1)), 5, sdf_alpha=100.0)
    assert terms["eikonal"].item() == pytest.approx(0.0, abs=1e-12)
    assert terms["surface"].item() == pytest.approx(0.0, abs=1e-12)
    expected = np.mean(np.exp(-100.0 * np.abs(off[:, 2])))
    assert terms["off_surface"].item() == pytest.approx(expected, rel=1e-12)


def test_sdf_terms_of_a_zero_field_sum_to_three():
    tape = Tape(enabled=False)
    values = tape.constant(np.zeros(6))
    grads = tape.constant(np.zeros((6, 3)))
    normals = np.tile([1.0, 0.0, 0.0], (2, 1))
    terms = sdf_terms(values, grads, normals, 2, sdf_alpha=100.0)
    total = sum(t.item() for t in terms.values())
    assert total == pytest.approx(3.0)


def test_skeleton_term_clamps_small_laplacians():
    assert skeleton_term(constant([1.0, 1.0]), 1e-3).item() == pytest.approx(0.0, abs=1e-12)
    assert skeleton_term(constant([-5.0]), 1e-3).item() == pytest.approx(-np.log(1e-3))
    assert skeleton_term(constant([np.e ** 2]), 1e-3).item() == pytest.approx(-2.0)


def test_kl_weight_and_consistency_closed_forms():
    assert loss_kl(np.zeros(4), np.ones(4)).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_kl(np.array([1.0]), np.array([1.0])).item() == pytest.approx(0.5)
    assert loss_weight(np.array([1.0, 2.0, 3.0])).item() == pytest.approx(14.0 / 3.0)
    assert loss_cns(np.array([1.0, 0.0]), np.array([0.0, 0.0])).item() == pytest.approx(0.5)
    z = np.random.default_rng(1).standard_normal(8)
    assert loss_cns(z, z).item() == 0.0


# ==================== Objective gradients ====================

@pytest.fixture(scope="module")
def tiny_problem():
    rng = np.random.default_rng(7)
    state = init_band(0.06, 0.01, twist=1, stretch=1.2, seed=7, n_nodes=16)
    complete = render_complete(state, rng, n=24)
    partial = render_partial(state, sample_viewpoint(state, rng), rng, n=16)
    batch = sample_queries(state, TINY_COUNTS, rng)
    encoder = encoder_init(TINY_ENCODER, rng)
    hypernet = hyper_init(TINY_HYPER, rng)
    weights = LossWeights(skel=0.1, kl=1e-2, weight=1e-2, cns=1.0)
    return encoder, hypernet, partial, complete, batch, weights


def _objective(encoder, hypernet, problem):
    _, _, partial, complete, batch, weights = problem
    tape = Tape()
    terms = pretrain_objective(encoder, hypernet, partial, complete, batch, TINY_ENCODER,
                               TINY_HYPER, weights, np.random.default_rng(11), tape)
    return terms, tape


@pytest.mark.parametrize("name", ["encoder", "hypernet"])
def test_objective_gradient_matches_finite_differences(tiny_problem, name):
    encoder, hypernet, *_ = tiny_problem
    terms, tape = _objective(encoder, hypernet, tiny_problem)
    assert terms.is_finite()
    analytic = backward(tape, terms.total)[name].data
    params = {"encoder": encoder, "hypernet": hypernet}
    target = params[name]
    h = 1e-6
    for index in np.random.default_rng(3).choice(len(target), size=6, replace=False):
        shifted = []
        for sign in (1.0, -1.0):
            data = target.data.copy()
            data[index] += sign * h
            trial = dict(params, **{name: target.like(data)})
            shifted.append(_objective(trial["encoder"], trial["hypernet"], tiny_problem)[0].total.item())
        numeric = (shifted[0] - shifted[1]) / (2 * h)
        assert numeric == pytest.approx(analytic[index], rel=1e-4, abs=1e-7)


def test_field_losses_match_their_terms(tiny_problem):
    batch = tiny_problem[4]
    rng = np.random.default_rng(2)
    theta = siren_init(TINY_SIREN, rng)
    tape = Tape(enabled=False)
    z = tape.constant(rng.normal(size=4))
    out = siren_with_derivs(theta, batch.all_points, z, TINY_SIREN, tape)
    terms = sdf_terms(out.value, out.grad, batch.on_normals, len(batch.on_points), 100.0)
    expected = sum(t.item() for t in terms.values())
    assert loss_sdf(theta, z, batch, TINY_SIREN, 100.0, tape).item() == pytest.approx(expected, rel=1e-12)
    medial = siren_with_derivs(theta, batch.medial, z, TINY_SIREN, tape)
    skel = loss_skel(theta, z, batch.medial, TINY_SIREN, 1e-3, tape)
    assert skel.item() == pytest.approx(skeleton_term(medial.laplacian, 1e-3).item(), rel=1e-12)


def test_field_loss_gradient_matches_finite_differences(tiny_problem):
    batch = tiny_problem[4]
    rng = np.random.default_rng(4)
    theta = siren_init(TINY_SIREN, rng)
    z_value = rng.normal(size=4)

    def evaluate(vector):
        tape = Tape()
        theta_t = tape.watch(vector, "theta")
        z = tape.constant(z_value)
        loss = (loss_sdf(theta_t, z, batch, TINY_SIREN, 100.0, tape)
                + loss_skel(theta_t, z, batch.medial, TINY_SIREN, 1e-3, tape) * 0.1)
        return loss, tape

    loss, tape = evaluate(theta)
    analytic = backward(tape, loss)["theta"].data
    h = 1e-6
    for index in np.random.default_rng(5).choice(len(theta), size=6, replace=False):
        shifted = []
        for sign in (1.0, -1.0):
            data = theta.data.copy()
            data[index] += sign * h
            shifted.append(evaluate(theta.like(data))[0].item())
        numeric = (shifted[0] - shifted[1]) / (2 * h)
        assert numeric == pytest.approx(analytic[index], rel=1e-4, abs=1e-7)


def test_normal_term_is_bounded_once_gradients_have_unit_norm(tiny_problem):
    batch = tiny_problem[4]
    rng = np.random.default_rng(6)
    optimizer = Adam(siren_init(TINY_SIREN, rng), lr=1e-2)
    z_value = rng.normal(size=4)

    def eikonal(theta):
        tape = Tape()
        theta_t = tape.watch(theta, "theta")
        out = siren_with_derivs(theta_t, batch.on_points, tape.constant(z_value), TINY_SIREN, tape)
        return mean(abs_(sqrt(sum_(square(out.grad), axis=1)) - 1.0)), tape

    start = eikonal(optimizer.params)[0].item()
    for step in range(300):
        optimizer.lr = 1e-2 if step < 200 else 1e-3
        loss, tape = eikonal(optimizer.params)
        optimizer.step(backward(tape, loss)["theta"])
    assert eikonal(optimizer.params)[0].item() < start

    frozen = Tape(enabled=False)
    out = siren_with_derivs(optimizer.params, batch.on_points, frozen.constant(z_value), TINY_SIREN, frozen)
    grads = out.grad.data
    norms = np.linalg.norm(grads, axis=1)
    normal_term = 1.0 - np.sum(grads * batch.on_normals, axis=1)
    assert np.all(normal_term >= 1.0 - norms - 1e-12)
    assert np.all(normal_term <= 1.0 + norms + 1e-12)
    unit = np.abs(norms - 1.0) <= 0.1
    assert unit.any()
    assert np.all(normal_term[unit] >= -0.1) and np.all(normal_term[unit] <= 2.1)


def test_zero_skeleton_weight_skips_the_term(tiny_problem):
    encoder, hypernet, partial, complete, batch, weights = tiny_problem
    tape = Tape()
    no_skel = LossWeights(skel=0.0, kl=weights.kl, weight=weights.weight, cns=weights.cns)
    terms = pretrain_objective(encoder, hypernet, partial, complete, batch, TINY_ENCODER,
                               TINY_HYPER, no_skel, np.random.default_rng(11), tape)
    assert terms.skel.item() == 0.0
    assert terms.values()["skel"] == 0.0


# ==================== Records and dataset ====================

def test_record_round_trip_is_bit_exact():
    record = make_record(0.06, 0.01, twist=1, stretch=1.2, seed=3, class_id="class_060_10",
                         record_id="class_060_10/rec_00000", counts=TINY_COUNTS,
                         cloud_points=32, n_nodes=16)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "r.rec"
        record.save(path)
        loaded = BandRecord.load(path)
    assert loaded.labels == record.labels
    for name in ("partial", "complete", "nodes"):
        assert getattr(loaded, name).tobytes() == getattr(record, name).tobytes()
    assert loaded.queries.on_normals.tobytes() == record.queries.on_normals.tobytes()
    assert loaded.queries.medial.shape == (4, 3)


def test_record_rejects_a_foreign_header():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bad.rec"
        path.write_bytes(b'{"format": "something-else", "version": 1}\n')
        with pytest.raises(LayoutMismatchError):
            BandRecord.load(path)


@pytest.fixture(scope="module")
def tiny_dataset():
    with tempfile.TemporaryDirectory() as tmp:
        config = tiny_run_config(seed=5)
        root = gen_data(config, Path(tmp) / "dataset")
        yield config, Dataset.open(root)


def test_gen_data_writes_counts_and_manifest(tiny_dataset):
    config, dataset = tiny_dataset
    manifest = dataset.manifest
    assert manifest["counts"] == {"classes": 2, "records": 4}
    assert manifest["config_hash"] == config.config_hash()
    assert manifest["seed"] == 5
    assert dataset.class_ids == ["class_060_10", "class_100_10"]
    for entry in dataset.entries:
        record = dataset.load(entry)
        assert record.record_id == entry["record_id"]
        assert abs(record.twist) <= config.data.max_twist
        assert record.partial.shape == (32, 3)


def test_gen_data_is_deterministic(tiny_dataset):
    config, dataset = tiny_dataset
    with tempfile.TemporaryDirectory() as tmp:
        again = Dataset.open(gen_data(config, Path(tmp)))
    assert [e["sha256"] for e in again.entries] == [e["sha256"] for e in dataset.entries]


def test_split_and_holdout_audit(tiny_dataset):
    _, dataset = tiny_dataset
    seen = dataset.select("seen", "class_060_10")
    unseen = dataset.select("unseen", "class_060_10")
    assert {e["class_id"] for e in seen} == {"class_100_10"}
    assert {e["class_id"] for e in unseen} == {"class_060_10"}
    dataset.audit_holdout([e["sha256"] for e in seen], "class_060_10")
    with pytest.raises(ConfigError):
        dataset.audit_holdout([unseen[0]["sha256"]], "class_060_10")
    with pytest.raises(ConfigError):
        dataset.select("unseen", None)


def test_split_entries_keeps_small_pools_whole():
    entries = [{"id": i} for i in range(3)]
    train, validation = split_entries(entries, 2, np.random.default_rng(0))
    assert len(train) == 3 and len(validation) == 2
    train, validation = split_entries([{"id": i} for i in range(10)], 2, np.random.default_rng(0))
    assert len(train) == 8 and len(validation) == 2
    assert not {e["id"] for e in train} & {e["id"] for e in validation}


# ==================== Training loop ====================

def test_pretrain_run_writes_curves_and_checkpoint(tiny_dataset):
    config, dataset = tiny_dataset
    config = config.with_overrides(**{
        "pretrain.holdout_class": "class_060_10",
        "pretrain.validation_records": 1,
        "pretrain.validation_interval": 0,
        "pretrain.checkpoint_interval": 0,
    })
    with tempfile.TemporaryDirectory() as tmp:
        result = pretrain_run(dataset, config.losses, config, Path(tmp), steps=2)
        curve = read_table(Path(tmp) / "loss_curve.csv")
        header = read_header(Path(tmp) / "loss_curve.csv")
        checkpoint = load_checkpoint(result.checkpoint)

    assert list(curve.columns) == LOSS_COLUMNS
    assert curve["step"].tolist() == [0, 1]
    assert np.all(np.isfinite(curve["total"]))
    assert header["config_hash"] == config.config_hash()
    assert header["seed"] == str(config.seed)
    assert len(result.validation) == 1
    assert {"encoder", "hypernet"} <= set(checkpoint.params)
    assert checkpoint.meta["holdout_class"] == "class_060_10"
    dataset.audit_holdout(checkpoint.meta["trained_on"], "class_060_10")


def test_pretrain_run_repeats_its_loss_curve(tiny_dataset):
    config, dataset = tiny_dataset
    config = config.with_overrides(**{
        "pretrain.validation_interval": 0,
        "pretrain.checkpoint_interval": 0,
    })
    curves = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            pretrain_run(dataset, config.losses, config, Path(tmp) / run, steps=3)
            curves.append(read_table(Path(tmp) / run / "loss_curve.csv"))
    pd.testing.assert_frame_equal(curves[0], curves[1], check_exact=True)


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("BandINR - Stage I Tests")
    logger.info("=" * 60)
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
