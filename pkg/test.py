"""
BandINR - Simple Test Script
Quick smoke checks of every package; the per-module suites live in test_*.py
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent))

import logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

import numpy as np


def test_imports():
    """Test that all modules can be imported"""
    logger.info("Testing imports...")

    from src.config import RunConfig, settings
    logger.info(f"✓ Config module ({settings.PROJECT_NAME} {settings.VERSION})")

    from src.modules.diffcore import Tape, backward, siren_init
    from src.modules.geometry import chamfer, emd, fps, marching_cubes
    logger.info("✓ Numerical core and geometry")

    from src.modules.simulation import Scene, init_band, render_partial, step
    logger.info("✓ Band simulation")

    from src.modules.networks import ShapeModel, encoder_init, hyper_init
    from src.modules.pretraining import pretrain_objective
    from src.modules.finetuning import SacAgent, info_nce
    from src.modules.evaluation import eval_recon, eval_policy
    logger.info("✓ Training and evaluation modules")

    from src.core.pipeline_manager import PipelineManager
    logger.info("✓ Pipeline manager")


def test_band_and_metrics():
    """A relaxed band renders clouds whose self-distance is zero"""
    logger.info("\nTesting band rendering...")
    from src.modules.geometry import chamfer
    from src.modules.simulation import init_band, render_complete

    state = init_band(0.06, 0.01, twist=0, stretch=1.0, seed=0, n_nodes=16)
    cloud = render_complete(state, np.random.default_rng(0), n=64)
    assert cloud.shape == (64, 3)
    assert chamfer(cloud, cloud) == 0.0
    logger.info(f"✓ Complete cloud extent: {np.ptp(cloud, axis=0).round(4)}")


def test_shape_model():
    """The default model embeds a cloud and evaluates a finite field"""
    logger.info("\nTesting shape model...")
    from src.config import ArchitectureConfig
    from src.modules.networks import ShapeModel

    rng = np.random.default_rng(0)
    model = ShapeModel.create(ArchitectureConfig(scale="desk"), rng)
    cloud = rng.uniform(-0.05, 0.05, (64, 3))
    values = model.field(cloud)(rng.uniform(-0.05, 0.05, (16, 3)))
    assert values.shape == (16,)
    assert np.all(np.isfinite(values))
    logger.info(f"✓ Field range: [{values.min():.4f}, {values.max():.4f}]")


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("BandINR - System Test")
    logger.info("=" * 60)

    tests = [
        ("Imports", test_imports),
        ("Band and Metrics", test_band_and_metrics),
        ("Shape Model", test_shape_model),
    ]

    results = {}
    for name, test_func in tests:
        try:
            test_func()
            results[name] = True
        except Exception as e:
            logger.error(f"Test '{name}' crashed: {e}")
            results[name] = False

    # Summary
    logger.info("\n" + "=" * 60)
    logger.info("Test Summary")
    logger.info("=" * 60)

    passed = sum(1 for v in results.values() if v)
    total = len(results)

    for name, result in results.items():
        status = "✓ PASS" if result else "✗ FAIL"
        logger.info(f"{name:.<40} {status}")

    logger.info("-" * 60)
    logger.info(f"Total: {passed}/{total} tests passed")
    logger.info("=" * 60)
    return 0 if passed == total else 1


if __name__ == "__main__":
    sys.exit(main())
