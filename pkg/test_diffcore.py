"""
BandINR - Differentiation Core Tests
Tape primitives, gradients, sine-network derivatives, Adam and parameter files
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

from src.core.exceptions import (LayoutMismatchError, NonFiniteError, ShapeMismatchError,
                                 TapeError)
from src.modules.diffcore import (AdamState, ParamLayout, ParamVector, SirenArch, Tape,
                                  adam_step, backward, forward, siren_init, siren_value,
                                  siren_with_derivs)
from src.modules.diffcore import tensor as T


def numeric_grad(f, x0, h=1e-5, indices=None):
    """Central differences of a scalar function of an array"""
    x0 = np.array(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    for i in (range(x0.size) if indices is None else indices):
        xp, xm = x0.copy().reshape(-1), x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return grad


def rel_error(a, b):
    scale = max(np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / scale)


def tape_grad(build, x0):
    """Gradient of build(leaf) with respect to the leaf"""
    tape = Tape()
    leaf = tape.leaf(x0)
    out = build(leaf)
    return backward(tape, out, wrt=[leaf])[leaf.index]


def tape_value(build, x0):
    tape = Tape(enabled=False)
    return float(build(tape.leaf(x0)).value)


# ==================== Forward ====================

def test_identity_matmul():
    tape = Tape()
    v = np.array([0.3, -1.7])
    out = T.matmul(tape.constant(np.eye(2)), tape.leaf(v))
    assert np.array_equal(out.value, v)


def test_sin_zero():
    tape = Tape()
    assert T.sin(tape.leaf(0.0)).item() == 0.0


def test_forward_matches_straight_line():
    rng = np.random.default_rng(0)
    W, x = rng.uniform(-1, 1, (8, 8)), rng.uniform(-1, 1, 8)
    tape = Tape()
    out = forward(tape, lambda w: T.mean(T.relu(T.matmul(w, x))), [W])
    expected = np.mean(np.maximum(W @ x, 0.0))
    assert abs(out.item() - expected) <= 1e-12 * max(abs(expected), 1.0)


def test_shape_mismatch():
    tape = Tape()
    with pytest.raises(ShapeMismatchError):
        T.add(tape.leaf(np.ones(2)), tape.leaf(np.ones(3)))
    with pytest.raises(ShapeMismatchError):
        T.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 2))))


def test_non_finite_reports_node():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 0.0]))
    with np.errstate(divide="ignore"):
        with pytest.raises(NonFiniteError) as info:
            T.log(x)
    assert "log" in str(info.value)


# ==================== Backward ====================

def test_square_gradient():
    tape = Tape()
    x = tape.leaf(3.0)
    y = x * x
    assert backward(tape, y, wrt=[x])[x.index] == pytest.approx(6.0)


def test_relu_layer_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    W0, x = rng.uniform(-1, 1, (8, 8)), rng.uniform(-1, 1, 8)
    build = lambda w: T.mean(T.relu(T.matmul(w, x)))
    analytic = tape_grad(build, W0)
    numeric = numeric_grad(lambda w: tape_value(build, w), W0)
    assert rel_error(analytic, numeric) < 1e-6


def test_constant_graph_gradient_is_zero():
    tape = Tape()
    params = ParamVector(ParamLayout("toy", [("w", (3,))]), np.ones(3))
    tape.watch(params, "toy")
    out = T.sum_(tape.constant(np.array([1.0, 2.0])))
    grads = backward(tape, out)
    assert np.array_equal(grads["toy"].data, np.zeros(3))
    assert grads["toy"].layout == params.layout


def test_backward_misuse():
    tape, other = Tape(), Tape()
    out = T.sum_(tape.leaf(np.ones(3)))
    with pytest.raises(TapeError):
        backward(other, out)
    with pytest.raises(TapeError):
        backward(tape, tape.leaf(np.ones(3)))


@pytest.mark.parametrize("name", ["sin", "cos", "tanh", "exp", "square", "relu", "abs",
                                  "softplus", "sqrt", "log", "logsumexp", "max", "dot",
                                  "concat", "take", "transpose", "div", "mean"])
def test_primitive_gradients(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    x0 = rng.uniform(-1, 1, (3, 4))
    other = rng.uniform(-1, 1, (3, 4))
    weights = rng.uniform(-1, 1, (3, 4))
    builders = {
        "sin": T.sin, "cos": T.cos, "tanh": T.tanh, "exp": T.exp, "square": T.square,
        "relu": T.relu, "abs": T.abs_, "softplus": T.softplus,
        "sqrt": lambda x: T.sqrt(T.square(x) + 0.5),
        "log": lambda x: T.log(T.square(x) + 0.5),
        "logsumexp": lambda x: T.concat([T.logsumexp(x, axis=-1)] * 4, axis=0).reshape(3, 4),
        "max": lambda x: T.concat([T.max_(x, axis=1)] * 4, axis=0).reshape(3, 4),
        "dot": lambda x: T.concat([T.dot(x, other)] * 4, axis=0).reshape(3, 4),
        "concat": lambda x: T.take(T.concat([x, T.sin(x)], axis=1), (slice(None), slice(2, 6))),
        "take": lambda x: T.take(x, (np.array([0, 0, 2]), slice(None))).reshape(3, 4),
        "transpose": lambda x: T.transpose(T.transpose(x) * 2.0),
        "div": lambda x: T.div(x, T.square(x) + 1.0),
        "mean": lambda x: T.mean(x, axis=0) * T.sin(x),
    }
    build = lambda x: T.sum_(T.mul(builders[name](x), weights))
    analytic = tape_grad(build, x0)
    numeric = numeric_grad(lambda x: tape_value(build, x), x0)
    assert rel_error(analytic, numeric) < 1e-6


def test_backward_is_deterministic():
    rng = np.random.default_rng(2)
    W0 = rng.uniform(-1, 1, (6, 6))
    build = lambda w: T.sum_(T.tanh(T.matmul(w, np.ones(6))))
    assert np.array_equal(tape_grad(build, W0), tape_grad(build, W0))


# ==================== Sine network ====================

def single_neuron():
    arch = SirenArch(latent_dim=0, hidden=(), first_omega=1.0, input_scale=1.0, sine_output=True)
    return arch, ParamVector(arch.layout(), np.array([2.0, 0.0, 0.0, 0.0]))


def test_single_neuron_at_origin():
    arch, theta = single_neuron()
    out = siren_with_derivs(theta, np.zeros(3), None, arch)
    assert out.value.item() == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(out.grad.value, [2.0, 0.0, 0.0], atol=1e-15)
    assert out.laplacian.item() == pytest.approx(0.0, abs=1e-15)


def test_single_neuron_at_quarter_pi():
    arch, theta = single_neuron()
    out = siren_with_derivs(theta, np.array([np.pi / 4, 0.0, 0.0]), None, arch)
    assert out.value.item() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(out.grad.value, 0.0, atol=1e-12)
    assert out.laplacian.item() == pytest.approx(-4.0, abs=1e-12)


def small_siren(seed=3, input_scale=1.0):
    arch = SirenArch(latent_dim=4, hidden=(8, 8, 8), first_omega=5.0, hidden_omega=1.0,
                     input_scale=input_scale)
    rng = np.random.default_rng(seed)
    theta = siren_init(arch, rng)
    z = rng.normal(0.0, 0.5, 4)
    x = rng.uniform(-0.5, 0.5, (6, 3))
    return arch, theta, z, x


def field(arch, theta, z, x):
    tape = Tape(enabled=False)
    return siren_value(theta, x, tape.constant(z), arch, tape=tape).value


@pytest.mark.parametrize("input_scale", [1.0, 10.0])
def test_siren_derivatives_match_finite_differences(input_scale):
    arch, theta, z, x = small_siren(input_scale=input_scale)
    tape = Tape(enabled=False)
    out = siren_with_derivs(theta, x, tape.constant(z), arch, tape=tape)
    h = 1e-4
    fd_grad = np.zeros((len(x), 3))
    fd_lap = np.zeros(len(x))
    f0 = field(arch, theta, z, x)
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        fp, fm = field(arch, theta, z, x + step), field(arch, theta, z, x - step)
        fd_grad[:, k] = (fp - fm) / (2 * h)
        fd_lap += (fp - 2 * f0 + fm) / (h * h)
    assert rel_error(out.grad.value, fd_grad) < 1e-4
    assert rel_error(out.laplacian.value, fd_lap) < 1e-4


def test_siren_value_paths_agree():
    arch, theta, z, x = small_siren()
    tape = Tape(enabled=False)
    with_derivs = siren_with_derivs(theta, x, tape.constant(z), arch, tape=tape).value.value
    assert np.max(np.abs(with_derivs - field(arch, theta, z, x))) <= 1e-12


def test_second_order_parameter_gradient():
    arch, theta, z, x = small_siren(seed=4)
    rng = np.random.default_rng(5)
    w_grad, w_lap = rng.normal(size=(len(x), 3)), rng.normal(size=len(x))

    def build(flat, tape):
        out = siren_with_derivs(flat, x, tape.constant(z), arch, tape=tape)
        return T.sum_(out.grad * w_grad) + T.sum_(out.laplacian * w_lap)

    tape = Tape()
    leaf = tape.leaf(theta.data)
    analytic = backward(tape, build(leaf, tape), wrt=[leaf])[leaf.index]

    def value(flat):
        off = Tape(enabled=False)
        return build(off.constant(flat), off).item()

    indices = rng.choice(theta.data.size, 25, replace=False)
    numeric = numeric_grad(value, theta.data, indices=indices)
    assert rel_error(analytic[indices], numeric[indices]) < 1e-4


def test_siren_latent_gradient():
    arch, theta, z, x = small_siren(seed=6)

    def build(zt, tape):
        out = siren_with_derivs(theta, x, zt, arch, tape=tape)
        return T.mean(T.square(out.value)) + T.mean(out.laplacian)

    tape = Tape()
    leaf = tape.leaf(z)
    analytic = backward(tape, build(leaf, tape), wrt=[leaf])[leaf.index]

    def value(zv):
        off = Tape(enabled=False)
        return build(off.constant(zv), off).item()

    assert rel_error(analytic, numeric_grad(value, z)) < 1e-4


def test_siren_layout_mismatch():
    arch, theta, z, x = small_siren()
    other = SirenArch(latent_dim=4, hidden=(8, 8), first_omega=5.0, input_scale=1.0)
    tape = Tape(enabled=False)
    with pytest.raises(LayoutMismatchError):
        siren_with_derivs(theta, x, tape.constant(z), other, tape=tape)


def test_parameter_counts():
    assert SirenArch(hidden=(32, 32, 32)).param_count() == 4321
    assert SirenArch(hidden=(128, 128, 128)).param_count() == 41857
    assert SirenArch(hidden=(128, 128, 128)).layout().length == 41857


# ==================== Adam ====================

def scalar_params(value):
    return ParamVector(ParamLayout("scalar", [("p", (1,))]), np.array([value]))


def test_adam_zero_gradient():
    p = scalar_params(1.0)
    new, state = adam_step(p, p.zeros_like(), AdamState.zeros(p), lr=0.1)
    assert np.array_equal(new.data, p.data)
    assert state.step == 1
    assert np.array_equal(state.m.data, np.zeros(1))

    decayed = AdamState(p.like(np.array([0.5])), p.like(np.array([0.25])), 3)
    _, state = adam_step(p, p.zeros_like(), decayed, beta1=0.9, beta2=0.999)
    assert state.m.data[0] == pytest.approx(0.45)
    assert state.v.data[0] == pytest.approx(0.24975)


def test_adam_first_step():
    p = scalar_params(1.0)
    new, _ = adam_step(p, p.like(np.array([2.0])), AdamState.zeros(p), lr=0.1)
    assert new.data[0] == pytest.approx(0.9, abs=1e-7)


def test_adam_is_deterministic_and_checks_layout():
    p = scalar_params(1.0)
    g = p.like(np.array([0.3]))
    a, _ = adam_step(p, g, AdamState.zeros(p))
    b, _ = adam_step(p, g, AdamState.zeros(p))
    assert np.array_equal(a.data, b.data)
    other = ParamVector(ParamLayout("pair", [("p", (2,))]))
    with pytest.raises(LayoutMismatchError):
        adam_step(p, other, AdamState.zeros(p))


# ==================== Parameter files ====================

def test_params_round_trip_is_bit_exact():
    arch, theta, _, _ = small_siren()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "theta.params"
        theta.save(path)
        loaded = ParamVector.load(path, expected=arch.layout())
        assert loaded.layout == theta.layout
        assert loaded.data.tobytes() == theta.data.tobytes()
        with pytest.raises(LayoutMismatchError):
            ParamVector.load(path, expected=SirenArch(latent_dim=2).layout())


def test_layout_offsets_are_contiguous():
    layout = SirenArch(latent_dim=4, hidden=(8, 8)).layout()
    offset = 0
    for entry in layout:
        assert entry.offset == offset
        offset += entry.size
    assert offset == layout.length


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("BandINR - Differentiation Core Tests")
    logger.info("=" * 60)
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
