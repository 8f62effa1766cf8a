import jax
import jax.numpy as jnp
import numpy as np
import pytest

from robustpulse.network import (
    Layer,
    NeuralPulse,
    TrainableParameters,
    load_parameters,
    load_pulse,
    mlp_forward,
    mlp_new,
    parameter_count,
    save_parameters,
)
from robustpulse.systems import get_preset


def _n_values(theta):
    return sum(L.W.size + L.b.size for L in theta.layers)


def test_parameter_counts():
    # 1*32+32 + 32*32+32 + 32*k+k
    assert parameter_count([32, 32], 1) == 1153
    assert parameter_count([32, 32], 2) == 1186
    assert parameter_count([32, 32], 6) == 1318
    assert _n_values(mlp_new([32, 32], 2, seed=0)) == 1186


def test_same_seed_same_parameters():
    a = mlp_new([8, 8], 3, seed=11)
    b = mlp_new([8, 8], 3, seed=11)
    c = mlp_new([8, 8], 3, seed=12)
    for La, Lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(La.W, Lb.W)
        np.testing.assert_array_equal(La.b, Lb.b)
    assert not np.array_equal(a.layers[0].W, c.layers[0].W)
    assert float(a.alpha) == 1.0


def test_bad_sizes():
    with pytest.raises(ValueError):
        mlp_new([0], 1, seed=0)


def test_zero_network_outputs_zero():
    th = mlp_new([5, 4], 2, seed=0)
    zero = tuple(Layer(jnp.zeros_like(L.W), jnp.zeros_like(L.b)) for L in th.layers)
    for t in (-1.0, 0.0, 0.3, 7.0):
        np.testing.assert_array_equal(mlp_forward(zero, t), 0.0)


def test_single_linear_layer_is_identity():
    layers = (Layer(jnp.ones((1, 1)), jnp.zeros(1)),)
    for t in (-2.0, 0.0, 0.75):
        np.testing.assert_allclose(mlp_forward(layers, t), [t])


def test_forward_matches_naive_composition():
    th = mlp_new([7, 5, 6], 3, seed=3)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-2, 2, size=10):
        h = np.array([x])
        Ls = [(np.asarray(L.W), np.asarray(L.b)) for L in th.layers]
        for W, b in Ls[:-1]:
            h = np.tanh(W @ h + b)
        W, b = Ls[-1]
        np.testing.assert_allclose(mlp_forward(th.layers, x), W @ h + b, rtol=0, atol=1e-14)


def test_lipschitz_bound():
    rng = np.random.default_rng(1)
    for seed in range(5):
        th = mlp_new([16, 16], 2, seed=seed)
        L = np.prod([np.linalg.norm(np.asarray(l.W), 2) for l in th.layers])
        t = rng.uniform(-1, 1, size=50)
        h = 1e-3
        for ti in t:
            d = np.linalg.norm(mlp_forward(th.layers, ti + h) - mlp_forward(th.layers, ti))
            assert d <= L * h * (1 + 1e-9)


def test_weight_gradients_match_finite_differences():
    th = mlp_new([6, 5], 2, seed=9)
    x = 0.37
    f = lambda layers: jnp.sum(jnp.sin(mlp_forward(layers, x)))
    g = jax.grad(f)(th.layers)
    rng = np.random.default_rng(2)
    h = 1e-6
    for li, (L, gL) in enumerate(zip(th.layers, g)):
        for name in ("W", "b"):
            arr = np.asarray(getattr(L, name))
            garr = np.asarray(getattr(gL, name))
            for idx in [tuple(rng.integers(0, s) for s in arr.shape) for _ in range(4)]:
                def shifted(d):
                    a = arr.copy()
                    a[idx] += d
                    new = list(th.layers)
                    new[li] = L._replace(**{name: jnp.asarray(a)})
                    return float(f(tuple(new)))
                fd = (shifted(h) - shifted(-h)) / (2 * h)
                assert abs(fd - garr[idx]) <= 1e-6 * max(1.0, abs(garr[idx]))


def test_save_load_round_trip(tmp_path):
    th = mlp_new([4, 3], 2, seed=5, alpha=0.73)
    path = tmp_path / "p.json"
    save_parameters(th, path, seed=5, note="x")
    back = load_parameters(path)
    assert back.sizes == th.sizes
    for a, b in zip(th.layers, back.layers):
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, b.b)
    assert float(back.log_alpha) == float(th.log_alpha)


def test_load_rejects_other_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_parameters(p)


def test_neural_pulse_for_system(tmp_path):
    s = get_preset("spin-cz")
    th = mlp_new([4], 2, seed=0)
    pulse = NeuralPulse.for_system(s, th)
    assert pulse.n_fields == 1
    assert float(pulse.alpha(th)) == 1.0
    np.testing.assert_allclose(pulse.fields(th, 0.0), 0.0, atol=1e-14)
    assert pulse.network_input(s.time_unit) == pytest.approx(1.0)
    sym = NeuralPulse.for_system(s, th, input_map="symmetric")
    assert sym.network_input(0.0) == -1.0 and sym.network_input(s.T) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        NeuralPulse.for_system(s, mlp_new([4], 3, seed=0))
    with pytest.raises(ValueError):
        NeuralPulse.for_system(s, th, input_map="bad")
    save_parameters(th, tmp_path / "p.json", input_map="symmetric")
    assert load_pulse(tmp_path / "p.json", s).input_map == "symmetric"


def test_trainable_parameters_alpha_positive():
    th = TrainableParameters(mlp_new([2], 1, 0).layers, jnp.asarray(-30.0))
    assert float(th.alpha) > 0
