import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from citrus import graphs
from citrus.layer import (
    CitrusBlock, ReceptiveField, core_tensor_forward, forward_batch, init_model, inverse_softplus,
    load_checkpoint, product_graph_forward, save_checkpoint, softplus, spectral_forward, tpdeg_integrate,
)
from citrus.spectral import eigh, truncate
from citrus.tensor import mode_product
from citrus.training import fd_check

from conftest import random_laplacian


@given(st.floats(1e-6, 50.0))
def test_softplus_inverse(t):
    assert np.isclose(softplus(inverse_softplus(t)), t, rtol=1e-10)


def test_receptive_field_shapes():
    assert ReceptiveField.constant("scalar", 3, 4).times(3).shape == (3, 1)
    assert ReceptiveField.constant("per_factor", 3, 4).times(3).shape == (3, 1)
    rf = ReceptiveField.constant("per_factor_channel", 3, 4, t=2.0)
    assert rf.times(3).shape == (3, 4)
    assert np.allclose(rf.t, 2.0)
    with pytest.raises(ValueError):
        ReceptiveField("per_factor", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ReceptiveField("global", np.zeros(()))


def test_three_forward_forms_agree(rng):
    for n_factors in (1, 2, 3):
        sizes = tuple(int(s) for s in rng.integers(2, 6, n_factors))
        laps = [random_laplacian(rng, n) for n in sizes]
        u = rng.standard_normal(sizes + (3,))
        w = rng.standard_normal((3, 2))
        t = 0.8
        a = core_tensor_forward(u, laps, t, w)
        b = product_graph_forward(u, laps, t, w)
        block = CitrusBlock(ReceptiveField.from_times("scalar", t), w, [], "identity")
        c = spectral_forward(u, [eigh(l) for l in laps], block)
        assert np.allclose(a, b, atol=1e-12)
        assert np.allclose(a, c, atol=1e-12)


def test_single_factor_filter_by_hand(rng):
    lap = random_laplacian(rng, 5)
    u = rng.standard_normal((5, 2))
    w = rng.standard_normal((2, 3))
    out = core_tensor_forward(u, [lap], 1.5, w)
    assert np.allclose(out, scipy.linalg.expm(-1.5 * lap) @ u @ w)


def test_per_factor_times_match_dense_kernels(rng):
    laps = [random_laplacian(rng, 4), random_laplacian(rng, 3)]
    u = rng.standard_normal((4, 3, 2))
    w = np.eye(2)
    block = CitrusBlock(ReceptiveField.from_times("per_factor", [0.3, 2.0]), w, [], "identity")
    out = spectral_forward(u, [eigh(l) for l in laps], block)
    ref = mode_product(mode_product(u, scipy.linalg.expm(-0.3 * laps[0]), 0), scipy.linalg.expm(-2.0 * laps[1]), 1)
    assert np.allclose(out, ref)


def test_per_channel_times_filter_channels_separately(rng):
    laps = [random_laplacian(rng, 4), random_laplacian(rng, 3)]
    bases = [eigh(l) for l in laps]
    u = rng.standard_normal((4, 3, 2))
    t = np.array([[0.2, 1.0], [0.5, 3.0]])
    block = CitrusBlock(ReceptiveField.from_times("per_factor_channel", t), np.eye(2), [], "identity")
    out = spectral_forward(u, bases, block)
    for c in range(2):
        single = CitrusBlock(ReceptiveField.from_times("per_factor", t[:, c]), np.eye(1), [], "identity")
        assert np.allclose(out[..., c], spectral_forward(u[..., c:c + 1], bases, single)[..., 0])


def test_full_truncation_is_exact(rng):
    bases = [eigh(random_laplacian(rng, n)) for n in (5, 4)]
    model = init_model(bases, 2, [3], 1, rng=rng)
    x = rng.standard_normal((2, 5, 4, 2))
    same = model.with_bases([truncate(b, b.k) for b in bases])
    assert np.array_equal(forward_batch(model, x), forward_batch(same, x))
    cut = model.with_bases([truncate(bases[0], 2), bases[1]])
    assert not np.allclose(forward_batch(model, x), forward_batch(cut, x))


def test_zero_time_is_identity_filter(rng):
    bases = [eigh(random_laplacian(rng, n)) for n in (4, 3)]
    u = rng.standard_normal((4, 3, 2))
    block = CitrusBlock(ReceptiveField.from_times("scalar", 1e-12), np.eye(2), [], "identity")
    assert np.allclose(spectral_forward(u, bases, block), u, atol=1e-9)


def test_block_validation():
    rf = ReceptiveField.constant("scalar", 2, 3)
    with pytest.raises(ValueError):
        CitrusBlock(rf, np.ones((3, 2)), [np.ones((3, 3))])
    with pytest.raises(ValueError):
        CitrusBlock(rf, np.ones((3, 2)), residual=True)
    with pytest.raises(ValueError):
        CitrusBlock(rf, np.ones((3, 2)), activation="tanh")
    with pytest.raises(ValueError):
        CitrusBlock(ReceptiveField.constant("per_factor_channel", 2, 4), np.ones((3, 2)))


def test_forward_shape_errors(rng):
    bases = [eigh(random_laplacian(rng, n)) for n in (4, 3)]
    model = init_model(bases, 2, [3], 1, rng=rng)
    with pytest.raises(ValueError):
        forward_batch(model, np.zeros((1, 4, 3, 5)))
    with pytest.raises(ValueError):
        forward_batch(model, np.zeros((1, 3, 4, 2)))
    with pytest.raises(ValueError):
        forward_batch(model, np.zeros((4, 3, 2)))


def test_forecast_readout_shape(rng):
    bases = [eigh(random_laplacian(rng, 5)), eigh(graphs.path_graph(4).normalized_laplacian)]
    model = init_model(bases, 1, [3, 3], 2, rng=rng, readout="forecast", concat_input=True,
                       encoder_channels=4, residual=True, decoder_bias=True)
    assert forward_batch(model, rng.standard_normal((6, 5, 4, 1))).shape == (6, 5, 2)
    assert model.blocks[1].residual and not model.blocks[0].residual


def test_rk4_matches_closed_form(rng):
    laps = [random_laplacian(rng, 4), random_laplacian(rng, 3)]
    u0 = rng.standard_normal((4, 3, 2))
    exact = core_tensor_forward(u0, laps, 1.0, np.eye(2))
    err = np.abs(tpdeg_integrate(u0, laps, 1.0, 1e-2) - exact).max()
    err_half = np.abs(tpdeg_integrate(u0, laps, 1.0, 5e-3) - exact).max()
    assert err < 1e-6
    assert 14 <= err / err_half <= 18


def test_rk4_final_partial_step(rng):
    laps = [random_laplacian(rng, 3)]
    u0 = rng.standard_normal((3, 1))
    exact = core_tensor_forward(u0, laps, 0.55, np.eye(1))
    assert np.abs(tpdeg_integrate(u0, laps, 0.55, 0.1) - exact).max() < 1e-4
    assert np.array_equal(tpdeg_integrate(u0, laps, 0.0, 0.1), u0)


@pytest.mark.parametrize("mode", ["scalar", "per_factor", "per_factor_channel"])
def test_gradients_match_finite_differences(rng, mode):
    bases = [eigh(random_laplacian(rng, n)) for n in (3, 4)]
    model = init_model(bases, 2, [3], 2, rng=rng, receptive_mode=mode, mlp_layers=1,
                       activation="leaky_relu", t_init=0.7)
    x = rng.standard_normal((2, 3, 4, 2))
    y = rng.standard_normal((2, 3, 4, 2))
    assert fd_check(model, x, y, "mse") <= 1e-5


def test_checkpoint_roundtrip(tmp_path, rng):
    bases = [eigh(random_laplacian(rng, 4)), eigh(graphs.path_graph(3).normalized_laplacian)]
    model = init_model(bases, 1, [2], 2, rng=rng, readout="forecast", concat_input=True,
                       receptive_mode="per_factor_channel", decoder_bias=True, mlp_layers=1)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    x = rng.standard_normal((3, 4, 3, 1))
    assert np.array_equal(forward_batch(model, x), forward_batch(loaded, x))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0.05, 5.0))
def test_diffusion_preserves_channel_sums(seed, t):
    # heat kernels of combinatorial Laplacians are column-stochastic
    r = np.random.default_rng(seed)
    laps = [random_laplacian(r, 4), random_laplacian(r, 3)]
    u = r.standard_normal((4, 3, 2))
    out = core_tensor_forward(u, laps, t, np.eye(2))
    assert np.allclose(out.sum(axis=(0, 1)), u.sum(axis=(0, 1)))


def test_null_dynamics_leave_signal_unchanged(rng):
    u0 = rng.standard_normal((3, 4, 2))
    assert np.array_equal(tpdeg_integrate(u0, [np.zeros((3, 3)), np.zeros((4, 4))], 2.5, 0.1), u0)


def test_spectral_transform_cost_at_most_linear_in_k(rng):
    import time
    from citrus.layer import _from_spectral, _to_spectral

    n = 400
    full = eigh(random_laplacian(rng, n, 0.05))
    x = rng.standard_normal((1, n, 8, 4))
    other = eigh(random_laplacian(rng, 8))
    ks = np.array([2, 25, 50, 100, 200, 400])
    secs = []
    for k in ks:
        bases = [truncate(full, int(k)), other]
        best = np.inf
        for _ in range(15):
            start = time.perf_counter()
            _from_spectral(_to_spectral(x, bases), bases)
            best = min(best, time.perf_counter() - start)
        secs.append(best)
    slope = np.polyfit(np.log(ks), np.log(secs), 1)[0]
    assert slope <= 1.2
