"""LIF dynamics against hand traces and an independent scalar simulator."""
import numpy as np
import pytest

from helpers import scalar_lif_backward_reference, scalar_lif_reference
from spikedepth import autodiff as ad
from spikedepth.errors import ConfigError, DimensionError, NumericError
from spikedepth.neuron import LifParams, fresh_state, lif_step, mlif, surrogate_grad

P = LifParams()  # tau=2, threshold=1, reset=0, alpha=2


# ---------------------------------------------------------------------------
# hand-derived traces


def test_constant_drive_two_fires_every_step():
    # v = 0 + (2-0)/2 = 1.0 >= 1 each step after the reset
    state = fresh_state((1,))
    spikes = [lif_step(state, np.array([2.0]), P).item() for _ in range(3)]
    assert spikes == [1.0, 1.0, 1.0]
    assert state.v.item() == 0.0  # hard reset after the last fire


def test_constant_drive_one_asymptotes_below_threshold():
    state = fresh_state((1,))
    vs, spikes = [], []
    for _ in range(3):
        spikes.append(lif_step(state, np.array([1.0]), P).item())
        vs.append(state.v.item())
    assert spikes == [0.0, 0.0, 0.0]
    np.testing.assert_allclose(vs, [0.5, 0.75, 0.875], atol=1e-12)


def test_zero_input_is_a_fixed_point():
    state = fresh_state((4,))
    for _ in range(5):
        out = lif_step(state, np.zeros(4), P)
    assert not out.any() and not state.v.any()


def test_lif_step_validation():
    state = fresh_state((2,))
    with pytest.raises(DimensionError):
        lif_step(state, np.zeros(3), P)
    with pytest.raises(NumericError):
        lif_step(state, np.array([np.nan, 0.0]), P)


def test_params_validation():
    with pytest.raises(ConfigError):
        LifParams(tau=0.5)
    with pytest.raises(ConfigError):
        LifParams(v_threshold=0.0, v_reset=0.0)
    with pytest.raises(ConfigError):
        LifParams(surrogate_alpha=0.0)


# ---------------------------------------------------------------------------
# surrogate


def test_surrogate_peak_is_alpha_over_two():
    assert surrogate_grad(0.0, 2.0) == 1.0
    assert surrogate_grad(0.0, 4.0) == 2.0


def test_surrogate_decays_monotonically_in_distance():
    xs = np.linspace(0.0, 5.0, 50)
    g = surrogate_grad(xs, 2.0)
    assert (np.diff(g) < 0).all()
    np.testing.assert_allclose(surrogate_grad(xs, 2.0), surrogate_grad(-xs, 2.0))
    assert surrogate_grad(50.0, 2.0) < 1e-4  # far tails vanish


# ---------------------------------------------------------------------------
# multistep neuron vs the independent scalar simulator


def test_mlif_matches_scalar_simulator_exactly(rng):
    x = rng.uniform(-1.0, 3.0, size=(7, 5, 4)).astype(np.float64)
    out = mlif(ad.tensor(x), P).data
    for idx in np.ndindex(5, 4):
        spikes, _ = scalar_lif_reference(x[(slice(None),) + idx], P)
        np.testing.assert_array_equal(out[(slice(None),) + idx], spikes)


def test_mlif_binary_and_shape(rng):
    x = rng.standard_normal((3, 2, 4, 4)) * 4.0
    out = mlif(ad.tensor(x), P).data
    assert out.shape == x.shape
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_mlif_t1_reduces_to_lif_step(rng):
    x = rng.uniform(-1, 3, size=(1, 6))
    state = fresh_state((6,), dtype=np.float64)
    np.testing.assert_array_equal(mlif(ad.tensor(x), P).data[0], lif_step(state, x[0], P))


def test_mlif_zero_input_zero_output():
    assert not mlif(ad.tensor(np.zeros((4, 3, 3))), P).data.any()


def test_mlif_needs_time_axis_and_finite_input():
    with pytest.raises(DimensionError):
        mlif(ad.tensor(np.zeros((0, 3))), P)
    with pytest.raises(NumericError):
        mlif(ad.tensor(np.array([[np.inf]])), P)


def test_state_isolation_between_samples(rng):
    # two consecutive calls behave like processing each sample alone
    x = rng.uniform(-1, 3, size=(4, 8))
    a = mlif(ad.tensor(x), P).data
    b = mlif(ad.tensor(x), P).data
    np.testing.assert_array_equal(a, b)


def test_single_step_firing_monotonicity(rng):
    # with v_reset=0 and fresh state, more current never unfires a neuron
    currents = np.sort(rng.uniform(-2, 4, size=64))
    spikes = mlif(ad.tensor(currents[None, :]), P).data[0]
    assert (np.diff(spikes) >= 0).all()


# ---------------------------------------------------------------------------
# backward vs the step-by-step chain-rule oracle


def test_mlif_backward_matches_chain_rule_oracle(rng):
    x = rng.uniform(-0.5, 2.5, size=(3, 40)).astype(np.float64)
    upstream = rng.standard_normal((3, 40))
    xt = ad.parameter(x.copy())
    with ad.tape() as t:
        out = mlif(xt, P)
        loss = ad.reduce_sum(ad.mul(out, ad.tensor(upstream.copy())))
    t.backward(loss)
    for j in range(40):
        want = scalar_lif_backward_reference(x[:, j], upstream[:, j], P)
        np.testing.assert_allclose(xt.grad[:, j], want, atol=1e-12)


def test_mlif_backward_nondefault_params(rng):
    p = LifParams(tau=3.0, v_threshold=0.7, v_reset=0.1, surrogate_alpha=1.5)
    x = rng.uniform(-0.5, 2.0, size=(5, 16)).astype(np.float64)
    upstream = rng.standard_normal((5, 16))
    xt = ad.parameter(x.copy())
    with ad.tape() as t:
        loss = ad.reduce_sum(ad.mul(mlif(xt, p), ad.tensor(upstream.copy())))
    t.backward(loss)
    for j in range(16):
        want = scalar_lif_backward_reference(x[:, j], upstream[:, j], p)
        np.testing.assert_allclose(xt.grad[:, j], want, atol=1e-12)


def test_mlif_gradient_vanishes_far_from_threshold():
    # deeply subthreshold drive: surrogate tails make the gradient tiny
    x = ad.parameter(np.full((3, 4), -40.0))
    with ad.tape() as t:
        loss = ad.reduce_sum(mlif(x, P))
    t.backward(loss)
    assert np.abs(x.grad).max() < 1e-3
