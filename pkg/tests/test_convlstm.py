import math

import numpy as np
import pytest

from convlstm_rain.convlstm import (
    CELL_TENSORS,
    CellParams,
    CellState,
    NetworkSpec,
    cell_step,
    check_params,
    forward_with_cache,
    glorot_limit,
    init_params,
    layer_forward,
    load_checkpoint,
    network_forward,
    save_checkpoint,
)
from convlstm_rain.oracle import reference_cell_step
from convlstm_rain.tensor import NonFiniteError, ShapeError

from conftest import cell_as_lists, random_cell


def scalar_cell(input_weight=1.0):
    values = {}
    for name in CELL_TENSORS:
        if name.startswith("W_x"):
            values[name] = np.full((1, 1, 1, 1), input_weight)
        elif name.startswith("W_h"):
            values[name] = np.zeros((1, 1, 1, 1))
        elif name.startswith("W_c"):
            values[name] = np.zeros((1, 1, 1))
        else:
            values[name] = np.zeros(1)
    return CellParams(**values)


def test_cell_scalar_hand_value():
    prev = CellState(np.zeros((1, 1, 1)), np.full((1, 1, 1), 2.0))
    state = cell_step(scalar_cell(), np.zeros((1, 1, 1)), prev, activation="tanh")
    assert state.C[0, 0, 0] == 1.0
    assert abs(state.H[0, 0, 0] - 0.380797) < 1e-6
    assert state.H[0, 0, 0] == 0.3807970779778824
    H, C = reference_cell_step(cell_as_lists(scalar_cell()), [[[0.0]]], [[[0.0]]], [[[2.0]]], "tanh")
    assert H[0][0][0] == state.H[0, 0, 0] and C[0][0][0] == 1.0


def test_zero_params_cell(rng):
    p = scalar_cell(input_weight=0.0)
    state = cell_step(p, rng.standard_normal((1, 1, 1)), CellState.zeros(1, (1, 1)))
    assert state.C[0, 0, 0] == 0.0 and state.H[0, 0, 0] == 0.0


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_cell_matches_oracle(rng, activation):
    for _ in range(10):
        p = random_cell(rng, 3, 2)
        x = rng.standard_normal((2, 2, 2))
        h = rng.standard_normal((3, 2, 2))
        c = rng.standard_normal((3, 2, 2))
        state = cell_step(p, x, CellState(h, c), activation)
        H, C = reference_cell_step(cell_as_lists(p), x.tolist(), h.tolist(), c.tolist(), activation)
        np.testing.assert_allclose(state.H, H, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.C, C, rtol=0, atol=1e-12)


def test_cell_output_bounds(rng):
    for _ in range(20):
        p = random_cell(rng, 3, 2, scale=3.0)
        x = rng.standard_normal((4, 2, 2, 2)) * 5
        state = cell_step(p, x, CellState.zeros(3, (2, 2), (4,)), "tanh")
        assert np.all(np.abs(state.H) <= 1.0)
        relu_state = cell_step(p, x, CellState.zeros(3, (2, 2), (4,)), "relu")
        assert np.all(relu_state.H >= 0.0)


def test_cell_state_shapes_are_checked(rng):
    p = random_cell(rng, 3, 2)
    with pytest.raises(ShapeError):
        cell_step(p, rng.standard_normal((3, 2, 2)), CellState.zeros(3, (2, 2)))
    with pytest.raises(ShapeError):
        cell_step(p, rng.standard_normal((2, 2, 2)), CellState.zeros(2, (2, 2)))


def test_cell_reports_nonfinite_gate(rng):
    p = random_cell(rng, 2, 1)
    p = CellParams(**{**{n: getattr(p, n) for n in CELL_TENSORS}, "b_f": np.array([np.inf, 0.0])})
    with pytest.raises(NonFiniteError):
        cell_step(p, np.ones((1, 2, 2)), CellState.zeros(2, (2, 2)))


def test_layer_forward_matches_repeated_cell_steps(rng):
    p = random_cell(rng, 3, 2)
    seq = rng.standard_normal((2, 5, 2, 2, 2))
    hs = layer_forward(p, seq, return_sequences=True, activation="relu")
    last = layer_forward(p, seq, return_sequences=False, activation="relu")
    state = CellState.zeros(3, (2, 2), (2,))
    for t in range(5):
        state = cell_step(p, seq[:, t], state, "relu")
        np.testing.assert_allclose(hs[:, t], state.H, atol=1e-13)
    np.testing.assert_allclose(last, state.H, atol=1e-13)


def test_layer_single_step_and_zero_params(rng):
    p = random_cell(rng, 3, 2)
    seq = rng.standard_normal((2, 1, 2, 2, 2))
    state = cell_step(p, seq[:, 0], CellState.zeros(3, (2, 2), (2,)), "tanh")
    np.testing.assert_allclose(layer_forward(p, seq), state.H, rtol=0, atol=1e-14)
    zero = CellParams(**{n: np.zeros_like(getattr(p, n)) for n in CELL_TENSORS})
    assert np.all(layer_forward(zero, rng.standard_normal((2, 4, 2, 2, 2)), True) == 0.0)
    with pytest.raises(ValueError):
        layer_forward(p, np.empty((2, 0, 2, 2, 2)))


def test_network_zero_params_give_head_bias():
    spec = NetworkSpec(layer1_filters=4, layer2_filters=2)
    params = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
    params["head.b"] = np.array([0.7])
    out = network_forward(spec, params, np.ones((2, 3, 11, 2, 2)))
    assert np.all(out == 0.7)


def test_network_is_composed_layers(rng):
    spec = NetworkSpec(layer1_filters=4, layer2_filters=2, activation="tanh")
    params = init_params(spec, 8)
    x = rng.uniform(size=(2, 5, 11, 2, 2))
    hs = layer_forward(CellParams.from_flat(params, "layer1"), x, True, "tanh")
    h = layer_forward(CellParams.from_flat(params, "layer2"), hs, False, "tanh")
    expected = np.einsum("bfij,f->bij", h, params["head.W"][0, :, 0, 0])[:, None] + params["head.b"][0]
    np.testing.assert_allclose(network_forward(spec, params, x), expected, rtol=0, atol=1e-14)


def test_network_shapes_and_determinism():
    spec = NetworkSpec(layer1_filters=4, layer2_filters=2)
    params = init_params(spec, 3)
    x = np.random.default_rng(0).uniform(size=(3, 6, 11, 2, 2))
    out = network_forward(spec, params, x)
    assert out.shape == (3, 1, 2, 2)
    assert out.tobytes() == network_forward(spec, init_params(spec, 3), x).tobytes()
    pred, cache = forward_with_cache(spec, params, x)
    assert cache["hs1"].shape == (3, 6, 4, 2, 2)
    np.testing.assert_array_equal(pred, out)


def test_network_batch_items_independent(rng):
    spec = NetworkSpec(layer1_filters=4, layer2_filters=2, activation="tanh")
    params = init_params(spec, 1)
    x = rng.uniform(size=(4, 3, 11, 2, 2))
    full = network_forward(spec, params, x)
    np.testing.assert_allclose(full[2:3], network_forward(spec, params, x[2:3]), atol=1e-14)


def test_init_params_statistics():
    spec = NetworkSpec()
    params = init_params(spec, 0)
    check_params(spec, params)
    assert list(params) == list(spec.param_shapes())
    for name, arr in params.items():
        if arr.ndim == 4:
            assert np.all(np.abs(arr) <= glorot_limit(arr.shape))
        elif name.endswith(".b_f"):
            assert np.all(arr == 1.0)
        else:
            assert np.all(arr == 0.0)
    assert glorot_limit((128, 11, 2, 2)) == math.sqrt(6.0 / (11 * 4 + 128 * 4))
    assert params["layer1.W_xi"].shape == (128, 11, 2, 2)
    assert params["layer2.W_hc"].shape == (64, 64, 2, 2)
    assert params["head.W"].shape == (1, 64, 1, 1)


def test_frozen_names_follow_peephole_flag():
    assert NetworkSpec().frozen_names() == ()
    frozen = NetworkSpec(peepholes=False).frozen_names()
    assert len(frozen) == 6 and "layer2.W_co" in frozen


def test_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        NetworkSpec(activation="sigmoid")
    with pytest.raises(ValueError):
        NetworkSpec(layer1_filters=0)
    with pytest.raises(ValueError):
        NetworkSpec(kernel=(0, 2))


def test_checkpoint_round_trip(tmp_path):
    spec = NetworkSpec(layer1_filters=3, layer2_filters=2, kernel=(3, 2), peepholes=False, activation="tanh")
    params = init_params(spec, 9)
    params["head.b"] = np.array([0.1 + 0.2])
    save_checkpoint(tmp_path / "a.txt", spec, params, {"lead": 6})
    spec2, params2, meta = load_checkpoint(tmp_path / "a.txt")
    assert spec2 == spec and meta == {"lead": "6"}
    for name in params:
        assert params2[name].tobytes() == params[name].tobytes()
    save_checkpoint(tmp_path / "b.txt", spec2, params2, meta)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
    spec = NetworkSpec(layer1_filters=2, layer2_filters=1)
    save_checkpoint(path, spec, init_params(spec, 0))
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_layer_names_the_gate_that_blew_up(rng):
    p = random_cell(rng, 2, 1)
    # finite parameters whose sum overflows inside the candidate pre-activation
    p = CellParams(**{**{n: getattr(p, n) for n in CELL_TENSORS},
                      "W_xc": np.full((2, 1, 2, 2), 1e308), "b_c": np.array([1e308, 0.0])})
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteError, match="step 0.*candidate"):
        layer_forward(p, np.ones((1, 3, 1, 2, 2)), activation="relu")
