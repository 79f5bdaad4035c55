import numpy as np
import pytest

from shapespace.errors import ConfigError, ShapeError
from shapespace.gradcheck import grad_check
from shapespace.layers import sigmoid_cross_entropy
from shapespace.model import (build_network, encoder_shapes, decoder_shapes, named_config, named_configs,
                              network_config)
from shapespace.tensor import Tensor

TABLE = {
    "C_default": (0.0005, True, 0.1, 512, None, None),
    "C_small": (0.0005, True, 0.1, 256, None, None),
    "C_correlation": (0.001, False, 0.1, 512, None, None),
    "R_default": (0.0005, True, 0.1, 512, 0.0, False),
    "R_best": (0.0, False, 0.1, 512, 0.0, False),
}


@pytest.fixture(scope="module")
def rnet():
    return build_network("R_best", ("reconstruct", "classify", "map"), n_classes=5, map_dim=4, rng=0)


@pytest.mark.parametrize("name", sorted(TABLE))
def test_presets(name):
    c = named_config(name)
    assert (c.weight_decay, c.dropout, c.noise_level, c.rep_size, c.decoder_weight_decay, c.decoder_dropout) \
        == TABLE[name]


def test_only_five_presets_and_unknown_name():
    assert set(named_configs()) == set(TABLE)
    with pytest.raises(ConfigError):
        named_config("C_huge")


def test_desk_rep_size_and_shapes():
    cfg = network_config("C_default")
    assert cfg.encoder.fc2_size == 64 and cfg.encoder.input_size == 64
    assert all(min(s) > 0 for s in encoder_shapes(cfg.encoder))
    assert decoder_shapes(network_config("R_best").decoder)[-1] == (1, 64, 64)
    paper = network_config("C_default", "sketchanet")
    assert paper.encoder.fc2_size == 512
    first = paper.encoder.layers[0]
    assert (first.filters, first.kernel, first.stride) == (64, 15, 3)
    assert all(min(s) > 0 for s in encoder_shapes(paper.encoder))


def test_map_dim_bounds():
    net = build_network("C_default", ("classify", "map"), n_classes=3, map_dim=64, rng=0)
    code = net.encode(np.zeros((64, 64)))
    np.testing.assert_array_equal(net.map_coords(code).data, code.data)
    with pytest.raises(ConfigError):
        build_network("C_default", ("map",), map_dim=65)
    with pytest.raises(ConfigError):
        build_network("C_default", ("map",), map_dim=0)
    with pytest.raises(ConfigError):
        build_network("C_default", ())
    with pytest.raises(ConfigError):
        build_network("C_default", ("reconstruct",))


def test_fc2_is_linear_without_dropout(rng):
    net = build_network("C_default", ("classify",), n_classes=3, rng=1)
    x = rng.random((2, 64, 64))
    # fc2 output is affine in the fc1 activations, so it takes negative values
    codes = net.encode(x).data
    assert np.any(codes < 0)
    a = net.encode(x, training=True, rng=np.random.default_rng(0)).data
    b = net.encode(x, training=True, rng=np.random.default_rng(1)).data
    assert not np.allclose(a, b)  # dropout on fc1 is live in training
    dense_net = build_network("R_best", ("reconstruct",), rng=1)
    a = dense_net.encode(x, training=True, rng=np.random.default_rng(0)).data
    b = dense_net.encode(x, training=True, rng=np.random.default_rng(1)).data
    np.testing.assert_array_equal(a, b)


def test_encode_deterministic_and_length(rnet, rng):
    img = rng.random((64, 64))
    a, b = rnet.encode(img), rnet.encode(img)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.shape == (64,)
    with pytest.raises(ShapeError):
        rnet.encode(np.zeros((32, 32)))


def test_zero_weights_give_zero_code(rng):
    net = build_network("C_default", ("classify",), n_classes=3, rng=0)
    net.load_state_dict({k: np.zeros_like(v) for k, v in net.state_dict().items()})
    np.testing.assert_array_equal(net.encode(rng.random((3, 64, 64))).data, 0.0)


def test_decode_shape_and_finite(rnet, rng):
    for scale in (0.0, 1.0, 100.0):
        out = rnet.decode(rng.normal(scale=scale, size=(2, 64)))
        assert out.shape == (2, 64, 64) and np.all(np.isfinite(out.data))
    assert rnet.decode(np.zeros(64)).shape == (64, 64)
    with pytest.raises(ShapeError):
        rnet.decode(np.zeros(10))
    with pytest.raises(ConfigError):
        build_network("C_default", ("classify",), n_classes=3).decode(np.zeros(64))


def test_reconstruction_gradient_wrt_code(rnet, rng):
    target = rng.random((1, 64, 64))
    worst = 0.0
    for _ in range(3):
        code = Tensor(rng.normal(size=(1, 64)))
        worst = max(worst, grad_check(lambda c: sigmoid_cross_entropy(rnet.decode(c), target), code,
                                      n_coords=20, rng=rng))
    assert worst < 1e-4


def test_mapping_ignores_units_beyond_map_dim(rnet, rng):
    code = rng.normal(size=(3, 64))
    other = code.copy()
    other[:, 4:] = rng.normal(size=(3, 60))
    np.testing.assert_array_equal(rnet.map_coords(Tensor(code)).data, rnet.map_coords(Tensor(other)).data)


def test_forward_heads(rnet, rng):
    out = rnet.forward(rng.random((2, 64, 64)))
    assert out["logits"].shape == (2, 5) and out["mapping"].shape == (2, 4)
    assert out["reconstruction"].shape == (2, 64, 64)
    np.testing.assert_array_equal(out["mapping"].data, out["code"].data[:, :4])


def test_weight_decay_assignment():
    net = build_network("R_default", ("reconstruct", "classify"), n_classes=3, rng=0)
    for name, wd in zip(net.params, net.weight_decays()):
        if name.endswith(".bias") or name.startswith("dec."):
            assert wd == 0.0
        else:
            assert wd == 0.0005


def test_checkpoint_round_trip(tmp_path, rnet, rng):
    rnet.save(tmp_path / "net.npz")
    other = build_network("R_best", ("reconstruct", "classify", "map"), n_classes=5, map_dim=4, rng=9)
    x = rng.random((2, 64, 64))
    assert not np.array_equal(other.encode(x).data, rnet.encode(x).data)
    other.load(tmp_path / "net.npz")
    np.testing.assert_array_equal(other.encode(x).data, rnet.encode(x).data)
    wrong = build_network("C_small", ("classify",), n_classes=5, rng=0)
    with pytest.raises((ShapeError, ConfigError)):
        wrong.load(tmp_path / "net.npz")
