import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elcodec.errors import ArchitectureMismatch, ConfigError, DimensionError, NumericError
from elcodec.modelcodec import ModelCodec
from elcodec.network import (
    LayerSpec,
    NetworkConfig,
    TrainingConfig,
    content_id,
    cqb_weights,
    enhance_frame,
    forward,
    init_params,
    make_checkpoint,
    require_same_architecture,
    train_online,
    zero_params,
)
from gradcheck import check_network, random_micro_network


def small_config():
    return NetworkConfig((LayerSpec(3, 1, 4), LayerSpec(1, 4, 4), LayerSpec(3, 4, 1)))


def test_standard_budget():
    cfg = NetworkConfig.standard()
    assert cfg.n_layers == 22
    assert cfg.n_weights == 40224
    assert cfg.n_biases == 337
    assert cfg.n_weights + cfg.n_biases == 40561
    assert cfg.n_affine == 44
    per_layer = [s.n_weights for s in cfg.layers]
    assert per_layer == [144] + [2304] * 17 + [256] * 3 + [144]


def test_config_json_round_trip(tmp_path):
    cfg = NetworkConfig.standard()
    cfg.to_json(tmp_path / "net.json")
    assert NetworkConfig.from_json(tmp_path / "net.json") == cfg
    d = json.loads((tmp_path / "net.json").read_text())
    assert set(d) == {"layers", "activation", "global_skip", "scale"}


def test_shipped_config_file_is_standard():
    from importlib import resources

    path = resources.files("elcodec") / "data" / "network.json"
    assert NetworkConfig.from_dict(json.loads(path.read_text())) == NetworkConfig.standard()


@pytest.mark.parametrize(
    "layers",
    [
        (LayerSpec(3, 2, 1),),
        (LayerSpec(3, 1, 4), LayerSpec(3, 3, 1)),
        (LayerSpec(5, 1, 1),),
    ],
)
def test_config_rejects_bad_tables(layers):
    with pytest.raises(ConfigError):
        NetworkConfig(layers)


def test_cqb_examples():
    wq, wc = cqb_weights(np.array([0.0]), 10)
    assert wq[0] == 0 and wc[0] == 0.0
    wq, wc = cqb_weights(np.array([0.123]), 10)
    assert wq[0] == 1 and wc[0] == pytest.approx(0.1, abs=1e-15)
    wq, wc = cqb_weights(np.array([0.25, -0.25]), 10, gain=2.0, offset=0.5)
    assert list(wq) == [3, -3]
    assert np.allclose(wc, [2 * 0.3 + 0.5, -2 * 0.3 + 0.5])


def test_cqb_rejects_non_finite():
    with pytest.raises(NumericError):
        cqb_weights(np.array([np.inf]), 10)
    with pytest.raises(ValueError):
        cqb_weights(np.array([1.0]), 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1, 1)), st.sampled_from([1.0, 4.0, 10.0, 32.0]))
def test_cqb_dequantization_bound(w_l, scale):
    wq, wc = cqb_weights(w_l, scale)
    assert wq.shape == w_l.shape == wc.shape
    assert np.all(np.abs(wc - w_l) <= 0.5 / scale + 1e-12)


def test_zero_trunk_is_identity():
    x = np.random.default_rng(0).uniform(size=(2, 1, 9, 7))
    assert np.array_equal(forward(zero_params(NetworkConfig.standard()), x), x)


def test_forward_uses_quantized_weights():
    rng = np.random.default_rng(1)
    p = init_params(small_config(), rng)
    x = rng.uniform(size=(1, 1, 6, 6))
    assert np.array_equal(forward(p, x), forward(p.quantize(), x))


def test_forward_output_hash_is_stable():
    p = init_params(NetworkConfig.standard(), np.random.default_rng(7))
    x = np.random.default_rng(8).uniform(size=(1, 1, 12, 12))
    hashes = {hashlib.sha256(forward(p, x).tobytes()).hexdigest() for _ in range(2)}
    assert len(hashes) == 1


def test_forward_rejects_multichannel():
    with pytest.raises(DimensionError):
        forward(zero_params(small_config()), np.zeros((1, 2, 5, 5)))


def test_gradients_on_micro_networks():
    rng = np.random.default_rng(11)
    for _ in range(10):
        params, x, y = random_micro_network(rng)
        assert check_network(params, x, y, rng) < 1e-4


def test_enhance_frame_strips_match_whole_frame():
    rng = np.random.default_rng(2)
    p = init_params(NetworkConfig.standard(), rng)
    p.weights = [w * 0.3 for w in p.weights]
    frame = rng.integers(0, 256, (70, 40), dtype=np.uint8)
    whole = enhance_frame(p.quantize(), frame, tile_rows=1000)
    strips = enhance_frame(p.quantize(), frame, tile_rows=16)
    assert np.array_equal(whole, strips)


def test_checkpoint_id_is_content_hash():
    p = init_params(small_config(), np.random.default_rng(3))
    a, b = make_checkpoint(p, 1), make_checkpoint(p.copy(), 1)
    assert a.id == b.id == content_id(p, 1)
    assert make_checkpoint(p, 2).id != a.id
    q = p.copy()
    q.biases[0][0] += 1e-9
    assert make_checkpoint(q, 1).id != a.id


def test_quantization_consistency():
    p = init_params(NetworkConfig.standard(), np.random.default_rng(4))
    qm = make_checkpoint(p, 0).quantized()
    for w_l, w_q in zip(p.weights, qm.w_q):
        assert np.array_equal(np.copysign(np.floor(np.abs(w_l * 10) + 0.5), w_l * 10).astype(np.int64), w_q)


def _pairs(rng, n=2, size=40):
    out = []
    for _ in range(n):
        orig = rng.integers(0, 256, (size, size)).astype(np.uint8)
        noisy = np.clip(orig + rng.normal(0, 12, orig.shape), 0, 255).astype(np.uint8)
        out.append((noisy, orig))
    return out


def test_train_online_zero_iterations_returns_initial():
    rng = np.random.default_rng(5)
    init = make_checkpoint(init_params(small_config(), rng), 0)
    cks = train_online(init, _pairs(rng), TrainingConfig(iters_per_epoch=0, max_epochs=3))
    assert len(cks) == 1
    assert cks[0].id == init.id


def test_train_online_emits_one_checkpoint_per_epoch():
    rng = np.random.default_rng(6)
    init = make_checkpoint(init_params(small_config(), rng), 0)
    cfg = TrainingConfig(iters_per_epoch=5, max_epochs=3, batch_size=2, learning_rate=1e-3)
    cks = train_online(init, _pairs(rng), cfg)
    assert [c.epoch for c in cks] == [0, 1, 2, 3]
    assert len({c.id for c in cks}) == 4


def test_train_online_is_deterministic():
    cfg = TrainingConfig(iters_per_epoch=4, max_epochs=2, batch_size=2, seed=9)
    init = make_checkpoint(init_params(small_config(), np.random.default_rng(0)), 0)
    pairs = _pairs(np.random.default_rng(1))
    a = [c.id for c in train_online(init, pairs, cfg)]
    b = [c.id for c in train_online(init, pairs, cfg)]
    assert a == b


class SizedCodec:
    """Stand-in codec reporting a preset size per epoch."""

    def __init__(self, sizes):
        self.sizes = sizes

    def encoded_size(self, ck):
        return self.sizes[ck.epoch]


def test_train_online_drops_first_oversized_checkpoint():
    init = make_checkpoint(init_params(small_config(), np.random.default_rng(0)), 0)
    cfg = TrainingConfig(iters_per_epoch=2, max_epochs=5, batch_size=2, size_cap_bytes=100)
    cks = train_online(init, _pairs(np.random.default_rng(1)), cfg, SizedCodec([10, 50, 90, 101, 20, 20]))
    assert [c.epoch for c in cks] == [0, 1, 2]
    assert [c.compressed_bytes for c in cks] == [10, 50, 90]


def test_train_online_stops_on_divergence():
    # an absurd step size throws W_L far outside the representable W_Q range
    init = make_checkpoint(init_params(small_config(), np.random.default_rng(0)), 0)
    cfg = TrainingConfig(iters_per_epoch=3, max_epochs=2, batch_size=2, learning_rate=1e30)
    with np.errstate(all="ignore"):
        cks = train_online(init, _pairs(np.random.default_rng(1)), cfg)
    assert [c.epoch for c in cks] == [0]


def test_quantization_refuses_int32_overflow():
    with pytest.raises(NumericError, match="32-bit"):
        cqb_weights(np.array([3e8]), 10)


def test_train_online_rejects_small_frames():
    init = make_checkpoint(zero_params(small_config()), 0)
    with pytest.raises(DimensionError):
        train_online(init, _pairs(np.random.default_rng(0), size=20), TrainingConfig(iters_per_epoch=1, max_epochs=1))


def test_training_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(patch_size=0)
    with pytest.raises(ConfigError):
        TrainingConfig(learning_rate=-1)
    assert TrainingConfig().learning_rate == 0.0002
    assert TrainingConfig().patch_size == 35
    assert TrainingConfig().size_cap_bytes == 13824
    assert TrainingConfig.desk().iters_per_epoch == 200


def test_architecture_mismatch():
    with pytest.raises(ArchitectureMismatch):
        require_same_architecture(small_config(), NetworkConfig.standard())
    with pytest.raises(ArchitectureMismatch):
        ModelCodec(zero_params(small_config()).quantize()).serialize(make_checkpoint(zero_params(NetworkConfig.standard()), 0))
