import numpy as np
import pytest

from floodfuse import functional as F
from floodfuse.network import (
    ContextModule, Decoder, Encoder, FusionConfig, FusionHead, FusionNet, StreamConfig, decoder_plan,
    early_fuse_temporal, extend_input_channels, fuse, stream_for,
)
from floodfuse.tensor import Tensor

from helpers import tiny_fusion_config

RNG = np.random.default_rng


def _x(*shape, seed=0):
    return Tensor(RNG(seed).standard_normal(shape).astype(np.float32))


@pytest.mark.parametrize("c,px", [(20, 96), (6, 192), (3, 64)])
def test_encoder_output_stride_eight(c, px):
    cfg = StreamConfig("s", c, px, 1.0, widths=(4, 4, 8, 8), blocks=(1, 1, 1, 1))
    enc = Encoder(cfg, RNG(0))
    assert enc(_x(2, c, px, px)).shape == (2, 8, px // 8, px // 8)


def test_encoder_rejects_indivisible_with_hint():
    cfg = StreamConfig("s", 3, 30, 1.0, widths=(4, 4, 4, 4), blocks=(1, 1, 1, 1))
    with pytest.raises(ValueError, match="pad by 2 rows"):
        Encoder(cfg, RNG(0))(_x(1, 3, 30, 30))


def test_context_module_channels_and_bins():
    m = ContextModule(16, (1, 2, 3, 6), RNG(0))
    assert m(_x(2, 16, 12, 12)).shape == (2, 32, 12, 12)
    small = StreamConfig("s", 3, 32, 1.0)
    assert small.bins == (1, 2, 3)
    m = ContextModule(15, small.bins, RNG(0))
    assert m(_x(2, 15, 4, 4)).shape == (2, 30, 4, 4)


def test_context_constant_input_constant_output():
    m = ContextModule(4, (1, 2, 3, 6), RNG(0)).eval()
    x = np.ones((1, 4, 12, 12), np.float32) * np.arange(1, 5, dtype=np.float32)[None, :, None, None]
    out = m(Tensor(x)).data
    np.testing.assert_allclose(out.std(axis=(2, 3)), 0, atol=1e-5)


@pytest.mark.parametrize("blocks,size,out", [(3, 12, 96), (2, 24, 96), (0, 7, 7)])
def test_decoder_sizes(blocks, size, out):
    d = Decoder(8, blocks, 2, 8, RNG(0))
    assert d(_x(2, 8, size, size)).shape == (2, 2, out, out)


def test_decoder_plan():
    assert decoder_plan(12, 96) == (3, False)
    assert decoder_plan(24, 96) == (2, False)
    assert decoder_plan(4, 80) == (3, True)
    assert decoder_plan(8, 8) == (0, False)


def test_fusion_head_passthrough():
    head = FusionHead(1, 2, 8, RNG(0))
    head.init_passthrough()
    x = _x(2, 2, 6, 6)
    np.testing.assert_allclose(head(x).data, x.data, atol=1e-6)
    head3 = FusionHead(3, 2, 8, RNG(0))
    head3.init_passthrough()
    parts = [_x(1, 2, 4, 4, seed=s) for s in range(3)]
    got = fuse(parts, head3).data
    np.testing.assert_allclose(got, sum(p.data for p in parts), atol=1e-5)
    assert head3.conv1.in_channels == 6


def test_fuse_rejects_batch_mismatch():
    head = FusionHead(2, 2, 8, RNG(0))
    with pytest.raises(ValueError, match="batch"):
        fuse([_x(1, 2, 4, 4), _x(2, 2, 4, 4)], head)


def test_early_fusion():
    assert early_fuse_temporal(np.zeros((3, 8, 8)), np.zeros((3, 8, 8))).shape == (6, 8, 8)
    assert early_fuse_temporal(np.zeros((2, 10, 8, 8)), np.zeros((2, 10, 8, 8))).shape == (2, 20, 8, 8)
    with pytest.raises(ValueError):
        early_fuse_temporal(np.zeros((3, 8, 8)), np.zeros((3, 4, 4)))


def test_extend_input_channels():
    w = RNG(0).standard_normal((4, 3, 3, 3))
    np.testing.assert_array_equal(extend_input_channels(w, 3), w)
    w = np.ones((2, 3, 3, 3)) * np.array([1.0, 2.0, 3.0])[None, :, None, None]
    ext = extend_input_channels(w, 20)
    assert ext.shape == (2, 20, 3, 3)
    np.testing.assert_array_equal(ext[:, :3], w)
    np.testing.assert_array_equal(ext[:, 3:], 2.0)
    with pytest.raises(ValueError):
        extend_input_channels(w, 2)


@pytest.mark.parametrize("combo", [["s2"], ["s1", "s2"], ["s1", "s2", "vhr"], ["vhr"]])
def test_output_on_common_grid(combo):
    streams = [stream_for(s, 64.0, {"s1": 4.0, "s2": 8.0, "vhr": 2.0}[s], widths=(4, 4, 4, 4), blocks=(1, 1, 1, 1))
               for s in combo]
    cfg = FusionConfig(streams, 64.0, 2.0 if "vhr" in combo else 8.0)
    net = FusionNet(cfg, 0)
    x = {s.sensor: RNG(1).standard_normal((2, s.in_channels, s.pixels, s.pixels)).astype(np.float32) for s in streams}
    out = net(x)
    assert out.shape == (2, 2, cfg.common_pixels, cfg.common_pixels)


def test_common_grid_defaults():
    with_vhr = FusionConfig([stream_for("vhr", 320.0)], 320.0)
    assert with_vhr.common_gsd == 2.0 and with_vhr.common_pixels == 160
    assert FusionConfig([stream_for("s2", 320.0)], 320.0).common_gsd == 10.0
    with pytest.raises(ValueError, match="duplicate"):
        FusionConfig([stream_for("s2", 320.0), stream_for("s2", 320.0)], 320.0)


def test_no_dead_streams():
    cfg = tiny_fusion_config(pixels=24)
    net = FusionNet(cfg, 0)
    rng = RNG(2)
    x = {s.sensor: rng.standard_normal((2, 2, 24, 24)).astype(np.float32) for s in cfg.streams}
    net.zero_grad()
    F.softmax_cross_entropy(net(x), rng.integers(0, 2, (2, 24, 24))).backward()
    for name, p in net.named_parameters():
        assert np.linalg.norm(p.grad) > 0, name


def test_parameter_names_unique_and_stable():
    cfg = tiny_fusion_config()
    a = [n for n, _ in FusionNet(cfg, 0).named_parameters()]
    b = [n for n, _ in FusionNet(cfg, 1).named_parameters()]
    assert a == b and len(set(a)) == len(a)
    assert "streams.s1.encoder.stem.conv.weight" in a
    buffers = [n for n, _ in FusionNet(cfg, 0).named_buffers()]
    assert not set(buffers) & set(a)


def test_metadata_records_bins():
    cfg = tiny_fusion_config(pixels=32)
    meta = FusionNet(cfg, 0).metadata()
    assert meta["streams"]["s1"]["bins"] == [1, 2, 3]
    assert FusionConfig.from_dict(meta["fusion"]).to_dict() == cfg.to_dict()


def test_deterministic_loss_trajectory():
    from floodfuse.training import OptimizerState, adam_step

    cfg = tiny_fusion_config(pixels=16)
    rng = RNG(3)
    x = {s.sensor: rng.standard_normal((2, 2, 16, 16)).astype(np.float32) for s in cfg.streams}
    y = rng.integers(0, 2, (2, 16, 16))

    def run():
        net, st, losses = FusionNet(cfg, 5), OptimizerState(), []
        for _ in range(10):
            net.zero_grad()
            loss = F.softmax_cross_entropy(net(x), y)
            loss.backward()
            adam_step({n: p.data for n, p in net.named_parameters()},
                      {n: p.grad for n, p in net.named_parameters()}, st, 1e-2)
            losses.append(float(loss.data))
        return losses

    assert run() == run()


def test_full_network_gradient_check_16px():
    from helpers import network_grad_error

    err, n = network_grad_error(tiny_fusion_config(pixels=16), max_entries=6)
    assert n > 100 and err < 1e-4
