import json
import os
import struct

import numpy as np
import pytest
import torch

from spotkit.core import SpotError
from spotkit.model import (BackboneConfig, CheckpointError, GateShift, HeadConfig, SpotModel, load_checkpoint,
                           predict_scores, read_checkpoint, save_checkpoint, shift_channel_count,
                           temporal_shift)
from spotkit.model.heads import MultiScaleGRUHead

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "param_count.json")
TINY_STAGES = ((1, 16, 2), (1, 32, 2))


def tiny(shift="gsm", head="bigru", k=3, **kw):
    torch.manual_seed(0)
    return SpotModel(BackboneConfig(stages=TINY_STAGES, shift_mode=shift, **kw), HeadConfig(k, kind=head))


@pytest.mark.parametrize("c, expected", [(368, 92), (30, 8), (4, 4), (768, 192), (64, 16)])
def test_shift_channel_count(c, expected):
    assert shift_channel_count(c) == expected


def test_temporal_shift_examples():
    x = torch.randn(1, 4)
    assert not temporal_shift(x).any()
    const = torch.ones(6, 4)
    assert torch.equal(temporal_shift(const)[1:5], const[1:5])
    impulse = torch.zeros(8, 4)
    impulse[3, 0] = 1
    out = temporal_shift(impulse)
    assert out[4, 0] == 1 and out.sum() == 1
    back = torch.zeros(8, 4)
    back[3, 3] = 1
    assert temporal_shift(back)[2, 3] == 1
    with pytest.raises(SpotError):
        temporal_shift(torch.zeros(3, 5))


def test_gate_shift_zero_gate_is_identity():
    gsm = GateShift(8)
    torch.nn.init.zeros_(gsm.gate.weight)
    torch.nn.init.zeros_(gsm.gate.bias)
    x = torch.randn(2, 5, 8, 6, 6)
    assert torch.allclose(gsm(x), x, atol=1e-6, rtol=0)


def test_gate_shift_saturated_gate_is_plain_shift():
    gsm = GateShift(8)
    torch.nn.init.zeros_(gsm.gate.weight)
    torch.nn.init.constant_(gsm.gate.bias, 50.0)
    x = torch.randn(1, 5, 8, 3, 3)
    assert torch.allclose(gsm(x), temporal_shift(x, dim=1), atol=1e-6)


def test_gate_shift_matches_direct_evaluation():
    torch.manual_seed(1)
    gsm = GateShift(4).double()
    x = torch.randn(1, 4, 4, 5, 5, dtype=torch.float64)
    w, b = gsm.gate.weight.detach().numpy(), gsm.gate.bias.detach().numpy()
    xn = x.numpy()[0]
    pad = np.pad(xn, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gate = np.zeros((4, 2, 5, 5))
    for t in range(4):
        for o in range(2):
            for i in range(5):
                for j in range(5):
                    gate[t, o, i, j] = np.tanh(b[o] + np.sum(w[o] * pad[t, :, i:i + 3, j:j + 3]))
    g = np.concatenate([np.repeat(gate[:, :1], 2, 1), np.repeat(gate[:, 1:], 2, 1)], axis=1)
    r = g * xn
    shifted = np.zeros_like(r)
    shifted[1:, :2] = r[:-1, :2]
    shifted[:-1, 2:] = r[1:, 2:]
    expected = shifted + (1 - g) * xn
    assert np.allclose(gsm(x)[0].detach().numpy(), expected, atol=1e-12)


def test_extract_features_default_shape():
    torch.manual_seed(0)
    model = SpotModel(BackboneConfig(), HeadConfig(3)).eval()
    with torch.no_grad():
        feats = model.features(torch.rand(1, 100, 3, 64, 64))
    assert feats.shape == (1, 100, 368)


def test_extract_features_rejects_bad_size():
    model = tiny()
    with pytest.raises(SpotError, match="multiple"):
        model.features(torch.rand(1, 4, 3, 30, 32))


def test_no_shift_features_are_per_frame():
    model = tiny(shift="none").eval()
    x = torch.rand(1, 7, 3, 32, 32)
    perm = torch.tensor([3, 0, 6, 1, 5, 2, 4])
    with torch.no_grad():
        assert torch.allclose(model.features(x)[:, perm], model.features(x[:, perm]), atol=1e-6)


@pytest.mark.parametrize("shift", ["gsm", "tsm"])
def test_interior_translation_equivariance(shift):
    model = tiny(shift=shift).double().eval()
    radius = model.backbone.temporal_radius
    x = torch.rand(1, 16, 3, 32, 32, dtype=torch.float64)
    delayed = torch.cat([torch.zeros_like(x[:, :1]), x[:, :-1]], dim=1)
    with torch.no_grad():
        a, b = model.features(x)[0], model.features(delayed)[0]
    rows = range(radius + 1, 16 - radius)
    assert len(rows) > 0
    for t in rows:
        assert torch.allclose(b[t], a[t - 1], atol=1e-5)
    # the boundary rows do change: the shift really mixes time
    assert not torch.allclose(b[1], a[0], atol=1e-5)


def test_heads_shapes_and_purity():
    torch.manual_seed(0)
    feats = torch.randn(1, 100, 32)
    for kind in ("bigru", "bigru_deep3", "grustar", "linear"):
        model = tiny(head=kind)
        assert model.head_logits(feats).shape == (1, 100, 4)
    lin = tiny(head="linear")
    f2 = feats.clone()
    f2[0, 10] += 1.0
    diff = (lin.head_logits(f2) - lin.head_logits(feats)).abs().sum(-1)[0]
    assert diff[10] > 0 and diff[torch.arange(100) != 10].max() == 0
    with pytest.raises(SpotError):
        lin.head_logits(torch.randn(1, 5, 31))


def test_bigru_is_bidirectional():
    model = tiny(head="bigru")
    feats = torch.randn(1, 20, 32)
    f2 = feats.clone()
    f2[0, 0] += 1.0
    assert (model.head_logits(f2) - model.head_logits(feats))[0, -1].abs().max() > 1e-6


def test_grustar_pooling():
    x = torch.randn(2, 100, 5)
    assert MultiScaleGRUHead.pool(x, 16).shape == (2, 7, 5)
    assert torch.equal(MultiScaleGRUHead.pool(x, 16)[:, -1], x[:, 96:].amax(1))
    head = MultiScaleGRUHead(8, 6, 3, scales=(4,))
    x = torch.randn(1, 16, 8)
    coarse, _ = head.grus[0](head.pool(torch.relu(head.proj[0](x)), 4))
    assert coarse.shape[1] == 4
    up = coarse.repeat_interleave(4, dim=1)
    assert torch.equal(up[0, 0], up[0, 3]) and not torch.equal(up[0, 3], up[0, 4])
    plain = MultiScaleGRUHead(8, 6, 3, scales=())
    assert plain(x).shape == (1, 16, 4)


def test_grustar_scale_validation():
    with pytest.raises(SpotError):
        HeadConfig(3, kind="grustar", grustar_scales=(16, 4))
    with pytest.raises(SpotError):
        HeadConfig(3, kind="grustar", grustar_scales=(1,))


@pytest.mark.parametrize("shift", ["gsm", "tsm", "none"])
@pytest.mark.parametrize("head", ["bigru", "bigru_deep3", "grustar", "linear"])
def test_output_length_equals_input(shift, head):
    model = tiny(shift=shift, head=head)
    for length in (1, 5, 17):
        frames = np.random.default_rng(length).random((length, 32, 32, 3))
        scores = predict_scores(model, frames)
        assert scores.scores.shape == (length, 4)
        scores.check()


def test_fresh_model_is_near_uniform_on_average():
    frames = np.random.default_rng(0).random((10, 32, 32, 3))
    means = []
    for seed in range(20):
        torch.manual_seed(seed)
        model = SpotModel(BackboneConfig(stages=TINY_STAGES), HeadConfig(3))
        means.append(predict_scores(model, frames).scores.mean(0))
    assert np.allclose(np.mean(means, 0), 0.25, atol=0.05)


def test_linear_no_shift_model_is_permutation_equivariant():
    model = tiny(shift="none", head="linear").eval()
    frames = np.random.default_rng(0).random((9, 32, 32, 3))
    perm = np.random.default_rng(1).permutation(9)
    a = predict_scores(model, frames).scores
    b = predict_scores(model, frames[perm]).scores
    assert np.allclose(a[perm], b, atol=1e-6)


def test_parameter_count_matches_golden():
    with open(GOLDEN) as f:
        golden = json.load(f)
    model = SpotModel(BackboneConfig(), HeadConfig(3))
    backbone, head = model.num_parameters()
    assert abs(backbone + head - golden["total"]) <= 0.2 * golden["total"]
    assert golden["backbone"] == backbone and golden["head"] == head


def test_checkpoint_round_trip(tmp_path):
    model = tiny(head="grustar").eval()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path, {"cycle": 3, "best_val_mAP": 0.5})
    loaded = load_checkpoint(path)
    for (k, a), (k2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert k == k2 and torch.equal(a, b)
    assert loaded.backbone_config == model.backbone_config and loaded.head_config == model.head_config
    frames = np.random.default_rng(0).random((6, 32, 32, 3))
    assert np.array_equal(predict_scores(model, frames).scores, predict_scores(loaded, frames).scores)
    assert read_checkpoint(path).metadata["cycle"] == 3
    assert open(path, "rb").read(7) == b"E2ESPOT"


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny(), str(path))
    raw = bytearray(path.read_bytes())
    raw[7:11] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 2.*version 1"):
        load_checkpoint(str(path))


def test_checkpoint_config_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny(), str(path))
    raw = path.read_bytes()
    hlen = struct.unpack_from("<Q", raw, 11)[0]
    header = json.loads(raw[19:19 + hlen])
    header["head"]["kind"] = "linear"
    new = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(raw[:11] + struct.pack("<Q", len(new)) + new + raw[19 + hlen:])
    with pytest.raises(CheckpointError, match="config/parameter mismatch"):
        load_checkpoint(str(path))


def test_checkpoint_corrupt(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(str(path))
    save_checkpoint(tiny(), str(path))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(str(path))


def test_checkpoint_double_precision(tmp_path):
    model = tiny().double()
    save_checkpoint(model, str(tmp_path / "d.ckpt"))
    loaded = load_checkpoint(str(tmp_path / "d.ckpt"))
    assert next(loaded.parameters()).dtype == torch.float64
