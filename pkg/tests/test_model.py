import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adanas.autograd import ops
from adanas.model import (
    ArchSpec,
    CheckpointError,
    TaskShape,
    build_subnetwork,
    load_checkpoint,
    logits,
    param_count,
    save_checkpoint,
)

FLAT = TaskShape((2,), 3)
IMAGE = TaskShape((6, 6, 3), 4)


def test_arch_parse_and_order():
    assert ArchSpec.parse("6@768") == ArchSpec(6, 768)
    assert str(ArchSpec(7, 1008)) == "7@1008"
    assert ArchSpec(1, 9) < ArchSpec(2, 1) < ArchSpec(2, 3)
    with pytest.raises(ValueError):
        ArchSpec.parse("6x768")
    with pytest.raises(ValueError):
        ArchSpec(0, 4)


def test_param_count_hand_sum():
    # stem 2*8+8, one cell 8*8+8, head 8*3+3
    assert param_count(ArchSpec(1, 8), FLAT) == (2 * 8 + 8) + (8 * 8 + 8) + (8 * 3 + 3) == 123
    net = build_subnetwork(ArchSpec(1, 8), FLAT, seed=0)
    assert net.params.total_count == 123


def test_param_count_image_matches_build():
    for arch in (ArchSpec(1, 4), ArchSpec(3, 5)):
        assert build_subnetwork(arch, IMAGE, seed=0).params.total_count == param_count(arch, IMAGE)
    # stem 9*3*4+4, cell 9*16+4, head 4*4+4
    assert param_count(ArchSpec(1, 4), IMAGE) == 112 + 148 + 20


def test_deeper_has_more_params_at_large_scale():
    task = TaskShape((32, 32, 3), 10)
    assert param_count(ArchSpec(7, 768), task) > param_count(ArchSpec(6, 768), task)


@given(st.integers(1, 20), st.integers(1, 300), st.booleans())
def test_param_count_monotone(d, w, image):
    task = IMAGE if image else FLAT
    c = param_count(ArchSpec(d, w), task)
    assert param_count(ArchSpec(d + 1, w), task) > c
    assert param_count(ArchSpec(d, w + 1), task) > c


def test_width_doubling_quadruples_cell_term():
    for task in (FLAT, IMAGE):
        for w in (16, 64, 256):
            cell = param_count(ArchSpec(2, w), task) - param_count(ArchSpec(1, w), task)
            cell2 = param_count(ArchSpec(2, 2 * w), task) - param_count(ArchSpec(1, 2 * w), task)
            assert 3.8 < cell2 / cell <= 4.0


def test_same_seed_same_init():
    a = build_subnetwork(ArchSpec(2, 8), FLAT, seed=5)
    b = build_subnetwork(ArchSpec(2, 8), FLAT, seed=5)
    c = build_subnetwork(ArchSpec(2, 8), FLAT, seed=6)
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())
    assert a.checksum() == b.checksum() != c.checksum()


def test_init_biases_zero_and_he_bound():
    net = build_subnetwork(ArchSpec(2, 16), FLAT, seed=1)
    for name, t in net.params.items():
        if name.endswith("bias"):
            assert np.all(t.data == 0)
        else:
            assert np.abs(t.data).max() <= np.sqrt(6 / t.shape[0])


def test_zero_head_gives_zero_logits():
    net = build_subnetwork(ArchSpec(2, 8), FLAT, seed=0)
    net.params["head.weight"].data[...] = 0
    out = logits(net, np.random.default_rng(0).standard_normal((5, 2)))
    assert out.shape == (5, 3)
    assert np.all(out.data == 0)


def test_image_logits_shape():
    net = build_subnetwork(ArchSpec(2, 4), IMAGE, seed=0)
    assert logits(net, np.zeros((3, 6, 6, 3))).shape == (3, 4)
    with pytest.raises(ValueError):
        logits(net, np.zeros((3, 5, 6, 3)))


def test_frozen_net_gets_no_gradient():
    frozen = build_subnetwork(ArchSpec(1, 4), FLAT, seed=0).freeze()
    student = build_subnetwork(ArchSpec(1, 4), FLAT, seed=1)
    x = np.random.default_rng(0).standard_normal((4, 2))
    loss = ops.total(ops.mul(logits(student, x), logits(frozen, x)))
    loss.backward()
    assert all(t.grad is None for t in frozen.params)
    assert all(t.grad is not None for t in student.params)


def test_frozen_params_read_only():
    net = build_subnetwork(ArchSpec(1, 4), FLAT, seed=0).freeze()
    with pytest.raises(ValueError):
        net.params["head.bias"].data[0] = 1.0


def test_checkpoint_round_trip(tmp_path):
    net = build_subnetwork(ArchSpec(2, 4), IMAGE, seed=3, iteration_born=2)
    save_checkpoint(net, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt", expected_checksum=net.checksum())
    assert back.frozen and back.arch == net.arch and back.iteration_born == 2 and back.task == IMAGE
    np.testing.assert_array_equal(back.params.flat(), net.params.flat())


def test_checkpoint_corruption_detected(tmp_path):
    net = build_subnetwork(ArchSpec(1, 4), FLAT, seed=3)
    path = tmp_path / "a.ckpt"
    save_checkpoint(net, path)
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(b"garbage" * 10)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_header_layout(tmp_path):
    net = build_subnetwork(ArchSpec(1, 8), FLAT, seed=0)
    save_checkpoint(net, tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw[:8] == b"ADNSCKPT" and raw[8] == 1
    # magic, version+4 u32+rank, 1 dim, digest, count, payload
    assert len(raw) == 8 + 18 + 4 + 32 + 8 + 8 * 123
