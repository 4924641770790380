import numpy as np

from prgflow.estimators import CascadeConfig
from prgflow.network import (
    AdamState,
    BlockWeights,
    ModelWeights,
    PRESETS,
    adam_step,
    block_backward,
    block_forward,
    cnn_forward,
    count_params_flops,
    init_weights,
    load_weights,
    save_weights,
)

CASCADE = CascadeConfig.parse("Tx1,Sx1,PSx1")


def _naive_conv(x, kernel, bias):
    """Direct 3x3 stride-2 same-padded convolution reference."""
    h, w, cin = x.shape
    cout = kernel.shape[3]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ho, wo = (h + 1) // 2, (w + 1) // 2
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = xp[2 * i : 2 * i + 3, 2 * j : 2 * j + 3, :]
            out[i, j] = np.einsum("yxc,yxco->o", patch, kernel) + bias
    return out


def test_zero_weights_give_zero_params():
    w = init_weights(CASCADE, widths=(2, 3), input_size=16, seed=0)
    for b in w.blocks:
        b.set_arrays([np.zeros_like(a) for a in b.arrays()])
    stack = np.random.default_rng(0).uniform(0, 1, (16, 16, 2))
    for b, model in zip(w.blocks, CASCADE.blocks):
        out = cnn_forward(b, stack)
        assert out.shape == (model.dof,)
        assert np.allclose(out, 0.0)


def test_output_lengths_per_model():
    w = init_weights(CASCADE, widths=(2, 3), input_size=16, seed=1)
    stack = np.random.default_rng(1).uniform(0, 1, (16, 16, 2))
    dims = [cnn_forward(b, stack).shape[0] for b in w.blocks]
    assert dims == [2, 1, 3]


def test_forward_matches_naive_convolution():
    rng = np.random.default_rng(2)
    w = init_weights(CascadeConfig.parse("PSx1"), widths=(4, 5), input_size=16, seed=2)
    bw = w.blocks[0]
    stack = rng.uniform(0, 1, (16, 16, 2))
    x = stack
    for k, b in zip(bw.kernels, bw.biases):
        z = _naive_conv(x, k, b)
        x = np.where(z > 0, z, 0.1 * z)
    ref = x.reshape(-1) @ bw.dense_w + bw.dense_b
    out = cnn_forward(bw, stack)
    assert np.abs(out - ref).max() < 1e-5


def test_backward_zero_upstream():
    w = init_weights(CascadeConfig.parse("PSx1"), widths=(3,), input_size=8, seed=3)
    bw = w.blocks[0]
    stack = np.random.default_rng(3).uniform(0, 1, (8, 8, 2))
    _, cache = block_forward(bw, stack, need_cache=True)
    grads = block_backward(bw, cache, np.zeros(3))
    assert all(np.allclose(g, 0.0) for g in grads)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    w = init_weights(CascadeConfig.parse("PSx1"), widths=(3, 4), input_size=16, seed=4)
    bw = w.blocks[0]
    stack = rng.uniform(0, 1, (16, 16, 2))
    upstream = rng.normal(size=3)

    def value(b):
        return float(cnn_forward(b, stack) @ upstream)

    _, cache = block_forward(bw, stack, need_cache=True)
    grads = block_backward(bw, cache, upstream)
    arrays = bw.arrays()
    eps = 1e-6
    for ai, (arr, g) in enumerate(zip(arrays, grads)):
        flat = arr.reshape(-1)
        for idx in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            vp = value(bw)
            flat[idx] = orig - eps
            vm = value(bw)
            flat[idx] = orig
            fd = (vp - vm) / (2 * eps)
            assert abs(g.reshape(-1)[idx] - fd) < 1e-4 * max(abs(fd), 1.0)


def test_adam_zero_gradient_no_move():
    arrays = [np.ones((2, 2))]
    grads = [np.zeros((2, 2))]
    state = AdamState.zeros_like(arrays)
    out, _ = adam_step(arrays, grads, state, 1)
    assert np.allclose(out[0], arrays[0])


def test_adam_first_step_magnitude():
    arrays = [np.array([1.0])]
    grads = [np.array([0.37])]
    state = AdamState.zeros_like(arrays)
    out, _ = adam_step(arrays, grads, state, 1, lr=1e-4)
    delta = abs(out[0][0] - 1.0)
    assert 1e-4 * (1 - 1e-6) <= delta <= 1e-4
    # second identical step shrinks the magnitude
    out2, _ = adam_step(out, grads, state, 2, lr=1e-4)
    assert abs(out2[0][0] - out[0][0]) <= delta + 1e-12


def test_count_params_flops_closed_form():
    w = init_weights(CascadeConfig.parse("PSx1"), widths=(8,), input_size=128,
                     input_channels=1, seed=0)
    params, macs = count_params_flops(w)
    # single 3x3 conv 1->8 plus dense (64*64*8 -> 3)
    conv_params = 72 + 8
    dense_params = 64 * 64 * 8 * 3 + 3
    assert params == conv_params + dense_params
    assert macs == 64 * 64 * 8 * 9 * 1 + 64 * 64 * 8 * 3


def test_params_monotone_in_width():
    p1, _ = count_params_flops(init_weights(CASCADE, widths=PRESETS["tiny"]))
    p2, _ = count_params_flops(init_weights(CASCADE, widths=PRESETS["small"]))
    p3, _ = count_params_flops(init_weights(CASCADE, widths=PRESETS["large"]))
    assert p1 < p2 < p3


def test_preset_compression_ratios():
    cascade = CascadeConfig.parse("Tx2,Sx2")
    tiny, _ = count_params_flops(init_weights(cascade, widths=PRESETS["tiny"]))
    small, _ = count_params_flops(init_weights(cascade, widths=PRESETS["small"]))
    large, _ = count_params_flops(init_weights(cascade, widths=PRESETS["large"]))
    assert tiny <= 0.1 * small
    assert small <= 0.1 * large


def test_save_load_round_trip(tmp_path):
    w = init_weights(CASCADE, widths=(3, 4), input_size=32, seed=7)
    path = tmp_path / "w.prgw"
    save_weights(w, path)
    back = load_weights(path)
    assert back.cascade.describe() == w.cascade.describe()
    assert back.input_channels == w.input_channels
    assert back.input_size == w.input_size
    for a, b in zip(w.arrays(), back.arrays()):
        # stored as 32-bit reals
        assert np.abs(a - b).max() < 1e-6
    with open(path, "rb") as f:
        assert f.read(4) == b"PRGW"
