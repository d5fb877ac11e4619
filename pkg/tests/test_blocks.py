import itertools

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torchvision.ops import deform_conv2d as tv_deform_conv2d

from _oracles import bilinear_at, fd_relative_error, sliding_mean
from cataractkit.blocks import (
    CascadePoolingFusion, ChannelSqueeze, DeformableBlock, DeformablePyramidReception, DoubleConv,
    FeatureFusionDecision, PyramidViewFusion, ReCal, RegionSqueeze, ScaleAdaptiveBlock, ShapeAdaptiveBlock,
    ShapeScaleFusion, UpDoubleConv, deform_conv2d, interleave_channels, sampling_positions,
)
from cataractkit.errors import ConfigError
from cataractkit.networks import count_parameters


def randn(*shape, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=dtype)


def randomize_offsets(module, std=0.1, seed=1):
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if hasattr(m, "offset_conv"):
            with torch.no_grad():
                m.offset_conv.weight.copy_(torch.randn(m.offset_conv.weight.shape, generator=g) * std)
                m.offset_conv.bias.copy_(torch.randn(m.offset_conv.bias.shape, generator=g) * std)


# --------------------------------------------------------------------------
# deformable convolution
# --------------------------------------------------------------------------

@pytest.mark.parametrize("dilation", [1, 3, 6])
def test_deform_conv_matches_torchvision(dilation):
    x = randn(2, 5, 9, 11, seed=1)
    off = randn(2, 18, 9, 11, seed=2) * 2.5
    weight = randn(4, 5, 3, 3, seed=3)
    bias = randn(4, seed=4)
    ours = deform_conv2d(x, off, weight, bias, dilation=dilation)
    ref = tv_deform_conv2d(x, off, weight, bias, padding=dilation, dilation=dilation)
    assert torch.allclose(ours, ref, atol=1e-10)


def test_zero_offsets_reduce_to_dilated_conv():
    blk = DeformableBlock(4, 6, dilation=3).double()
    x = randn(1, 4, 12, 12)
    y, off = blk(x)
    assert torch.count_nonzero(off) == 0
    ref = F.conv2d(x, blk.weight, blk.bias, padding=3, dilation=3)
    assert torch.allclose(y, ref, atol=1e-12)


def test_offsets_bounded_and_eighteen_channels():
    blk = DeformableBlock(3, 2, dilation=6)
    randomize_offsets(blk, std=5.0)
    _, off = blk(torch.randn(2, 3, 10, 10) * 10)
    assert off.shape[1] == 18
    assert off.abs().max() <= 1.0
    assert off.abs().max() == 1.0  # large weights saturate


def test_offset_moves_sampling_position_by_dilation_plus_offset():
    off = torch.zeros(1, 18, 5, 5, dtype=torch.float64)
    elem = 5  # kernel row 1, col 2: the right neighbour
    off[0, 2 * elem + 1] = 1.0
    py, px = sampling_positions(off, 3, 3)
    assert px[0, elem, 2, 2] == 2 + 4
    assert py[0, elem, 2, 2] == 2

    # fractional offsets against a hand bilinear sampler
    img = randn(5, 5, seed=7)
    off = randn(1, 18, 5, 5, seed=8).clamp(-1, 1)
    for elem in range(9):
        weight = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
        weight.view(-1)[elem] = 1.0
        out = deform_conv2d(img.view(1, 1, 5, 5), off, weight, dilation=3)
        ky, kx = divmod(elem, 3)
        for y, x in itertools.product(range(5), range(5)):
            sy = y + (ky - 1) * 3 + off[0, 2 * elem, y, x].item()
            sx = x + (kx - 1) * 3 + off[0, 2 * elem + 1, y, x].item()
            assert out[0, 0, y, x].item() == pytest.approx(bilinear_at(img.numpy(), sy, sx), abs=1e-12)


def test_deformable_rejects_unknown_dilation():
    with pytest.raises(ConfigError):
        DeformableBlock(4, 4, dilation=4)


# --------------------------------------------------------------------------
# PVF
# --------------------------------------------------------------------------

def test_pvf_shape():
    pvf = PyramidViewFusion(64, 48, bottleneck=16)
    assert pvf(torch.randn(2, 64, 32, 32)).shape == (2, 48, 32, 32)


def test_pvf_constant_input_branches_constant():
    pvf = PyramidViewFusion(4)
    x = torch.full((1, 4, 9, 9), 0.37, dtype=torch.float64)
    for b in pvf.branches(x):
        assert torch.allclose(b, x)


def test_pvf_branches_match_sliding_window_mean():
    pvf = PyramidViewFusion(4)
    x = torch.zeros(1, 4, 8, 8, dtype=torch.float64)
    x[0, :, 3, 4] = 1.0
    branches = pvf.branches(x)
    assert torch.allclose(branches[0], torch.full_like(x, 1 / 64))
    for k, b in zip((3, 5, 7), branches[1:]):
        ref = sliding_mean(x[0, 0].numpy(), k)
        assert np.allclose(b[0, 0].numpy(), ref, atol=1e-12)
    # kernel 7 spreads over the 7x7 neighbourhood (rows 0-6, cols 1-7)
    assert torch.count_nonzero(branches[3][0, 0]) == 49


def test_pvf_support_of_kernel_seven():
    pvf = PyramidViewFusion(1)
    x = torch.zeros(1, 1, 15, 15, dtype=torch.float64)
    x[0, 0, 7, 7] = 1.0
    support = pvf.branches(x)[3][0, 0] > 0
    assert support.sum() == 49
    assert support[4:11, 4:11].all()


def test_pvf_rejects_small_maps():
    with pytest.raises(ConfigError):
        PyramidViewFusion(4)(torch.randn(1, 4, 6, 6))


# --------------------------------------------------------------------------
# DPR
# --------------------------------------------------------------------------

def test_dpr_shape():
    dpr = DeformablePyramidReception(32, 32, 24)
    assert dpr(torch.randn(1, 32, 16, 16), torch.randn(1, 32, 16, 16)).shape == (1, 24, 16, 16)


def test_dpr_zero_offsets_equal_static_dilated_fusion():
    torch.manual_seed(0)
    dpr = DeformablePyramidReception(4, 4, 6).double().eval()
    enc, dec = randn(1, 4, 16, 16, seed=1), randn(1, 4, 16, 16, seed=2)
    x = torch.cat([enc, dec], 1)
    branches = [
        F.conv2d(x, dpr.static.weight, dpr.static.bias, padding=1),
        F.conv2d(x, dpr.deform3.weight, dpr.deform3.bias, padding=3, dilation=3),
        F.conv2d(x, dpr.deform6.weight, dpr.deform6.bias, padding=6, dilation=6),
    ]
    ref = dpr.fuse(torch.cat(branches, 1))
    assert torch.allclose(dpr(enc, dec), ref, atol=1e-12)


def test_dpr_reach_is_seven_pixels():
    torch.manual_seed(0)
    dpr = DeformablePyramidReception(2, 2, 4).double()
    randomize_offsets(dpr, std=2.0)  # saturate offsets for maximum reach
    enc, dec = randn(1, 2, 24, 24, seed=3), randn(1, 2, 24, 24, seed=4)
    probe = (12, 12)
    base = [b[..., probe[0], probe[1]] for b in dpr.branch_outputs(enc, dec)]
    for dy, dx in [(8, 0), (-8, 0), (0, 8), (0, -8), (8, 8), (-8, 5), (3, -8)]:
        e = enc.clone()
        e[..., probe[0] + dy, probe[1] + dx] += 100.0
        for b0, b1 in zip(base, dpr.branch_outputs(e, dec)):
            # normalised grid coordinates can leave ~1e-15 weight on the 8th pixel
            assert torch.allclose(b0, b1[..., probe[0], probe[1]], rtol=0, atol=1e-9)
    # the dilation-6 branch does see pixels 5-7 px away
    far = 0
    for dy, dx in itertools.product(range(-7, 8), repeat=2):
        if max(abs(dy), abs(dx)) < 5:
            continue
        e = enc.clone()
        e[..., probe[0] + dy, probe[1] + dx] += 100.0
        moved = dpr.branch_outputs(e, dec)[2][..., probe[0], probe[1]]
        far += int((moved - base[2]).abs().max() > 1e-3)
    assert far > 0


def test_dpr_rejects_mismatched_inputs():
    dpr = DeformablePyramidReception(4, 4, 4)
    with pytest.raises(ConfigError):
        dpr(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 16, 16))
    with pytest.raises(ConfigError):
        dpr(torch.randn(1, 3, 8, 8), torch.randn(1, 4, 8, 8))


# --------------------------------------------------------------------------
# ReCal
# --------------------------------------------------------------------------

def test_interleave_order():
    a, b, p, q = (torch.full((1, 1, 2, 2), v) for v in (1.0, 2.0, 3.0, 4.0))
    out = interleave_channels(torch.cat([a, b], 1), torch.cat([p, q], 1))
    assert out[0, :, 0, 0].tolist() == [1.0, 3.0, 2.0, 4.0]


@pytest.mark.parametrize("c", [32, 64, 128, 256, 512])
def test_recal_bias_free_count(c):
    assert count_parameters(ReCal(c), bias_free=True) == c * c + 22 * c + 4


def test_recal_five_module_total():
    assert sum(count_parameters(ReCal(c), bias_free=True) for c in (32, 64, 128, 256, 512)) == 371_028


def test_recal_preserves_shape():
    for shape in [(2, 8, 5, 7), (1, 4, 16, 16)]:
        assert ReCal(shape[1])(torch.randn(*shape)).shape == shape


def test_recal_rejects_bad_ratio():
    with pytest.raises(ConfigError):
        ReCal(6, r=4)


def test_region_squeeze_branch_permutation_with_equal_fusion_weights():
    res = RegionSqueeze(4).double()
    with torch.no_grad():
        res.fuse.weight.fill_(0.3)
    x = randn(1, 4, 9, 9)
    desc = res.descriptors(x)
    ref = torch.sigmoid(res.fuse(torch.cat(desc, 1)))
    for perm in itertools.permutations(range(4)):
        out = torch.sigmoid(res.fuse(torch.cat([desc[i] for i in perm], 1)))
        assert torch.allclose(out, ref, atol=1e-14)
    assert torch.allclose(res(x), ref)


# --------------------------------------------------------------------------
# AdaptNet blocks
# --------------------------------------------------------------------------

def test_cpf_grouped_input_width_and_layout():
    cpf = CascadePoolingFusion(20)
    x = torch.randn(1, 20, 32, 32)
    stacked = cpf.grouped_input(x)
    assert stacked.shape[1] == 100
    assert torch.equal(stacked[:, 5 * 7], x[:, 7])  # each group opens with its source channel
    assert cpf(x).shape == (1, 20, 32, 32)


def test_cpf_constant_views():
    cpf = CascadePoolingFusion(3)
    x = torch.full((1, 3, 16, 16), -1.25)
    for v in cpf.pooled_views(x):
        assert torch.allclose(v, x)


def test_ffd_identical_branches_half_attention():
    ffd = FeatureFusionDecision(4).double()
    b = randn(1, 4, 8, 8)
    maps, att = ffd.attention([b, b])
    assert torch.allclose(att, torch.full_like(att, 0.5))
    assert torch.allclose(ffd([b, b]), maps[0])


def test_ffd_attention_sums_to_one():
    ffd = FeatureFusionDecision(4, num_branches=3).double()
    _, att = ffd.attention([randn(1, 4, 8, 8, seed=s) for s in range(3)])
    assert torch.allclose(att.sum(1), torch.ones(1, 8, 8, dtype=torch.float64))


def test_sha_zero_offsets_branches_identical():
    sha = ShapeAdaptiveBlock(4).double()
    d, s = sha.branches(randn(1, 4, 8, 8))
    assert torch.allclose(d, s, atol=1e-12)


def test_ssf_shape():
    ssf = ShapeScaleFusion(8, 16, 12)
    assert ssf(torch.randn(2, 8, 16, 16), torch.randn(2, 16, 16, 16)).shape == (2, 12, 16, 16)


# --------------------------------------------------------------------------
# gradient checks
# --------------------------------------------------------------------------

def _gradcheck_cases():
    def x(seed=0):
        return randn(1, 4, 8, 8, seed=seed)

    return {
        "deformable_d3": (lambda: DeformableBlock(4, 4, 3), lambda m, a: m(a[0])[0], [x()]),
        "deformable_d6": (lambda: DeformableBlock(4, 4, 6), lambda m, a: m(a[0])[0], [x()]),
        "pvf": (lambda: PyramidViewFusion(4), lambda m, a: m(a[0]), [x()]),
        "dpr": (lambda: DeformablePyramidReception(4, 4, 4), lambda m, a: m(a[0], a[1]), [x(), x(1)]),
        "region_squeeze": (lambda: RegionSqueeze(4), lambda m, a: m(a[0]), [x()]),
        "channel_squeeze": (lambda: ChannelSqueeze(4), lambda m, a: m(a[0]), [x()]),
        "recal": (lambda: ReCal(4), lambda m, a: m(a[0]), [x()]),
        "cpf": (lambda: CascadePoolingFusion(4), lambda m, a: m(a[0]), [x()]),
        "ffd": (lambda: FeatureFusionDecision(4), lambda m, a: m([a[0], a[1]]), [x(), x(1)]),
        "scale_adaptive": (lambda: ScaleAdaptiveBlock(4), lambda m, a: m(a[0]), [x()]),
        "shape_adaptive": (lambda: ShapeAdaptiveBlock(4), lambda m, a: m(a[0]), [x()]),
        "ssf": (lambda: ShapeScaleFusion(4, 4, 4), lambda m, a: m(a[0], a[1]), [x(), x(1)]),
        "double_conv": (lambda: DoubleConv(4, 4), lambda m, a: m(a[0]), [x()]),
        "up_double_conv": (lambda: UpDoubleConv(4, 4, 4), lambda m, a: m(a[0], a[1]), [x(), x(1)]),
    }


def block_gradient_error(name):
    """Worst relative error over inputs and every parameter tensor of a block."""
    make, call, inputs = _gradcheck_cases()[name]
    torch.manual_seed(0)
    module = make().double()
    randomize_offsets(module)
    inputs = [t.clone().requires_grad_(True) for t in inputs]
    with torch.no_grad():
        probe = call(module, inputs)
    weights = randn(*probe.shape, seed=99)  # weighted sum keeps normalized outputs informative
    params = [p for p in module.parameters() if p.requires_grad]
    return fd_relative_error(lambda: (call(module, inputs) * weights).sum(), inputs + params)


@pytest.mark.parametrize("name", sorted(_gradcheck_cases()))
def test_block_gradients(name):
    assert block_gradient_error(name) <= 1e-3


def test_deform_conv_function_gradients_include_offsets():
    x = randn(1, 4, 8, 8, seed=1).requires_grad_(True)
    off = (randn(1, 18, 8, 8, seed=2) * 0.7).requires_grad_(True)
    w = randn(3, 4, 3, 3, seed=3).requires_grad_(True)
    weights = randn(1, 3, 8, 8, seed=4)
    err = fd_relative_error(lambda: (deform_conv2d(x, off, w, dilation=3) * weights).sum(), [x, off, w],
                            max_entries=64)
    assert err <= 1e-3
