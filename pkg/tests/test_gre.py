"""Tests of the gait representation extractor: branches, foreground selection and regularisers."""

import math

import numpy as np
import pytest
import torch

from gregait import gre
from gregait import numerics as gnum

from conftest import two_cluster_f4


def _mask_branch(embed_dim, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return gre.MaskBranch(embed_dim).to(dtype)


def _iou(pred, truth):
    return np.logical_and(pred, truth).sum() / np.logical_or(pred, truth).sum()


# Mask branch

def test_mask_branch_shapes_and_softmax():
    branch = _mask_branch(6)
    assert branch.E.weight.shape == (2, 6, 1, 1)
    assert branch.D.weight.shape == (6, 2, 1, 1)
    
    f4 = torch.randn(3, 6, 8, 4)
    m, f4_rec, L_rec = gre.mask_forward(f4, branch)
    assert m.shape == (3, 2, 8, 4)
    assert f4_rec.shape == f4.shape
    torch.testing.assert_close(m.sum(dim=1), torch.ones(3, 8, 4))
    assert L_rec.dim() == 0 and float(L_rec) >= 0


def test_mask_forward_unbatched():
    branch = _mask_branch(4)
    f4 = torch.randn(4, 5, 3)
    m, f4_rec, _ = gre.mask_forward(f4, branch)
    assert m.shape == (2, 5, 3)
    assert f4_rec.shape == (4, 5, 3)


def test_zero_decoder_on_zero_input():
    branch = _mask_branch(4)
    with torch.no_grad(): branch.D.weight.zero_()
    _, _, L_rec = gre.mask_forward(torch.zeros(4, 6, 3), branch)
    assert float(L_rec) == 0.0


def test_mask_forward_rejects_non_finite():
    f4 = torch.zeros(4, 3, 3)
    f4[0,1,1] = float('nan')
    with pytest.raises(ValueError):
        gre.mask_forward(f4, _mask_branch(4))


def test_mask_recovers_two_clusters():
    f4, planted = two_cluster_f4(0)
    branch = _mask_branch(f4.shape[0], seed=0)
    optim = torch.optim.Adam(branch.parameters(), lr=0.05)
    for _ in range(1000):
        optim.zero_grad()
        _, _, L_rec = gre.mask_forward(f4, branch)
        L_rec.backward()
        optim.step()
    
    with torch.no_grad(): m, _, _ = gre.mask_forward(f4, branch)
    fg = gre.select_foreground_channel(m)
    assert _iou(m[fg].numpy() >= 0.5, planted) >= 0.9
    assert float(m.max(dim=0).values.mean()) > 0.8


# Foreground selection

def test_central_channel_wins():
    m = np.zeros((2, 16, 8))
    m[1] = 1
    m[1, 4:12, 2:6] = 0
    m[0, 4:12, 2:6] = 1
    assert gre.select_foreground_channel(m) == 0
    assert gre.select_foreground_channel(m[::-1]) == 1


def test_uniform_mask_tie_goes_to_channel_zero():
    assert gre.select_foreground_channel(np.full((2, 6, 4), 0.5)) == 0
    assert gre.select_foreground_channel(torch.full((2, 6, 4), 0.5)) == 0


def test_center_scores_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        hgt, wid = rng.integers(3, 12, size=2)
        m = rng.random((2, hgt, wid))
        m /= m.sum(axis=0)
        
        scores = []
        for ch in range(2):
            num = den = 0.0
            for iy in range(hgt):
                for ix in range(wid):
                    wgt = math.exp(-0.5*((iy - (hgt-1)/2)/(hgt/4))**2 - 0.5*((ix - (wid-1)/2)/(wid/4))**2)
                    num += m[ch,iy,ix]*wgt
                    den += m[ch,iy,ix]
            scores.append(num/den)
        
        np.testing.assert_allclose(gre.center_scores(m), scores, rtol=1e-12)
        assert gre.select_foreground_channel(m) == (0 if scores[0] >= scores[1] else 1)


def test_batched_selection_matches_single():
    m = torch.softmax(torch.randn(5, 2, 10, 6, generator=torch.Generator().manual_seed(1)), dim=1)
    chans = gre.select_foreground_channels(m)
    assert chans.dtype == torch.int64
    assert chans.tolist() == [gre.select_foreground_channel(frame) for frame in m]


def test_gaussian_weights_peak_and_symmetry():
    wgt = gnum.gaussian_weights(7, 5)
    assert wgt[3,2] == 1.0
    np.testing.assert_allclose(wgt, wgt[::-1, ::-1])


# Binarisation

def test_binarize_thresholds():
    assert gre.binarize_close(np.full((6, 4), 0.6)).all()
    assert not gre.binarize_close(np.full((6, 4), 0.4)).any()
    assert gre.binarize_close(np.full((6, 4), 0.5)).all()


def test_binarize_fills_single_pixel_hole():
    prob = np.zeros((16, 12))
    prob[3:13, 3:9] = 0.9
    prob[7, 5] = 0.1
    
    expected = np.zeros((16, 12), dtype=np.uint8)
    expected[3:13, 3:9] = 1
    closed = gre.binarize_close(prob)
    assert closed.dtype == np.uint8
    np.testing.assert_array_equal(closed, expected)


def test_binarize_tensor_batch():
    prob = torch.zeros(2, 8, 6)
    prob[0] = 0.7
    out = gre.binarize_close(prob)
    assert out.dtype == torch.float32 and out.shape == (2, 8, 6)
    assert out[0].all() and not out[1].any()


# Branches

def test_apply_mask_support():
    f_c = torch.rand(3, 4, 4) + 0.5
    binary = torch.tensor(((np.indices((4, 4)).sum(axis=0) % 2) == 0).astype(np.float32))
    f_m = gre.apply_mask(f_c, binary)
    assert ((f_m != 0) == binary.bool()[None]).all()
    torch.testing.assert_close(gre.apply_mask(f_c, torch.ones(4, 4)), f_c)


def test_appearance_is_linear_per_pixel():
    torch.manual_seed(0)
    E_ap = torch.nn.Conv2d(6, 3, 1, bias=False)
    x, y = torch.randn(6, 5, 4), torch.randn(6, 5, 4)
    with torch.no_grad():
        torch.testing.assert_close(gre.appearance_forward(2*x - y, E_ap),
                                   2*gre.appearance_forward(x, E_ap) - gre.appearance_forward(y, E_ap))
        
        wgt = E_ap.weight[:,:,0,0]
        out = gre.appearance_forward(x, E_ap)
        torch.testing.assert_close(out[:,2,1], wgt @ x[:,2,1])


def test_denoise_softmax():
    torch.manual_seed(0)
    E_de = torch.nn.Sequential(torch.nn.Conv2d(6, 8, 1), torch.nn.GELU(), torch.nn.Conv2d(8, 4, 1))
    f_m = torch.randn(2, 6, 5, 3)
    with torch.no_grad():
        f_de = gre.denoise_forward(f_m, E_de)
        torch.testing.assert_close(f_de.sum(dim=1), torch.ones(2, 5, 3))
        assert (f_de > 0).all()
        torch.testing.assert_close(f_de[1,:,2,0], torch.softmax(E_de(f_m[1:2])[0,:,2,0], dim=0))
        assert gre.denoise_forward(f_m[0], E_de).shape == (4, 5, 3)


# Smoothness

def test_smoothness_constant_map_is_zero():
    f_de = torch.full((3, 6, 5), 1/3)
    assert float(gre.smoothness_loss(f_de, torch.ones(6, 5))) == 0.0


def test_smoothness_vertical_step():
    f_de = torch.zeros(1, 4, 4)
    f_de[0, :, 2:] = 1
    resp = gre.sobel_response(f_de)[0]
    assert (resp[:, 1:3] == 4).all()
    assert (resp[:, [0, 3]] == 0).all()
    assert float(gre.smoothness_loss(f_de, torch.ones(4, 4))) == pytest.approx(2.0)


def test_checkerboard_rougher_than_ramp():
    checker = torch.tensor((np.indices((8, 8)).sum(axis=0) % 2).astype(np.float32))[None]
    ramp = torch.linspace(0, 1, 8).repeat(8, 1)[None]
    fg = torch.ones(8, 8)
    assert float(gre.smoothness_loss(checker, fg)) > float(gre.smoothness_loss(ramp, fg))


def test_smoothness_empty_foreground():
    f_de = torch.rand(2, 4, 4, requires_grad=True)
    loss = gre.smoothness_loss(f_de, torch.zeros(4, 4))
    assert float(loss) == 0.0
    loss.backward()


def test_smoothness_counts_foreground_only():
    f_de = torch.zeros(1, 6, 6)
    f_de[0, :, 3:] = 1
    fg = torch.zeros(6, 6)
    fg[:, 0] = 1  # Far from the step
    assert float(gre.smoothness_loss(f_de, fg)) == 0.0


# Diversity

def _diversity_oracle(f_de, fg):
    nch, hgt, wid = f_de.shape
    sums = [0.0]*nch
    for ch in range(nch):
        for iy in range(hgt):
            for ix in range(wid):
                if fg[iy,ix]: sums[ch] += float(f_de[ch,iy,ix])
    total = sum(sums)
    if total == 0: return 0.0
    return math.log(nch) + sum(s/total*math.log(s/total) for s in sums if s > 0)


def test_diversity_uniform_is_zero():
    f_de = torch.full((16, 8, 8), 1/16, dtype=torch.float64)
    assert float(gre.diversity_loss(f_de, torch.ones(8, 8))) == pytest.approx(0.0, abs=1e-15)


def test_diversity_one_hot_is_log_c():
    f_de = torch.zeros(16, 8, 8, dtype=torch.float64)
    f_de[5] = 1
    assert float(gre.diversity_loss(f_de, torch.ones(8, 8))) == pytest.approx(math.log(16), abs=1e-15)


def test_diversity_two_channel_example():
    f_de = torch.tensor([[[0.25]], [[0.75]]], dtype=torch.float64)
    expected = math.log(2) + 0.25*math.log(0.25) + 0.75*math.log(0.75)
    assert float(gre.diversity_loss(f_de, torch.ones(1, 1))) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1308, abs=1e-4)


def test_diversity_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        nch = int(rng.integers(2, 9))
        logits = torch.from_numpy(rng.normal(size=(nch, 8, 8))*2)
        f_de = torch.softmax(logits, dim=0)
        fg = rng.random((8, 8)) < 0.6
        loss = float(gre.diversity_loss(f_de, torch.from_numpy(fg)))
        assert abs(loss - _diversity_oracle(f_de, fg)) <= 1e-10


def test_diversity_empty_foreground():
    f_de = torch.softmax(torch.randn(4, 5, 5), dim=0)
    assert float(gre.diversity_loss(f_de, torch.zeros(5, 5))) == 0.0


def test_diversity_batch_skips_empty_frames():
    f_de = torch.zeros(2, 2, 1, 1, dtype=torch.float64)
    f_de[:, 0] = 1
    fg = torch.tensor([[[1.]], [[0.]]])
    assert float(gre.diversity_loss(f_de, fg)) == pytest.approx(math.log(2))


def test_mean_channel_entropy():
    uniform = torch.full((4, 3, 3), 0.25)
    assert gre.mean_channel_entropy(uniform) == pytest.approx(math.log(4))
    one_hot = torch.zeros(4, 3, 3)
    one_hot[2] = 1
    assert gre.mean_channel_entropy(one_hot) == 0.0
    assert gre.mean_channel_entropy(uniform, torch.zeros(3, 3)) == 0.0


# Gradient checks

GRAD_KW = dict(eps=1e-5, rtol=1e-4, atol=1e-7)


def test_gradcheck_reconstruction():
    gen = torch.Generator().manual_seed(0)
    branch = _mask_branch(4, dtype=torch.float64)
    f4 = torch.randn(4, 8, 8, dtype=torch.float64, generator=gen, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: gre.mask_forward(x, branch)[2], (f4,), **GRAD_KW)


def test_gradcheck_smoothness():
    gen = torch.Generator().manual_seed(1)
    f_de = torch.rand(4, 8, 8, dtype=torch.float64, generator=gen, requires_grad=True)
    fg = torch.rand(8, 8, generator=gen) < 0.7
    assert torch.autograd.gradcheck(lambda x: gre.smoothness_loss(x, fg), (f_de,), **GRAD_KW)


def test_gradcheck_diversity():
    gen = torch.Generator().manual_seed(2)
    f_de = (torch.rand(4, 8, 8, dtype=torch.float64, generator=gen) + 0.1).requires_grad_()
    fg = torch.rand(8, 8, generator=gen) < 0.7
    assert torch.autograd.gradcheck(lambda x: gre.diversity_loss(x, fg), (f_de,), **GRAD_KW)


# Extractor

def _inputs(embed_dim=4, taps=4, n=2, hgt=8, wid=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (torch.randn(n, embed_dim*taps, hgt, wid, generator=gen),
            torch.randn(n, embed_dim, hgt, wid, generator=gen))


def test_extractor_full():
    torch.manual_seed(0)
    model = gre.GaitRepresentationExtractor(embed_dim=4, channels=5, hidden_channels=8)
    out = model(*_inputs())
    
    assert model.stream_channels == (5, 5)
    assert out['m'].shape == (2, 2, 8, 4)
    assert out['binary'].shape == (2, 8, 4)
    assert set(out['binary'].unique().tolist()) <= {0.0, 1.0}
    assert [s.shape for s in out['streams']] == [(2, 5, 8, 4)]*2
    assert out['streams'][0] is out['f_ap'] and out['streams'][1] is out['f_de']
    for key in ('L_rec', 'L_smo', 'L_div'):
        assert out[key].dim() == 0 and float(out[key]) >= 0


def test_extractor_background_is_zeroed():
    torch.manual_seed(0)
    model = gre.GaitRepresentationExtractor(embed_dim=4, channels=3, hidden_channels=8)
    out = model(*_inputs())
    bg = out['binary'] == 0
    assert (out['f_m'].permute(1, 0, 2, 3)[:, bg] == 0).all()


@pytest.mark.parametrize('kwargs, streams', [
    (dict(use_mask=False), (3, 3)),
    (dict(use_appearance=False), (3,)),
    (dict(use_denoising=False), (3,)),
    (dict(use_appearance=False, use_denoising=False), (16,)),
    (dict(mask_direct=True), (1,)),
])
def test_extractor_toggles(kwargs, streams):
    torch.manual_seed(0)
    model = gre.GaitRepresentationExtractor(embed_dim=4, channels=3, hidden_channels=8, **kwargs)
    out = model(*_inputs())
    assert model.stream_channels == streams
    assert tuple(s.shape[1] for s in out['streams']) == streams
    
    if not kwargs.get('use_mask', True):
        assert out['m'] is None and model.mask is None
        assert float(out['L_rec']) == 0.0
        assert out['f_m'] is not None
    if kwargs.get('use_denoising', True) is False:
        assert float(out['L_smo']) == 0.0 and float(out['L_div']) == 0.0


def test_extractor_regulariser_toggles():
    torch.manual_seed(0)
    model = gre.GaitRepresentationExtractor(embed_dim=4, channels=3, hidden_channels=8,
                                            use_smoothness=False, use_diversity=False)
    out = model(*_inputs())
    assert float(out['L_smo']) == 0.0 and float(out['L_div']) == 0.0
    assert out['f_de'] is not None


def test_extractor_channel_range():
    with pytest.raises(ValueError):
        gre.GaitRepresentationExtractor(embed_dim=4, channels=0)
    with pytest.raises(ValueError):
        gre.GaitRepresentationExtractor(embed_dim=4, channels=129)


def test_mask_has_no_gradient_path_to_streams():
    torch.manual_seed(0)
    model = gre.GaitRepresentationExtractor(embed_dim=4, channels=3, hidden_channels=8)
    out = model(*_inputs())
    out['f_ap'].sum().backward()
    assert model.mask.E.weight.grad is None
