"""Tests of the tap rule, the feature providers, upsampling and the feature cache."""

import numpy as np
import pytest
import torch

from gregait import backbone as gbb
from gregait import ingest as gin


@pytest.mark.parametrize('num_blocks, taps', [(12, (3, 6, 9, 12)), (4, (1, 2, 3, 4)), (24, (6, 12, 18, 24)),
                                              (10, (3, 5, 8, 10))])
def test_select_tap_layers(num_blocks, taps):
    assert gbb.select_tap_layers(num_blocks) == taps


def test_select_tap_layers_too_few_blocks():
    with pytest.raises(ValueError):
        gbb.select_tap_layers(3)


def test_backbone_spec_geometry():
    spec = gbb.BackboneSpec()
    assert spec.grid_hw == (32, 16)
    assert spec.tap_layers == (3, 6, 9, 12)
    with pytest.raises(ValueError):
        gbb.BackboneSpec(input_hw=(450, 224))
    with pytest.raises(ValueError):
        gbb.BackboneSpec(tap_layers=(3, 3, 9, 12))


def test_feature_map_validation():
    fmap = gbb.FeatureMap(torch.zeros(384, 32, 16), 'f1')
    assert fmap.shape == (384, 32, 16)
    with pytest.raises(ValueError):
        gbb.FeatureMap(torch.full((2, 2, 2), float('nan')), 'f1')
    with pytest.raises(ValueError):
        gbb.FeatureMap(torch.zeros(2, 2, 2), 'f9')


@pytest.fixture(scope='module')
def provider():
    spec = gbb.BackboneSpec(embed_dim=32)
    return gbb.SyntheticProvider(spec, seed=3)


def figure_frame(rows=(8, 24), cols=(5, 11), value=0.8):
    """A 448 x 224 frame with a rectangular 'figure' given in token units."""
    
    frame = np.zeros((448, 224, 3), dtype=np.float32)
    frame[rows[0]*14:rows[1]*14, cols[0]*14:cols[1]*14] = value
    return frame


def test_extract_multilevel_shapes_and_determinism(provider):
    frame = figure_frame()
    maps = gbb.extract_multilevel(frame, provider.spec, provider)
    again = gbb.extract_multilevel(frame, provider.spec, provider)
    
    assert [fm.tag for fm in maps] == ['f1', 'f2', 'f3', 'f4']
    assert all(fm.shape == (32, 32, 16) for fm in maps)
    for aa,bb in zip(maps, again): assert torch.equal(aa.data, bb.data)


def test_all_zero_frame_is_finite_background(provider):
    maps = gbb.extract_multilevel(np.zeros((448, 224, 3)), provider.spec, provider)
    f4 = maps[3].data
    assert torch.isfinite(f4).all()
    
    # Empty silhouette: every token lies near the background centre.
    dist_bg = (f4 - provider.centers_bg[3][:,None,None]).norm(dim=0)
    dist_fg = (f4 - provider.centers_fg[3][:,None,None]).norm(dim=0)
    assert bool((dist_bg < dist_fg).all())


def test_foreground_background_separation(provider):
    f4 = gbb.extract_multilevel(figure_frame(), provider.spec, provider)[3].data
    fg = (f4 - provider.centers_fg[3][:,None,None]).norm(dim=0) < (f4 - provider.centers_bg[3][:,None,None]).norm(dim=0)
    
    planted = torch.zeros(32, 16, dtype=torch.bool)
    planted[8:24, 5:11] = True
    assert torch.equal(fg, planted)


def test_identical_silhouettes_give_close_f4(provider):
    aa = gbb.extract_multilevel(figure_frame(value=0.8), provider.spec, provider)[3].data
    bb = gbb.extract_multilevel(figure_frame(value=0.8001), provider.spec, provider)[3].data
    other = gbb.extract_multilevel(figure_frame(rows=(4, 28), cols=(6, 10)), provider.spec, provider)[3].data
    
    tol = 6*provider.noise*np.sqrt(32)
    assert (aa - bb).norm(dim=0).max() < tol
    # Shape carries identity: a different silhouette moves the foreground tokens.
    assert (aa[:, 12:20, 6:10] - other[:, 12:20, 6:10]).norm(dim=0).mean() > (aa - bb)[:, 12:20, 6:10].norm(dim=0).mean()


def test_locality_mode_argmax():
    spec = gbb.BackboneSpec(embed_dim=16)
    prov = gbb.SyntheticProvider(spec, seed=1, locality=True)
    frame = np.zeros((448, 224, 3), dtype=np.float32)
    row, col = 20, 3
    frame[row*14:(row+1)*14, col*14:(col+1)*14] = 1.0
    
    f1 = gbb.extract_multilevel(frame, spec, prov)[0].data
    energy = f1.abs().amax(dim=0)
    assert divmod(int(energy.argmax()), 16) == (row, col)


def test_provider_is_frozen(provider):
    assert all(not par.requires_grad for par in provider.parameters())
    digest = provider.digest()
    provider.train()
    provider(figure_frame()[None])
    assert provider.digest() == digest


def test_lvm_adapter_missing_weights():
    with pytest.raises(gbb.ProviderUnavailableError, match='lvm-adapter'):
        gbb.LVMAdapter(gbb.BackboneSpec(provider='lvm-adapter'), weights='/no/such/file.pt')


class TokenModel(torch.nn.Module):
    """Stand-in vision transformer returning one class token plus patch tokens for each of its blocks."""
    
    def __init__(self, num_blocks=4, embed_dim=8, patch=14):
        super().__init__()
        self.proj = torch.nn.Conv2d(3, embed_dim, patch, stride=patch)
        self.num_blocks = num_blocks
        
    def forward(self, frames):
        tokens = self.proj(frames).flatten(2).transpose(1, 2)
        cls = torch.zeros(tokens.shape[0], 1, tokens.shape[2])
        return [torch.cat([cls, tokens*(ib+1)], dim=1) for ib in range(self.num_blocks)]


def test_lvm_adapter_taps_and_grid():
    spec = gbb.BackboneSpec(provider='lvm-adapter', num_blocks=4, embed_dim=8)
    model = TokenModel()
    adapter = gbb.LVMAdapter(spec, model=model)
    frame = np.random.default_rng(0).random((448, 224, 3)).astype(np.float32)
    
    maps = gbb.extract_multilevel(frame, spec, adapter)
    assert all(fm.shape == (8, 32, 16) for fm in maps)
    
    with torch.no_grad():
        direct = model.proj(torch.from_numpy(frame).permute(2, 0, 1)[None])[0]
    torch.testing.assert_close(maps[0].data, direct)
    torch.testing.assert_close(maps[3].data, 4*direct)
    assert not model.training
    assert all(not par.requires_grad for par in model.parameters())


def test_upsample_constant_and_order():
    maps = [torch.full((3, 4, 2), float(ii)) for ii in range(4)]
    f_c = gbb.upsample_concat(maps)
    
    assert f_c.shape == (12, 8, 4)
    for ii in range(4): assert torch.equal(f_c[3*ii:3*(ii+1)], torch.full((3, 8, 4), float(ii)))
    
    rnd = [torch.randn(5, 4, 3, generator=torch.Generator().manual_seed(ii)) for ii in range(4)]
    assert torch.equal(gbb.upsample_concat(rnd)[:5], gbb.upsample2x(rnd[0]))


def test_upsample_hand_computed():
    grid = torch.tensor([[[0., 1.], [2., 3.]]])
    out = gbb.upsample2x(grid)[0]
    
    # Half-pixel sample centres: source coordinates -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
    coords = [0.0, 0.25, 0.75, 1.0]
    expected = torch.tensor([[xx + 2*yy for xx in coords] for yy in coords])
    torch.testing.assert_close(out, expected)


def test_upsample_concat_shape_mismatch():
    with pytest.raises(ValueError):
        gbb.upsample_concat([torch.zeros(2, 4, 2)]*3 + [torch.zeros(2, 4, 3)])


def test_upsample_concat_feature_maps(provider):
    maps = gbb.extract_multilevel(figure_frame(), provider.spec, provider, frame_id=7)
    f_c = gbb.upsample_concat(maps)
    assert f_c.tag == 'fc'
    assert f_c.shape == (128, 64, 32)
    assert f_c.grid_origin[0] == 7


def test_extract_batch_matches_single_frames(provider):
    frames = np.stack([figure_frame(), figure_frame(rows=(2, 30))])
    batch = gbb.extract_batch(frames, provider, chunk=1)
    assert batch.shape == (2, 4, 32, 32, 16)
    single = gbb.extract_multilevel(frames[1], provider.spec, provider)
    torch.testing.assert_close(batch[1, 2], single[2].data)


def test_feature_blob_and_cache(tmp_path, synth_manifest, tiny_cfg):
    prov = gbb.build_provider(tiny_cfg)
    rec = synth_manifest.split('train')[0]
    calls = []
    
    def compute():
        calls.append(1)
        frames = gin.preprocess(gin.load_frames(rec), tiny_cfg)
        return gbb.extract_batch(frames, prov)
    
    cache = gbb.FeatureCache(prov, tmp_path, synth_manifest.dataset_name)
    feats = cache.get(rec, compute)
    assert feats.shape == (4, 4, 16, 16, 8)
    assert cache.get(rec, compute) is feats
    
    fresh = gbb.FeatureCache(prov, tmp_path, synth_manifest.dataset_name)
    again = fresh.get(rec, compute)
    assert len(calls) == 1
    assert torch.equal(again, feats)


def test_disc_cache_keeps_recent_sequences_in_memory(tmp_path, synth_manifest, tiny_cfg):
    prov = gbb.build_provider(tiny_cfg)
    records = synth_manifest.entries
    assert len(records) > 3
    calls = []
    
    def computer(idx):
        def compute():
            calls.append(idx)
            return torch.full((1, 4, 2, 2, 1), float(idx))
        return compute
    
    cache = gbb.FeatureCache(prov, tmp_path, synth_manifest.dataset_name, max_memory=3)
    for idx,rec in enumerate(records):
        cache.get(rec, computer(idx))
    assert len(cache.memory) == 3
    assert list(cache.memory) == [rec.key for rec in records[-3:]]
    
    cache.get(records[-3], computer(-1))          # hit: becomes most recent
    assert list(cache.memory)[-1] == records[-3].key
    
    first = cache.get(records[0], computer(-1))   # evicted, read back from disc
    assert float(first[0, 0, 0, 0, 0]) == 0.0
    assert len(cache.memory) == 3
    assert calls == list(range(len(records)))


def test_memory_only_cache_is_unbounded(synth_manifest, tiny_cfg):
    cache = gbb.FeatureCache(gbb.build_provider(tiny_cfg), None, synth_manifest.dataset_name, max_memory=2)
    for rec in synth_manifest.entries:
        cache.get(rec, lambda: torch.zeros(1, 4, 2, 2, 1))
    assert len(cache.memory) == len(synth_manifest.entries)
