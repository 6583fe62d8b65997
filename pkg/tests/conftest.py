"""Shared fixtures of the gregait test suite."""

import numpy as np
import pytest
import torch

from gregait import config as gcfg
from gregait import ingest as gin
from gregait import synthetic as gsyn


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run the slow acceptance tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running acceptance test, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'): return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords: item.add_marker(skip_slow)


TINY = dict(target_h=112, target_w=56, patch_size=7, num_blocks=4, embed_dim=16, channels=4, hidden_channels=16,
            head_widths=(8, 8, 16, 16), parts=8, embedding_dim=8, batch_p=2, batch_k=2, batch_l=2,
            total_iters=20, milestones=(10,), log_interval=1, checkpoint_interval=10, synth_noise=0.05)


@pytest.fixture
def tiny_cfg():
    """Settings small enough to train a few iterations on a CPU in seconds."""
    return gcfg.Config(**TINY)


@pytest.fixture(scope='session')
def synth_dir(tmp_path_factory):
    """A small synthetic benchmark on disc: 4 subjects, 4 frames per sequence."""
    
    out = tmp_path_factory.mktemp('synth')
    gsyn.make_synthetic_dataset(out, n_subjects=4, n_frames=4, frame_hw=(64, 32), verbosity=0)
    return out


@pytest.fixture
def synth_manifest(synth_dir):
    return gin.load_manifest(synth_dir / 'manifest.json')


def two_cluster_f4(seed, embed_dim=8, height=16, width=8, separation=4.0, noise=0.1):
    """Two-cluster top-layer map with a planted central foreground blob.
    
    Returns:
      (tuple):  Tuple (f4, mask): tensor (embed_dim x height x width) and boolean array (height x width).
    """
    
    gen = torch.Generator().manual_seed(seed)
    unit = torch.nn.functional.normalize(torch.randn(embed_dim, generator=gen), dim=0)
    fg_vec, bg_vec = unit*separation/2, -unit*separation/2
    
    yy, xx = np.mgrid[:height, :width]
    mask = ((yy - (height-1)/2)/(height/3))**2 + ((xx - (width-1)/2)/(width/3))**2 <= 1
    maskt = torch.from_numpy(mask)[None].float()
    
    f4 = maskt*fg_vec[:,None,None] + (1-maskt)*bg_vec[:,None,None]
    f4 = f4 + noise*torch.randn(embed_dim, height, width, generator=gen)
    return f4, mask


@pytest.fixture(scope='session')
def trained_run(synth_dir, tmp_path_factory):
    """Output directory of a two-iteration training run on the synthetic benchmark."""
    
    from gregait import train as gtr
    
    out = tmp_path_factory.mktemp('run')
    manifest = gin.load_manifest(synth_dir / 'manifest.json')
    gtr.train(gcfg.Config(**TINY), manifest, out, iterations=2, verbosity=0)
    return out
