"""Tests of the settings, the environment and the seeding helpers."""

import json

import numpy as np
import pytest
import torch

from gregait import cli as gcli
from gregait import config as gcfg
from gregait import env as genv
from gregait import numerics as gnum
from gregait import system as gsys


def test_defaults():
    cfg = gcfg.Config()
    assert (cfg.batch_p, cfg.batch_k, cfg.batch_l) == (8, 8, 8)
    assert cfg.lr == 0.1 and cfg.momentum == 0.9 and cfg.weight_decay == 5e-4
    assert cfg.milestones == (15000, 25000, 30000, 35000) and cfg.total_iters == 40000
    assert (cfg.gamma_rec, cfg.gamma_smo, cfg.gamma_div) == (1.0, 0.01, 5.0)
    assert (cfg.target_h, cfg.target_w, cfg.patch_size, cfg.embed_dim) == (448, 224, 14, 384)
    assert cfg.channels == 16 and cfg.hidden_channels == 256 and cfg.parts == 16 and cfg.embedding_dim == 256


def test_load_json(tmp_path):
    path = tmp_path / 'c.json'
    path.write_text(json.dumps({'lr': 0.05, 'milestones': [10, 20], 'total_iters': 30, 'use_mask': False}))
    cfg = gcfg.load_config(path, seed=3)
    assert cfg.lr == 0.05 and cfg.milestones == (10, 20) and cfg.use_mask is False and cfg.seed == 3


def test_load_ini(tmp_path):
    path = tmp_path / 'c.ini'
    path.write_text('[gregait]\nchannels = 8   # fewer channels\nhead_widths = 8, 8, 16, 16\npad_and_resize = no\n')
    cfg = gcfg.load_config(path)
    assert cfg.channels == 8 and cfg.head_widths == (8, 8, 16, 16) and cfg.pad_and_resize is False


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        gcfg.load_config(tmp_path / 'none.json')
    
    (tmp_path / 'unknown.json').write_text('{"learning_rate": 0.1}')
    with pytest.raises(ValueError, match='learning_rate'):
        gcfg.load_config(tmp_path / 'unknown.json')
    
    (tmp_path / 'bool.json').write_text('{"use_mask": "maybe"}')
    with pytest.raises(ValueError, match='use_mask'):
        gcfg.load_config(tmp_path / 'bool.json')
    
    (tmp_path / 'nosect.ini').write_text('[other]\nlr = 0.1\n')
    with pytest.raises(ValueError):
        gcfg.load_config(tmp_path / 'nosect.ini')
    
    (tmp_path / 'list.json').write_text('[1, 2]')
    with pytest.raises(ValueError):
        gcfg.load_config(tmp_path / 'list.json')


@pytest.mark.parametrize('kwargs', [dict(batch_p=1), dict(batch_k=1), dict(batch_l=0),
                                    dict(milestones=(200, 100)), dict(milestones=(40000,)),
                                    dict(gamma_div=-1.0), dict(channels=0), dict(head_widths=(8, 8)),
                                    dict(provider='dino'), dict(head_type='vit'), dict(distance='max'),
                                    dict(cache_max_sequences=-1)])
def test_validation(kwargs):
    with pytest.raises(ValueError):
        gcfg.Config(**kwargs)


def test_save_and_hash(tmp_path):
    cfg = gcfg.Config(seed=11, head_widths=(8, 8, 16, 16))
    gcfg.save_config(cfg, tmp_path / 'c.json')
    back = gcfg.load_config(tmp_path / 'c.json')
    assert back == cfg
    assert gcfg.config_hash(back) == gcfg.config_hash(cfg)
    assert gcfg.config_hash(cfg.updated(seed=12)) != gcfg.config_hash(cfg)
    assert gcfg.config_from_dict(cfg.to_dict()) == cfg


def test_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('HOME', str(tmp_path))
    monkeypatch.delenv('GREGAIT_CACHE_DIR', raising=False)
    assert genv.environment().cache_dir == str(tmp_path)+'/.cache/gregait'
    
    (tmp_path / '.gregait.cfg').write_text('[Paths]\ncache_dir = ~/features\n')
    assert genv.environment().cache_dir == str(tmp_path)+'/features'
    
    monkeypatch.setenv('GREGAIT_CACHE_DIR', '/scratch/feat')
    assert genv.environment().cache_dir == '/scratch/feat'


def test_seed_all():
    gsys.seed_all(5)
    a = (np.random.rand(), torch.rand(1).item())
    gsys.seed_all(5)
    assert (np.random.rand(), torch.rand(1).item()) == a


def test_deterministic_mode_toggle():
    gsys.deterministic_mode(True)
    assert torch.are_deterministic_algorithms_enabled()
    gsys.deterministic_mode(False)
    assert not torch.are_deterministic_algorithms_enabled()


def test_ceil_div():
    assert [gnum.ceil_div(n, 4) for n in (0, 1, 4, 5, 8)] == [0, 1, 1, 2, 2]


def test_cli_messages(capsys):
    gcli.warn('careful')
    gcli.note('hidden', verbosity=0)
    gcli.note('shown', verbosity=1)
    gcli.error('broken', exit_program=False)
    out, err = capsys.readouterr()
    assert 'careful' in err and 'broken' in err
    assert 'shown' in out and 'hidden' not in out
    
    with pytest.raises(SystemExit) as exc:
        gcli.error('fatal', exit_code=3)
    assert exc.value.code == 3
