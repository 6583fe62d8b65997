# -*- coding: utf-8 -*-
# SPDX-License-Identifier: EUPL-1.2
#  
#  Copyright (c) 2024-2026  The gregait developers
#  
#  This file is part of the gregait Python package:
#  gait representations from frozen large-vision-model features.
#  
#  This is free software: you can redistribute it and/or modify it under the terms of the European Union
#  Public Licence 1.2 (EUPL 1.2).  This software is distributed in the hope that it will be useful, but
#  WITHOUT ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR
#  PURPOSE.  See the EU Public Licence for more details.  You should have received a copy of the European
#  Union Public Licence along with this code.  If not, see <https://www.eupl.eu/1.2/en/>.


"""Configuration for the gregait package: one flat set of key/value settings with defaults."""


from dataclasses import dataclass as _dataclass, fields as _fields, asdict as _asdict, replace as _replace
import hashlib as _hashlib
import json as _json
from pathlib import Path as _Path


@_dataclass(frozen=True)
class Config:
    # Sampler and preprocessing:
    batch_p:          int   = 8;        """Number of identities per batch"""
    batch_k:          int   = 8;        """Number of sequences per identity"""
    batch_l:          int   = 8;        """Number of frames per sequence"""
    seed:             int   = 0;        """Master seed of a run"""
    workers:          int   = 1;        """Number of frame-decoding threads"""
    cache_max_sequences: int = 64;      """Sequences kept in memory by a disc-backed feature cache (0: no limit)"""
    target_h:         int   = 448;      """Frame height after Pad-and-Resize"""
    target_w:         int   = 224;      """Frame width after Pad-and-Resize"""
    pad_and_resize:   bool  = True;     """Preserve body proportions (False: anisotropic resize)"""
    
    # Backbone:
    provider:         str   = 'synthetic';  """Feature provider: 'synthetic' or 'lvm-adapter'"""
    adapter_weights:  str   = '';       """TorchScript file of the large vision model (lvm-adapter only)"""
    num_blocks:       int   = 12;       """Number of transformer blocks"""
    embed_dim:        int   = 384;      """Token embedding dimension"""
    patch_size:       int   = 14;       """Patch size in pixels"""
    num_taps:         int   = 4;        """Number of tapped layers"""
    provider_seed:    int   = 0;        """Seed of the synthetic provider's fixed projections"""
    synth_separation: float = 4.0;      """Foreground/background cluster separation of the synthetic provider"""
    synth_noise:      float = 0.1;      """Additive noise sigma of the synthetic provider"""
    synth_bg_level:   float = 0.0;      """Grey level of the synthetic background"""
    synth_fg_threshold: float = 0.1;    """Minimum colour distance from the background for a foreground pixel"""
    synth_locality:   bool  = False;    """Synthetic provider in purely local (patch colour) mode"""
    
    # Gait Representation Extractor:
    channels:         int   = 16;       """Channels C of the appearance and denoising representations"""
    hidden_channels:  int   = 256;      """Hidden width of the denoising stack"""
    use_mask:         bool  = True;     """Mask branch on"""
    use_appearance:   bool  = True;     """Appearance branch on"""
    use_denoising:    bool  = True;     """Denoising branch on"""
    mask_direct:      bool  = False;    """Feed the foreground mask itself to the head"""
    use_smoothness:   bool  = True;     """Smoothness loss on"""
    use_diversity:    bool  = True;     """Diversity loss on"""
    mask_threshold:   float = 0.5;      """Binarisation threshold of the foreground probability"""
    bn_eps:           float = 1e-5;     """Batch-norm epsilon"""
    bn_momentum:      float = 0.1;      """Batch-norm running-average momentum"""
    
    # Recognition head:
    head_type:        str   = 'gaitbase';  """Downstream head: 'gaitbase' or 'gaitset'"""
    head_widths:      tuple = (64, 64, 128, 256);  """Output widths of the stages B1..B4"""
    head_strides:     tuple = (1, 2, 2, 1);        """Strides of the stages B1..B4"""
    head_norm:        bool  = True;     """Batch normalisation inside the head"""
    fuse_reduction:   int   = 4;        """Squeeze ratio of the attention fusion"""
    parts:            int   = 16;       """Number of horizontal parts P"""
    embedding_dim:    int   = 256;      """Embedding dimension D per part"""
    
    # Training:
    lr:               float = 0.1;      """Initial learning rate"""
    momentum:         float = 0.9;      """SGD momentum"""
    weight_decay:     float = 5e-4;     """SGD weight decay"""
    bn_weight_decay:  bool  = False;    """Apply weight decay to batch-norm parameters too"""
    milestones:       tuple = (15000, 25000, 30000, 35000);  """Iterations at which the learning rate decays"""
    lr_decay:         float = 0.1;      """Learning-rate decay factor per milestone"""
    total_iters:      int   = 40000;    """Total number of training iterations"""
    margin:           float = 0.2;      """Triplet margin"""
    gamma_rec:        float = 1.0;      """Weight of the reconstruction loss"""
    gamma_smo:        float = 0.01;     """Weight of the smoothness loss"""
    gamma_div:        float = 5.0;      """Weight of the diversity loss"""
    grad_clip:        float = 0.0;      """Gradient-norm clipping (0: off)"""
    deterministic:    bool  = False;    """Bitwise-reproducible execution"""
    log_interval:     int   = 100;      """Iterations between training-log lines"""
    checkpoint_interval: int = 5000;    """Iterations between checkpoints"""
    
    # Evaluation and visualisation:
    distance:         str   = 'mean';   """Part-distance reduction: 'mean', 'min' or 'sum'"""
    view_average:     bool  = True;     """Average rank-1 over probe views (False: over sequences)"""
    cmc_ranks:        int   = 20;       """Number of CMC ranks stored"""
    pca_max_pixels:   int   = 2000000;  """Maximum number of pixels used to fit a PCA basis"""
    
    
    def __post_init__(self):
        """Check the invariants of the settings."""
        
        if self.batch_p < 2 or self.batch_k < 2:
            raise ValueError('batch_p and batch_k must be >= 2 for triplet mining, got %i and %i'
                             % (self.batch_p, self.batch_k))
        if self.batch_l < 1: raise ValueError('batch_l must be >= 1, got %i' % self.batch_l)
        
        ms = list(self.milestones)
        if any(b <= a for a,b in zip(ms[:-1], ms[1:])):
            raise ValueError('milestones must be strictly increasing: '+str(ms))
        if ms and ms[-1] >= self.total_iters:
            raise ValueError('milestones must lie below total_iters=%i: %s' % (self.total_iters, ms))
        
        for key in ('gamma_rec', 'gamma_smo', 'gamma_div', 'cache_max_sequences'):
            if getattr(self, key) < 0: raise ValueError(key+' must be >= 0')
        
        if not 1 <= self.channels <= 128:
            raise ValueError('channels must lie in [1, 128], got %i' % self.channels)
        if len(self.head_widths) != 4 or len(self.head_strides) != 4:
            raise ValueError('head_widths and head_strides need exactly four entries')
        if self.provider not in ('synthetic', 'lvm-adapter'):
            raise ValueError('unknown provider: '+str(self.provider))
        if self.head_type not in ('gaitbase', 'gaitset'):
            raise ValueError('unknown head_type: '+str(self.head_type))
        if self.distance not in ('mean', 'min', 'sum'):
            raise ValueError('unknown distance reduction: '+str(self.distance))
        
        return
    
    
    def to_dict(self):
        """Return the settings as a JSON-compatible dict (tuples become lists)."""
        
        return {key: (list(val) if isinstance(val, tuple) else val) for key,val in _asdict(self).items()}
    
    
    def updated(self, **kwargs):
        """Return a copy of the settings with some values replaced."""
        
        return _replace(self, **_coerce_all(kwargs))


def _coerce(key, value, ftype):
    """Coerce a raw config value (from JSON or INI text) to the type of field key."""
    
    if ftype is bool:
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ('1', 'true', 'yes', 'on'):   return True
            if low in ('0', 'false', 'no', 'off'):  return False
            raise ValueError('config key %s: cannot read %r as a boolean' % (key, value))
        return bool(value)
    
    if ftype is tuple:
        if isinstance(value, str): value = [val for val in value.replace('(','').replace(')','').split(',') if val.strip()]
        return tuple(int(val) for val in value)
    
    try:
        return ftype(value)
    except (TypeError, ValueError):
        raise ValueError('config key %s: cannot read %r as %s' % (key, value, ftype.__name__))


def _coerce_all(raw):
    """Check keys against the known settings and coerce all values."""
    
    ftypes = {fld.name: fld.type for fld in _fields(Config)}
    unknown = sorted(set(raw) - set(ftypes))
    if unknown: raise ValueError('unknown config key(s): '+', '.join(unknown))
    
    return {key: _coerce(key, val, ftypes[key]) for key,val in raw.items()}


def load_config(path=None, **overrides):
    """Read a flat key/value configuration file.
    
    Parameters:
      path (str):  JSON file (.json) or INI file with a [gregait] section; None returns the defaults.
      overrides:   Values that replace those in the file.
    
    Returns:
      (Config):  The settings.
    """
    
    raw = {}
    if path is not None:
        path = _Path(path)
        if not path.is_file(): raise FileNotFoundError('config file not found: '+str(path))
        
        if path.suffix.lower() == '.json':
            try:
                raw = _json.loads(path.read_text())
            except _json.JSONDecodeError as err:
                raise ValueError('%s: line %i: %s' % (path, err.lineno, err.msg))
            if not isinstance(raw, dict): raise ValueError(str(path)+': config must be a JSON object')
        else:
            import configparser
            parser = configparser.ConfigParser(inline_comment_prefixes=('#'))
            parser.read(path)
            if not parser.has_section('gregait'): raise ValueError(str(path)+': no [gregait] section')
            raw = dict(parser.items('gregait'))
            
    raw.update(overrides)
    
    return Config(**_coerce_all(raw))


def save_config(cfg, path):
    """Write the settings to a JSON file.
    
    Parameters:
      cfg (Config):  The settings.
      path (str):    Output file.
    """
    
    _Path(path).write_text(_json.dumps(cfg.to_dict(), indent=2, sort_keys=True)+'\n')
    return


def config_hash(cfg):
    """Return the SHA-256 hex digest of the canonical JSON form of the settings."""
    
    return _hashlib.sha256(_json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def config_from_dict(raw):
    """Build settings from a dict such as the one stored in a checkpoint; unknown keys raise ValueError."""
    
    return Config(**_coerce_all(dict(raw)))
