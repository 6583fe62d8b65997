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


"""Frozen feature providers: four tapped transformer layers per frame, and their upsample-and-concatenate.

A provider maps a batch of frames (N x 448 x 224 x 3, values in [0,1]) to a list of four feature maps
(N x embed_dim x 32 x 16), one per tapped layer, with the tokens laid out by patch position.  Providers are
frozen: they hold no trainable parameters and run without gradient.
"""


from collections import OrderedDict as _OrderedDict
from dataclasses import dataclass as _dataclass, field as _field
import hashlib as _hashlib
import json as _json
from pathlib import Path as _Path

import numpy as _np
import torch as _torch
import torch.nn as _nn
import torch.nn.functional as _F

from gregait import cli as _gcli
from gregait.numerics import ceil_div as _ceil_div


TAGS = ('f1', 'f2', 'f3', 'f4', 'fc', 'fm', 'fap', 'fde')


class ProviderUnavailableError(RuntimeError):
    """A feature provider cannot be built, e.g. because its weights are missing."""


def select_tap_layers(num_blocks, k=4):
    """Return the last block of each of k equal partitions of the transformer blocks.
    
    Parameters:
      num_blocks (int):  Number of transformer blocks.
      k (int):           Number of layers to tap (optional, defaults to 4).
    
    Returns:
      (tuple):  1-based block indices ceil(i*num_blocks/k), i=1..k.
    """
    
    if k < 1 or num_blocks < k: raise ValueError('cannot tap %i layers from %i blocks' % (k, num_blocks))
    return tuple(_ceil_div(ii*num_blocks, k) for ii in range(1, k+1))


@_dataclass(frozen=True)
class FeatureMap:
    data:        object;      """Tensor (C x H x W)"""
    tag:         str;         """Provenance: f1..f4, fc, fm, fap or fde"""
    grid_origin: tuple = ();  """(frame id, (patch rows, patch columns))"""
    
    def __post_init__(self):
        if self.tag not in TAGS: raise ValueError('unknown feature tag: '+str(self.tag))
        if self.data.dim() != 3: raise ValueError('a FeatureMap is C x H x W, got shape %s' % (tuple(self.data.shape),))
        if not bool(_torch.isfinite(self.data).all()): raise ValueError('non-finite values in feature map '+self.tag)
    
    @property
    def shape(self):
        return tuple(self.data.shape)


@_dataclass(frozen=True)
class BackboneSpec:
    provider:    str   = 'synthetic';  """'synthetic' or 'lvm-adapter'"""
    num_blocks:  int   = 12;           """Number of transformer blocks"""
    embed_dim:   int   = 384;          """Token dimension"""
    patch_size:  int   = 14;           """Patch size in pixels"""
    input_hw:    tuple = (448, 224);   """Frame size"""
    tap_layers:  tuple = _field(default=None);  """Tapped blocks (1-based); default: uniform rule"""
    
    def __post_init__(self):
        if self.tap_layers is None: object.__setattr__(self, 'tap_layers', select_tap_layers(self.num_blocks))
        hh, ww = self.input_hw
        if hh % self.patch_size or ww % self.patch_size:
            raise ValueError('input size %s is not divisible by the patch size %i' % (self.input_hw, self.patch_size))
        taps = list(self.tap_layers)
        if any(b <= a for a,b in zip(taps[:-1], taps[1:])) or taps[0] < 1 or taps[-1] > self.num_blocks:
            raise ValueError('tap layers %s must increase strictly within [1, %i]' % (taps, self.num_blocks))
    
    @property
    def grid_hw(self):
        """Token grid (rows, columns)."""
        return (self.input_hw[0]//self.patch_size, self.input_hw[1]//self.patch_size)
    
    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.provider, cfg.num_blocks, cfg.embed_dim, cfg.patch_size, (cfg.target_h, cfg.target_w),
                   select_tap_layers(cfg.num_blocks, cfg.num_taps))


def _frames_tensor(frames, spec):
    """Return frames as an N x 3 x H x W float tensor, checking the resolution."""
    
    frames = _torch.as_tensor(_np.asarray(frames) if not _torch.is_tensor(frames) else frames)
    if frames.dim() == 3: frames = frames[None]
    if tuple(frames.shape[1:3]) != tuple(spec.input_hw) or frames.shape[3] != 3:
        raise ValueError('frames must be N x %i x %i x 3, got %s' % (spec.input_hw + (tuple(frames.shape),)))
    return frames.permute(0,3,1,2).float()


class SyntheticProvider(_nn.Module):
    """Desk-scale stand-in for a frozen self-supervised vision transformer.
    
    Tokens whose patch differs from the background colour are foreground.  Foreground tokens are drawn around
    cluster centre A, background tokens around cluster B.  On top of the centre, foreground tokens carry a
    direction that depends on the row-width profile of the silhouette (identity), a code of the token's
    relative position inside the silhouette (body parts) and a projection of the patch colour (clothing
    texture).  Colour dominates the low layers, shape the high layers.  In locality mode every token is a
    fixed linear function of its patch colour only.
    """
    
    _shape_scale = (0.25, 0.5, 1.0, 1.5)
    _pos_scale   = (0.5, 0.75, 1.0, 1.0)
    _color_scale = (1.5, 1.0, 0.5, 0.25)
    _npos = 10
    
    def __init__(self, spec, seed=0, separation=4.0, noise=0.1, bg_level=0.0, fg_threshold=0.1, locality=False,
                 swap_clusters=False):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.noise = noise
        self.bg_level = bg_level
        self.fg_threshold = fg_threshold
        self.locality = locality
        
        gen = _torch.Generator().manual_seed(seed)
        ntap, edim = len(spec.tap_layers), spec.embed_dim
        gh = spec.grid_hw[0]
        
        units = _F.normalize(_torch.randn(ntap, edim, generator=gen), dim=1)
        offset = _F.normalize(_torch.randn(ntap, edim, generator=gen), dim=1)
        fg = offset + units*separation/2
        bg = offset - units*separation/2
        if swap_clusters: fg, bg = bg, fg
        
        self.register_buffer('centers_fg', fg)
        self.register_buffer('centers_bg', bg)
        self.register_buffer('shape_proj', _torch.randn(ntap, edim, gh+1, generator=gen) / _np.sqrt(gh+1))
        self.register_buffer('pos_proj',   _torch.randn(ntap, edim, self._npos, generator=gen) / _np.sqrt(self._npos))
        self.register_buffer('color_proj', _torch.randn(ntap, edim, 3, generator=gen))
        self.requires_grad_(False)
        
        return
    
    
    def token_silhouette(self, frames):
        """Return the N x rows x cols boolean foreground-token grid of a batch of frames (N x 3 x H x W)."""
        
        ps = self.spec.patch_size
        fg_pix = ((frames - self.bg_level).abs().amax(dim=1, keepdim=True) > self.fg_threshold).float()
        return _F.avg_pool2d(fg_pix, ps)[:,0] >= 0.5
    
    
    def _shape_descriptor(self, sil):
        """Unit row-width profile of each silhouette plus its filled fraction (N x rows+1)."""
        
        sil = sil.float()
        rows = sil.mean(dim=2)
        desc = _torch.cat([rows - rows.mean(dim=1, keepdim=True), sil.mean(dim=(1,2))[:,None]], dim=1)
        return _F.normalize(desc, dim=1)
    
    
    def _position_code(self, sil):
        """Relative position of each token inside the silhouette's bounding box (N x npos x rows x cols)."""
        
        nfr, gh, gw = sil.shape
        rr = _torch.arange(gh, dtype=_torch.float32)[:,None].expand(gh, gw)
        cc = _torch.arange(gw, dtype=_torch.float32)[None,:].expand(gh, gw)
        codes = _torch.zeros(nfr, self._npos, gh, gw)
        for ifr in range(nfr):
            ys, xs = _torch.nonzero(sil[ifr], as_tuple=True)
            if len(ys) == 0: continue
            rel_r = (rr - ys.min()) / (ys.max() - ys.min() + 1)
            rel_c = (cc - xs.min()) / (xs.max() - xs.min() + 1) - 0.5
            freqs = [_torch.sin(_np.pi*kk*rel_r) for kk in range(1,5)] + [_torch.cos(_np.pi*kk*rel_r) for kk in range(1,5)]
            codes[ifr] = _torch.stack(freqs + [rel_c, rel_c**2])
        return codes
    
    
    def _noise(self, frames):
        """Additive noise, deterministic in the provider seed and the frame content."""
        
        out = []
        ntap, edim = len(self.spec.tap_layers), self.spec.embed_dim
        gh, gw = self.spec.grid_hw
        for frame in frames:
            digest = _hashlib.blake2b(frame.contiguous().numpy().tobytes(), digest_size=8).digest()
            gen = _torch.Generator().manual_seed((self.seed*1000003 + int.from_bytes(digest, 'little')) % 2**63)
            out.append(_torch.randn(ntap, edim, gh, gw, generator=gen))
        return _torch.stack(out, dim=1) * self.noise  # ntap x N x E x gh x gw
    
    
    @_torch.no_grad()
    def forward(self, frames):
        """Return the four tapped feature maps (each N x E x rows x cols) of a batch of frames."""
        
        frames = _frames_tensor(frames, self.spec)
        colour = _F.avg_pool2d(frames, self.spec.patch_size)   # N x 3 x gh x gw
        
        if self.locality:
            return [_torch.einsum('ec,nchw->nehw', self.color_proj[itap], colour) for itap in range(len(self.spec.tap_layers))]
        
        sil = self.token_silhouette(frames)
        fgm = sil[:,None].float()
        desc = self._shape_descriptor(sil)
        code = self._position_code(sil)
        noise = self._noise(frames)
        
        maps = []
        for itap in range(len(self.spec.tap_layers)):
            shape_dir = _F.normalize(desc @ self.shape_proj[itap].T, dim=1)[:,:,None,None]
            fg = (self.centers_fg[itap][None,:,None,None] + self._shape_scale[itap]*shape_dir
                  + self._pos_scale[itap]*_torch.einsum('ep,nphw->nehw', self.pos_proj[itap], code)
                  + self._color_scale[itap]*_torch.einsum('ec,nchw->nehw', self.color_proj[itap], colour - 0.5))
            bg = (self.centers_bg[itap][None,:,None,None]
                  + 0.1*_torch.einsum('ec,nchw->nehw', self.color_proj[itap], colour - 0.5))
            maps.append(fgm*fg + (1-fgm)*bg + noise[itap])
            
        return maps
    
    
    def digest(self):
        """SHA-256 digest of the provider state; unchanged by training."""
        
        sha = _hashlib.sha256()
        for name,buf in self.state_dict().items():
            sha.update(name.encode())
            sha.update(buf.contiguous().numpy().tobytes())
        sha.update(_json.dumps([self.seed, self.noise, self.bg_level, self.fg_threshold, self.locality]).encode())
        return sha.hexdigest()


class LVMAdapter(_nn.Module):
    """Mount a real large vision model (e.g. a DINOv2 or SAM image encoder) as a frozen feature provider.
    
    The wrapped model takes an N x 3 x H x W tensor with values in [0,1] and returns the outputs of its
    transformer blocks as a list, each either N x T x E token sequences (prefix tokens such as a class token
    are dropped, the last rows*cols tokens are the patch tokens in row-major order) or N x rows x cols x E
    grids.  The list holds either one entry per block or exactly one entry per tapped layer.
    """
    
    def __init__(self, spec, model=None, weights=None):
        super().__init__()
        
        if model is None:
            if not weights or not _Path(weights).is_file():
                raise ProviderUnavailableError("provider 'lvm-adapter': weights file %r not found" % (weights,))
            model = _torch.jit.load(str(weights), map_location='cpu')
            
        self.spec = spec
        self.model = model
        if isinstance(model, _nn.Module):
            model.eval()
            model.requires_grad_(False)
        return
    
    
    def train(self, mode=True):
        """The wrapped model always stays in evaluation mode."""
        super().train(mode)
        if isinstance(self.model, _nn.Module): self.model.eval()
        return self
    
    
    def _to_grid(self, tokens):
        """Rearrange N x T x E tokens (or an N x rows x cols x E grid) to an N x E x rows x cols map."""
        
        gh, gw = self.spec.grid_hw
        if tokens.dim() == 4: return tokens.permute(0,3,1,2).contiguous()
        if tokens.shape[1] < gh*gw: raise ValueError('expected at least %i tokens, got %i' % (gh*gw, tokens.shape[1]))
        tokens = tokens[:, -gh*gw:]
        return tokens.reshape(tokens.shape[0], gh, gw, tokens.shape[2]).permute(0,3,1,2).contiguous()
    
    
    @_torch.no_grad()
    def forward(self, frames):
        """Return the four tapped feature maps (each N x E x rows x cols) of a batch of frames."""
        
        outs = list(self.model(_frames_tensor(frames, self.spec)))
        taps = self.spec.tap_layers
        if len(outs) == self.spec.num_blocks:
            outs = [outs[ii-1] for ii in taps]
        elif len(outs) != len(taps):
            raise ValueError("provider 'lvm-adapter': model returned %i layers, expected %i or %i"
                             % (len(outs), self.spec.num_blocks, len(taps)))
        return [self._to_grid(out.float()) for out in outs]
    
    
    def digest(self):
        """SHA-256 digest of the wrapped model's state."""
        
        sha = _hashlib.sha256()
        if isinstance(self.model, _nn.Module):
            for name,val in self.model.state_dict().items():
                sha.update(name.encode())
                sha.update(val.detach().cpu().contiguous().numpy().tobytes())
        return sha.hexdigest()


def build_provider(cfg, **kwargs):
    """Build the feature provider named in the settings.
    
    Parameters:
      cfg (Config):  Settings.
      kwargs:        Extra arguments for the provider class (e.g. model= for the adapter).
    
    Returns:
      (nn.Module):  SyntheticProvider or LVMAdapter.
    """
    
    spec = BackboneSpec.from_config(cfg)
    if cfg.provider == 'synthetic':
        return SyntheticProvider(spec, seed=cfg.provider_seed, separation=cfg.synth_separation,
                                 noise=cfg.synth_noise, bg_level=cfg.synth_bg_level,
                                 fg_threshold=cfg.synth_fg_threshold, locality=cfg.synth_locality, **kwargs)
    if cfg.provider == 'lvm-adapter':
        return LVMAdapter(spec, weights=cfg.adapter_weights or None, **kwargs)
    
    raise ProviderUnavailableError('unknown provider: '+str(cfg.provider))


def extract_multilevel(frame, spec, provider, frame_id=0):
    """Tap the four layers of one preprocessed frame.
    
    Parameters:
      frame (float):          Array (448 x 224 x 3) in [0,1].
      spec (BackboneSpec):    Backbone geometry.
      provider (nn.Module):   Frozen feature provider.
      frame_id (int):         Frame identifier stored in the maps' grid_origin (optional).
    
    Returns:
      (tuple):  Four FeatureMaps tagged f1..f4, each embed_dim x rows x cols.
    """
    
    if provider is None: raise ProviderUnavailableError("provider '%s' is not available" % spec.provider)
    maps = provider(_np.asarray(frame)[None])
    
    return tuple(FeatureMap(mp[0], 'f%i' % (itap+1), (frame_id, spec.grid_hw)) for itap,mp in enumerate(maps))


def extract_batch(frames, provider, chunk=64):
    """Tap the four layers of a batch of preprocessed frames, in chunks.
    
    Parameters:
      frames (float):         Array (N x 448 x 224 x 3) in [0,1].
      provider (nn.Module):   Frozen feature provider.
      chunk (int):            Number of frames per provider call (optional, defaults to 64).
    
    Returns:
      (tensor):  Tensor (N x 4 x E x rows x cols), ordered by frame index.
    """
    
    out = []
    for i0 in range(0, len(frames), chunk):
        out.append(_torch.stack(provider(frames[i0:i0+chunk]), dim=1))
        
    return _torch.cat(out)


def upsample2x(fmap):
    """2x bilinear upsampling with half-pixel sample centres (align_corners=False) of a (N x) C x H x W map."""
    
    batched = fmap.dim() == 4
    out = _F.interpolate(fmap if batched else fmap[None], scale_factor=2, mode='bilinear', align_corners=False)
    return out if batched else out[0]


def upsample_concat(maps):
    """Upsample four maps 2x and concatenate them along the channel axis into the all-purpose map f_c.
    
    Parameters:
      maps (list):  Four tensors of identical shape ((N x) C x H x W), or four FeatureMaps, ordered f1..f4.
    
    Returns:
      (tensor):  Map ((N x) 4C x 2H x 2W); a FeatureMap tagged fc if FeatureMaps were given.
    """
    
    is_fmap = isinstance(maps[0], FeatureMap)
    tens = [mp.data if isinstance(mp, FeatureMap) else mp for mp in maps]
    if any(tuple(tt.shape) != tuple(tens[0].shape) for tt in tens):
        raise ValueError('upsample_concat: shape mismatch: %s' % [tuple(tt.shape) for tt in tens])
    
    f_c = _torch.cat([upsample2x(tt) for tt in tens], dim=-3)
    if is_fmap: return FeatureMap(f_c, 'fc', maps[0].grid_origin)
    
    return f_c


def write_feature_blob(path, array, tag):
    """Write a feature array as a JSON header line followed by little-endian float32 data in C order.
    
    Parameters:
      path (str):     Output file.
      array (float):  Array or tensor.
      tag (str):      Provenance tag.
    """
    
    arr = _np.ascontiguousarray(_np.asarray(array, dtype='<f4'))
    header = _json.dumps({'shape': list(arr.shape), 'tag': tag, 'dtype': '<f4'})
    with open(path, 'wb') as fh:
        fh.write(header.encode()+b'\n')
        fh.write(arr.tobytes(order='C'))
    return


def read_feature_blob(path):
    """Read a feature blob written by write_feature_blob().
    
    Parameters:
      path (str):  Input file.
    
    Returns:
      (tuple):  Tuple (array, tag).
    """
    
    with open(path, 'rb') as fh:
        header = _json.loads(fh.readline().decode())
        data = _np.frombuffer(fh.read(), dtype='<f4')
        
    if data.size != int(_np.prod(header['shape'])): raise ValueError('truncated feature blob: '+str(path))
    return data.reshape(header['shape']).astype(_np.float32), header['tag']


class FeatureCache:
    """Per-sequence cache of the tapped feature maps (n_frames x 4 x E x rows x cols), in memory and on disc.
    
    Disc entries live in root/<dataset>/<provider digest>/<sequence name>.bin, so that a different provider
    never reads stale features.  With a disc root, only the max_memory most recently used sequences stay in
    memory.
    """
    
    def __init__(self, provider, root=None, dataset='dataset', pad_and_resize=True, verbosity=0, max_memory=64):
        self.provider = provider
        self.root = None
        if root:
            tag = provider.digest()[:16] + ('' if pad_and_resize else '-stretch')
            self.root = _Path(root) / dataset / tag
            self.root.mkdir(parents=True, exist_ok=True)
        self.memory = _OrderedDict()
        self.max_memory = max_memory if self.root is not None else 0  # Memory-only caches are never evicted
        self.verbosity = verbosity
        return
    
    
    def get(self, record, compute):
        """Return the features of a sequence, calling compute() (which returns the tensor) on a miss."""
        
        if record.key in self.memory:
            self.memory.move_to_end(record.key)
            return self.memory[record.key]
        
        path = self.root / (record.name+'.bin') if self.root is not None else None
        if path is not None and path.is_file():
            feats = _torch.from_numpy(read_feature_blob(path)[0])
        else:
            feats = compute()
            if path is not None: write_feature_blob(path, feats.numpy(), 'f1-f4')
            _gcli.note('Computed features of '+record.name, self.verbosity, 3)
            
        self.memory[record.key] = feats
        if self.max_memory > 0:
            while len(self.memory) > self.max_memory: self.memory.popitem(last=False)
        return feats
