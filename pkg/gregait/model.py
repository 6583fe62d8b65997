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


"""The trainable gait model: representation extractor plus recognition head on top of frozen tapped features."""


import numpy as _np
import torch as _torch
import torch.nn as _nn

from gregait import backbone as _gbb
from gregait import gre as _ggre
from gregait import head as _ghead
from gregait import ingest as _gin


class GaitModel(_nn.Module):
    """Composite of a GaitRepresentationExtractor and a recognition head.
    
    The input is the stack of tapped feature maps of a batch of sequences (N x l x 4 x E x rows x cols), as
    produced by backbone.extract_batch(); upsampling and concatenation happen inside the forward pass.
    """
    
    def __init__(self, gre, head):
        super().__init__()
        self.gre = gre
        self.head = head
        return
    
    
    def representations(self, taps):
        """Run the extractor on a flat batch of frames (M x 4 x E x rows x cols)."""
        
        maps = list(taps.unbind(dim=1))
        f_c = _gbb.upsample_concat(maps)
        f4 = _gbb.upsample2x(maps[-1])
        return self.gre(f_c, f4)
    
    
    def forward(self, taps):
        """Embed a batch of sequences.
        
        Parameters:
          taps (tensor):  Tapped maps (N x l x 4 x E x rows x cols).
        
        Returns:
          (dict):  The head's parts, bn_parts and logits, the extractor losses L_rec, L_smo and L_div, and the
                   extractor output under the key 'gre'.
        """
        
        nseq, nfr = taps.shape[:2]
        rep = self.representations(taps.flatten(0,1))
        streams = [st.reshape(nseq, nfr, *st.shape[1:]) for st in rep['streams']]
        
        out = self.head(streams)
        out.update(L_rec=rep['L_rec'], L_smo=rep['L_smo'], L_div=rep['L_div'], gre=rep)
        return out


def init_weights(module):
    """Kaiming initialisation of the convolutions (fan-out) and unit/zero batch-norm affine parameters."""
    
    for mod in module.modules():
        if isinstance(mod, _nn.Conv2d):
            _nn.init.kaiming_normal_(mod.weight, mode='fan_out', nonlinearity='relu')
            if mod.bias is not None: _nn.init.zeros_(mod.bias)
        elif isinstance(mod, (_nn.BatchNorm1d, _nn.BatchNorm2d)):
            _nn.init.ones_(mod.weight)
            _nn.init.zeros_(mod.bias)
    return


def build_model(cfg, num_classes, seed=None):
    """Build and initialise a gait model from the settings.
    
    Parameters:
      cfg (Config):        Settings.
      num_classes (int):   Number of training identities.
      seed (int):          Seed of the parameter initialisation (optional, defaults to None: cfg.seed).
    
    Returns:
      (GaitModel):  The model, in training mode.
    """
    
    _torch.manual_seed(cfg.seed if seed is None else seed)
    gre = _ggre.GaitRepresentationExtractor.from_config(cfg)
    head = _ghead.build_head(cfg, gre.stream_channels, num_classes)
    model = GaitModel(gre, head)
    init_weights(model)
    return model


def sequence_taps(record, provider, cfg, cache=None, indices=None):
    """Tapped feature maps of (selected frames of) a sequence, using a FeatureCache when given.
    
    Parameters:
      record (SequenceRecord):  The sequence.
      provider (nn.Module):     Frozen feature provider.
      cfg (Config):             Settings (preprocessing and workers).
      cache (FeatureCache):     Feature cache (optional).
      indices (int):            Frame indices (optional, defaults to None: all frames).
    
    Returns:
      (tensor):  Tensor (n x 4 x E x rows x cols).
    """
    
    if cache is None:
        frames = _gin.load_frames(record, indices, cfg.workers)
        return _gbb.extract_batch(_gin.preprocess(frames, cfg), provider)
    
    def compute():
        return _gbb.extract_batch(_gin.preprocess(_gin.load_frames(record, workers=cfg.workers), cfg), provider)
    
    feats = cache.get(record, compute)
    if indices is None: return feats
    return feats[_torch.as_tensor(_np.asarray(indices), dtype=_torch.long)]


def batch_taps(samples, provider, cfg, cache=None):
    """Stack the tapped maps of a list of SequenceSamples into N x l x 4 x E x rows x cols."""
    
    return _torch.stack([sequence_taps(smp.record, provider, cfg, cache, smp.indices) for smp in samples])
