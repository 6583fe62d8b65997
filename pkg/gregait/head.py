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


"""Recognition heads: the two-stream GaitBase-like head with attention fusion, and a GaitSet-like alternative.

Both heads take a list of streams, each N x l x C x H x W (or l x C x H x W for a single sequence), and
return a dict with the pre-BN part features 'parts' (N x P x D), the post-BN features 'bn_parts' and the
per-part class logits 'logits' (None for heads without a classifier).
"""


import json as _json
from dataclasses import dataclass as _dataclass, field as _field

import numpy as _np
import torch as _torch
import torch.nn as _nn


class BasicBlock(_nn.Module):
    """Residual block: two 3x3 convolutions with batch normalisation and a projection shortcut when needed."""
    
    def __init__(self, in_ch, out_ch, stride=1, norm=True):
        super().__init__()
        Norm = _nn.BatchNorm2d if norm else (lambda ch: _nn.Identity())
        
        self.conv1 = _nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = Norm(out_ch)
        self.conv2 = _nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = Norm(out_ch)
        self.relu = _nn.ReLU(inplace=True)
        
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = _nn.Sequential(_nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), Norm(out_ch))
        return
    
    
    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


def make_stage(in_ch, out_ch, stride=1, norm=True):
    """A head stage: one residual block."""
    return BasicBlock(in_ch, out_ch, stride, norm)


class AttentionFuse(_nn.Module):
    """Cross-and-select channel fusion of two equally shaped maps."""
    
    def __init__(self, channels, reduction=4, bias=True):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.squeeze = _nn.Linear(channels, hidden, bias=bias)
        self.excite_a = _nn.Linear(hidden, channels, bias=bias)
        self.excite_b = _nn.Linear(hidden, channels, bias=bias)
        return
    
    
    def weights(self, a, b):
        """Per-channel fusion weights (w_a, w_b) of two N x C x H x W maps, each N x C, summing to one."""
        
        s = _torch.relu(self.squeeze((a + b).mean(dim=(2,3))))
        logits = _torch.stack((self.excite_a(s), self.excite_b(s)))
        w = _torch.softmax(logits, dim=0)
        return w[0], w[1]
    
    
    def forward(self, a, b):
        return attention_fuse(a, b, self)


def attention_fuse(a, b, fuse_params):
    """Fuse two maps with channel-wise softmax selection weights.
    
    Parameters:
      a (tensor):                   First map ((N x) C x H x W).
      b (tensor):                   Second map, same shape.
      fuse_params (AttentionFuse):  Squeeze and excitation projections.
    
    Returns:
      (tensor):  w_a*a + w_b*b, weights broadcast over H x W.
    """
    
    if a.shape != b.shape: raise ValueError('attention_fuse: shape mismatch %s vs %s' % (tuple(a.shape), tuple(b.shape)))
    
    batched = a.dim() == 4
    ab, bb = (a, b) if batched else (a[None], b[None])
    w_a, w_b = fuse_params.weights(ab, bb)
    fused = w_a[:,:,None,None]*ab + w_b[:,:,None,None]*bb
    
    return fused if batched else fused[0]


def horizontal_part_pool(feat, parts):
    """Pool a map into horizontal strips: mean + max over each strip, per channel.
    
    The height is split into equal strips; when it does not divide, the last strip absorbs the remainder.
    
    Parameters:
      feat (tensor):  Map ((N x) C x H x W).
      parts (int):    Number of strips P.
    
    Returns:
      (tensor):  Part features ((N x) P x C).
    """
    
    batched = feat.dim() == 4
    fb = feat if batched else feat[None]
    height = fb.shape[2]
    if not 1 <= parts <= height: raise ValueError('cannot pool a map of height %i into %i parts' % (height, parts))
    
    step = height // parts
    pooled = []
    for ip in range(parts):
        strip = fb[:,:, ip*step : (ip+1)*step if ip < parts-1 else height]
        strip = strip.flatten(2)
        pooled.append(strip.mean(dim=2) + strip.amax(dim=2))
    out = _torch.stack(pooled, dim=1)
    
    return out if batched else out[0]


class SeparateFCs(_nn.Module):
    """Independent linear maps per part: N x P x C -> N x P x D."""
    
    def __init__(self, parts, in_ch, out_ch):
        super().__init__()
        self.weight = _nn.Parameter(_nn.init.xavier_uniform_(_torch.empty(parts, in_ch, out_ch)))
        return
    
    
    def forward(self, x):
        return _torch.einsum('npc,pcd->npd', x, self.weight)


class BNNeck(_nn.Module):
    """Batch normalisation over all part features followed by bias-free per-part classifiers."""
    
    def __init__(self, parts, dim, num_classes, norm=True):
        super().__init__()
        self.bn = _nn.BatchNorm1d(parts*dim) if norm else _nn.Identity()
        self.classifier = SeparateFCs(parts, dim, num_classes)
        return
    
    
    def forward(self, x):
        n, p, d = x.shape
        bn_parts = self.bn(x.reshape(n, p*d)).reshape(n, p, d)
        return bn_parts, self.classifier(bn_parts)


def _as_batch(streams):
    """Normalise a list of streams to N x l x C x H x W and check equal frame counts."""
    
    if _torch.is_tensor(streams): streams = [streams]
    batched = streams[0].dim() == 5
    streams = [s if batched else s[None] for s in streams]
    
    nfr = streams[0].shape[1]
    if nfr < 1: raise ValueError('a sequence needs at least one frame')
    for s in streams:
        if s.shape[:2] != streams[0].shape[:2]: raise ValueError('streams differ in batch size or frame count')
    return streams, batched


class GaitBaseHead(_nn.Module):
    """Two-stream residual head: B1_ap and B1_de, attention fusion, B2..B4, temporal max, part pooling, BNNeck.
    
    With a single input stream, B1 is applied to it directly and the fusion is skipped.
    """
    
    def __init__(self, stream_channels=(16,16), num_classes=100, widths=(64,64,128,256), strides=(1,2,2,1),
                 parts=16, embedding_dim=256, norm=True, fuse_reduction=4):
        super().__init__()
        
        stream_channels = tuple(stream_channels)
        if len(stream_channels) not in (1,2): raise ValueError('GaitBaseHead takes one or two streams')
        if len(widths) != 4 or len(strides) != 4: raise ValueError('GaitBaseHead needs four stage widths and strides')
        
        self.stream_channels = stream_channels
        self.parts = parts
        self.embedding_dim = embedding_dim
        self.norm = norm
        
        self.B1_ap = make_stage(stream_channels[0], widths[0], strides[0], norm)
        self.B1_de = make_stage(stream_channels[1], widths[0], strides[0], norm) if len(stream_channels) == 2 else None
        self.fuse = AttentionFuse(widths[0], fuse_reduction, bias=norm) if self.B1_de is not None else None
        self.B2 = make_stage(widths[0], widths[1], strides[1], norm)
        self.B3 = make_stage(widths[1], widths[2], strides[2], norm)
        self.B4 = make_stage(widths[2], widths[3], strides[3], norm)
        
        self.fcs = SeparateFCs(parts, widths[3], embedding_dim)
        self.bnneck = BNNeck(parts, embedding_dim, num_classes, norm)
        return
    
    
    def frame_maps(self, streams):
        """Per-frame output of B4 for streams of shape (N*l) x C x H x W."""
        
        x = self.B1_ap(streams[0])
        if self.B1_de is not None: x = self.fuse(x, self.B1_de(streams[1]))
        return self.B4(self.B3(self.B2(x)))
    
    
    def forward(self, streams):
        """Embed a batch of sequences.
        
        Parameters:
          streams (list):  One or two tensors N x l x C x H x W (or l x C x H x W).
        
        Returns:
          (dict):  parts (N x P x D, pre-BN), bn_parts and logits (N x P x num_classes).
        """
        
        streams, batched = _as_batch(streams)
        if len(streams) != len(self.stream_channels):
            raise ValueError('expected %i stream(s), got %i' % (len(self.stream_channels), len(streams)))
        nseq, nfr = streams[0].shape[:2]
        
        maps = self.frame_maps([s.flatten(0,1) for s in streams])
        maps = maps.reshape(nseq, nfr, *maps.shape[1:]).amax(dim=1)  # Temporal max pooling
        
        parts = self.fcs(horizontal_part_pool(maps, self.parts))
        bn_parts, logits = self.bnneck(parts)
        
        out = {'parts': parts, 'bn_parts': bn_parts, 'logits': logits}
        if not batched: out = {key: val[0] for key,val in out.items()}
        return out


class GaitSetHead(_nn.Module):
    """Set-pooling head: a per-frame convolution stack, max over the frame set and multi-bin part pooling.
    
    Streams are concatenated along the channel axis.  The part count is the sum of the bin counts 1, 2, 4, ...
    up to the configured number of parts.  There is no classifier; training uses the triplet loss only.
    """
    
    def __init__(self, stream_channels=(16,16), widths=(32,64,128), parts=16, embedding_dim=256):
        super().__init__()
        in_ch = sum(stream_channels)
        w1, w2, w3 = widths[-3:]
        
        def conv(cin, cout):
            return _nn.Sequential(_nn.Conv2d(cin, cout, 3, padding=1, bias=False), _nn.LeakyReLU(inplace=True))
        self.frame_net = _nn.Sequential(conv(in_ch, w1), conv(w1, w1), _nn.MaxPool2d(2),
                                        conv(w1, w2), conv(w2, w2), _nn.MaxPool2d(2),
                                        conv(w2, w3), conv(w3, w3))
        
        self.bins = []
        nbin = 1
        while nbin <= parts:
            self.bins.append(nbin)
            nbin *= 2
        self.parts = sum(self.bins)
        self.embedding_dim = embedding_dim
        self.fcs = SeparateFCs(self.parts, w3, embedding_dim)
        return
    
    
    def forward(self, streams):
        streams, batched = _as_batch(streams)
        nseq, nfr = streams[0].shape[:2]
        
        x = _torch.cat([s.flatten(0,1) for s in streams], dim=1)
        maps = self.frame_net(x)
        maps = maps.reshape(nseq, nfr, *maps.shape[1:]).amax(dim=1)  # Set pooling
        
        pooled = _torch.cat([horizontal_part_pool(maps, nbin) for nbin in self.bins], dim=1)
        parts = self.fcs(pooled)
        
        out = {'parts': parts, 'bn_parts': parts, 'logits': None}
        if not batched: out = {key: (val[0] if val is not None else None) for key,val in out.items()}
        return out


def build_head(cfg, stream_channels, num_classes):
    """Build the head selected by cfg.head_type ('gaitbase' or 'gaitset')."""
    
    if cfg.head_type == 'gaitset':
        return GaitSetHead(stream_channels, cfg.head_widths[1:], cfg.parts, cfg.embedding_dim)
    return GaitBaseHead(stream_channels, num_classes, cfg.head_widths, cfg.head_strides, cfg.parts,
                        cfg.embedding_dim, cfg.head_norm, cfg.fuse_reduction)


def head_forward(seq_ap, seq_de, head):
    """Embed one sequence from its appearance and denoising streams (l x C x H x W each).
    
    Parameters:
      seq_ap (tensor):      Appearance stream.
      seq_de (tensor):      Denoising stream (None for a single-stream head).
      head (GaitBaseHead):  Head parameters.
    
    Returns:
      (tuple):  Tuple (parts, logits): P x D part features and P x num_classes logits.
    """
    
    streams = [seq_ap] if seq_de is None else [seq_ap, seq_de]
    out = head(streams)
    return out['parts'], out['logits']


@_dataclass
class GaitEmbedding:
    """Embedding of one sequence with its metadata."""
    
    parts: _np.ndarray = None;  """P x D part features (float32)"""
    subject_id: str = '';       """Subject identifier"""
    condition: str = '';        """Walking condition"""
    view: str = '';             """Camera view"""
    seq: str = '';              """Sequence number"""
    meta: dict = _field(default_factory=dict);  """Extra metadata"""
    
    def __post_init__(self):
        self.parts = _np.asarray(self.parts, dtype=_np.float32)
        if self.parts.ndim != 2: raise ValueError('an embedding has shape P x D, got %s' % (self.parts.shape,))
        if not _np.isfinite(self.parts).all():
            raise ValueError('non-finite embedding for %s/%s/%s/%s' % (self.subject_id, self.condition, self.view, self.seq))
        return
    
    @property
    def key(self):
        return (self.subject_id, self.condition, self.view, self.seq)
    
    @classmethod
    def from_record(cls, parts, record):
        """Create an embedding from a part matrix and a SequenceRecord."""
        return cls(parts, record.subject_id, record.condition, record.view, record.seq, {'split': record.split})


def write_embeddings(path, embeddings):
    """Write embeddings as records of a JSON metadata line followed by a little-endian float32 P x D payload.
    
    Parameters:
      path (str):          Output file.
      embeddings (list):   GaitEmbedding objects.
    """
    
    with open(path, 'wb') as fh:
        for emb in embeddings:
            arr = _np.ascontiguousarray(emb.parts, dtype='<f4')
            meta = {'subject_id': emb.subject_id, 'condition': emb.condition, 'view': emb.view, 'seq': emb.seq,
                    'shape': list(arr.shape), 'meta': emb.meta}
            fh.write(_json.dumps(meta).encode()+b'\n')
            fh.write(arr.tobytes(order='C'))
    return


def read_embeddings(path):
    """Read an embedding cache file written by write_embeddings().
    
    Parameters:
      path (str):  Input file.
    
    Returns:
      (list):  GaitEmbedding objects, in file order.
    """
    
    embeddings = []
    with open(path, 'rb') as fh:
        while True:
            line = fh.readline()
            if not line: break
            meta = _json.loads(line.decode())
            nbytes = 4*int(_np.prod(meta['shape']))
            payload = fh.read(nbytes)
            if len(payload) != nbytes: raise ValueError('truncated embedding record in '+str(path))
            parts = _np.frombuffer(payload, dtype='<f4').reshape(meta['shape'])
            embeddings.append(GaitEmbedding(parts, meta['subject_id'], meta['condition'], meta['view'], meta['seq'],
                                            meta.get('meta', {})))
    return embeddings
