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


"""The Gait Representation Extractor: mask, appearance and denoising branches with their losses.

All functions take either a single map (C x H x W) or a batch (N x C x H x W).  The binary foreground mask is
computed without gradient and enters the rest of the graph as a constant; the mask branch learns from the
reconstruction loss only.
"""


import math as _math

import numpy as _np
import torch as _torch
import torch.nn as _nn
import torch.nn.functional as _F

from gregait.numerics import gaussian_weights as _gaussian_weights


SOBEL_X = ((-1., 0., 1.), (-2., 0., 2.), (-1., 0., 1.));  """Unnormalised horizontal Sobel kernel"""
SOBEL_Y = ((-1., -2., -1.), (0., 0., 0.), (1., 2., 1.));  """Unnormalised vertical Sobel kernel"""


def _batched(tens):
    """Return (batch tensor, was_batched) for a C x H x W or N x C x H x W tensor."""
    return (tens, True) if tens.dim() == 4 else (tens[None], False)


class MaskBranch(_nn.Module):
    """Two-channel auto-encoder on f4: encoder E (embed_dim -> 2) and decoder D (2 -> embed_dim), both 1x1."""
    
    def __init__(self, embed_dim=384):
        super().__init__()
        self.E = _nn.Conv2d(embed_dim, 2, 1, bias=False)
        self.D = _nn.Conv2d(2, embed_dim, 1, bias=False)
        return


def mask_forward(f4, params):
    """Run the mask branch.
    
    Parameters:
      f4 (tensor):            Upsampled top-layer map ((N x) E x H x W).
      params (MaskBranch):    Encoder/decoder.
    
    Returns:
      (tuple):  Tuple (m, f4_rec, L_rec):
    
      - m (tensor):       Channel softmax of E(f4), ((N x) 2 x H x W).
      - f4_rec (tensor):  Reconstruction D(m), same shape as f4.
      - L_rec (tensor):   Mean squared reconstruction error (scalar).
    """
    
    if not bool(_torch.isfinite(f4).all()): raise ValueError('mask_forward: non-finite values in f4')
    
    f4b, batched = _batched(f4)
    m = _torch.softmax(params.E(f4b), dim=1)
    f4_rec = params.D(m)
    L_rec = ((f4b - f4_rec)**2).mean()
    
    if not batched: return m[0], f4_rec[0], L_rec
    return m, f4_rec, L_rec


def center_scores(m):
    """Centre score of each mask channel: Gaussian-weighted mean position weight of its activation.
    
    Parameters:
      m (tensor):  Mask map ((N x) 2 x H x W), tensor or array.
    
    Returns:
      (float):  Array ((N x) 2) of scores; a channel without activation scores 0.
    """
    
    m = _np.asarray(m.detach().cpu() if _torch.is_tensor(m) else m, dtype=_np.float64)
    wgt = _gaussian_weights(*m.shape[-2:])
    
    num = (m*wgt).sum(axis=(-2,-1))
    den = m.sum(axis=(-2,-1))
    return _np.where(den > 0, num/_np.where(den > 0, den, 1), 0.0)


def select_foreground_channel(m):
    """Return the index of the mask channel whose activation lies most in the image centre.
    
    Parameters:
      m (tensor):  Mask map (2 x H x W).
    
    Returns:
      (int):  0 or 1; ties go to channel 0.
    """
    
    scores = center_scores(m)
    return 0 if scores[0] >= scores[1] else 1


def select_foreground_channels(m):
    """Foreground channel per frame of a batch of mask maps (N x 2 x H x W), as a long tensor."""
    
    scores = center_scores(m)
    return _torch.as_tensor((scores[:,1] > scores[:,0]).astype(_np.int64))


def binarize_close(prob_fg, threshold=0.5):
    """Threshold a foreground probability map and close small holes and breaks.
    
    The closing is a dilation followed by an erosion with a 3x3 all-ones element; outside the grid the dilation
    sees background and the erosion sees foreground, so a full grid stays full.
    
    Parameters:
      prob_fg (float):    Probabilities ((N x) H x W), tensor or array.
      threshold (float):  Values >= threshold are foreground (optional, defaults to 0.5).
    
    Returns:
      (tensor):  Binary map of the same shape and kind (float32 tensor or uint8 array).
    """
    
    from scipy import ndimage
    
    is_tensor = _torch.is_tensor(prob_fg)
    arr = prob_fg.detach().cpu().numpy() if is_tensor else _np.asarray(prob_fg)
    
    struct = _np.ones((3,3), dtype=bool)
    def close(img):
        dil = ndimage.binary_dilation(img >= threshold, structure=struct, border_value=0)
        return ndimage.binary_erosion(dil, structure=struct, border_value=1)
    
    closed = _np.stack([close(img) for img in arr]) if arr.ndim == 3 else close(arr)
    
    if is_tensor: return _torch.from_numpy(closed.astype(_np.float32)).to(prob_fg.device)
    return closed.astype(_np.uint8)


def apply_mask(f_c, binary):
    """Zero the background of the all-purpose map: f_m = f_c * binary, broadcast over channels.
    
    Parameters:
      f_c (tensor):     Map ((N x) C x H x W).
      binary (tensor):  Mask ((N x) H x W).
    
    Returns:
      (tensor):  Masked map f_m.
    """
    
    return f_c * binary.to(f_c.dtype).unsqueeze(-3)


def appearance_forward(f_m, E_ap):
    """Appearance branch: a per-pixel linear (1x1) projection of f_m to C channels."""
    return E_ap(f_m)


def denoise_forward(f_m, E_de):
    """Denoising branch: channel softmax of the non-linear 1x1 stack E_de applied to f_m."""
    
    f_mb, batched = _batched(f_m)
    f_de = _torch.softmax(E_de(f_mb), dim=1)
    return f_de if batched else f_de[0]


def sobel_response(f_de):
    """Absolute horizontal and vertical Sobel responses per channel, with replicate border padding.
    
    Parameters:
      f_de (tensor):  Map ((N x) C x H x W).
    
    Returns:
      (tensor):  |sobel_x * f_de| + |sobel_y * f_de|, same shape.
    """
    
    fb, batched = _batched(f_de)
    nch = fb.shape[1]
    kern = _torch.tensor((SOBEL_X, SOBEL_Y), dtype=fb.dtype, device=fb.device)[:,None]  # 2 x 1 x 3 x 3
    kern = kern.repeat(nch, 1, 1, 1)                                                 # 2C x 1 x 3 x 3
    
    padded = _F.pad(fb, (1,1,1,1), mode='replicate')
    grads = _F.conv2d(padded, kern, groups=nch)  # Channel c -> outputs 2c (x) and 2c+1 (y)
    resp = grads[:,0::2].abs() + grads[:,1::2].abs()
    
    return resp if batched else resp[0]


def _frame_mean(values, valid):
    """Mean of per-frame values over the frames that have foreground; 0 if there are none."""
    
    if not bool(valid.any()): return values.sum()*0
    return values[valid].mean()


def smoothness_loss(f_de, fg):
    """Mean absolute Sobel gradient of f_de over channels and foreground pixels.
    
    Parameters:
      f_de (tensor):  Softmax map ((N x) C x H x W).
      fg (tensor):    Binary foreground ((N x) H x W).
    
    Returns:
      (tensor):  Scalar >= 0; 0 for an empty foreground.  Batches average over frames with foreground.
    """
    
    fb, _ = _batched(f_de)
    fgb = fg.to(fb.dtype).reshape(fb.shape[0], *fb.shape[2:])
    
    resp = sobel_response(fb)
    count = fgb.sum(dim=(1,2)) * fb.shape[1]
    total = (resp * fgb[:,None]).sum(dim=(1,2,3))
    valid = count > 0
    
    return _frame_mean(total / _torch.where(valid, count, _torch.ones_like(count)), valid)


def channel_frequencies(f_de, fg):
    """Share p_i of each channel in the total foreground activation, per frame (N x C)."""
    
    fb, _ = _batched(f_de)
    fgb = fg.to(fb.dtype).reshape(fb.shape[0], *fb.shape[2:])
    
    sums = (fb * fgb[:,None]).sum(dim=(2,3))
    total = sums.sum(dim=1, keepdim=True)
    return sums / _torch.where(total > 0, total, _torch.ones_like(total)), total[:,0] > 0


def diversity_loss(f_de, fg):
    """Entropy gap of the foreground channel frequencies: log C + sum_i p_i log p_i.
    
    Parameters:
      f_de (tensor):  Softmax map ((N x) C x H x W).
      fg (tensor):    Binary foreground ((N x) H x W).
    
    Returns:
      (tensor):  Scalar in [0, log C]; 0 for an empty foreground.  Batches average over frames with foreground.
    """
    
    prob, valid = channel_frequencies(f_de, fg)
    nch = prob.shape[1]
    per_frame = _torch.xlogy(prob, nch*prob).sum(dim=1)  # = log C + sum p log p, exact at the endpoints
    
    return _frame_mean(per_frame, valid)


def mean_channel_entropy(f_de, fg=None):
    """Mean per-pixel channel entropy (nats) of a softmax map over the foreground; low values mean collapse.
    
    Parameters:
      f_de (tensor):  Softmax map ((N x) C x H x W).
      fg (tensor):    Binary foreground ((N x) H x W) (optional, defaults to None: all pixels).
    
    Returns:
      (float):  Mean entropy.
    """
    
    fb, _ = _batched(f_de.detach().double())
    ent = -_torch.xlogy(fb, fb).sum(dim=1)
    if fg is None: return float(ent.mean())
    
    fgb = fg.to(ent.dtype).reshape(ent.shape)
    if float(fgb.sum()) == 0: return 0.0
    return float((ent*fgb).sum() / fgb.sum())


class GaitRepresentationExtractor(_nn.Module):
    """Three-branch extractor turning (f_c, f4) into the head's input streams.
    
    Branch toggles reproduce the ablation axes: without the mask branch f_m = f_c and the losses cover all
    pixels; without appearance and denoising branches f_m itself is fed on; with mask_direct the binary mask is
    the only stream.
    """
    
    def __init__(self, embed_dim=384, num_taps=4, channels=16, hidden_channels=256, use_mask=True,
                 use_appearance=True, use_denoising=True, mask_direct=False, use_smoothness=True,
                 use_diversity=True, mask_threshold=0.5, bn_eps=1e-5, bn_momentum=0.1):
        super().__init__()
        
        if not 1 <= channels <= 128: raise ValueError('GRE channels must lie in [1, 128], got %i' % channels)
        
        in_ch = embed_dim*num_taps
        self.channels = channels
        self.use_mask = use_mask
        self.use_appearance = use_appearance
        self.use_denoising = use_denoising
        self.mask_direct = mask_direct
        self.use_smoothness = use_smoothness
        self.use_diversity = use_diversity
        self.mask_threshold = mask_threshold
        
        self.mask = MaskBranch(embed_dim) if (use_mask or mask_direct) else None
        self.E_ap = _nn.Conv2d(in_ch, channels, 1) if use_appearance and not mask_direct else None
        self.E_de = _nn.Sequential(_nn.Conv2d(in_ch, hidden_channels, 1),
                                   _nn.BatchNorm2d(hidden_channels, eps=bn_eps, momentum=bn_momentum),
                                   _nn.GELU(),
                                   _nn.Conv2d(hidden_channels, channels, 1)) if use_denoising and not mask_direct else None
        
        if mask_direct:
            self.stream_channels = (1,)
        else:
            self.stream_channels = tuple(ch for ch,on in ((channels, use_appearance), (channels, use_denoising)) if on) or (in_ch,)
        return
    
    
    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.embed_dim, cfg.num_taps, cfg.channels, cfg.hidden_channels, cfg.use_mask,
                   cfg.use_appearance, cfg.use_denoising, cfg.mask_direct, cfg.use_smoothness,
                   cfg.use_diversity, cfg.mask_threshold, cfg.bn_eps, cfg.bn_momentum)
    
    
    def forward(self, f_c, f4):
        """Extract the gait representations of a batch of frames.
        
        Parameters:
          f_c (tensor):  All-purpose maps (N x 4E x H x W).
          f4 (tensor):   Upsampled top-layer maps (N x E x H x W).
        
        Returns:
          (dict):  Keys m, fg_channel, binary, f_m, f_ap, f_de (None when a branch is off), streams (list of
                   head inputs) and the losses L_rec, L_smo, L_div (scalar tensors, 0 when off).
        """
        
        zero = f_c.sum()*0
        out = {'m': None, 'fg_channel': None, 'binary': None, 'f_ap': None, 'f_de': None,
               'L_rec': zero, 'L_smo': zero, 'L_div': zero}
        
        fg = _torch.ones(f_c.shape[0], *f_c.shape[2:], dtype=f_c.dtype, device=f_c.device)
        if self.mask is not None:
            m, _, out['L_rec'] = mask_forward(f4, self.mask)
            with _torch.no_grad():
                fg_ch = select_foreground_channels(m).to(m.device)
                prob_fg = m.gather(1, fg_ch[:,None,None,None].expand(-1,1,*m.shape[2:]))[:,0]
                fg = binarize_close(prob_fg, self.mask_threshold).to(f_c.dtype)
            out.update(m=m, fg_channel=fg_ch, binary=fg)
            
        f_m = apply_mask(f_c, fg) if self.use_mask else f_c
        out['f_m'] = f_m
        
        if self.mask_direct:
            out['streams'] = [fg[:,None]]
            return out
        
        streams = []
        if self.E_ap is not None:
            out['f_ap'] = appearance_forward(f_m, self.E_ap)
            streams.append(out['f_ap'])
        if self.E_de is not None:
            f_de = denoise_forward(f_m, self.E_de)
            out['f_de'] = f_de
            if self.use_smoothness: out['L_smo'] = smoothness_loss(f_de, fg)
            if self.use_diversity:  out['L_div'] = diversity_loss(f_de, fg)
            streams.append(f_de)
            
        out['streams'] = streams or [f_m]
        return out
