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


"""Visualisation: PCA-RGB renderings of feature maps and Grad-CAM activation maps of the head's first layer."""


from dataclasses import dataclass as _dataclass

import numpy as _np
import torch as _torch
import torch.nn.functional as _F

from gregait import backbone as _gbb


CAM_LAYERS = ('head-B1-ap', 'head-B1-de', 'head-fused')
PCA_TAGS = ('fc', 'fm', 'fap', 'fde')


@_dataclass
class PCABasis:
    """Top-3 principal directions of pixel-wise features."""
    
    mean: _np.ndarray;           """Mean feature vector (C)"""
    directions: _np.ndarray;     """Orthonormal principal directions (3 x C), by decreasing variance"""
    explained: _np.ndarray;      """Explained-variance fraction per direction (3)"""
    zero_variance: _np.ndarray;  """True for directions that carry no variance (rank-deficient data)"""
    
    @property
    def channels(self):
        return len(self.mean)


def _pixels(maps):
    """Stack the pixel feature vectors (M x C) of C x H x W or N x C x H x W maps, tensors, arrays or FeatureMaps."""
    
    if isinstance(maps, (_np.ndarray, _torch.Tensor, _gbb.FeatureMap)): maps = [maps]
    
    rows = []
    for mp in maps:
        arr = mp.data if isinstance(mp, _gbb.FeatureMap) else mp
        arr = arr.detach().cpu().numpy() if _torch.is_tensor(arr) else _np.asarray(arr)
        arr = arr.astype(_np.float64)
        if arr.ndim == 3: arr = arr[None]
        rows.append(arr.transpose(0,2,3,1).reshape(-1, arr.shape[1]))
        
    if len({row.shape[1] for row in rows}) > 1: raise ValueError('fit_pca: feature maps differ in channel count')
    return _np.concatenate(rows)


def fit_pca(maps, max_pixels=2000000, seed=0):
    """Fit the top-3 PCA basis of the pixel-wise features of a collection of maps.
    
    Each direction's sign is chosen such that its largest-magnitude coordinate is positive.  With fewer than
    three directions of nonzero variance the missing ones are flagged as zero-variance.
    
    Parameters:
      maps (list):         Feature maps sharing one channel count (C x H x W or N x C x H x W each).
      max_pixels (int):    Maximum number of pixels used; more are subsampled uniformly (optional, defaults to 2e6).
      seed (int):          Seed of the subsampling (optional, defaults to 0).
    
    Returns:
      (PCABasis):  The basis.
    """
    
    from scipy import linalg
    
    pix = _pixels(maps)
    if len(pix) < 3: raise ValueError('fit_pca needs at least 3 pixels, got %i' % len(pix))
    if len(pix) > max_pixels:
        pix = pix[_np.sort(_np.random.default_rng(seed).choice(len(pix), size=int(max_pixels), replace=False))]
        
    mean = pix.mean(axis=0)
    cen = pix - mean
    cov = cen.T @ cen / (len(pix) - 1)
    evals, evecs = linalg.eigh(cov)
    evals, evecs = evals[::-1].clip(min=0), evecs[:, ::-1]  # Decreasing variance
    
    nch = pix.shape[1]
    ndir = min(3, nch)
    dirs = _np.zeros((3, nch))
    dirs[:ndir] = evecs[:, :ndir].T
    var = _np.zeros(3)
    var[:ndir] = evals[:ndir]
    
    for vec in dirs[:ndir]:
        if vec[_np.argmax(_np.abs(vec))] < 0: vec *= -1
        
    total = evals.sum()
    tol = 1e-12 * max(total, 1e-300)
    explained = var/total if total > 0 else _np.zeros(3)
    zero_var = var <= tol
    
    return PCABasis(mean, dirs, explained, zero_var)


def render_pca_rgb(fmap, basis):
    """Render a feature map as an 8-bit RGB image through its projection on a PCA basis.
    
    Each colour channel is min-max normalised over the image to [0, 255]; a constant channel maps to 128.
    
    Parameters:
      fmap (tensor):      Feature map (C x H x W), tensor, array or FeatureMap.
      basis (PCABasis):   PCA basis with C channels.
    
    Returns:
      (uint8):  Array (H x W x 3).
    """
    
    arr = fmap.data if isinstance(fmap, _gbb.FeatureMap) else fmap
    arr = arr.detach().cpu().numpy() if _torch.is_tensor(arr) else _np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] != basis.channels:
        raise ValueError('render_pca_rgb: map of shape %s does not match a basis with %i channels' % (arr.shape, basis.channels))
    
    proj = _np.einsum('chw,kc->hwk', arr.astype(_np.float64) - basis.mean[:,None,None], basis.directions)
    
    rgb = _np.full(proj.shape, 128, dtype=_np.uint8)
    for ich in range(3):
        chan = proj[:,:,ich]
        lo, hi = chan.min(), chan.max()
        if basis.zero_variance[ich] or not hi - lo > 1e-12*max(abs(lo), abs(hi), 1.0): continue
        rgb[:,:,ich] = _np.round(255*(chan - lo)/(hi - lo)).astype(_np.uint8)
        
    return rgb


def representation_maps(model, taps):
    """The feature maps rendered by the PCA visualisation, per tag: fc, fm, fap and fde (absent when off).
    
    Parameters:
      model (GaitModel):  Trained model.
      taps (tensor):    Tapped maps of a set of frames (M x 4 x E x rows x cols).
    
    Returns:
      (dict):  Tag -> tensor (M x C x H x W).
    """
    
    maps = list(taps.unbind(dim=1))
    f_c = _gbb.upsample_concat(maps)
    model.eval()
    with _torch.no_grad():
        rep = model.gre(f_c, _gbb.upsample2x(maps[-1]))
    out = {'fc': f_c, 'fm': rep['f_m'], 'fap': rep['f_ap'], 'fde': rep['f_de']}
    return {tag: val for tag,val in out.items() if val is not None}


@_dataclass
class ActivationMap:
    """Grad-CAM saliency of a sequence: one map per frame at frame resolution, values in [0, 1]."""
    
    data: _np.ndarray;  """Saliency (l x H x W)"""
    layer: str;         """Source layer tag"""
    
    def __post_init__(self):
        if self.data.size and not (self.data.min() >= 0 and self.data.max() <= 1):
            raise ValueError('activation map values must lie in [0, 1]')
        return


def _cam_module(model, layer):
    if layer not in CAM_LAYERS: raise ValueError('unknown Grad-CAM layer %r; choose from %s' % (layer, ', '.join(CAM_LAYERS)))
    
    head = model.head
    module = {'head-B1-ap': getattr(head, 'B1_ap', None), 'head-B1-de': getattr(head, 'B1_de', None),
              'head-fused': getattr(head, 'fuse', None)}[layer]
    if module is None: raise ValueError('the head of this model has no layer %s' % layer)
    return module


def raw_cam(activation, gradient):
    """Rectified gradient-weighted sum of activation channels: (l x C x h x w) pair -> l x h x w, >= 0."""
    
    weights = gradient.mean(dim=(2,3), keepdim=True)
    return _torch.relu((weights*activation).sum(dim=1))


def normalise_maps(cams):
    """Min-max normalise each frame's map to [0, 1]; an all-zero map stays zero, a constant positive one becomes one."""
    
    out = _np.zeros_like(cams, dtype=_np.float32)
    for ifr,cam in enumerate(cams):
        lo, hi = cam.min(), cam.max()
        if hi > lo:
            out[ifr] = (cam - lo)/(hi - lo)
        elif hi > 0:
            out[ifr] = 1
    return out


def grad_cam(model, taps, layer='head-B1-ap', frame_hw=(448, 224)):
    """Grad-CAM map of one sequence for the squared norm of its embedding.
    
    Parameters:
      model (GaitModel):   Trained model.
      taps (tensor):     Tapped maps of the sequence (l x 4 x E x rows x cols), l >= 1.
      layer (str):       'head-B1-ap', 'head-B1-de' or 'head-fused' (optional, defaults to 'head-B1-ap').
      frame_hw (tuple):  Output resolution (optional, defaults to (448, 224)).
    
    Returns:
      (ActivationMap):  The normalised per-frame maps.
    """
    
    module = _cam_module(model, layer)
    if len(taps) < 1: raise ValueError('grad_cam needs a sequence with at least one frame')
    
    store = {}
    def hook(mod, inp, out):
        store['act'] = out
        return
    
    handle = module.register_forward_hook(hook)
    try:
        model.eval()
        with _torch.enable_grad():
            out = model(taps[None])
            objective = (out['parts']**2).sum()
            act = store['act']
            grad = None
            if objective.requires_grad and act.requires_grad:
                grad = _torch.autograd.grad(objective, act, allow_unused=True)[0]
    finally:
        handle.remove()
        
    if grad is None: grad = _torch.zeros_like(act)
    cams = raw_cam(act.detach(), grad.detach())
    cams = _F.interpolate(cams[:,None], size=tuple(frame_hw), mode='bilinear', align_corners=False)[:,0].clamp(min=0)
    
    return ActivationMap(normalise_maps(cams.numpy()), layer)


def cam_overlay(frame, cam, alpha=0.5):
    """Blend a saliency map (H x W in [0,1]) over a frame (H x W x 3 in [0,1]) with the jet colour map; uint8 out."""
    
    import matplotlib as _mpl
    heat = _mpl.colormaps['jet'](cam)[..., :3]
    return _np.round(255*((1-alpha)*_np.asarray(frame) + alpha*heat)).clip(0, 255).astype(_np.uint8)


def save_png(image, path):
    """Write an 8-bit H x W x 3 (or H x W) image as PNG."""
    
    from PIL import Image
    Image.fromarray(_np.ascontiguousarray(image)).save(path)
    return
