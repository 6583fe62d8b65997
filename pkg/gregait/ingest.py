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


"""Dataset manifests, frame loading, Pad-and-Resize preprocessing and the identity-balanced batch sampler.

A manifest is a JSON object::

  {"dataset": "CCPG", "entries": [{"id": "001", "condition": "CL", "view": "090", "seq": "00",
                                    "split": "train", "frames": ["001/CL/090/00/000.png", ...]}, ...]}

Relative frame paths are resolved against the directory of the manifest file.
"""


from concurrent.futures import ThreadPoolExecutor as _ThreadPoolExecutor
from dataclasses import dataclass as _dataclass, field as _field
import json as _json
from pathlib import Path as _Path

import numpy as _np
import torch as _torch
import torch.nn.functional as _F

from gregait import cli as _gcli


SPLITS = ('train', 'gallery', 'probe')
_REQUIRED = ('id', 'condition', 'view', 'seq', 'split', 'frames')


@_dataclass(frozen=True)
class SequenceRecord:
    subject_id:  str;    """Identity label"""
    condition:   str;    """Walking condition, e.g. CL/UP/DN/BG/NM"""
    view:        str;    """View label"""
    seq:         str;    """Sequence index within (subject, condition, view)"""
    split:       str;    """train, gallery or probe"""
    frame_paths: tuple;  """Ordered frame image paths"""
    
    @property
    def key(self):
        """Unique sequence key (subject, condition, view, seq)."""
        return (self.subject_id, self.condition, self.view, self.seq)
    
    @property
    def name(self):
        """Sequence key as a single string, usable as a file name."""
        return '-'.join(self.key)


@_dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str;                    """Dataset (domain) name"""
    entries:      tuple;                  """All SequenceRecords"""
    missing:      tuple = ();             """Keys of sequences with missing frames (lazy mode only)"""
    
    def split(self, name):
        """Return the records of one split."""
        return tuple(rec for rec in self.entries if rec.split == name)
    
    def subjects(self, split='train'):
        """Return the sorted subject ids of one split."""
        return sorted({rec.subject_id for rec in self.entries if rec.split == split})


@_dataclass(frozen=True)
class BatchSpec:
    p: int = 8;  """Number of identities"""
    k: int = 8;  """Sequences per identity"""
    l: int = 8;  """Frames per sequence"""
    
    def __post_init__(self):
        if self.p < 2 or self.k < 2:
            raise ValueError('BatchSpec needs p >= 2 and k >= 2 for triplets, got p=%i, k=%i' % (self.p, self.k))
        if self.l < 1: raise ValueError('BatchSpec needs l >= 1, got %i' % self.l)
    
    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.batch_p, cfg.batch_k, cfg.batch_l)


@_dataclass
class SequenceSample:
    record:  SequenceRecord;     """The sequence the frames come from"""
    indices: tuple;              """Frame indices used"""
    frames:  object = _field(default=None, repr=False);  """Array (l x H x W x 3) in [0,1], or None if not loaded"""


def load_manifest(path, lazy=False, verbosity=0):
    """Read and validate a dataset manifest.
    
    Parameters:
      path (str):       Path to the JSON manifest.
      lazy (bool):      Allow sequences whose frame files are missing; they are listed in manifest.missing
                        (optional, defaults to False).
      verbosity (int):  Verbosity (0-2).
    
    Returns:
      (DatasetManifest):  The validated manifest.
    """
    
    path = _Path(path)
    if not path.is_file(): raise FileNotFoundError('manifest not found: '+str(path))
    
    try:
        doc = _json.loads(path.read_text())
    except _json.JSONDecodeError as err:
        raise ValueError('%s: parse error at line %i, column %i: %s' % (path, err.lineno, err.colno, err.msg))
    
    if not isinstance(doc, dict) or 'entries' not in doc or 'dataset' not in doc:
        raise ValueError(str(path)+': manifest must be an object with fields "dataset" and "entries"')
    if not isinstance(doc['entries'], list): raise ValueError(str(path)+': field "entries" must be a list')
    
    base = path.parent
    records = []
    seen = {}
    missing = []
    for ient,ent in enumerate(doc['entries']):
        where = '%s: entries[%i]' % (path, ient)
        if not isinstance(ent, dict): raise ValueError(where+': entry must be an object')
        for fld in _REQUIRED:
            if fld not in ent: raise ValueError(where+': missing field "'+fld+'"')
        if ent['split'] not in SPLITS:
            raise ValueError(where+': field "split": %r is not one of %s' % (ent['split'], ', '.join(SPLITS)))
        if not isinstance(ent['frames'], list) or len(ent['frames']) < 1:
            raise ValueError(where+': field "frames" must be a non-empty list')
        
        frames = tuple(str(base / fr) for fr in ent['frames'])
        rec = SequenceRecord(str(ent['id']), str(ent['condition']), str(ent['view']), str(ent['seq']),
                             ent['split'], frames)
        
        if rec.key in seen:
            raise ValueError(where+': duplicate sequence key %s (first seen in entries[%i])' % (rec.key, seen[rec.key]))
        seen[rec.key] = ient
        
        if not all(_Path(fr).is_file() for fr in frames):
            if not lazy: raise FileNotFoundError(where+': missing frame file(s) for sequence '+rec.name)
            missing.append(rec.key)
        records.append(rec)
        
    if missing: _gcli.warn('%s: %i sequence(s) with missing frames (lazy mode)' % (path, len(missing)))
    manifest = DatasetManifest(str(doc['dataset']), tuple(records), tuple(missing))
    _gcli.note('Read manifest %s: %i sequences' % (path, len(records)), verbosity)
    
    return manifest


def write_manifest(manifest, path):
    """Write a manifest to a JSON file, with frame paths relative to the file's directory where possible.
    
    Parameters:
      manifest (DatasetManifest):  Manifest to write.
      path (str):                  Output file.
    """
    
    path = _Path(path)
    base = path.parent.resolve()
    
    def rel(fr):
        try:
            return str(_Path(fr).resolve().relative_to(base))
        except ValueError:
            return str(fr)
    
    entries = [{'id': rec.subject_id, 'condition': rec.condition, 'view': rec.view, 'seq': rec.seq,
                'split': rec.split, 'frames': [rel(fr) for fr in rec.frame_paths]} for rec in manifest.entries]
    path.write_text(_json.dumps({'dataset': manifest.dataset_name, 'entries': entries}, indent=1)+'\n')
    
    return


def manifest_counts(manifest):
    """Return the number of identities and sequences per split.
    
    Parameters:
      manifest (DatasetManifest):  The manifest.
    
    Returns:
      (pd.df):  Pandas DataFrame indexed by split, with columns n_id and n_seq.
    """
    
    import pandas as pd
    
    rows = []
    for split in SPLITS:
        recs = manifest.split(split)
        rows.append({'split': split, 'n_id': len({rec.subject_id for rec in recs}), 'n_seq': len(recs)})
        
    return pd.DataFrame(rows).set_index('split')


def load_image(path):
    """Decode an image file to an RGB array with values in [0,1].
    
    Parameters:
      path (str):  Image file.
    
    Returns:
      (float):  Array (H x W x 3), float32.
    """
    
    from PIL import Image
    
    with Image.open(path) as img:
        arr = _np.asarray(img.convert('RGB'), dtype=_np.float32) / 255
        
    if arr.size == 0: raise ValueError('empty image: '+str(path))
    return arr


def load_frames(record, indices=None, workers=1):
    """Decode (a subset of) the frames of a sequence.
    
    Parameters:
      record (SequenceRecord):  The sequence.
      indices (int):            Frame indices to load (optional, defaults to None: all frames).
      workers (int):            Number of decoding threads (optional, defaults to 1).
    
    Returns:
      (list):  List of float32 arrays (H x W x 3) in [0,1], in the order of indices.
    """
    
    if indices is None: indices = range(len(record.frame_paths))
    paths = [record.frame_paths[idx] for idx in indices]
    
    if workers > 1:
        with _ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(load_image, paths))
    return [load_image(pth) for pth in paths]


def _as_float_image(image):
    """Return an H x W x 3 float array, scaling 8-bit input to [0,1]."""
    
    image = _np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3: raise ValueError('expected an H x W x 3 image, got shape %s' % (image.shape,))
    if image.shape[0] < 1 or image.shape[1] < 1: raise ValueError('zero-area image of shape %s' % (image.shape,))
    if image.dtype == _np.uint8: return image.astype(_np.float32) / 255
    if image.dtype == _np.float64: return image
    return image.astype(_np.float32)


def _bilinear_resize(image, target_h, target_w):
    """Bilinear resize with half-pixel sample centres and edge clamping (align_corners=False)."""
    
    if image.shape[:2] == (target_h, target_w): return image.copy()
    
    tens = _torch.from_numpy(_np.ascontiguousarray(image)).permute(2,0,1)[None]
    out = _F.interpolate(tens, size=(target_h, target_w), mode='bilinear', align_corners=False)
    
    return out[0].permute(1,2,0).contiguous().numpy()


def pad_to_ratio(image, target_h=448, target_w=224):
    """Zero-pad an image symmetrically on its short axis to the aspect ratio target_h:target_w.
    
    The padding is split equally over both sides; an odd remainder goes to the bottom/right.
    
    Parameters:
      image (float):   Array (H x W x 3).
      target_h (int):  Target height defining the ratio (optional, defaults to 448).
      target_w (int):  Target width defining the ratio (optional, defaults to 224).
    
    Returns:
      (tuple):  Tuple (padded, pads):
    
      - padded (float):  Padded image.
      - pads (tuple):    Padding (top, bottom, left, right) in pixels.
    """
    
    image = _as_float_image(image)
    hh, ww = image.shape[:2]
    
    pad_h = pad_w = 0
    if hh*target_w > ww*target_h:    # Too tall: widen
        pad_w = -(-hh*target_w // target_h) - ww
    elif hh*target_w < ww*target_h:  # Too wide: heighten
        pad_h = -(-ww*target_h // target_w) - hh
    
    top, left = pad_h//2, pad_w//2
    pads = (top, pad_h-top, left, pad_w-left)
    padded = _np.pad(image, ((pads[0], pads[1]), (pads[2], pads[3]), (0, 0)), mode='constant', constant_values=0)
    
    return padded, pads


def pad_and_resize(image, target_h=448, target_w=224):
    """Pad an image to the target aspect ratio and resize it bilinearly, keeping the body proportions.
    
    Parameters:
      image (float):   Array (H x W x 3), float in [0,1] or uint8.
      target_h (int):  Output height (optional, defaults to 448).
      target_w (int):  Output width (optional, defaults to 224).
    
    Returns:
      (float):  Array (target_h x target_w x 3).
    """
    
    padded, _ = pad_to_ratio(image, target_h, target_w)
    return _bilinear_resize(padded, target_h, target_w)


def resize_only(image, target_h=448, target_w=224):
    """Resize an image bilinearly to the target size without padding (stretches the body).
    
    Parameters:
      image (float):   Array (H x W x 3), float in [0,1] or uint8.
      target_h (int):  Output height (optional, defaults to 448).
      target_w (int):  Output width (optional, defaults to 224).
    
    Returns:
      (float):  Array (target_h x target_w x 3).
    """
    
    return _bilinear_resize(_as_float_image(image), target_h, target_w)


def preprocess(frames, cfg):
    """Bring a list of frames to the backbone resolution following the Pad-and-Resize setting.
    
    Parameters:
      frames (list):  List of H x W x 3 arrays.
      cfg (Config):   Settings (target_h, target_w, pad_and_resize).
    
    Returns:
      (float):  Array (N x target_h x target_w x 3), float32.
    """
    
    resize = pad_and_resize if cfg.pad_and_resize else resize_only
    return _np.stack([resize(fr, cfg.target_h, cfg.target_w) for fr in frames]).astype(_np.float32)


def frame_indices(num_frames, count, rng):
    """Choose count ordered, uniformly spaced frame indices from a sequence with a random phase.
    
    Parameters:
      num_frames (int):  Number of frames in the sequence.
      count (int):       Number of indices wanted.
      rng (Generator):   NumPy random generator.
    
    Returns:
      (tuple):  Non-decreasing frame indices.
    """
    
    if num_frames >= count:
        stride = num_frames / count
        offset = rng.uniform(0, stride)
        idx = _np.floor(offset + stride*_np.arange(count)).astype(int)
        return tuple(int(ii) for ii in _np.minimum(idx, num_frames-1))
    
    return tuple(int(ii) for ii in (_np.arange(count)*num_frames) // count)  # Repeat frames evenly


def sample_batch(manifest, spec, rng_seed, load=True, workers=1):
    """Draw a (p,k,l) identity-balanced batch from the training split.
    
    Parameters:
      manifest (DatasetManifest):  The dataset.
      spec (BatchSpec):            Batch geometry.
      rng_seed (int):              Seed; equal seeds give identical batches.
      load (bool):                 Decode the frames (optional, defaults to True; False only selects indices).
      workers (int):               Number of decoding threads (optional, defaults to 1).
    
    Returns:
      (list):  List of p*k SequenceSamples, grouped by identity.
    """
    
    ids = manifest.subjects('train')
    if len(ids) < spec.p:
        raise ValueError('train split of %s has %i identities, fewer than p=%i' % (manifest.dataset_name, len(ids), spec.p))
    
    by_id = {sid: [] for sid in ids}
    for rec in manifest.split('train'): by_id[rec.subject_id].append(rec)
    
    rng = _np.random.default_rng(rng_seed)
    chosen = rng.choice(len(ids), size=spec.p, replace=False)
    
    samples = []
    for iid in chosen:
        recs = sorted(by_id[ids[iid]], key=lambda rec: rec.key)
        pick = rng.choice(len(recs), size=spec.k, replace=len(recs) < spec.k)
        for irec in pick:
            rec = recs[irec]
            idx = frame_indices(len(rec.frame_paths), spec.l, rng)
            frames = _np.stack(load_frames(rec, idx, workers)) if load else None
            samples.append(SequenceSample(rec, idx, frames))
            
    return samples
