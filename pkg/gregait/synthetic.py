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


"""Synthetic walking-figure benchmark: identity lives in body proportions, clothing in colour.

Every subject has its own body proportions.  A sequence shows the figure walking in place with swinging legs
and arms, seen from one of several views (horizontal foreshortening and shift), wearing the colours of its
condition: NM is the subject's normal outfit, CL a different outfit.  A global brightness offset simulates a
domain shift.  Frames are written as PNG files with a JSON manifest.
"""


from pathlib import Path as _Path

import numpy as _np
from PIL import Image as _Image
from PIL import ImageDraw as _ImageDraw

from gregait import cli as _gcli
from gregait import ingest as _gin


VIEWS = {'000': (1.00, 0.00), '090': (0.60, 0.08), '180': (0.85, -0.06), '270': (0.75, 0.04)};  """Horizontal scale and shift per view"""


def subject_proportions(subject, seed=0):
    """Body proportions of a subject, as fractions of the frame size.
    
    Parameters:
      subject (int):  Subject number.
      seed (int):     Dataset seed (optional, defaults to 0).
    
    Returns:
      (dict):  height, head, shoulder, hip, torso, stride and arm.
    """
    
    rng = _np.random.default_rng([seed, subject, 1])
    return {'height': rng.uniform(0.62, 0.92), 'head': rng.uniform(0.055, 0.09), 'shoulder': rng.uniform(0.16, 0.34),
            'hip': rng.uniform(0.12, 0.26), 'torso': rng.uniform(0.30, 0.42), 'stride': rng.uniform(0.15, 0.35),
            'arm': rng.uniform(0.25, 0.40)}


def outfit(subject, condition, seed=0):
    """Shirt and trouser colours (RGB 0-255) of a subject in a condition."""
    
    rng = _np.random.default_rng([seed, subject, 2, sum(map(ord, condition))])
    shirt = rng.integers(70, 256, size=3)
    trousers = rng.integers(70, 256, size=3)
    return tuple(int(val) for val in shirt), tuple(int(val) for val in trousers)


def draw_figure(height, width, body, colors, phase, view=(1.0, 0.0), brightness=0.0):
    """Render one frame of a walking figure on a black background.
    
    Parameters:
      height (int):       Frame height in pixels.
      width (int):        Frame width in pixels.
      body (dict):        Body proportions (see subject_proportions()).
      colors (tuple):     (shirt, trousers) RGB colours.
      phase (float):      Gait phase in radians.
      view (tuple):       (horizontal scale, horizontal shift as fraction of the width) (optional).
      brightness (float): Offset added to all pixels, in units of full scale (optional, defaults to 0).
    
    Returns:
      (uint8):  Array (height x width x 3).
    """
    
    img = _Image.new('RGB', (width, height))
    drw = _ImageDraw.Draw(img)
    scale, shift = view
    cx = width*(0.5 + shift)
    
    def xy(xrel, yrel):
        """Figure coordinates (x relative to the body centre in frame heights, y from the top) -> pixels."""
        return (cx + xrel*height*scale, yrel*height)
    
    top = (1 - body['height'])/2 + 0.02
    hh = body['height']
    head_r = body['head']*hh
    neck = top + 2*head_r
    hip = neck + body['torso']*hh
    foot = top + hh
    half_sh = body['shoulder']*hh/2 * 0.5
    half_hip = body['hip']*hh/2 * 0.5
    leg_w = max(int(0.06*height*scale), 2)
    arm_w = max(int(0.035*height*scale), 1)
    shirt, trousers = colors
    
    # Legs swing in anti-phase:
    swing = body['stride']*(foot - hip)
    for sign in (1, -1):
        knee = xy(sign*half_hip*0.6 + 0.5*swing*_np.sin(phase)*sign, (hip+foot)/2)
        ankle = xy(sign*half_hip*0.6 + swing*_np.sin(phase)*sign, foot)
        drw.line([xy(sign*half_hip*0.6, hip), knee, ankle], fill=trousers, width=leg_w, joint='curve')
        
    # Torso and head:
    drw.polygon([xy(-half_sh, neck), xy(half_sh, neck), xy(half_hip, hip), xy(-half_hip, hip)], fill=shirt)
    hx, hy = xy(0, top + head_r)
    rpx = head_r*height
    drw.ellipse([hx - rpx*scale, hy - rpx, hx + rpx*scale, hy + rpx], fill=(225, 190, 160))
    
    # Arms swing opposite to the legs:
    arm_len = body['arm']*hh
    for sign in (1, -1):
        hand = xy(sign*half_sh - 0.4*arm_len*_np.sin(phase)*sign, neck + arm_len)
        drw.line([xy(sign*half_sh, neck + 0.01), hand], fill=shirt, width=arm_w)
        
    arr = _np.asarray(img, dtype=_np.float64)
    if brightness: arr = _np.clip(arr + 255*brightness, 0, 255)
    
    return arr.round().astype(_np.uint8)


def make_synthetic_dataset(out_dir, n_subjects=20, n_frames=8, frame_hw=(128, 64), views=None, conditions=('NM', 'CL'),
                           brightness=0.0, seed=0, name='synthetic', verbosity=1):
    """Write the synthetic benchmark: PNG frames and a manifest.
    
    Splits: train holds sequence 00 of the NM condition in all views but the last; the gallery holds sequence 01
    of NM in the same views; the probe holds sequence 01 of every condition in the last (held-out) view.
    
    Parameters:
      out_dir (str):        Output directory; the manifest is out_dir/manifest.json.
      n_subjects (int):     Number of identities (optional, defaults to 20).
      n_frames (int):       Frames per sequence (optional, defaults to 8).
      frame_hw (tuple):     Frame height and width (optional, defaults to (128, 64)).
      views (dict):         View name -> (scale, shift) (optional, defaults to VIEWS).
      conditions (tuple):   Conditions; the first is the normal one (optional, defaults to ('NM', 'CL')).
      brightness (float):   Global brightness offset (optional, defaults to 0).
      seed (int):           Seed of the body proportions and outfits (optional, defaults to 0).
      name (str):           Dataset name (optional, defaults to 'synthetic').
      verbosity (int):      Output verbosity (0-2; optional, defaults to 1).
    
    Returns:
      (Path):  The manifest file.
    """
    
    if views is None: views = VIEWS
    out_dir = _Path(out_dir)
    view_names = list(views)
    held_out = view_names[-1]
    height, width = frame_hw
    
    records = []
    for subj in range(n_subjects):
        sid = '%03i' % subj
        body = subject_proportions(subj, seed)
        for cond in conditions:
            colors = outfit(subj, cond, seed)
            for view in view_names:
                for seq in ('00', '01'):
                    if view == held_out:
                        split = 'probe' if seq == '01' else None
                    elif cond == conditions[0]:
                        split = 'train' if seq == '00' else 'gallery'
                    else:
                        split = None
                    if split is None: continue
                    
                    seq_dir = out_dir / sid / cond / view / seq
                    seq_dir.mkdir(parents=True, exist_ok=True)
                    phase0 = _np.random.default_rng([seed, subj, 3, int(seq)]).uniform(0, 2*_np.pi)
                    frames = []
                    for ifr in range(n_frames):
                        img = draw_figure(height, width, body, colors, phase0 + 2*_np.pi*ifr/n_frames, views[view], brightness)
                        path = seq_dir / ('%03i.png' % ifr)
                        _Image.fromarray(img).save(path)
                        frames.append(str(path))
                    records.append(_gin.SequenceRecord(sid, cond, view, seq, split, tuple(frames)))
                    
    manifest = _gin.DatasetManifest(name, tuple(records))
    path = out_dir / 'manifest.json'
    _gin.write_manifest(manifest, path)
    _gcli.note('Wrote %i sequences of %i subjects to %s' % (len(records), n_subjects, out_dir), verbosity)
    
    return path
