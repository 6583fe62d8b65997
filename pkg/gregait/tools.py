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


"""Command-line interface: gregait {train, eval, cross-eval, extract, viz-pca, viz-cam, ablate, synth}."""


import argparse as _argparse
from pathlib import Path as _Path

import numpy as _np
import pandas as _pd
import torch as _torch

from gregait import __version__
from gregait import backbone as _gbb
from gregait import cli as _gcli
from gregait import config as _gcfg
from gregait import env as _genv
from gregait import evaluate as _gev
from gregait import gre as _ggre
from gregait import head as _ghead
from gregait import ingest as _gin
from gregait import model as _gmod
from gregait import plot as _gplt
from gregait import tables as _gtab
from gregait import train as _gtrain
from gregait import viz as _gviz


ABLATIONS = {
    'denoising': {'full':       {},
                  'no-smooth':  {'use_smoothness': False},
                  'no-div':     {'use_diversity': False},
                  'neither':    {'use_smoothness': False, 'use_diversity': False}},
    'branch':    {'full':          {},
                  'no-pad-resize': {'pad_and_resize': False},
                  'no-gre':        {'use_mask': False, 'use_appearance': False, 'use_denoising': False},
                  'no-mask':       {'use_mask': False},
                  'no-denoising':  {'use_denoising': False},
                  'no-appearance': {'use_appearance': False},
                  'mask-direct':   {'mask_direct': True}},
    'channels':  {'C=8':  {'channels': 8},
                  'C=16': {'channels': 16},
                  'C=32': {'channels': 32}},
};  """Ablation axes: row name -> settings that differ from the base configuration"""


def make_cache(provider, args, dataset, pad_and_resize=True, verbosity=0, max_memory=64):
    """Feature cache rooted at --cache-dir, or the environment's cache directory; memory only with --no-cache."""
    
    if getattr(args, 'no_cache', False): return _gbb.FeatureCache(provider, None, dataset, pad_and_resize, verbosity)
    root = args.cache_dir or _genv.environment().cache_dir
    return _gbb.FeatureCache(provider, root, dataset, pad_and_resize, verbosity, max_memory)


def short_run_config(cfg, iterations):
    """Copy of the settings for a run of a given length; milestones beyond the run are dropped."""
    
    return cfg.updated(total_iters=iterations, milestones=tuple(ms for ms in cfg.milestones if ms < iterations),
                       checkpoint_interval=iterations)


def foreground_entropy(model, manifest, provider, cfg, cache=None, max_sequences=8):
    """Mean per-pixel channel entropy of f_de over the foreground of some training sequences (None without f_de)."""
    
    if model.gre.E_de is None: return None
    
    ents = []
    model.eval()
    for rec in manifest.split('train')[:max_sequences]:
        taps = _gmod.sequence_taps(rec, provider, cfg, cache)
        with _torch.no_grad():
            rep = model.representations(taps)
        fg = rep['binary']
        ents.append(_ggre.mean_channel_entropy(rep['f_de'], fg))
    return float(_np.mean(ents))


def run_ablation(cfg, manifest, protocol, axis, out_dir, iterations, provider=None, args=None, verbosity=1):
    """Train and evaluate one model per row of an ablation axis and tabulate rank-1 per condition group.
    
    Parameters:
      cfg (Config):                Base settings.
      manifest (DatasetManifest):  Dataset with train, gallery and probe splits.
      protocol (ProtocolConfig):   Evaluation protocol.
      axis (str):                  'denoising', 'branch' or 'channels'.
      out_dir (str):               Output directory (one subdirectory per row, plus ablation_<axis>.txt/.json).
      iterations (int):            Training iterations per row.
      provider (nn.Module):        Frozen feature provider (optional, defaults to None: build from cfg).
      args (Namespace):            Command-line arguments with the cache options (optional).
      verbosity (int):             Output verbosity (0-3; optional, defaults to 1).
    
    Returns:
      (pd.DataFrame):  One row per setting; columns per condition group, mean and the f_de entropy (nats).
    """
    
    if axis not in ABLATIONS: raise ValueError('unknown ablation axis %r; choose from %s' % (axis, ', '.join(ABLATIONS)))
    out_dir = _Path(out_dir)
    if provider is None: provider = _gbb.build_provider(cfg)
    
    caches = {}
    rows = {}
    for row,overrides in ABLATIONS[axis].items():
        rcfg = short_run_config(cfg.updated(**overrides), iterations)
        if rcfg.pad_and_resize not in caches:
            if args is None:
                caches[rcfg.pad_and_resize] = _gbb.FeatureCache(provider, None, manifest.dataset_name, rcfg.pad_and_resize)
            else:
                caches[rcfg.pad_and_resize] = make_cache(provider, args, manifest.dataset_name, rcfg.pad_and_resize,
                                                         max_memory=rcfg.cache_max_sequences)
        cache = caches[rcfg.pad_and_resize]
        
        _gcli.note('Ablation %s: %s' % (axis, row), verbosity)
        model, _ = _gtrain.train(rcfg, manifest, out_dir / row, provider, cache, verbosity=verbosity-1)
        report = _gev.run_eval(out_dir / row / 'checkpoint.bin', manifest, protocol, provider, cache, model, rcfg,
                               manifest.dataset_name, verbosity-1)
        
        rows[row] = {**report.rank1, 'mean': report.mean,
                     'entropy': foreground_entropy(model, manifest, provider, rcfg, cache)}
        
    df = _pd.DataFrame.from_dict(rows, orient='index', dtype=float)
    df.index.name = axis
    _gtab.write_table(df, out_dir / ('ablation_%s.txt' % axis), title='Rank-1 (%%) and f_de entropy, axis %s' % axis)
    _gcli.note(_gtab.formatted_table(df), verbosity)
    
    return df


def _load_cfg(args, **extra):
    overrides = {}
    if getattr(args, 'seed', None) is not None: overrides['seed'] = args.seed
    overrides.update(extra)
    return _gcfg.load_config(args.config, **overrides)


def cmd_train(args):
    cfg = _load_cfg(args)
    manifest = _gin.load_manifest(args.manifest, verbosity=args.verbosity)
    provider = _gbb.build_provider(cfg)
    cache = make_cache(provider, args, manifest.dataset_name, cfg.pad_and_resize, args.verbosity,
                       cfg.cache_max_sequences)
    _gtrain.train(cfg, manifest, args.out, provider, cache, resume=args.resume, iterations=args.iterations,
                  verbosity=args.verbosity)
    return 0


def cmd_eval(args):
    manifest = _gin.load_manifest(args.manifest, lazy=True, verbosity=args.verbosity)
    protocol = _gev.load_protocol(args.protocol)
    model, cfg, ckpt = _gev.load_model(args.checkpoint)
    provider = _gbb.build_provider(cfg)
    cache = make_cache(provider, args, manifest.dataset_name, cfg.pad_and_resize, args.verbosity,
                       cfg.cache_max_sequences)
    
    runner = _gev.cross_domain_run if args.command == 'cross-eval' else _gev.run_eval
    report = runner(args.checkpoint, manifest, protocol, provider, cache, model, cfg, ckpt.meta.get('dataset'),
                    args.verbosity)
    report.write(args.out)
    if report.cmc: _gplt.plot_cmc(list(report.cmc.values()), str(args.out)+'_cmc.png', labels=list(report.cmc))
    if args.verbosity > 0: print(_gtab.formatted_table(report.table()))
    return 0


def cmd_extract(args):
    manifest = _gin.load_manifest(args.manifest, lazy=True, verbosity=args.verbosity)
    model, cfg, _ = _gev.load_model(args.checkpoint)
    provider = _gbb.build_provider(cfg)
    cache = make_cache(provider, args, manifest.dataset_name, cfg.pad_and_resize, args.verbosity,
                       cfg.cache_max_sequences)
    
    records = manifest.split(args.split) if args.split else manifest.entries
    embeddings, errors = _gev.extract_embeddings(list(records), model, provider, cfg, cache, args.verbosity)
    _ghead.write_embeddings(args.out, embeddings)
    _gcli.note('Wrote %i embeddings to %s' % (len(embeddings), args.out), args.verbosity)
    return 1 if errors and not embeddings else 0


def _select_records(manifest, split, names, max_sequences):
    records = manifest.split(split) if split else manifest.entries
    if names: records = [rec for rec in records if rec.name in names]
    if not records: raise ValueError('no sequences selected')
    return list(records)[:max_sequences]


def cmd_viz_pca(args):
    manifest = _gin.load_manifest(args.manifest, verbosity=args.verbosity)
    model, cfg, _ = _gev.load_model(args.checkpoint)
    provider = _gbb.build_provider(cfg)
    cache = make_cache(provider, args, manifest.dataset_name, cfg.pad_and_resize, args.verbosity,
                       cfg.cache_max_sequences)
    records = _select_records(manifest, args.split, args.sequence, args.max_sequences)
    
    maps = {}
    for rec in records:
        for tag,fmap in _gviz.representation_maps(model, _gmod.sequence_taps(rec, provider, cfg, cache)).items():
            maps.setdefault(tag, []).append((rec, fmap))
            
    out_dir = _Path(args.out_dir)
    for tag,items in maps.items():
        if args.tags and tag not in args.tags: continue
        basis = _gviz.fit_pca([fmap for _,fmap in items], cfg.pca_max_pixels, cfg.seed)
        (out_dir / tag).mkdir(parents=True, exist_ok=True)
        for rec,fmap in items:
            for ifr,frame_map in enumerate(fmap):
                _gviz.save_png(_gviz.render_pca_rgb(frame_map, basis), out_dir / tag / ('%s_%03i.png' % (rec.name, ifr)))
        _gcli.note('%s: explained variance %s' % (tag, _np.array2string(basis.explained, precision=3)), args.verbosity)
    return 0


def cmd_viz_cam(args):
    manifest = _gin.load_manifest(args.manifest, verbosity=args.verbosity)
    model, cfg, _ = _gev.load_model(args.checkpoint)
    provider = _gbb.build_provider(cfg)
    cache = make_cache(provider, args, manifest.dataset_name, cfg.pad_and_resize, args.verbosity,
                       cfg.cache_max_sequences)
    records = _select_records(manifest, args.split, args.sequence, args.max_sequences)
    
    out_dir = _Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        taps = _gmod.sequence_taps(rec, provider, cfg, cache)
        cam = _gviz.grad_cam(model, taps, args.layer, (cfg.target_h, cfg.target_w))
        frames = _gin.preprocess(_gin.load_frames(rec, workers=cfg.workers), cfg)
        for ifr,(frame,sal) in enumerate(zip(frames, cam.data)):
            _gviz.save_png(_gviz.cam_overlay(frame, sal), out_dir / ('%s_%s_%03i.png' % (rec.name, args.layer, ifr)))
    return 0


def cmd_ablate(args):
    cfg = _load_cfg(args)
    manifest = _gin.load_manifest(args.manifest, verbosity=args.verbosity)
    protocol = _gev.load_protocol(args.protocol)
    run_ablation(cfg, manifest, protocol, args.axis, args.out, args.iterations, args=args, verbosity=args.verbosity)
    return 0


def cmd_synth(args):
    from gregait import synthetic as _gsyn
    _gsyn.make_synthetic_dataset(args.out_dir, args.subjects, args.frames, (args.height, args.width),
                                 brightness=args.brightness, seed=args.seed or 0, name=args.name,
                                 verbosity=args.verbosity)
    return 0


def build_parser():
    """Build the argument parser with one subparser per command."""
    
    parser = _argparse.ArgumentParser(prog='gregait', description='Gait recognition on frozen large-vision-model features.')
    parser.add_argument('--version', action='version', version='%(prog)s '+__version__)
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True
    
    def common(prs, config=False, checkpoint=False, cache=True):
        prs.add_argument('-v', '--verbosity', type=int, default=1, help='output verbosity (0-3)')
        if config: prs.add_argument('--config', help='configuration file (.json or .ini)')
        if checkpoint: prs.add_argument('--checkpoint', required=True, help='checkpoint file')
        if cache:
            prs.add_argument('--cache-dir', help='feature-cache root (default: $GREGAIT_CACHE_DIR or ~/.cache/gregait)')
            prs.add_argument('--no-cache', action='store_true', help='keep features in memory only')
        return
    
    prs = sub.add_parser('train', help='train a model')
    common(prs, config=True)
    prs.add_argument('--manifest', required=True, help='dataset manifest')
    prs.add_argument('--seed', type=int, help='master seed (overrides the configuration)')
    prs.add_argument('--out', default='run', help='output directory (default: run)')
    prs.add_argument('--resume', action='store_true', help='continue from the checkpoint in the output directory')
    prs.add_argument('--iterations', type=int, help='stop after this many iterations')
    prs.set_defaults(func=cmd_train)
    
    for name,hlp in (('eval', 'evaluate a checkpoint on its own domain'), ('cross-eval', 'zero-shot evaluation on another domain')):
        prs = sub.add_parser(name, help=hlp)
        common(prs, checkpoint=True)
        prs.add_argument('--manifest', required=True, help='test dataset manifest')
        prs.add_argument('--protocol', required=True, help='protocol file or bundled protocol name')
        prs.add_argument('--out', default='eval_report', help='base name of the report files (default: eval_report)')
        prs.set_defaults(func=cmd_eval)
        
    prs = sub.add_parser('extract', help='write sequence embeddings')
    common(prs, checkpoint=True)
    prs.add_argument('--manifest', required=True, help='dataset manifest')
    prs.add_argument('--split', choices=_gin.SPLITS, help='split to embed (default: all)')
    prs.add_argument('--out', default='embeddings.bin', help='embedding file (default: embeddings.bin)')
    prs.set_defaults(func=cmd_extract)
    
    for name,func in (('viz-pca', cmd_viz_pca), ('viz-cam', cmd_viz_cam)):
        prs = sub.add_parser(name, help='PCA-RGB renderings' if name == 'viz-pca' else 'Grad-CAM maps')
        common(prs, checkpoint=True)
        prs.add_argument('--manifest', required=True, help='dataset manifest')
        prs.add_argument('--split', choices=_gin.SPLITS, help='split to draw sequences from')
        prs.add_argument('--sequence', nargs='*', help='sequence name(s) subject-condition-view-seq')
        prs.add_argument('--max-sequences', type=int, default=4, help='maximum number of sequences (default: 4)')
        prs.add_argument('--out-dir', default=name, help='output directory (default: %s)' % name)
        if name == 'viz-pca':
            prs.add_argument('--tags', nargs='*', choices=_gviz.PCA_TAGS, help='representations to render (default: all)')
        else:
            prs.add_argument('--layer', default='head-B1-ap', choices=_gviz.CAM_LAYERS, help='head layer')
        prs.set_defaults(func=func)
        
    prs = sub.add_parser('ablate', help='train and evaluate along an ablation axis')
    common(prs, config=True)
    prs.add_argument('--axis', required=True, choices=sorted(ABLATIONS), help='ablation axis')
    prs.add_argument('--manifest', required=True, help='dataset manifest')
    prs.add_argument('--protocol', default='synthetic', help='protocol file or bundled name (default: synthetic)')
    prs.add_argument('--iterations', type=int, default=2000, help='training iterations per row (default: 2000)')
    prs.add_argument('--seed', type=int, help='master seed (overrides the configuration)')
    prs.add_argument('--out', default='ablation', help='output directory (default: ablation)')
    prs.set_defaults(func=cmd_ablate)
    
    prs = sub.add_parser('synth', help='write the synthetic walking-figure benchmark')
    common(prs, cache=False)
    prs.add_argument('--out-dir', required=True, help='output directory')
    prs.add_argument('--subjects', type=int, default=20, help='number of identities (default: 20)')
    prs.add_argument('--frames', type=int, default=8, help='frames per sequence (default: 8)')
    prs.add_argument('--height', type=int, default=128, help='frame height (default: 128)')
    prs.add_argument('--width', type=int, default=64, help='frame width (default: 64)')
    prs.add_argument('--brightness', type=float, default=0.0, help='global brightness offset (default: 0)')
    prs.add_argument('--seed', type=int, help='dataset seed (default: 0)')
    prs.add_argument('--name', default='synthetic', help='dataset name (default: synthetic)')
    prs.set_defaults(func=cmd_synth)
    
    return parser


def main(argv=None):
    """Run the gregait command line.
    
    Parameters:
      argv (list):  Arguments (optional, defaults to None: sys.argv[1:]).
    
    Returns:
      (int):  Exit code: 0 on success, 1 on a runtime failure; usage errors exit with code 2.
    """
    
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, FloatingPointError, OSError) as err:
        _gcli.error('%s: %s' % (args.command, err), exit_program=False)
        return 1


if __name__ == '__main__':
    import sys
    sys.exit(main())
