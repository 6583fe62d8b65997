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


"""Gallery/probe identification: embedding extraction, part distances, rank-1 and CMC under declarative protocols.

A protocol file is a JSON object:

  {"name": "...",
   "gallery": {"conditions": [...], "views": [...], "seqs": [...], "split": "gallery"},
   "probe":   {"conditions": [...], "views": [...], "seqs": [...], "split": "probe"},
   "view_exclusion": true,
   "per_condition_report": {"CL": ["CL"], "NM": ["NM"]},
   "view_average": true}

Omitted rule keys match everything; the split defaults to gallery/probe.  view_average is optional and
defaults to the setting in the configuration.
"""


from dataclasses import dataclass as _dataclass, field as _field
import json as _json
from pathlib import Path as _Path

import numpy as _np
import pandas as _pd
import torch as _torch

from gregait import cli as _gcli
from gregait import config as _gcfg
from gregait import head as _ghead
from gregait import tables as _gtab


@_dataclass(frozen=True)
class SelectionRule:
    """Predicate on the condition, view, sequence number and split of a sequence; None matches everything."""
    
    conditions: tuple = None;  """Accepted conditions"""
    views:      tuple = None;  """Accepted views"""
    seqs:       tuple = None;  """Accepted sequence numbers"""
    split:      str   = None;  """Accepted split"""
    
    def matches(self, item):
        """Return True if a SequenceRecord or GaitEmbedding satisfies the rule."""
        
        if self.conditions is not None and item.condition not in self.conditions: return False
        if self.views is not None and item.view not in self.views: return False
        if self.seqs is not None and item.seq not in self.seqs: return False
        split = getattr(item, 'split', None) or getattr(item, 'meta', {}).get('split')
        if self.split is not None and split != self.split: return False
        return True
    
    @classmethod
    def from_dict(cls, raw, default_split):
        unknown = set(raw) - {'conditions', 'views', 'seqs', 'split'}
        if unknown: raise ValueError('unknown protocol rule key(s): '+', '.join(sorted(unknown)))
        
        def strings(key):
            return None if raw.get(key) is None else tuple(str(val) for val in raw[key])
        return cls(strings('conditions'), strings('views'), strings('seqs'), raw.get('split', default_split))


@_dataclass(frozen=True)
class ProtocolConfig:
    """Multi-view identification protocol."""
    
    name:            str  = 'default';  """Protocol name"""
    gallery_rule:    SelectionRule = _field(default_factory=lambda: SelectionRule(split='gallery'));  """Gallery selection"""
    probe_rule:      SelectionRule = _field(default_factory=lambda: SelectionRule(split='probe'));    """Probe selection"""
    view_exclusion:  bool = True;   """Never match a probe against a gallery sequence of the same view"""
    per_condition_report: tuple = ();  """Condition groups: tuple of (group name, tuple of conditions)"""
    view_average:    bool = None;   """Average over probe views (None: use the configuration)"""
    
    def groups(self, probes):
        """Condition groups to report; without explicit groups, one group per probe condition."""
        
        if self.per_condition_report: return self.per_condition_report
        return tuple((cond, (cond,)) for cond in sorted({prb.condition for prb in probes}))


def protocol_from_dict(raw):
    """Build a ProtocolConfig from a parsed protocol file."""
    
    unknown = set(raw) - {'name', 'gallery', 'probe', 'view_exclusion', 'per_condition_report', 'view_average'}
    if unknown: raise ValueError('unknown protocol key(s): '+', '.join(sorted(unknown)))
    
    groups = raw.get('per_condition_report', {})
    if isinstance(groups, list): groups = {grp['name']: grp['conditions'] for grp in groups}
    groups = tuple((str(name), tuple(str(cond) for cond in conds)) for name,conds in groups.items())
    
    return ProtocolConfig(raw.get('name', 'default'), SelectionRule.from_dict(raw.get('gallery', {}), 'gallery'),
                          SelectionRule.from_dict(raw.get('probe', {}), 'probe'), bool(raw.get('view_exclusion', True)),
                          groups, raw.get('view_average'))


def load_protocol(path_or_name):
    """Read a protocol file, or a bundled protocol by name ('ccpg', 'synthetic').
    
    Parameters:
      path_or_name (str):  Path to a JSON protocol file or the name of a bundled protocol.
    
    Returns:
      (ProtocolConfig):  The protocol.
    """
    
    path = _Path(path_or_name)
    if not path.is_file():
        bundled = _Path(__file__).parent / 'protocols' / (str(path_or_name)+'.json')
        if not bundled.is_file(): raise FileNotFoundError('protocol file not found: '+str(path_or_name))
        path = bundled
        
    try:
        raw = _json.loads(path.read_text())
    except _json.JSONDecodeError as err:
        raise ValueError('%s: line %i, column %i: %s' % (path, err.lineno, err.colno, err.msg))
    
    return protocol_from_dict(raw)


def load_model(checkpoint):
    """Rebuild a trained model from a checkpoint file.
    
    Parameters:
      checkpoint (str):  Checkpoint file.
    
    Returns:
      (tuple):  Tuple (model, cfg, ckpt): the model in eval mode, its settings and the Checkpoint.
    """
    
    from gregait import model as _gmod
    from gregait import train as _gtrain
    
    if not _Path(checkpoint).is_file(): raise FileNotFoundError('checkpoint not found: '+str(checkpoint))
    ckpt = _gtrain.load_checkpoint(checkpoint, restore_rng=False)
    cfg = _gcfg.config_from_dict(ckpt.config)
    
    clf = ckpt.model_state.get('head.bnneck.classifier.weight')
    model = _gmod.build_model(cfg, clf.shape[-1] if clf is not None else 1)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    
    return model, cfg, ckpt


def extract_embeddings(records, model, provider, cfg, cache=None, verbosity=0):
    """Embed whole sequences with a trained model in eval mode.
    
    Parameters:
      records (list):         SequenceRecords to embed.
      model (GaitModel):        Trained model.
      provider (nn.Module):   Frozen feature provider.
      cfg (Config):           Settings (preprocessing).
      cache (FeatureCache):   Feature cache (optional).
      verbosity (int):        Output verbosity (0-3; optional, defaults to 0).
    
    Returns:
      (tuple):  Tuple (embeddings, errors): list of GaitEmbeddings and list of (sequence name, message) of the
                sequences that could not be embedded.
    """
    
    from gregait import model as _gmod
    
    if not records:
        _gcli.warn('extract_embeddings: no sequences to embed')
        return [], []
    
    model.eval()
    embeddings, errors = [], []
    for rec in records:
        try:
            taps = _gmod.sequence_taps(rec, provider, cfg, cache)
            with _torch.no_grad():
                parts = model(taps[None])['parts'][0]
            embeddings.append(_ghead.GaitEmbedding.from_record(parts.numpy(), rec))
        except (FileNotFoundError, OSError, ValueError) as err:
            errors.append((rec.name, str(err)))
            _gcli.warn('cannot embed %s: %s' % (rec.name, err))
            
    _gcli.note('Embedded %i of %i sequences' % (len(embeddings), len(records)), verbosity, 2)
    return embeddings, errors


def _reduce(part_dist, reduction):
    if reduction == 'mean': return part_dist.mean(axis=-1)
    if reduction == 'min':  return part_dist.min(axis=-1)
    if reduction == 'sum':  return part_dist.sum(axis=-1)
    raise ValueError('unknown distance reduction: '+str(reduction))


def distance(a, b, reduction='mean'):
    """Part-wise Euclidean distance between two embeddings, reduced over parts.
    
    Parameters:
      a (GaitEmbedding):  First embedding (or P x D array).
      b (GaitEmbedding):  Second embedding (or P x D array).
      reduction (str):    'mean' (default), 'min' or 'sum' over parts.
    
    Returns:
      (float):  Distance >= 0.
    """
    
    pa = _np.asarray(getattr(a, 'parts', a), dtype=_np.float64)
    pb = _np.asarray(getattr(b, 'parts', b), dtype=_np.float64)
    if pa.shape != pb.shape: raise ValueError('distance: shape mismatch %s vs %s' % (pa.shape, pb.shape))
    
    return float(_reduce(_np.sqrt(((pa - pb)**2).sum(axis=-1)), reduction))


def distance_matrix(probes, gallery, reduction='mean', chunk=256):
    """Distances between all probe and gallery embeddings.
    
    Parameters:
      probes (list):     Probe GaitEmbeddings.
      gallery (list):    Gallery GaitEmbeddings.
      reduction (str):   Part reduction (optional, defaults to 'mean').
      chunk (int):       Number of probes per block (optional, defaults to 256).
    
    Returns:
      (float):  Array (n_probe x n_gallery).
    """
    
    gal = _np.stack([emb.parts for emb in gallery]).astype(_np.float64)
    out = _np.empty((len(probes), len(gallery)))
    for i0 in range(0, len(probes), chunk):
        prb = _np.stack([emb.parts for emb in probes[i0:i0+chunk]]).astype(_np.float64)
        if prb.shape[1:] != gal.shape[1:]: raise ValueError('distance_matrix: probe and gallery shapes differ')
        out[i0:i0+len(prb)] = _reduce(_np.sqrt(((prb[:,None] - gal[None])**2).sum(axis=-1)), reduction)
    return out


@_dataclass
class EvalReport:
    """Result of an identification run; all accuracies are percentages."""
    
    protocol:   str  = '';   """Protocol name"""
    rank1:      dict = _field(default_factory=dict);  """Rank-1 per condition group"""
    per_view:   dict = _field(default_factory=dict);  """Rank-1 per condition group and probe view"""
    view_matrix: dict = _field(default_factory=dict); """Rank-1 per condition group, probe view and gallery view"""
    mean:       float = None;  """Mean rank-1 over the condition groups"""
    cmc:        dict = _field(default_factory=dict);  """CMC (ranks 1..n) per condition group"""
    coverage:   dict = _field(default_factory=dict);  """Numbers of probes evaluated and dropped, extraction errors"""
    meta:       dict = _field(default_factory=dict);  """Checkpoint and domain information"""
    trace:      list = _field(default_factory=list);  """One match record per evaluated probe"""
    
    
    def to_dict(self, trace=False):
        out = {'protocol': self.protocol, 'rank1': self.rank1, 'per_view': self.per_view,
               'view_matrix': self.view_matrix, 'mean': self.mean, 'cmc': self.cmc, 'coverage': self.coverage,
               'meta': self.meta}
        if trace: out['trace'] = self.trace
        return out
    
    
    def table(self):
        """Rank-1 table: one row per probe view plus a mean row, one column per condition group."""
        
        views = sorted({view for grp in self.per_view.values() for view in grp})
        df = _pd.DataFrame({grp: [self.per_view[grp].get(view, _np.nan) for view in views] + [self.rank1[grp]]
                            for grp in self.rank1}, index=views+['mean'], dtype=float)
        df.index.name = 'view'
        if self.rank1: df['mean'] = [_np.nan]*len(views) + [self.mean]
        return df
    
    
    def write(self, base_name):
        """Write the report as <base_name>.json (with match trace) and <base_name>_table.txt (+ .json table copy)."""
        
        base = _Path(base_name)
        (base.parent / (base.name+'.json')).write_text(_json.dumps(self.to_dict(trace=True), indent=2)+'\n')
        title = 'Rank-1 (%%), protocol %s' % self.protocol
        if self.meta.get('train_domain'): title += ', %s -> %s' % (self.meta['train_domain'], self.meta.get('test_domain'))
        _gtab.write_table(self.table(), base.parent / (base.name+'_table.txt'), title=title)
        return


def _percent(values):
    return float(100*_np.mean(values)) if len(values) else None


def rank1(gallery, probes, protocol, reduction='mean', view_average=True, ranks=20, verbosity=0):
    """Nearest-neighbour identification of probes against a gallery.
    
    The gallery is put in canonical (subject, condition, view, seq) order before matching, so the result does
    not depend on the order in which it is given.  Probes whose subject has no gallery entry left after view
    exclusion are dropped and reported under coverage.
    
    Parameters:
      gallery (list):             Gallery GaitEmbeddings.
      probes (list):              Probe GaitEmbeddings.
      protocol (ProtocolConfig):  Protocol (view exclusion, condition groups, view averaging).
      reduction (str):            Part-distance reduction (optional, defaults to 'mean').
      view_average (bool):        Average over probe views rather than sequences, unless the protocol says
                                  otherwise (optional, defaults to True).
      ranks (int):                Number of CMC ranks (optional, defaults to 20).
      verbosity (int):            Output verbosity (0-3; optional, defaults to 0).
    
    Returns:
      (EvalReport):  The report, with a match trace.
    """
    
    if protocol.view_average is not None: view_average = protocol.view_average
    report = EvalReport(protocol.name)
    
    gallery = sorted(gallery, key=lambda emb: emb.key)
    if not gallery or not probes:
        _gcli.warn('rank1: empty gallery or probe set')
        report.coverage = {'n_probe': len(probes), 'n_evaluated': 0, 'dropped': [emb.key for emb in probes]}
        return report
    
    dist = distance_matrix(probes, gallery, reduction)
    gal_ids = _np.array([emb.subject_id for emb in gallery])
    gal_views = _np.array([emb.view for emb in gallery])
    
    results, dropped = [], []
    for iprb,prb in enumerate(probes):
        allowed = gal_views != prb.view if protocol.view_exclusion else _np.ones(len(gallery), dtype=bool)
        if not (allowed & (gal_ids == prb.subject_id)).any():
            dropped.append(list(prb.key))
            continue
        
        cand = _np.flatnonzero(allowed)
        order = cand[_np.argsort(dist[iprb, cand], kind='stable')]
        hits = gal_ids[order] == prb.subject_id
        first = int(_np.argmax(hits))
        
        # Per gallery view: correct if the nearest entry of that view has the right identity:
        by_view = {}
        for gview in sorted(set(gal_views[cand])):
            sel = order[gal_views[order] == gview]
            if (gal_ids[sel] == prb.subject_id).any(): by_view[gview] = bool(gal_ids[sel[0]] == prb.subject_id)
            
        best = order[0]
        results.append({'probe': list(prb.key), 'match': list(gallery[best].key), 'distance': float(dist[iprb, best]),
                        'correct': bool(hits[0]), 'first_hit': first, 'by_view': by_view})
        
    if dropped: _gcli.warn('rank1: %i probe(s) without a gallery entry of their subject were dropped' % len(dropped))
    report.trace = [{key: val for key,val in res.items() if key != 'by_view'} for res in results]
    report.coverage = {'n_probe': len(probes), 'n_evaluated': len(results), 'dropped': dropped}
    
    for gname,conds in protocol.groups(probes):
        res = [rr for rr in results if rr['probe'][1] in conds]
        if not res: continue
        
        views = sorted({rr['probe'][2] for rr in res})
        per_view = {view: _percent([rr['correct'] for rr in res if rr['probe'][2] == view]) for view in views}
        report.per_view[gname] = per_view
        report.rank1[gname] = float(_np.mean(list(per_view.values()))) if view_average else _percent([rr['correct'] for rr in res])
        
        report.view_matrix[gname] = {}
        for view in views:
            row = {}
            for rr in res:
                if rr['probe'][2] != view: continue
                for gview,ok in rr['by_view'].items(): row.setdefault(gview, []).append(ok)
            report.view_matrix[gname][view] = {gview: _percent(oks) for gview,oks in sorted(row.items())}
            
        firsts = _np.array([rr['first_hit'] for rr in res])
        report.cmc[gname] = [float(100*_np.mean(firsts < rank)) for rank in range(1, ranks+1)]
        
    if report.rank1: report.mean = float(_np.mean(list(report.rank1.values())))
    _gcli.note('Rank-1 (%%): %s' % ', '.join('%s %.1f' % item for item in report.rank1.items()), verbosity)
    
    return report


def split_by_protocol(items, protocol):
    """Split records or embeddings into (gallery, probes) with the protocol rules; overlap raises ValueError."""
    
    gallery = [item for item in items if protocol.gallery_rule.matches(item)]
    probes = [item for item in items if protocol.probe_rule.matches(item)]
    
    gal_keys = {item.key for item in gallery}
    both = [item.key for item in probes if item.key in gal_keys]
    if both: raise ValueError('protocol %s selects %i sequence(s) as both gallery and probe, e.g. %s'
                              % (protocol.name, len(both), '/'.join(both[0])))
    return gallery, probes


def run_eval(checkpoint, manifest, protocol, provider=None, cache=None, model=None, cfg=None, train_domain=None,
             verbosity=1):
    """Embed the gallery and probe sequences of a dataset with a trained model and compute the report.
    
    Parameters:
      checkpoint (str):            Checkpoint file (ignored when model and cfg are given, except as id).
      manifest (DatasetManifest):  Test dataset.
      protocol (ProtocolConfig):   Protocol.
      provider (nn.Module):        Frozen feature provider (optional, defaults to None: build from the settings).
      cache (FeatureCache):        Feature cache (optional).
      model (GaitModel):             Trained model (optional, defaults to None: load from checkpoint).
      cfg (Config):                Settings of the model (optional, with model).
      train_domain (str):          Name of the training dataset (optional, with model; read from the checkpoint
                                   otherwise).
      verbosity (int):             Output verbosity (0-3; optional, defaults to 1).
    
    Returns:
      (EvalReport):  The report; meta holds the checkpoint, protocol and (train, test) domain pair.
    """
    
    from gregait import backbone as _gbb
    
    if model is None:
        model, cfg, ckpt = load_model(checkpoint)
        train_domain = ckpt.meta.get('dataset')
    if provider is None: provider = _gbb.build_provider(cfg)
    
    gal_recs, prb_recs = split_by_protocol(manifest.entries, protocol)
    embeddings, errors = extract_embeddings(gal_recs + prb_recs, model, provider, cfg, cache, verbosity)
    
    gal_keys = {rec.key for rec in gal_recs}
    gallery = [emb for emb in embeddings if emb.key in gal_keys]
    probes = [emb for emb in embeddings if emb.key not in gal_keys]
    
    report = rank1(gallery, probes, protocol, cfg.distance, cfg.view_average, cfg.cmc_ranks, verbosity)
    report.coverage['extraction_errors'] = [list(err) for err in errors]
    report.coverage['n_sequences'] = len(gal_recs) + len(prb_recs)
    report.meta = {'checkpoint': str(checkpoint), 'protocol': protocol.name,
                   'train_domain': train_domain, 'test_domain': manifest.dataset_name}
    if errors: _gcli.warn('%i sequence(s) could not be embedded' % len(errors))
    
    return report


def cross_domain_run(checkpoint, manifest, protocol, provider=None, cache=None, model=None, cfg=None, train_domain=None,
                     verbosity=1):
    """Zero-shot transfer: evaluate a model trained on one dataset on another, without any adaptation.
    
    The pipeline is that of run_eval(); the report's meta records the (train domain, test domain) pair.
    """
    
    return run_eval(checkpoint, manifest, protocol, provider, cache, model, cfg, train_domain, verbosity)
