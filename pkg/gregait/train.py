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


"""Recognition losses, the combined objective, the learning-rate schedule, checkpoints and the training loop."""


from dataclasses import dataclass as _dataclass, field as _field
import json as _json
from pathlib import Path as _Path

import numpy as _np
import torch as _torch
import torch.nn.functional as _F

from gregait import cli as _gcli
from gregait import config as _gcfg
from gregait import ingest as _gin


class NonFiniteError(FloatingPointError):
    """A loss component or gradient became NaN or infinite."""


@_dataclass(frozen=True)
class LossWeights:
    """Weights of the auxiliary losses in the combined objective."""
    
    gamma_rec: float = 1.0;   """Weight of the reconstruction loss"""
    gamma_smo: float = 0.01;  """Weight of the smoothness loss"""
    gamma_div: float = 5.0;   """Weight of the diversity loss"""
    
    def __post_init__(self):
        for key in ('gamma_rec', 'gamma_smo', 'gamma_div'):
            if not getattr(self, key) >= 0: raise ValueError('%s must be >= 0, got %s' % (key, getattr(self, key)))
        return
    
    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.gamma_rec, cfg.gamma_smo, cfg.gamma_div)


@_dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings of a training run."""
    
    lr:             float = 0.1;     """Initial learning rate"""
    momentum:       float = 0.9;     """SGD momentum"""
    weight_decay:   float = 5e-4;    """SGD weight decay"""
    milestones:     tuple = (15000, 25000, 30000, 35000);  """Iterations at which the learning rate decays"""
    lr_decay:       float = 0.1;     """Decay factor per milestone"""
    total_iters:    int   = 40000;   """Total number of iterations"""
    batch:          _gin.BatchSpec = _field(default_factory=lambda: _gin.BatchSpec(8,8,8));  """Batch geometry"""
    margin:         float = 0.2;     """Triplet margin"""
    seed:           int   = 0;       """Master seed"""
    checkpoint_interval: int = 5000; """Iterations between checkpoints"""
    
    def __post_init__(self):
        ms = list(self.milestones)
        if any(b <= a for a,b in zip(ms[:-1], ms[1:])): raise ValueError('milestones must be strictly increasing: '+str(ms))
        if ms and ms[-1] >= self.total_iters: raise ValueError('milestones must lie below total_iters: '+str(ms))
        return
    
    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.lr, cfg.momentum, cfg.weight_decay, tuple(cfg.milestones), cfg.lr_decay, cfg.total_iters,
                   _gin.BatchSpec.from_config(cfg), cfg.margin, cfg.seed, cfg.checkpoint_interval)


def pairwise_distances(emb):
    """Euclidean distances between all rows of each part: P x N x D -> P x N x N, from explicit differences."""
    
    diff = emb[:,:,None,:] - emb[:,None,:,:]
    return _torch.sqrt((diff**2).sum(dim=-1).clamp(min=1e-12))


def triplet_loss(embeddings, labels, margin=0.2):
    """Batch-all triplet loss per part, averaged over the triplets with a nonzero loss and then over parts.
    
    Parameters:
      embeddings (tensor):  Part features (N x P x D).
      labels (tensor):      Identity labels (N).
      margin (float):       Triplet margin (optional, defaults to 0.2).
    
    Returns:
      (tensor):  Scalar loss >= 0.
    """
    
    labels = _torch.as_tensor(labels, device=embeddings.device)
    same = labels[:,None] == labels[None,:]
    eye = _torch.eye(len(labels), dtype=_torch.bool, device=embeddings.device)
    valid = (same & ~eye)[:,:,None] & ~same[:,None,:]  # [a,p,n]
    if not bool(valid.any()):
        raise ValueError('triplet_loss: the batch holds no valid triplet (need two sequences of one identity and one of another)')
    
    dist = pairwise_distances(embeddings.permute(1,0,2))
    terms = _F.relu(dist[:,:,:,None] - dist[:,:,None,:] + margin) * valid  # P x a x p x n
    
    per_part = []
    for part in terms:
        count = (part > 0).sum()
        per_part.append(part.sum() / count if count > 0 else part.sum()*0)
        
    return _torch.stack(per_part).mean()


def ce_loss(logits, labels):
    """Per-part softmax cross-entropy, averaged over parts and batch.
    
    Parameters:
      logits (tensor):  Class logits (N x P x K).
      labels (tensor):  Class indices (N) in [0, K).
    
    Returns:
      (tensor):  Scalar loss.
    """
    
    labels = _torch.as_tensor(labels, device=logits.device)
    nclass = logits.shape[-1]
    if bool(((labels < 0) | (labels >= nclass)).any()):
        raise ValueError('ce_loss: labels outside [0, %i): %s' % (nclass, labels.tolist()))
    
    nseq, nparts = logits.shape[:2]
    return _F.cross_entropy(logits.reshape(nseq*nparts, nclass), labels.repeat_interleave(nparts))


def combined_loss(L_tri, L_ce, L_rec, L_smo, L_div, weights=None):
    """Total objective L_tri + L_ce + gamma_rec L_rec + gamma_smo L_smo + gamma_div L_div.
    
    Parameters:
      L_tri, L_ce, L_rec, L_smo, L_div (tensor):  Loss components (scalars; floats are accepted).
      weights (LossWeights):                      Loss weights (optional, defaults to LossWeights()).
    
    Returns:
      (tensor):  Scalar total loss.
    """
    
    if weights is None: weights = LossWeights()
    
    comps = {'L_tri': L_tri, 'L_ce': L_ce, 'L_rec': L_rec, 'L_smo': L_smo, 'L_div': L_div}
    for name,val in comps.items():
        if not _np.isfinite(float(val)): raise NonFiniteError('loss component %s is not finite: %s' % (name, float(val)))
        
    return L_tri + L_ce + weights.gamma_rec*L_rec + weights.gamma_smo*L_smo + weights.gamma_div*L_div


def lr_at(iteration, cfg):
    """Learning rate at an iteration: lr x lr_decay^(number of milestones <= iteration).
    
    Parameters:
      iteration (int):  Iteration, 0 <= iteration < total_iters.
      cfg (Config):     Settings (lr, lr_decay, milestones, total_iters); a TrainConfig works too.
    
    Returns:
      (float):  Learning rate.
    """
    
    if not 0 <= iteration < cfg.total_iters:
        raise ValueError('iteration %i outside [0, %i)' % (iteration, cfg.total_iters))
    
    passed = sum(1 for ms in cfg.milestones if ms <= iteration)
    return cfg.lr * cfg.lr_decay**passed


def _group_name(param_name):
    """Parameter group of a parameter: its first two name components, e.g. gre.E_de or head.B2."""
    return '.'.join(param_name.split('.')[:2])


def build_optimizer(model, cfg):
    """SGD with momentum over all trainable parameters; batch-norm parameters and biases skip weight decay
    unless cfg.bn_weight_decay is set.
    
    Parameters:
      model (nn.Module):  The trainable model.
      cfg (Config):       Settings.
    
    Returns:
      (torch.optim.SGD):  The optimiser; each parameter group carries a 'name'.
    """
    
    decay, no_decay = [], []
    for name,par in model.named_parameters():
        if not par.requires_grad: continue
        if par.dim() <= 1 and not cfg.bn_weight_decay:
            no_decay.append(par)
        else:
            decay.append(par)
            
    groups = [{'params': decay, 'weight_decay': cfg.weight_decay, 'name': 'decay'}]
    if no_decay: groups.append({'params': no_decay, 'weight_decay': 0.0, 'name': 'no_decay'})
    
    return _torch.optim.SGD(groups, lr=cfg.lr, momentum=cfg.momentum)


def check_gradients(model):
    """Raise NonFiniteError naming the first parameter group (and parameter) with a non-finite gradient."""
    
    for name,par in model.named_parameters():
        if par.grad is not None and not bool(_torch.isfinite(par.grad).all()):
            raise NonFiniteError('non-finite gradient in parameter group %s (%s)' % (_group_name(name), name))
    return


def train_step(model, optimizer, taps, labels, cfg, iteration=None, recognition=True):
    """One optimisation step on a batch.
    
    Parameters:
      model (GaitModel):          The model (extractor and head; the backbone is not part of it).
      optimizer (Optimizer):    SGD optimiser over the model parameters.
      taps (tensor):            Tapped feature maps of the batch (N x l x 4 x E x rows x cols).
      labels (tensor):          Class indices (N).
      cfg (Config):             Settings (loss weights, margin, schedule, gradient clipping).
      iteration (int):          Iteration; sets the learning rate from the schedule (optional, defaults to None:
                                keep the current rate).
      recognition (bool):       Include the triplet and cross-entropy losses (optional, defaults to True).
    
    Returns:
      (dict):  Loss report: lr, L_tri, L_ce, L_rec, L_smo, L_div (unweighted) and L_total, as floats.
    """
    
    if iteration is not None:
        for group in optimizer.param_groups: group['lr'] = lr_at(iteration, cfg)
    
    model.train()
    labels = _torch.as_tensor(labels, dtype=_torch.long)
    out = model(taps)
    
    zero = out['L_rec']*0
    L_tri = triplet_loss(out['parts'], labels, cfg.margin) if recognition else zero
    L_ce  = ce_loss(out['logits'], labels) if (recognition and out['logits'] is not None) else zero
    total = combined_loss(L_tri, L_ce, out['L_rec'], out['L_smo'], out['L_div'], LossWeights.from_config(cfg))
    
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    check_gradients(model)
    if cfg.grad_clip > 0: _torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    
    report = {'lr': optimizer.param_groups[0]['lr']}
    for key,val in (('L_tri', L_tri), ('L_ce', L_ce), ('L_rec', out['L_rec']), ('L_smo', out['L_smo']),
                    ('L_div', out['L_div']), ('L_total', total)):
        report[key] = float(val)
    return report


# Checkpoints: one JSON header line followed by the concatenated little-endian tensor payloads.

_DTYPES = {'float32': '<f4', 'float64': '<f8', 'float16': '<f2', 'int64': '<i8', 'int32': '<i4',
           'uint8': '|u1', 'bool': '|b1'}


@_dataclass
class Checkpoint:
    """Contents of a checkpoint file."""
    
    iteration:    int  = 0;      """Number of completed iterations"""
    config_hash:  str  = '';     """Hash of the settings of the run"""
    config:       dict = _field(default_factory=dict);  """Settings of the run"""
    model_state:  dict = _field(default_factory=dict);  """Model state dict (parameters and batch-norm statistics)"""
    optimizer_state: dict = _field(default_factory=dict);  """Optimiser state dict"""
    rng_state:    object = None; """PyTorch CPU random-generator state"""
    meta:         dict = _field(default_factory=dict);  """Run metadata"""


def _tensor_entry(name, tens, offset):
    arr = _np.ascontiguousarray(tens.detach().cpu().numpy())
    dtype = str(tens.dtype).replace('torch.', '')
    if dtype not in _DTYPES: raise ValueError('cannot store tensor %s of type %s' % (name, dtype))
    payload = arr.astype(_DTYPES[dtype]).tobytes(order='C')
    return {'name': name, 'shape': list(arr.shape), 'dtype': dtype, 'offset': offset, 'nbytes': len(payload)}, payload


def save_checkpoint(path, model, optimizer, iteration, cfg, meta=None):
    """Write a checkpoint; saving the same state twice yields identical bytes.
    
    Parameters:
      path (str):              Output file.
      model (nn.Module):       The model.
      optimizer (Optimizer):   The optimiser.
      iteration (int):         Number of completed iterations.
      cfg (Config):            Settings of the run.
      meta (dict):             JSON-compatible run metadata, e.g. the training dataset name (optional).
    """
    
    tensors = [('model.'+key, val) for key,val in model.state_dict().items()]
    
    opt_sd = optimizer.state_dict()
    opt_extra = {}
    for idx in sorted(opt_sd['state']):
        for key,val in sorted(opt_sd['state'][idx].items()):
            if _torch.is_tensor(val):
                tensors.append(('optim.%i.%s' % (idx, key), val))
            else:
                opt_extra.setdefault(str(idx), {})[key] = val
    tensors.append(('rng.torch', _torch.get_rng_state()))
    
    manifest, payloads, offset = [], [], 0
    for name,tens in tensors:
        entry, payload = _tensor_entry(name, tens, offset)
        manifest.append(entry)
        payloads.append(payload)
        offset += len(payload)
        
    header = {'format': 'gregait-checkpoint', 'version': 1, 'iteration': int(iteration),
              'config_hash': _gcfg.config_hash(cfg), 'config': cfg.to_dict(), 'meta': meta or {},
              'optimizer': {'param_groups': opt_sd['param_groups'], 'state_extra': opt_extra},
              'tensors': manifest}
    
    path = _Path(path)
    tmp = path.with_suffix(path.suffix+'.tmp')
    with open(tmp, 'wb') as fh:
        fh.write(_json.dumps(header, sort_keys=True).encode()+b'\n')
        for payload in payloads: fh.write(payload)
    tmp.replace(path)
    
    return


def load_checkpoint(path, model=None, optimizer=None, cfg=None, restore_rng=True):
    """Read a checkpoint and optionally restore it into a model and optimiser.
    
    Parameters:
      path (str):              Checkpoint file.
      model (nn.Module):       Model to restore (optional).
      optimizer (Optimizer):   Optimiser to restore (optional).
      cfg (Config):            Settings of the resuming run; a different config hash gives a warning (optional).
      restore_rng (bool):      Restore the PyTorch random-generator state (optional, defaults to True).
    
    Returns:
      (Checkpoint):  The checkpoint contents.
    """
    
    with open(path, 'rb') as fh:
        header = _json.loads(fh.readline().decode())
        data = fh.read()
        
    if header.get('format') != 'gregait-checkpoint': raise ValueError('not a gregait checkpoint: '+str(path))
    
    tensors = {}
    for entry in header['tensors']:
        chunk = data[entry['offset'] : entry['offset']+entry['nbytes']]
        if len(chunk) != entry['nbytes']: raise ValueError('truncated checkpoint: '+str(path))
        arr = _np.frombuffer(chunk, dtype=_DTYPES[entry['dtype']]).reshape(entry['shape'])
        tensors[entry['name']] = _torch.from_numpy(arr.astype(_DTYPES[entry['dtype']][1:]).copy())
        
    state = {}
    for name,tens in tensors.items():
        if not name.startswith('optim.'): continue
        _, idx, key = name.split('.', 2)
        state.setdefault(int(idx), {})[key] = tens
    for idx,extra in header['optimizer']['state_extra'].items(): state.setdefault(int(idx), {}).update(extra)
    
    ckpt = Checkpoint(header['iteration'], header['config_hash'], header['config'],
                      {name[6:]: tens for name,tens in tensors.items() if name.startswith('model.')},
                      {'state': state, 'param_groups': header['optimizer']['param_groups']},
                      tensors.get('rng.torch'), header.get('meta', {}))
    
    if cfg is not None and _gcfg.config_hash(cfg) != ckpt.config_hash:
        _gcli.warn('checkpoint %s was written with different settings' % path)
    if model is not None: model.load_state_dict(ckpt.model_state)
    if optimizer is not None: optimizer.load_state_dict(ckpt.optimizer_state)
    if restore_rng and ckpt.rng_state is not None: _torch.set_rng_state(ckpt.rng_state)
    
    return ckpt


def label_map(manifest):
    """Class index of each training identity, in sorted identity order."""
    return {sid: icl for icl,sid in enumerate(manifest.subjects('train'))}


def train(cfg, manifest, out_dir, provider=None, cache=None, resume=False, iterations=None, verbosity=1):
    """Train a gait model on the train split of a dataset.
    
    The batch of iteration i is drawn with seed cfg.seed + i, so a resumed run sees the same batches as an
    uninterrupted one.
    
    Parameters:
      cfg (Config):              Settings.
      manifest (DatasetManifest):  The dataset.
      out_dir (str):             Output directory for checkpoint.bin, train_log.jsonl, config.json and train_loss.png.
      provider (nn.Module):      Frozen feature provider (optional, defaults to None: build from cfg).
      cache (FeatureCache):      Feature cache (optional, defaults to an in-memory cache).
      resume (bool):             Continue from out_dir/checkpoint.bin if present (optional, defaults to False).
      iterations (int):          Stop after this many iterations in this call (optional, defaults to None: run
                                 until cfg.total_iters).
      verbosity (int):           Output verbosity (0-3; optional, defaults to 1).
    
    Returns:
      (tuple):  Tuple (model, history): the trained model and the list of logged loss reports.
    """
    
    from gregait import backbone as _gbb
    from gregait import model as _gmod
    from gregait import system as _gsys
    
    out_dir = _Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    
    if cfg.deterministic: _gsys.deterministic_mode(True)
    _gsys.seed_all(cfg.seed)
    
    if provider is None: provider = _gbb.build_provider(cfg)
    if cache is None: cache = _gbb.FeatureCache(provider, None, manifest.dataset_name, cfg.pad_and_resize, verbosity)
    
    labels_of = label_map(manifest)
    model = _gmod.build_model(cfg, len(labels_of))
    optimizer = build_optimizer(model, cfg)
    spec = _gin.BatchSpec.from_config(cfg)
    
    ckpt_file = out_dir / 'checkpoint.bin'
    log_file = out_dir / 'train_log.jsonl'
    start = 0
    if resume and ckpt_file.is_file():
        start = load_checkpoint(ckpt_file, model, optimizer, cfg).iteration
        _gcli.note('Resuming from iteration %i' % start, verbosity)
        if log_file.exists():  # Drop lines logged after the checkpoint, they are redone
            rows = [line for line in log_file.read_text().splitlines()
                    if line.strip() and _json.loads(line)['iter'] < start]
            log_file.write_text(''.join(line+'\n' for line in rows))
    elif log_file.exists():
        log_file.unlink()
    _gcfg.save_config(cfg, out_dir / 'config.json')
    
    stop = cfg.total_iters if iterations is None else min(cfg.total_iters, start+iterations)
    history = []
    with open(log_file, 'a') as log:
        for it in range(start, stop):
            samples = _gin.sample_batch(manifest, spec, cfg.seed + it, load=False, workers=cfg.workers)
            taps = _gmod.batch_taps(samples, provider, cfg, cache)
            labels = [labels_of[smp.record.subject_id] for smp in samples]
            
            report = train_step(model, optimizer, taps, labels, cfg, iteration=it)
            
            if it % cfg.log_interval == 0 or it == stop-1:
                row = {'iter': it, **report}
                history.append(row)
                log.write(_json.dumps(row)+'\n')
                log.flush()
                _gcli.note('it %6i  lr %.1e  L_tri %.4f  L_ce %.4f  L_rec %.4f  L_smo %.4f  L_div %.4f  L %.4f'
                           % (it, report['lr'], report['L_tri'], report['L_ce'], report['L_rec'], report['L_smo'],
                              report['L_div'], report['L_total']), verbosity, 2)
                
            if (it+1) % cfg.checkpoint_interval == 0 or it == stop-1:
                save_checkpoint(ckpt_file, model, optimizer, it+1, cfg, {'dataset': manifest.dataset_name})
                
    if history:
        from gregait import plot as _gplt
        _gplt.plot_training_log(log_file, out_dir / 'train_loss.png')
    _gcli.note('Trained iterations %i-%i; output in %s' % (start, stop, out_dir), verbosity)
    
    return model, history
