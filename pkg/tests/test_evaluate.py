"""Tests of distances, rank-1 identification, protocols and the evaluation runners."""

import json

import numpy as np
import pytest

from gregait import backbone as gbb
from gregait import config as gcfg
from gregait import evaluate as gev
from gregait import ingest as gin
from gregait.head import GaitEmbedding

from conftest import TINY


def _emb(parts, sid, cond='NM', view='000', seq='01', split='gallery'):
    return GaitEmbedding(np.asarray(parts, dtype=float).reshape(-1, 1) if np.ndim(parts) == 1 else parts,
                         sid, cond, view, seq, {'split': split})


PLAIN = gev.ProtocolConfig('plain', view_exclusion=False)


# Distances

def test_distance_example():
    a = np.array([[0.], [0.]])
    b = np.array([[3.], [4.]])
    assert gev.distance(a, b) == pytest.approx(3.5)
    assert gev.distance(a, b, 'min') == pytest.approx(3.0)
    assert gev.distance(a, b, 'sum') == pytest.approx(7.0)


def test_distance_identity_and_symmetry():
    rng = np.random.default_rng(0)
    a, b = _emb(rng.normal(size=(4, 3)), '1'), _emb(rng.normal(size=(4, 3)), '2')
    assert gev.distance(a, a) == 0.0
    assert gev.distance(a, b) == gev.distance(b, a)


def test_distance_shape_mismatch():
    with pytest.raises(ValueError):
        gev.distance(np.zeros((2, 3)), np.zeros((3, 3)))


def test_distance_matrix_chunks():
    rng = np.random.default_rng(1)
    probes = [_emb(rng.normal(size=(3, 2)), str(i)) for i in range(7)]
    gallery = [_emb(rng.normal(size=(3, 2)), str(i)) for i in range(5)]
    full = gev.distance_matrix(probes, gallery)
    np.testing.assert_allclose(gev.distance_matrix(probes, gallery, chunk=2), full)
    assert full[4, 2] == pytest.approx(gev.distance(probes[4], gallery[2]))


# Rank-1

def test_rank1_perfect():
    gallery = [_emb([float(i)], str(i)) for i in range(4)]
    probes = [_emb([i + 0.1], str(i), 'CL', split='probe') for i in range(4)]
    report = gev.rank1(gallery, probes, PLAIN)
    assert report.rank1 == {'CL': 100.0}
    assert report.mean == 100.0
    assert report.cmc['CL'][0] == 100.0


def test_rank1_adversarial():
    gallery = [_emb([0.], 'a'), _emb([10.], 'b')]
    probes = [_emb([9.], 'a', 'CL', split='probe'), _emb([1.], 'b', 'CL', split='probe')]
    report = gev.rank1(gallery, probes, PLAIN, ranks=2)
    assert report.rank1 == {'CL': 0.0}
    assert report.cmc['CL'] == [0.0, 100.0]


def _random_set(rng, n_subj=5, views=('000', '090', '180')):
    gallery, probes = [], []
    for subj in range(n_subj):
        centre = rng.normal(size=(2, 3))
        for view in views:
            gallery.append(_emb(centre + 0.8*rng.normal(size=(2, 3)), '%02i' % subj, 'NM', view))
            for cond in ('CL', 'BG'):
                probes.append(_emb(centre + 0.8*rng.normal(size=(2, 3)), '%02i' % subj, cond, view, split='probe'))
    return gallery, probes


def _oracle(gallery, probes, cond):
    per_view = {}
    for prb in probes:
        if prb.condition != cond: continue
        best, best_d = None, np.inf
        for gal in gallery:
            if gal.view == prb.view: continue
            dist = np.mean([np.sqrt(np.sum((p - g)**2)) for p,g in zip(prb.parts.astype(float), gal.parts.astype(float))])
            if dist < best_d: best, best_d = gal, dist
        per_view.setdefault(prb.view, []).append(best.subject_id == prb.subject_id)
    return np.mean([100*np.mean(hits) for hits in per_view.values()])


def test_rank1_matches_brute_force():
    rng = np.random.default_rng(5)
    protocol = gev.ProtocolConfig('oracle', view_exclusion=True)
    for _ in range(25):
        gallery, probes = _random_set(rng)
        report = gev.rank1(gallery, probes, protocol)
        for cond in ('CL', 'BG'):
            assert report.rank1[cond] == pytest.approx(_oracle(gallery, probes, cond), abs=1e-9)
        assert all(0 <= val <= 100 for val in report.rank1.values())


def test_rank1_relabel_and_order_invariance():
    rng = np.random.default_rng(6)
    gallery, probes = _random_set(rng)
    protocol = gev.ProtocolConfig('oracle')
    ref = gev.rank1(gallery, probes, protocol)
    
    relabel = {'%02i' % i: 'id%i' % (7*i % 5) for i in range(5)}
    def renamed(emb): return GaitEmbedding(emb.parts, relabel[emb.subject_id], emb.condition, emb.view, emb.seq, emb.meta)
    
    shuffled = [gallery[i] for i in rng.permutation(len(gallery))]
    assert gev.rank1(shuffled, probes, protocol).rank1 == ref.rank1
    assert gev.rank1([renamed(e) for e in gallery], [renamed(e) for e in probes], protocol).rank1 == ref.rank1


def test_view_exclusion_in_trace():
    rng = np.random.default_rng(7)
    gallery, probes = _random_set(rng)
    report = gev.rank1(gallery, probes, gev.ProtocolConfig('x', view_exclusion=True))
    assert len(report.trace) == len(probes)
    for rec in report.trace: assert rec['match'][2] != rec['probe'][2]
    
    # The same-view gallery entry is a perfect match when exclusion is off:
    same = [_emb(gal.parts, gal.subject_id, 'CL', gal.view, split='probe') for gal in gallery]
    assert gev.rank1(gallery, same, gev.ProtocolConfig('y', view_exclusion=False)).rank1 == {'CL': 100.0}


def test_rank1_drops_probes_without_gallery_subject(capsys):
    gallery = [_emb([0.], 'a', view='000'), _emb([5.], 'b', view='090')]
    probes = [_emb([0.1], 'a', 'CL', '090', split='probe'), _emb([5.1], 'b', 'CL', '090', split='probe'),
              _emb([3.], 'c', 'CL', '180', split='probe')]
    report = gev.rank1(gallery, probes, gev.ProtocolConfig('x', view_exclusion=True))
    
    assert report.coverage['n_evaluated'] == 1
    assert sorted(map(tuple, report.coverage['dropped'])) == [('b', 'CL', '090', '01'), ('c', 'CL', '180', '01')]
    assert report.rank1 == {'CL': 100.0}
    assert 'dropped' in capsys.readouterr().err


def test_rank1_view_vs_sequence_average():
    gallery = [_emb([0.], 'a', view='000'), _emb([10.], 'b', view='000')]
    probes = [_emb([0.5], 'a', 'CL', '090', split='probe'),
              _emb([1.0], 'b', 'CL', '090', split='probe'),
              _emb([9.0], 'b', 'CL', '090', split='probe'),
              _emb([1.0], 'a', 'CL', '180', split='probe')]
    report = gev.rank1(gallery, probes, PLAIN)
    assert report.per_view['CL'] == {'090': pytest.approx(200/3), '180': 100.0}
    assert report.rank1['CL'] == pytest.approx((200/3 + 100)/2)
    assert gev.rank1(gallery, probes, PLAIN, view_average=False).rank1['CL'] == pytest.approx(75.0)


def test_rank1_empty_sets(capsys):
    report = gev.rank1([], [_emb([0.], 'a', split='probe')], PLAIN)
    assert report.rank1 == {} and report.coverage['n_evaluated'] == 0
    assert 'empty' in capsys.readouterr().err


def test_report_table_and_files(tmp_path):
    rng = np.random.default_rng(8)
    gallery, probes = _random_set(rng)
    report = gev.rank1(gallery, probes, gev.ProtocolConfig('x'))
    
    table = report.table()
    assert list(table.index) == ['000', '090', '180', 'mean']
    assert table.loc['mean', 'mean'] == pytest.approx(report.mean)
    
    report.write(tmp_path / 'report')
    data = json.loads((tmp_path / 'report.json').read_text())
    assert data['rank1'] == pytest.approx(report.rank1)
    assert len(data['trace']) == len(probes)
    assert (tmp_path / 'report_table.txt').is_file()
    
    report.write(tmp_path / 'rep.v1')
    assert (tmp_path / 'rep.v1.json').is_file()
    assert (tmp_path / 'rep.v1_table.txt').is_file()
    assert not (tmp_path / 'rep.json').exists()


# Protocols

def test_bundled_protocols():
    ccpg = gev.load_protocol('ccpg')
    assert ccpg.view_exclusion
    assert [name for name,_ in ccpg.per_condition_report] == ['CL', 'UP', 'DN', 'BG']
    assert ccpg.gallery_rule.conditions == ('NM',)
    
    synth = gev.load_protocol('synthetic')
    assert synth.probe_rule.views == ('270',)


def test_protocol_file(tmp_path):
    path = tmp_path / 'p.json'
    path.write_text(json.dumps({'name': 'mine', 'gallery': {'seqs': ['01']},
                                'per_condition_report': [{'name': 'all', 'conditions': ['CL', 'BG']}]}))
    prot = gev.load_protocol(path)
    assert prot.name == 'mine' and prot.gallery_rule.split == 'gallery'
    assert prot.per_condition_report == (('all', ('CL', 'BG')),)
    assert prot.view_average is None


def test_protocol_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        gev.load_protocol(tmp_path / 'none.json')
    (tmp_path / 'bad.json').write_text('{"name": "x",\n "gallery": }')
    with pytest.raises(ValueError, match='line 2'):
        gev.load_protocol(tmp_path / 'bad.json')
    with pytest.raises(ValueError):
        gev.protocol_from_dict({'name': 'x', 'galery': {}})


def test_split_by_protocol(synth_manifest):
    gallery, probes = gev.split_by_protocol(synth_manifest.entries, gev.load_protocol('synthetic'))
    assert gallery and probes
    assert all(rec.split == 'gallery' and rec.condition == 'NM' for rec in gallery)
    assert all(rec.view == '270' for rec in probes)
    
    overlap = gev.ProtocolConfig('o', gev.SelectionRule(), gev.SelectionRule())
    with pytest.raises(ValueError):
        gev.split_by_protocol(synth_manifest.entries, overlap)


# Runners

def test_extraction_is_deterministic(trained_run, synth_manifest):
    model, cfg, _ = gev.load_model(trained_run / 'checkpoint.bin')
    provider = gbb.build_provider(cfg)
    records = synth_manifest.split('probe')[:2]
    
    first, errors = gev.extract_embeddings(records, model, provider, cfg)
    second, _ = gev.extract_embeddings(records, model, provider, cfg)
    assert not errors
    assert [e.key for e in first] == [r.key for r in records]
    for a,b in zip(first, second): np.testing.assert_array_equal(a.parts, b.parts)
    assert first[0].parts.shape == (cfg.parts, cfg.embedding_dim)


def test_extraction_collects_errors(trained_run, synth_manifest, capsys):
    model, cfg, _ = gev.load_model(trained_run / 'checkpoint.bin')
    good = synth_manifest.split('probe')[0]
    bad = gin.SequenceRecord('999', 'NM', '000', '01', 'probe', ('/nonexistent/000.png',))
    
    embeddings, errors = gev.extract_embeddings([bad, good], model, gbb.build_provider(cfg), cfg)
    assert [e.key for e in embeddings] == [good.key]
    assert errors[0][0] == bad.name
    
    assert gev.extract_embeddings([], model, None, cfg) == ([], [])
    assert 'no sequences' in capsys.readouterr().err


def test_load_model_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        gev.load_model(tmp_path / 'none.bin')


def test_run_eval_and_cross_domain(trained_run, synth_manifest):
    protocol = gev.load_protocol('synthetic')
    report = gev.run_eval(trained_run / 'checkpoint.bin', synth_manifest, protocol, verbosity=0)
    
    assert set(report.rank1) == {'NM', 'CL'}
    assert all(0 <= val <= 100 for val in report.rank1.values())
    assert report.meta['train_domain'] == synth_manifest.dataset_name
    assert report.meta['test_domain'] == synth_manifest.dataset_name
    assert report.coverage['extraction_errors'] == []
    
    cross = gev.cross_domain_run(trained_run / 'checkpoint.bin', synth_manifest, protocol, verbosity=0)
    assert cross.rank1 == report.rank1
    assert cross.meta == report.meta


def test_run_eval_with_given_model(trained_run, synth_manifest):
    model, cfg, _ = gev.load_model(trained_run / 'checkpoint.bin')
    cache = gbb.FeatureCache(gbb.build_provider(cfg), None, synth_manifest.dataset_name)
    report = gev.run_eval('in-memory', synth_manifest, gev.load_protocol('synthetic'), cache=cache, model=model,
                          cfg=cfg, train_domain='other', verbosity=0)
    assert report.meta['train_domain'] == 'other'
    assert report.meta['checkpoint'] == 'in-memory'
    assert gcfg.config_hash(cfg) == gcfg.config_hash(gcfg.Config(**TINY))
