import numpy as np
import pytest
from censurv.ecmc import (
    ConfidenceTracker,
    EcmcConfig,
    RelabelDecision,
    apply_relabels,
    dmac_update,
    random_select,
    relabel,
    relabel_all,
    relabel_mae,
    risk_order,
    select_reliable,
)
from censurv.survstat import SurvivalRecord, concordance_index
from censurv.exceptions import ConfigError, UndefinedStatisticError, ValidationError
from conftest import make_records, make_scores


def test_dmac_single_rank_change():
    tracker = ConfidenceTracker(['a'], lambda_=0.4, initial_ranks={'a': 0})
    dmac_update(tracker, {'a': 1})
    assert tracker.tau['a'] == pytest.approx(0.3)
    assert tracker.epoch == 1


def test_dmac_stable_rank_series():
    tracker = ConfidenceTracker(['a'], lambda_=0.4)
    dmac_update(tracker, {'a': 3})
    assert tracker.tau['a'] == pytest.approx(0.6)
    dmac_update(tracker, {'a': 3})
    assert tracker.tau['a'] == pytest.approx(0.84)
    for _ in range(30):
        dmac_update(tracker, {'a': 3})
    assert tracker.tau['a'] == pytest.approx(1.0, abs=1e-10)


def test_dmac_lambda_one_stays_zero():
    tracker = ConfidenceTracker(['a', 'b'], lambda_=1.0)
    for t in range(5):
        dmac_update(tracker, {'a': t, 'b': 4 - t})
    assert tracker.tau == {'a': 0.0, 'b': 0.0}


def test_dmac_bounded(rng):
    ids = ['p%02d' % i for i in range(12)]
    tracker = ConfidenceTracker(ids, lambda_=0.4)
    for _ in range(10):
        ranks = dict(zip(ids, rng.permutation(len(ids))))
        dmac_update(tracker, ranks)
        for tau in tracker.tau.values():
            assert 0. <= tau <= tracker.bound() + 1e-12


def test_dmac_requires_all_ranks():
    tracker = ConfidenceTracker(['a', 'b'])
    with pytest.raises(ValidationError):
        dmac_update(tracker, {'a': 0})


def _tracker_with(tau):
    tracker = ConfidenceTracker(list(tau))
    tracker.tau.update(tau)
    tracker.epoch = 1
    return tracker


def test_select_reliable_top_fraction():
    records = make_records([5, 6, 7, 8], [False] * 4)
    tracker = _tracker_with(dict(zip(['p00', 'p01', 'p02', 'p03'], [0.9, 0.1, 0.8, 0.2])))
    assert select_reliable(tracker, records, EcmcConfig(select_fraction=0.5)) == ['p00', 'p02']
    assert select_reliable(tracker, records, EcmcConfig(select_fraction=1.0)) == \
        ['p00', 'p02', 'p03', 'p01']


def test_select_reliable_only_censored_and_ties_by_id():
    records = make_records([5, 6, 7], [True, False, False])
    tracker = _tracker_with({'p00': 1.0, 'p01': 0.5, 'p02': 0.5})
    assert select_reliable(tracker, records, EcmcConfig(select_fraction=1.0)) == ['p01', 'p02']
    assert select_reliable(tracker, records, EcmcConfig(select_fraction=0.1)) == ['p01']


def test_select_reliable_edge_cases():
    records = make_records([1, 2], [True, True])
    assert select_reliable(_tracker_with({'p00': 0.5, 'p01': 0.5}), records, EcmcConfig()) == []
    with pytest.raises(ValidationError):
        select_reliable(ConfidenceTracker(['p00', 'p01']), records, EcmcConfig())


def test_random_select_same_size_and_deterministic():
    records = make_records(range(1, 21), [i % 2 == 0 for i in range(20)])
    config = EcmcConfig(select_fraction=0.25)
    picked = random_select(records, config, np.random.default_rng(5))
    assert len(picked) == 3
    censored = {r.patient_id for r in records if r.censored}
    assert set(picked) <= censored
    assert picked == random_select(records, config, np.random.default_rng(5))


def test_relabel_no_candidate():
    records = make_records([10, 3, 8], [False, True, True])
    scores = make_scores(records, [0.5, 0.9, 0.1])
    decision = relabel('p00', records, scores, EcmcConfig(K=1))
    assert not decision.applied
    assert decision.new_time == decision.old_time == 10.
    assert apply_relabels(records, [decision]) == records


def test_relabel_single_candidate():
    records = make_records([5, 3, 8], [False, True, True])
    scores = make_scores(records, [0.5, 0.9, 0.1])
    decision = relabel('p00', records, scores, EcmcConfig(K=1))
    assert decision.applied
    assert decision.new_time == 8.
    assert decision.new_time > decision.old_time


def test_relabel_window_limits_candidates():
    records = make_records([2, 3, 4, 9], [False, True, True, True])
    scores = make_scores(records, [0.5, 0.9, 0.4, 0.0])
    decision = relabel('p00', records, scores, EcmcConfig(K=1))
    assert decision.new_time in (3., 4.)
    wide = relabel('p00', records, scores, EcmcConfig(K=3))
    assert wide.applied


def test_relabel_rejects_uncensored_and_unknown():
    records = make_records([5, 3], [True, False])
    scores = make_scores(records, [0.1, 0.2])
    with pytest.raises(ValidationError):
        relabel('p00', records, scores, EcmcConfig())
    with pytest.raises(ValidationError):
        relabel('zz', records, scores, EcmcConfig())


def _exhaustive_relabel(patient, records, scores, K):
    ids = [r.patient_id for r in records]
    k = ids.index(patient)
    risks = [scores[pid] for pid in ids]
    order = risk_order(ids, risks)
    position = order.index(k)
    window = order[max(0, position - K):position] + order[position + 1:position + K + 1]
    old_time = records[k].time
    best = None
    for j in window:
        candidate = records[j].time
        if candidate <= old_time:
            continue
        trial = list(records)
        trial[k] = SurvivalRecord(patient, candidate, True)
        try:
            cindex = concordance_index(trial, scores)
        except UndefinedStatisticError:
            continue
        if best is None or cindex > best[0] or (cindex == best[0] and candidate < best[1]):
            best = (cindex, candidate)
    return None if best is None else best[1]


def test_relabel_matches_exhaustive_search(rng):
    checked = 0
    for _ in range(300):
        n = int(rng.integers(3, 11))
        times = rng.integers(1, 15, size=n).astype(float)
        events = rng.random(n) < 0.6
        events[0] = False
        records = make_records(times, events)
        scores = make_scores(records, rng.integers(0, 6, size=n).astype(float))
        K = int(rng.integers(1, 4))
        expected = _exhaustive_relabel('p00', records, scores, K)
        decision = relabel('p00', records, scores, EcmcConfig(K=K))
        if expected is None:
            assert not decision.applied
        else:
            checked += 1
            assert decision.applied
            assert decision.new_time == expected
    assert checked > 50


def test_relabel_all_uses_original_labels(rng):
    times = rng.integers(1, 20, size=10).astype(float)
    events = np.array([False, True, False, True, True, False, True, True, False, True])
    records = make_records(times, events)
    scores = make_scores(records, rng.normal(size=10))
    selected = ['p00', 'p02', 'p05']
    decisions = relabel_all(selected, records, scores, EcmcConfig(K=3))
    for pid, decision in zip(selected, decisions):
        assert decision.to_dict() == relabel(pid, records, scores, EcmcConfig(K=3)).to_dict()


def test_apply_relabels_examples():
    records = make_records([10, 4, 7, 12], [False, True, False, False])
    assert apply_relabels(records, []) == records
    updated = apply_relabels(records, [RelabelDecision('p00', 10, 14, True)])
    assert updated[0] == SurvivalRecord('p00', 14., True)
    assert updated[1:] == records[1:]
    assert records[0] == SurvivalRecord('p00', 10., False)
    both = apply_relabels(records, [RelabelDecision('p00', 10, 14, True),
                                    RelabelDecision('p03', 12, 13, True)])
    assert both[0].event and both[3].event
    assert both[1] is records[1] and both[2] is records[2]
    assert len(both) == len(records)


def test_apply_relabels_errors():
    records = make_records([10, 4], [False, True])
    with pytest.raises(ValidationError):
        apply_relabels(records, [RelabelDecision('p01', 4, 6, True)])
    with pytest.raises(ValidationError):
        apply_relabels(records, [RelabelDecision('zz', 4, 6, True)])
    with pytest.raises(ValidationError):
        RelabelDecision('p00', 10, 9, True)


def test_relabel_mae():
    decisions = [RelabelDecision('a', 2, 8, True),
                 RelabelDecision('b', 4, 5, True),
                 RelabelDecision('c', 3, 3, False)]
    audit = relabel_mae(decisions, {'a': 10., 'b': 6., 'c': 9.})
    assert audit == {'count': 2, 'raw_mae': pytest.approx(5.0), 'updated_mae': pytest.approx(1.5)}
    assert relabel_mae([], {}) == {'count': 0, 'raw_mae': None, 'updated_mae': None}


def test_ecmc_config_validation():
    assert EcmcConfig().get_config()['lambda'] == 0.4
    with pytest.raises(ConfigError):
        EcmcConfig(K=0)
    with pytest.raises(ConfigError):
        EcmcConfig(select_fraction=0.)
    with pytest.raises(ConfigError):
        EcmcConfig(preheat_epochs=10, total_epochs=10)
