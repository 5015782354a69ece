import math
import logging
import numpy as np
from censurv.survstat import (
    SurvivalRecord,
    concordance_counts,
    records_to_arrays,
    scores_to_array,
)
from censurv.exceptions import ConfigError, ValidationError

logger = logging.getLogger(__name__)


class EcmcConfig(object):
    """删失建模的超参数.
    K为按风险排序后每一侧的搜索窗口, select_fraction为每轮可被更新的删失样本比例.
    """
    def __init__(self,
                 K=5,
                 select_fraction=0.25,
                 lambda_=0.4,
                 preheat_epochs=60,
                 total_epochs=120):
        if int(K) < 1:
            raise ConfigError('K must be a positive integer, got %r' % K)
        if not 0. < select_fraction <= 1.:
            raise ConfigError('select_fraction must lie in (0, 1], got %r' % select_fraction)
        if not 0. <= lambda_ <= 1.:
            raise ConfigError('lambda must lie in [0, 1], got %r' % lambda_)
        if not 0 <= preheat_epochs < total_epochs:
            raise ConfigError('need 0 <= preheat_epochs < total_epochs, got %r / %r'
                              % (preheat_epochs, total_epochs))
        self.K = int(K)
        self.select_fraction = float(select_fraction)
        self.lambda_ = float(lambda_)
        self.preheat_epochs = int(preheat_epochs)
        self.total_epochs = int(total_epochs)

    def get_config(self):
        return {
            'K': self.K,
            'select_fraction': self.select_fraction,
            'lambda': self.lambda_,
            'preheat_epochs': self.preheat_epochs,
            'total_epochs': self.total_epochs,
        }


class ConfidenceTracker(object):
    """每个病人的动态动量累积置信度tau(t)与上一轮排名.
    """
    def __init__(self, patient_ids, lambda_=0.4, initial_ranks=None):
        if not 0. <= lambda_ <= 1.:
            raise ConfigError('lambda must lie in [0, 1], got %r' % lambda_)
        self.lambda_ = float(lambda_)
        self.tau = {pid: 0.0 for pid in patient_ids}
        self.previous_rank = dict(initial_ranks or {})
        self.epoch = 0

    def bound(self):
        """tau(t) <= 1 - lambda^t.
        """
        return 1.0 - self.lambda_ ** self.epoch


def dmac_update(tracker, current_ranks):
    """tau(t) = lambda * tau(t-1) + (1 - lambda) * p(t), p(t) = 1 / (1 + |rank_t - rank_{t-1}|).
    没有上一轮排名的病人以本轮排名作为上一轮排名.
    """
    missing = [pid for pid in tracker.tau if pid not in current_ranks]
    if missing:
        raise ValidationError('no rank for tracked patients: %s' % ', '.join(map(str, missing[:10])))
    lam = tracker.lambda_
    for pid in tracker.tau:
        rank = current_ranks[pid]
        previous = tracker.previous_rank.get(pid, rank)
        p = 1.0 / (1.0 + abs(rank - previous))
        tracker.tau[pid] = lam * tracker.tau[pid] + (1.0 - lam) * p
        tracker.previous_rank[pid] = rank
    tracker.epoch += 1
    return tracker


def select_reliable(tracker, records, config):
    """按tau从高到低选出前ceil(select_fraction * 删失数)个删失病人, tau相同按patient_id.
    """
    if tracker.epoch < 1:
        raise ValidationError('select_reliable needs at least one DMAC update')
    censored = [r.patient_id for r in records if r.censored]
    if not censored:
        return []
    censored.sort(key=lambda pid: (-tracker.tau.get(pid, 0.0), pid))
    return censored[:int(math.ceil(config.select_fraction * len(censored)))]


def random_select(records, config, rng):
    """不使用置信度, 均匀随机选同样数量的删失病人.
    """
    censored = sorted(r.patient_id for r in records if r.censored)
    if not censored:
        return []
    count = int(math.ceil(config.select_fraction * len(censored)))
    picked = rng.choice(len(censored), size=count, replace=False)
    return [censored[i] for i in sorted(picked)]


class RelabelDecision(object):
    def __init__(self, patient_id, old_time, new_time, applied):
        if applied and not new_time > old_time:
            raise ValidationError('relabel of %s must move time forward (%r -> %r)'
                                  % (patient_id, old_time, new_time))
        self.patient_id = patient_id
        self.old_time = float(old_time)
        self.new_time = float(new_time)
        self.applied = bool(applied)

    def to_dict(self):
        return {
            'patient_id': self.patient_id,
            'old_time': self.old_time,
            'new_time': self.new_time,
            'applied': self.applied,
        }

    def __repr__(self):
        return 'RelabelDecision(%s, %.3f -> %.3f, applied=%s)' % (
            self.patient_id, self.old_time, self.new_time, self.applied)


def _pair_counts(k, time, event, times, events, risks):
    """病人k取(time, event)时与其他所有病人构成的(一致权重, 可比较对数).
    """
    others = np.arange(len(times)) != k
    r = risks[k]
    concordant, comparable = 0.0, 0
    if event:
        later = others & (times > time)
        comparable += np.count_nonzero(later)
        concordant += np.count_nonzero(later & (r > risks)) + 0.5 * np.count_nonzero(later & (r == risks))
    earlier = others & events & (times < time)
    comparable += np.count_nonzero(earlier)
    concordant += np.count_nonzero(earlier & (risks > r)) + 0.5 * np.count_nonzero(earlier & (risks == r))
    return concordant, comparable


def risk_order(ids, risks):
    """按风险从高到低排序的下标, 风险相同按patient_id.
    """
    return sorted(range(len(ids)), key=lambda i: (-risks[i], ids[i]))


def window_candidates(position, order, times, old_time, K):
    """排序位置前后各K个邻居中, 大于删失时间的观察时间(升序去重).
    """
    window = order[max(0, position - K):position] + order[position + 1:position + K + 1]
    return sorted(set(float(times[j]) for j in window if times[j] > old_time))


def relabel(patient, records, scores, config):
    """在风险排序的K邻域内为删失病人寻找替代事件时间, 使训练集C-index最大,
    C-index相同取较小的时间; 没有大于删失时间的候选时不更新.
    """
    ids, times, events = records_to_arrays(records)
    try:
        k = ids.index(patient)
    except ValueError:
        raise ValidationError('patient %s is not in the training records' % patient)
    if events[k]:
        raise ValidationError('patient %s is not censored' % patient)
    risks = scores_to_array(records, scores)
    old_time = float(times[k])

    order = risk_order(ids, risks)
    candidates = window_candidates(order.index(k), order, times, old_time, config.K)
    if not candidates:
        return RelabelDecision(patient, old_time, old_time, applied=False)

    base_concordant, base_comparable = concordance_counts(times, events, risks)
    own_concordant, own_comparable = _pair_counts(k, old_time, False, times, events, risks)
    base_concordant -= own_concordant
    base_comparable -= own_comparable

    best_time, best_cindex = None, -np.inf
    for candidate in candidates:
        concordant, comparable = _pair_counts(k, candidate, True, times, events, risks)
        total = base_comparable + comparable
        if total == 0:
            continue
        cindex = (base_concordant + concordant) / total
        if cindex > best_cindex:
            best_time, best_cindex = candidate, cindex
    if best_time is None:
        return RelabelDecision(patient, old_time, old_time, applied=False)
    return RelabelDecision(patient, old_time, best_time, applied=True)


def relabel_all(patients, records, scores, config):
    """对选中的删失病人逐个求替代时间, 每个都相对原始标签独立评估.
    """
    decisions = [relabel(pid, records, scores, config) for pid in patients]
    logger.debug('relabel: %d selected, %d applied',
                 len(decisions), sum(d.applied for d in decisions))
    return decisions


def apply_relabels(records, decisions):
    """返回标签被改写后的副本, 原records不变; 只改(time, event), 不改特征.
    """
    index = {r.patient_id: i for i, r in enumerate(records)}
    updated = list(records)
    for decision in decisions:
        if not decision.applied:
            continue
        if decision.patient_id not in index:
            raise ValidationError('relabel target %s not in records' % decision.patient_id)
        i = index[decision.patient_id]
        if updated[i].event:
            raise ValidationError('relabel target %s is not censored' % decision.patient_id)
        updated[i] = SurvivalRecord(decision.patient_id, decision.new_time, True)
    return updated


def relabel_mae(decisions, ground_truth):
    """已更新病人上, 原删失时间与更新后时间相对真实生存时间的MAE.
    """
    applied = [d for d in decisions if d.applied and d.patient_id in ground_truth]
    if not applied:
        return {'count': 0, 'raw_mae': None, 'updated_mae': None}
    truth = np.array([ground_truth[d.patient_id] for d in applied])
    raw = np.array([d.old_time for d in applied])
    new = np.array([d.new_time for d in applied])
    return {
        'count': len(applied),
        'raw_mae': float(np.mean(np.abs(truth - raw))),
        'updated_mae': float(np.mean(np.abs(truth - new))),
    }
