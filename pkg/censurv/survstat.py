import logging
import numpy as np
from collections import namedtuple
from scipy.special import erfc
from censurv.exceptions import UndefinedStatisticError, ValidationError

logger = logging.getLogger(__name__)


class SurvivalRecord(namedtuple('SurvivalRecord', ['patient_id', 'time', 'event'])):
    """生存标签: 时间(月)与事件指示, event=True表示观察到死亡(未删失).
    """
    __slots__ = ()

    def __new__(cls, patient_id, time, event):
        time = float(time)
        if not np.isfinite(time) or time <= 0:
            raise ValidationError('patient %s: survival time must be positive, got %r'
                                  % (patient_id, time))
        return super(SurvivalRecord, cls).__new__(cls, patient_id, time, bool(event))

    @property
    def censored(self):
        return not self.event


class GroupSplit(object):
    """高/低风险分组.
    """
    def __init__(self, high_risk, low_risk):
        self.high_risk = frozenset(high_risk)
        self.low_risk = frozenset(low_risk)
        if self.high_risk & self.low_risk:
            raise ValidationError('high and low risk groups overlap')

    def __repr__(self):
        return 'GroupSplit(high=%d, low=%d)' % (len(self.high_risk), len(self.low_risk))


def records_to_arrays(records):
    """[SurvivalRecord] -> (ids, times, events).
    """
    ids = [r.patient_id for r in records]
    times = np.array([r.time for r in records], dtype=np.float64)
    events = np.array([r.event for r in records], dtype=bool)
    return ids, times, events


def scores_to_array(records, scores):
    """按records顺序取出风险分数, 检查覆盖与有限性.
    """
    try:
        risks = np.array([scores[r.patient_id] for r in records], dtype=np.float64)
    except KeyError as e:
        raise ValidationError('no risk score for patient %s' % e.args[0])
    if not np.all(np.isfinite(risks)):
        raise ValidationError('risk scores must be finite')
    return risks


def concordance_counts(times, events, risks):
    """Harrell C-index的(一致权重, 可比较对数).
    对(i, j)可比较当且仅当t_i < t_j且i为事件; 风险相同记0.5.
    """
    comparable = (times[:, None] < times[None, :]) & events[:, None]
    higher = risks[:, None] > risks[None, :]
    tied = risks[:, None] == risks[None, :]
    concordant = np.count_nonzero(comparable & higher) + 0.5 * np.count_nonzero(comparable & tied)
    return float(concordant), int(np.count_nonzero(comparable))


def concordance_index(records, scores):
    """Harrell C-index, 风险越高预后越差.
    # Reference:
        [Evaluating the Yield of Medical Tests]
        (https://doi.org/10.1001/jama.1982.03320430047030)
    """
    _, times, events = records_to_arrays(records)
    risks = scores_to_array(records, scores)
    concordant, comparable = concordance_counts(times, events, risks)
    if comparable == 0:
        raise UndefinedStatisticError('undefined C-index: no comparable pairs')
    return concordant / comparable


def kaplan_meier(records):
    """乘积极限估计, 返回[(time, survival_probability)], 每个不同的观察时间一项.
    """
    if len(records) == 0:
        raise ValidationError('kaplan_meier needs at least one record')
    _, times, events = records_to_arrays(records)
    curve = []
    survival = 1.0
    for t in np.unique(times):
        at_risk = np.count_nonzero(times >= t)
        deaths = np.count_nonzero((times == t) & events)
        survival *= 1.0 - deaths / at_risk
        curve.append((float(t), float(survival)))
    return curve


def chi2_pvalue(chi_square):
    """自由度为1的卡方分布上尾概率.
    """
    return float(erfc(np.sqrt(chi_square / 2.0)))


def logrank_test(records, split):
    """两组logrank检验, 返回(chi_square, p_value).
    方差使用超几何方差, 自由度为1.
    """
    high = [r for r in records if r.patient_id in split.high_risk]
    low = [r for r in records if r.patient_id in split.low_risk]
    if not high or not low:
        raise UndefinedStatisticError('logrank undefined: empty group (high=%d, low=%d)'
                                      % (len(high), len(low)))
    _, times, events = records_to_arrays(high + low)
    in_high = np.arange(len(times)) < len(high)
    if not events.any():
        raise UndefinedStatisticError('logrank undefined: no events')

    observed_minus_expected, variance = 0.0, 0.0
    for t in np.unique(times[events]):
        at_risk = times >= t
        n = np.count_nonzero(at_risk)
        n1 = np.count_nonzero(at_risk & in_high)
        died = (times == t) & events
        d = np.count_nonzero(died)
        d1 = np.count_nonzero(died & in_high)
        observed_minus_expected += d1 - d * (n1 / n)
        if n > 1:
            variance += n1 * (n - n1) * d * (n - d) / (n * n * (n - 1.0))
    if variance <= 0:
        raise UndefinedStatisticError('logrank undefined: zero variance')
    chi_square = observed_minus_expected ** 2 / variance
    return float(chi_square), chi2_pvalue(chi_square)


def median_split(scores):
    """按风险中位数分组, 严格高于中位数的为高风险组.
    """
    ids = list(scores)
    if not ids:
        raise ValidationError('median_split needs at least one score')
    values = np.array([scores[pid] for pid in ids], dtype=np.float64)
    median = np.median(values)
    high = [pid for pid, v in zip(ids, values) if v > median]
    low = [pid for pid, v in zip(ids, values) if v <= median]
    return GroupSplit(high, low)


def risk_ranks(scores):
    """序数排名, 风险从高到低, 相同风险按patient_id排序, 0起始.
    """
    order = sorted(scores, key=lambda pid: (-scores[pid], pid))
    return {pid: rank for rank, pid in enumerate(order)}


def safe_concordance(records, scores, default=0.5):
    """训练过程中的评估用: 没有可比较对时返回default并记录警告.
    """
    try:
        return concordance_index(records, scores)
    except UndefinedStatisticError:
        logger.warning('C-index undefined on %d records, using %.2f', len(records), default)
        return default
