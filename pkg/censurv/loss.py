import numpy as np
from censurv import backend as B
from censurv.exceptions import ShapeError, ValidationError
from censurv.survstat import records_to_arrays


def cox_loss(records, risks):
    """Cox部分似然损失(Breslow, 不做平均):
        L = sum_{i: event} [-O(i) + log sum_{j: t_j >= t_i} exp(O(j))]
    risks为与records顺序对齐的(n,)张量, 风险集包含i自身.
    没有事件的batch返回常数0.
    """
    if len(records) == 0:
        raise ValidationError('cox_loss needs a nonempty batch')
    _, times, events = records_to_arrays(records)
    risks = B.as_tensor(risks)
    n = len(records)
    if risks.shape != (n,):
        raise ShapeError('cox_loss', [risks.shape, (n,)])
    if not events.any():
        return B.constant(0.0)

    risk_set = np.where(times[None, :] >= times[:, None], 0.0, -np.inf)
    log_denominator = B.log_sum_exp(B.reshape(risks, (1, n)) + B.constant(risk_set), axis=1)
    terms = (log_denominator - risks) * B.constant(events.astype(np.float64))
    return B.reduce_sum(terms)


def alignment_loss(pair, config):
    """完整-缺失对齐损失(InfoNCE):
        L = -sum_p log( exp(s(z_p, z'_p)/phi) / sum_q exp(s(z_p, z'_q)/phi) )
    负样本为同一batch内其他病人的缺失视图表示.
    """
    z, z_prime = B.as_tensor(pair.complete), B.as_tensor(pair.incomplete)
    if z.ndim != 2 or z.shape != z_prime.shape:
        raise ShapeError('alignment_loss', [z.shape, z_prime.shape])
    n = z.shape[0]
    if n < 1:
        raise ShapeError('alignment_loss', [z.shape], 'empty batch')
    similarity = B.matmul(B.l2_normalize(z, axis=-1),
                          B.transpose(B.l2_normalize(z_prime, axis=-1)))
    logits = similarity * (1.0 / config.temperature)
    positives = logits[np.arange(n), np.arange(n)]
    return B.reduce_sum(B.log_sum_exp(logits, axis=1)) - B.reduce_sum(positives)


def total_loss(cox, cia, config):
    """L_all = alpha * L_cox + beta * L_cia.
    """
    return B.as_tensor(cox) * config.alpha + B.as_tensor(cia) * config.beta
