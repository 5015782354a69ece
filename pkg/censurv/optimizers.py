import numpy as np
from collections import OrderedDict
from censurv.exceptions import ConfigError, ValidationError


class AdamState(object):
    """Adam的一阶/二阶矩估计与步数.
    """
    def __init__(self, beta_1=0.9, beta_2=0.999, epsilon=1e-8):
        if not (0. <= beta_1 < 1. and 0. <= beta_2 < 1.):
            raise ConfigError('Adam betas must lie in [0, 1)')
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.first_moment = OrderedDict()
        self.second_moment = OrderedDict()
        self.step_count = 0


def adam_step(params, grads, state, lr):
    """执行一步带偏差修正的Adam更新, 原地修改参数, 返回(params, state).
    # Reference:
        [Adam - A Method for Stochastic Optimization]
        (https://arxiv.org/abs/1412.6980)
    """
    for p in params:
        if p.name not in grads or grads[p.name] is None:
            raise ValidationError('missing gradient for parameter %s' % p.name)
        if np.shape(grads[p.name]) != p.shape:
            raise ValidationError('gradient for %s has shape %s, expected %s'
                                  % (p.name, np.shape(grads[p.name]), p.shape))

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta_1, state.beta_2
    for p in params:
        g = np.asarray(grads[p.name], dtype=p.values.dtype)
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m_t = b1 * m + (1. - b1) * g
        v_t = b2 * v + (1. - b2) * np.square(g)
        state.first_moment[p.name] = m_t
        state.second_moment[p.name] = v_t
        m_corr_t = m_t / (1. - b1 ** t)
        v_corr_t = np.sqrt(v_t / (1. - b2 ** t))
        p.values = p.values - lr * m_corr_t / (v_corr_t + state.epsilon)
    return params, state


class Adam(object):
    """Adam优化器, 状态保存在AdamState中.
    """
    def __init__(self, learning_rate=3e-5, beta_1=0.9, beta_2=0.999,
                 epsilon=1e-8, **kwargs):
        self.learning_rate = kwargs.pop('lr', learning_rate)
        if self.learning_rate <= 0:
            raise ConfigError('learning_rate must be positive')
        self.state = AdamState(beta_1, beta_2, epsilon)

    @property
    def iterations(self):
        return self.state.step_count

    def apply_gradients(self, params, grads):
        adam_step(params, grads, self.state, self.learning_rate)

    def get_config(self):
        return {
            'learning_rate': self.learning_rate,
            'beta_1': self.state.beta_1,
            'beta_2': self.state.beta_2,
            'epsilon': self.state.epsilon,
        }
