import numpy as np
import pytest
from censurv import backend as B
from censurv.dataio import SyntheticConfig, generate_synthetic
from censurv.survstat import SurvivalRecord


def pytest_configure(config):
    config.addinivalue_line('markers',
                            'slow: multi-seed training studies, deselect with -m "not slow"')


def numeric_gradient(f, values, h):
    """f(values) -> float, 中心差分.
    """
    grad = np.zeros_like(values)
    it = np.nditer(values, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        original = values[idx]
        values[idx] = original + h
        up = f(values)
        values[idx] = original - h
        down = f(values)
        values[idx] = original
        grad[idx] = (up - down) / (2 * h)
    return grad


def check_gradients(build, arrays, h=1e-4, rtol=1e-5, floor=1e-3):
    """build(*tensors) -> 标量张量.
    对每个输入比较解析梯度与中心差分, 步长h与h/2差分不一致的坐标视为落在拐点上, 跳过.
    数值梯度取两个步长的Richardson外推, 相对误差的分母为max(floor, |梯度|).
    返回最大相对误差.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [B.Tensor(a.copy(), requires_grad=True, name='x%d' % i)
               for i, a in enumerate(arrays)]
    root = build(*tensors)
    B.backward(root)
    worst = 0.0
    for i, a in enumerate(arrays):
        def f(v, i=i):
            inputs = [B.constant(x) for x in arrays]
            inputs[i] = B.constant(v)
            return build(*inputs).item()
        coarse = numeric_gradient(f, a, h)
        fine = numeric_gradient(f, a, h / 2)
        smooth = np.abs(coarse - fine) <= 1e-4 * np.maximum(1.0, np.abs(coarse))
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
        numeric = (4.0 * fine - coarse) / 3.0
        error = np.abs(analytic - numeric) / np.maximum(floor, np.maximum(np.abs(analytic),
                                                                          np.abs(numeric)))
        if np.any(smooth):
            worst = max(worst, float(np.max(error[smooth])))
    assert worst < rtol, 'max relative gradient error %g' % worst
    return worst


def brute_force_cindex(times, events, risks):
    concordant, comparable = 0.0, 0
    n = len(times)
    for i in range(n):
        for j in range(n):
            if events[i] and times[i] < times[j]:
                comparable += 1
                if risks[i] > risks[j]:
                    concordant += 1
                elif risks[i] == risks[j]:
                    concordant += 0.5
    return concordant / comparable if comparable else None


def make_records(times, events, prefix='p'):
    return [SurvivalRecord('%s%02d' % (prefix, i), t, e)
            for i, (t, e) in enumerate(zip(times, events))]


def make_scores(records, risks):
    return {r.patient_id: float(v) for r, v in zip(records, risks)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def small_cohort():
    return generate_synthetic(SyntheticConfig(
        num_patients=30,
        censor_rate=0.4,
        grid_size=2,
        pathology_dim=6,
        genomic_dim=4,
        seed=7,
    ))
