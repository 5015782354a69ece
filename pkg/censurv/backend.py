import numpy as np
from collections import OrderedDict
from censurv.exceptions import ShapeError, ValidationError

floatx = np.float64


class Tensor(object):
    """可微张量.
    values为float64的ndarray, 每次前向运算都会把父节点和反向函数记录在输出上,
    因此计算图(tape)随前向过程动态建立.
    """
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=floatx)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self.op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def numpy(self):
        return self.values

    def item(self):
        if self.size != 1:
            raise ShapeError('item', [self.shape], 'tensor is not a scalar')
        return float(self.values.reshape(()))

    def __repr__(self):
        return 'Tensor(shape=%s, op=%s, requires_grad=%s)' % (
            self.shape, self.op, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ValidationError('tensor division is only supported by constants')
        return mul(self, 1.0 / np.asarray(other, dtype=floatx))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """模型权重, 名字在同一个模型中唯一.
    """
    def __init__(self, values, name):
        assert name, 'Parameter needs a name'
        super(Parameter, self).__init__(values, requires_grad=True, name=name)

    @property
    def tensor(self):
        return self

    def assign(self, values):
        values = np.asarray(values, dtype=floatx)
        if values.shape != self.shape:
            raise ShapeError('assign', [self.shape, values.shape],
                             'parameter %s' % self.name)
        self.values = values.copy()


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x):
    """不参与求导的常量.
    """
    return Tensor(x, requires_grad=False)


def _record(values, parents, backward, op):
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=requires_grad)
    out.op = op
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """把广播后的梯度求和还原到原始形状.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape])


def _normalize_axis(op, x, axis):
    if x.ndim == 0:
        raise ShapeError(op, [x.shape], 'cannot reduce a scalar')
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(op, [x.shape], 'axis %d out of range' % axis)
    return axis % x.ndim


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _record(a.values + b.values, (a, b), backward, 'add')


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _record(a.values - b.values, (a, b), backward, 'sub')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)

    def backward(g):
        return (_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape))
    return _record(a.values * b.values, (a, b), backward, 'mul')


def neg(x):
    x = as_tensor(x)
    return _record(-x.values, (x,), lambda g: (-g,), 'neg')


def matmul(a, b):
    """矩阵乘法, 支持前导batch维广播, 比如(P, N, N) @ (P, N, d)或(P, N, d) @ (d, k).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', [a.shape, b.shape])
    try:
        values = np.matmul(a.values, b.values)
    except ValueError:
        raise ShapeError('matmul', [a.shape, b.shape])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _record(values, (a, b), backward, 'matmul')


def relu(x):
    """ReLU, 在0处取次梯度0.
    """
    x = as_tensor(x)
    mask = x.values > 0
    return _record(np.where(mask, x.values, 0.0), (x,),
                   lambda g: (g * mask,), 'relu')


def exp(x):
    x = as_tensor(x)
    values = np.exp(x.values)
    return _record(values, (x,), lambda g: (g * values,), 'exp')


def log(x):
    x = as_tensor(x)
    if np.any(x.values <= 0):
        raise ValidationError('log of a non-positive value')
    return _record(np.log(x.values), (x,), lambda g: (g / x.values,), 'log')


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _normalize_axis('softmax', x, axis)
    if x.shape[axis] == 0:
        raise ShapeError('softmax', [x.shape], 'empty axis %d' % axis)
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)
    return _record(y, (x,), backward, 'softmax')


def log_sum_exp(x, axis=-1, keepdims=False):
    """数值稳定的log(sum(exp(x))), 允许-inf元素(被屏蔽的位置).
    """
    x = as_tensor(x)
    axis = _normalize_axis('log_sum_exp', x, axis)
    if x.shape[axis] == 0:
        raise ShapeError('log_sum_exp', [x.shape], 'empty axis %d' % axis)
    m = np.max(x.values, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValidationError('log_sum_exp over a slice without finite entries')
    e = np.exp(x.values - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    weights = e / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)
    values = out if keepdims else np.squeeze(out, axis=axis)
    return _record(values, (x,), backward, 'log_sum_exp')


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is not None:
        axis = _normalize_axis('sum', x, axis)
    values = np.sum(x.values, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _record(values, (x,), backward, 'sum')


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        count = x.shape[_normalize_axis('mean', x, axis)]
    if count == 0:
        raise ShapeError('mean', [x.shape], 'mean over an empty axis')
    out = reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)
    out.op = 'mean'
    return out


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError('concat', [], 'nothing to concatenate')
    ref = tensors[0]
    axis = _normalize_axis('concat', ref, axis)
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError('concat', [s.shape for s in tensors])
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    values = np.concatenate([t.values for t in tensors], axis=axis)
    return _record(values, tensors, backward, 'concat')


def transpose(x, axes=None):
    x = as_tensor(x)
    inverse = None if axes is None else np.argsort(axes)
    return _record(np.transpose(x.values, axes), (x,),
                   lambda g: (np.transpose(g, inverse),), 'transpose')


def reshape(x, shape):
    x = as_tensor(x)
    try:
        values = np.reshape(x.values, shape)
    except ValueError:
        raise ShapeError('reshape', [x.shape, shape])
    return _record(values, (x,), lambda g: (np.reshape(g, x.shape),), 'reshape')


def getitem(x, index):
    x = as_tensor(x)

    def backward(g):
        grad = np.zeros_like(x.values)
        np.add.at(grad, index, g)
        return (grad,)
    return _record(x.values[index], (x,), backward, 'getitem')


def take(x, indices, axis=0):
    """按行(或指定轴)收集.
    """
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=int)
    axis = _normalize_axis('take', x, axis)

    def backward(g):
        grad = np.zeros_like(x.values)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)
    return _record(np.take(x.values, indices, axis=axis), (x,), backward, 'take')


def l2_normalize(x, axis=-1):
    """沿axis做L2归一化, 零向量没有方向, 直接报错.
    """
    x = as_tensor(x)
    axis = _normalize_axis('l2_normalize', x, axis)
    norm = np.sqrt(np.sum(x.values ** 2, axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ValidationError('l2_normalize: zero-norm vector, direction undefined')
    y = x.values / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,)
    return _record(y, (x,), backward, 'l2_normalize')


def cosine_similarity(x, y, axis=-1):
    """余弦相似度, 两个向量得到标量; 两个矩阵按行得到向量. 输出截断在[-1, 1].
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError('cosine_similarity', [x.shape, y.shape])
    axis = _normalize_axis('cosine_similarity', x, axis)
    nx = np.sqrt(np.sum(x.values ** 2, axis=axis, keepdims=True))
    ny = np.sqrt(np.sum(y.values ** 2, axis=axis, keepdims=True))
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValidationError('cosine_similarity: zero-norm vector')
    dot = np.sum(x.values * y.values, axis=axis, keepdims=True)
    c = dot / (nx * ny)

    def backward(g):
        g = np.expand_dims(g, axis)
        gx = g * (y.values / (nx * ny) - c * x.values / nx ** 2)
        gy = g * (x.values / (nx * ny) - c * y.values / ny ** 2)
        return gx, gy
    values = np.clip(np.squeeze(c, axis=axis), -1.0, 1.0)
    return _record(values, (x, y), backward, 'cosine_similarity')


OPS = {
    'matmul': matmul,
    'add': add,
    'relu': relu,
    'softmax': softmax,
    'log_sum_exp': log_sum_exp,
    'cosine_similarity': cosine_similarity,
    'concat': lambda *tensors, **kwargs: concat(list(tensors), **kwargs),
    'mean': mean,
}


def forward_op(kind, inputs, **kwargs):
    """按名字执行一个前向算子, 结果记录在计算图上.
    """
    if kind not in OPS:
        raise ValidationError('unknown op kind: %s' % kind)
    return OPS[kind](*inputs, **kwargs)


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root, parameters=None):
    """反向传播.
    从标量root出发累积梯度, 所有可达且requires_grad的张量写入.grad;
    返回parameters的{name: grad}, 不可达的参数梯度为0.
    """
    if root.size != 1:
        raise ShapeError('backward', [root.shape], 'root must be a scalar')
    parameters = list(parameters or [])
    for p in parameters:
        p.grad = None

    grads = {id(root): np.ones_like(root.values)}
    for node in reversed(_topological_order(root)):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad

    gradients = OrderedDict()
    for p in parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
        gradients[p.name] = p.grad
    return gradients
