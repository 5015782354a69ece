import numpy as np
from censurv import backend as B
from censurv.backend import Parameter
from censurv.exceptions import ShapeError, ValidationError


def glorot_uniform(shape, rng):
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    limit = np.sqrt(6. / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def zeros(shape, rng=None):
    return np.zeros(shape)


_INITIALIZERS = {
    'glorot_uniform': glorot_uniform,
    'zeros': zeros,
}


def get_initializer(identifier):
    if callable(identifier):
        return identifier
    if identifier not in _INITIALIZERS:
        raise ValidationError('unknown initializer: %s' % identifier)
    return _INITIALIZERS[identifier]


_ACTIVATIONS = {
    None: lambda x: x,
    'linear': lambda x: x,
    'relu': B.relu,
}


class Layer(object):
    """层的基类.
    第一次调用时根据输入形状build权重, 权重名为'<层名>/<权重名>'.
    """
    def __init__(self, name=None, seed=None, **kwargs):
        self.name = name or self.__class__.__name__
        self.built = False
        self._weights = []
        self._rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)

    def add_weight(self, shape, initializer='glorot_uniform', name=None):
        initializer = get_initializer(initializer)
        weight = Parameter(initializer(tuple(shape), self._rng),
                           name='%s/%s' % (self.name, name))
        self._weights.append(weight)
        return weight

    @property
    def weights(self):
        weights = list(self._weights)
        for layer in self.sublayers:
            weights.extend(layer.weights)
        return weights

    @property
    def sublayers(self):
        return []

    def build(self, input_shape):
        self.built = True

    def __call__(self, inputs, **kwargs):
        if not self.built:
            self.build(self.input_shape_of(inputs))
        return self.call(inputs, **kwargs)

    def input_shape_of(self, inputs):
        if isinstance(inputs, (list, tuple)):
            return [x.shape for x in inputs]
        return inputs.shape

    def call(self, inputs, **kwargs):
        raise NotImplementedError

    def get_config(self):
        return {'name': self.name}


class Dense(Layer):
    """全连接层, 作用在输入的最后一维.
    """
    def __init__(self,
                 units,
                 activation=None,
                 use_bias=True,
                 kernel_initializer='glorot_uniform',
                 bias_initializer='zeros',
                 **kwargs):
        super(Dense, self).__init__(**kwargs)
        self.units = units
        self.activation = activation
        self.use_bias = use_bias
        self.kernel_initializer = kernel_initializer
        self.bias_initializer = bias_initializer

    def build(self, input_shape):
        super(Dense, self).build(input_shape)
        self.kernel = self.add_weight(
            shape=(input_shape[-1], self.units),
            initializer=self.kernel_initializer,
            name='kernel',
        )
        if self.use_bias:
            self.bias = self.add_weight(shape=(self.units,), initializer=self.bias_initializer,
                                        name='bias')

    def call(self, inputs, **kwargs):
        if inputs.shape[-1] != self.kernel.shape[0]:
            raise ShapeError('%s' % self.name, [inputs.shape, self.kernel.shape])
        o = B.matmul(inputs, self.kernel)
        if self.use_bias:
            o = o + self.bias
        return _ACTIVATIONS[self.activation](o)

    def get_config(self):
        config = {
            'units': self.units,
            'activation': self.activation,
            'use_bias': self.use_bias,
            'kernel_initializer': self.kernel_initializer,
            'bias_initializer': self.bias_initializer,
        }
        base_config = super(Dense, self).get_config()
        config.update(base_config)
        return config


class MLP(Layer):
    """两层感知机: Dense(hidden, relu) -> Dense(units).
    """
    def __init__(self, hidden_units, units=1, use_bias=True, **kwargs):
        super(MLP, self).__init__(**kwargs)
        self.hidden_units = hidden_units
        self.units = units
        self.use_bias = use_bias
        self.h_dense = Dense(hidden_units, activation='relu', use_bias=use_bias,
                             name='%s-Hidden' % self.name, seed=self._rng)
        self.o_dense = Dense(units, use_bias=use_bias,
                             name='%s-Output' % self.name, seed=self._rng)

    def build(self, input_shape):
        super(MLP, self).build(input_shape)
        self.h_dense.build(input_shape)
        self.o_dense.build(tuple(input_shape[:-1]) + (self.hidden_units,))

    @property
    def sublayers(self):
        return [self.h_dense, self.o_dense]

    def call(self, inputs, **kwargs):
        return self.o_dense(self.h_dense(inputs))

    def get_config(self):
        config = {
            'hidden_units': self.hidden_units,
            'units': self.units,
            'use_bias': self.use_bias,
        }
        base_config = super(MLP, self).get_config()
        config.update(base_config)
        return config


class SAGEConv(Layer):
    """GraphSAGE均值聚合层: h_v <- ReLU(W · concat(h_v, mean_{u in N(v)} h_u)).
    输入为(node_features, mean_adjacency), 其中mean_adjacency每行是邻居的均值权重,
    孤立节点那一行全为0, 因此其邻居均值是零向量.
    # Reference:
        [Inductive Representation Learning on Large Graphs]
        (https://arxiv.org/abs/1706.02216)
    """
    def __init__(self, units, **kwargs):
        super(SAGEConv, self).__init__(**kwargs)
        self.units = units

    def build(self, input_shape):
        super(SAGEConv, self).build(input_shape)
        feature_shape = input_shape[0]
        self.kernel = self.add_weight(
            shape=(2 * feature_shape[-1], self.units),
            name='kernel',
        )

    def call(self, inputs, **kwargs):
        h, adjacency = inputs
        if self.kernel.shape[0] != 2 * h.shape[-1]:
            raise ShapeError(self.name, [h.shape, self.kernel.shape],
                             'kernel expects %d input features' % (self.kernel.shape[0] // 2))
        neighbours = B.matmul(adjacency, h)
        return B.relu(B.matmul(B.concat([h, neighbours], axis=-1), self.kernel))

    def get_config(self):
        config = {'units': self.units}
        base_config = super(SAGEConv, self).get_config()
        config.update(base_config)
        return config


class AttentionPooling(Layer):
    """注意力池化: H = sum_n softmax_n(MLP(V_n)) * V_n.
    MLP为d -> d/2 -> 1的两层感知机, softmax在节点维上做.
    输入(..., N, d), 输出(..., d).
    """
    def __init__(self, hidden_units=None, **kwargs):
        super(AttentionPooling, self).__init__(**kwargs)
        self.hidden_units = hidden_units

    def build(self, input_shape):
        super(AttentionPooling, self).build(input_shape)
        hidden = self.hidden_units or max(1, input_shape[-1] // 2)
        self.score_mlp = MLP(hidden, 1, name='%s-MLP' % self.name, seed=self._rng)
        self.score_mlp.build(input_shape)

    @property
    def sublayers(self):
        return [self.score_mlp] if self.built else []

    def attention_weights(self, inputs):
        if inputs.ndim < 2 or inputs.shape[-2] == 0:
            raise ShapeError(self.name, [inputs.shape], 'attention pooling needs N >= 1 nodes')
        scores = self.score_mlp(inputs)                     # (..., N, 1)
        return B.softmax(scores, axis=-2)

    def call(self, inputs, **kwargs):
        weights = self.attention_weights(inputs)
        return B.reduce_sum(weights * inputs, axis=-2)

    def get_config(self):
        config = {'hidden_units': self.hidden_units}
        base_config = super(AttentionPooling, self).get_config()
        config.update(base_config)
        return config


class Model(Layer):
    """层容器, 负责参数登记、快照和保存.
    """
    def __init__(self, **kwargs):
        super(Model, self).__init__(**kwargs)
        self._layers = []

    def track(self, layer):
        self._layers.append(layer)
        return layer

    @property
    def sublayers(self):
        return list(self._layers)

    @property
    def weights(self):
        weights = super(Model, self).weights
        names = [w.name for w in weights]
        if len(names) != len(set(names)):
            duplicated = sorted(set(n for n in names if names.count(n) > 1))
            raise ValidationError('duplicated parameter names: %s' % ', '.join(duplicated))
        return weights

    def get_weights(self):
        return [w.values.copy() for w in self.weights]

    def set_weights(self, values):
        weights = self.weights
        if len(values) != len(weights):
            raise ValidationError('expected %d weight arrays, got %d' % (len(weights), len(values)))
        for w, v in zip(weights, values):
            w.assign(v)

    def save_weights(self, path):
        np.savez(path, **{w.name: w.values for w in self.weights})

    def load_weights(self, path):
        with np.load(path) as data:
            for w in self.weights:
                if w.name not in data:
                    raise ValidationError('%s has no weight %s' % (path, w.name))
                w.assign(data[w.name])
