import numpy as np
from enum import Enum
from censurv import backend as B
from censurv.layers import Layer, SAGEConv, AttentionPooling
from censurv.exceptions import ShapeError, ValidationError

NUM_GENOMIC_EMBEDDINGS = 5


class ModalityKind(Enum):
    PATHOLOGY = 'pathology'
    GENOMIC = 'genomic'
    CLINICAL = 'clinical'


MODALITY_KINDS = (ModalityKind.PATHOLOGY, ModalityKind.GENOMIC, ModalityKind.CLINICAL)


def grid_adjacency(g):
    """g×g网格的8邻接边表, 每条无向边只存一次, 节点按行优先编号.
    """
    edges = []
    for r in range(g):
        for c in range(g):
            v = r * g + c
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < g and 0 <= cc < g:
                    edges.append((v, rr * g + cc))
    return edges


def complete_adjacency(n):
    return [(u, v) for u in range(n) for v in range(u + 1, n)]


def one_hot_clinical(categories, cardinalities):
    """每个临床变量做one-hot后拼接.
    """
    if len(categories) != len(cardinalities):
        raise ValidationError('clinical record has %d fields, expected %d'
                              % (len(categories), len(cardinalities)))
    pieces = []
    for value, size in zip(categories, cardinalities):
        value = int(value)
        if not 0 <= value < size:
            raise ValidationError('clinical category %d out of range [0, %d)' % (value, size))
        piece = np.zeros(size)
        piece[value] = 1.0
        pieces.append(piece)
    return np.concatenate(pieces)


class ModalityGraph(object):
    """单个病人单个模态的图: 节点特征(N, d)与无向边表.
    """
    def __init__(self, kind, node_features, adjacency, patient_id=None):
        self.kind = ModalityKind(kind)
        self.node_features = np.atleast_2d(np.asarray(node_features, dtype=np.float64))
        self.adjacency = [(int(u), int(v)) for u, v in adjacency]
        self.patient_id = patient_id
        n = self.num_nodes
        for u, v in self.adjacency:
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValidationError('edge (%d, %d) invalid for a graph with %d nodes' % (u, v, n))

    @property
    def num_nodes(self):
        return self.node_features.shape[0]

    @property
    def feature_dim(self):
        return self.node_features.shape[1]

    def degrees(self):
        degree = np.zeros(self.num_nodes, dtype=int)
        for u, v in self.adjacency:
            degree[u] += 1
            degree[v] += 1
        return degree

    def mean_adjacency(self):
        """邻居均值矩阵, 孤立节点那一行为0.
        """
        n = self.num_nodes
        matrix = np.zeros((n, n))
        for u, v in self.adjacency:
            matrix[u, v] = 1.0
            matrix[v, u] = 1.0
        degree = matrix.sum(axis=1, keepdims=True)
        return np.divide(matrix, degree, out=np.zeros_like(matrix), where=degree > 0)

    def structure_key(self):
        return self.num_nodes, tuple(sorted(self.adjacency))


def build_modality_graph(kind, raw, target_dim=None, cardinalities=None, patient_id=None):
    """根据原始载荷建图.
        * 病理: g×g网格的patch特征, 8邻接
        * 基因: 5个嵌入向量, 完全图
        * 临床: 类别记录, one-hot拼接成单个节点
    target_dim不为空时补零到统一维度.
    """
    kind = ModalityKind(kind)
    if kind == ModalityKind.PATHOLOGY:
        grid = np.asarray(raw, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[0] != grid.shape[1] or grid.shape[0] < 1:
            raise ValidationError('pathology payload must be a g x g grid of feature vectors, '
                                  'got shape %s' % (grid.shape,))
        g = grid.shape[0]
        graph = ModalityGraph(kind, grid.reshape(g * g, -1), grid_adjacency(g), patient_id)
    elif kind == ModalityKind.GENOMIC:
        embeddings = np.asarray(raw, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] != NUM_GENOMIC_EMBEDDINGS:
            raise ValidationError('genomic payload must hold exactly %d embeddings, got shape %s'
                                  % (NUM_GENOMIC_EMBEDDINGS, embeddings.shape))
        graph = ModalityGraph(kind, embeddings, complete_adjacency(NUM_GENOMIC_EMBEDDINGS),
                              patient_id)
    else:
        if cardinalities is None:
            raise ValidationError('clinical graphs need the category cardinalities')
        graph = ModalityGraph(kind, one_hot_clinical(raw, cardinalities)[None, :], [],
                              patient_id)
    if target_dim is not None:
        graph = pad_features(graph, target_dim)
    return graph


def pad_features(graph, target_dim):
    """节点特征尾部补零到target_dim, 维度超出时报错而不截断.
    """
    if target_dim < 1:
        raise ValidationError('target_dim must be positive')
    dim = graph.feature_dim
    if dim > target_dim:
        raise ValidationError('%s features have %d dims, more than target %d'
                              % (graph.kind.value, dim, target_dim))
    if dim == target_dim:
        return graph
    features = np.pad(graph.node_features, ((0, 0), (0, target_dim - dim)),
                      mode='constant', constant_values=0.)
    return ModalityGraph(graph.kind, features, graph.adjacency, graph.patient_id)


class ModalityEncoder(Layer):
    """单个模态的图编码器: 多层GraphSAGE + 注意力池化.
    结构相同(节点数与边表一致)的图会被堆叠成一个batch一起前向.
    """
    def __init__(self, kind, d_model, num_layers=2, **kwargs):
        kind = ModalityKind(kind)
        kwargs.setdefault('name', 'Modality-%s' % kind.value.capitalize())
        super(ModalityEncoder, self).__init__(**kwargs)
        self.kind = kind
        self.d_model = d_model
        self.num_layers = num_layers
        self.sage_layers = [
            SAGEConv(d_model, name='%s-SAGE-%d' % (self.name, i), seed=self._rng)
            for i in range(num_layers)
        ]
        self.pooling = AttentionPooling(name='%s-Pooling' % self.name, seed=self._rng)

    def build(self, input_shape):
        super(ModalityEncoder, self).build(input_shape)
        dim = input_shape[-1]
        for layer in self.sage_layers:
            layer.build([(None, dim), (None, None)])
            dim = self.d_model
        self.pooling.build((None, self.d_model))

    @property
    def sublayers(self):
        return self.sage_layers + [self.pooling]

    def node_embeddings(self, features, adjacency):
        """features (..., N, d_in), adjacency (..., N, N) -> (..., N, d_model).
        """
        h = B.as_tensor(features)
        adjacency = B.as_tensor(adjacency)
        for layer in self.sage_layers:
            h = layer([h, adjacency])
        return h

    def encode_graphs(self, graphs):
        """返回与graphs顺序对齐的(len(graphs), d_model)张量.
        """
        if not graphs:
            raise ValidationError('no graphs to encode')
        groups = {}
        for i, graph in enumerate(graphs):
            if graph.kind != self.kind:
                raise ValidationError('%s encoder got a %s graph' % (self.kind.value, graph.kind.value))
            groups.setdefault(graph.structure_key(), []).append(i)
        if not self.built:
            self.build((None, graphs[0].feature_dim))

        pooled, order = [], []
        for key, indices in groups.items():
            features = np.stack([graphs[i].node_features for i in indices])
            adjacency = graphs[indices[0]].mean_adjacency()[None, :, :]
            pooled.append(self.pooling(self.node_embeddings(features, adjacency)))
            order.extend(indices)
        embeddings = pooled[0] if len(pooled) == 1 else B.concat(pooled, axis=0)
        if order != sorted(order):
            embeddings = B.take(embeddings, np.argsort(order), axis=0)
        return embeddings

    def input_shape_of(self, inputs):
        if not inputs:
            raise ValidationError('no graphs to encode')
        return (None, inputs[0].feature_dim)

    def call(self, inputs, **kwargs):
        return self.encode_graphs(inputs)

    def get_config(self):
        config = {
            'kind': self.kind.value,
            'd_model': self.d_model,
            'num_layers': self.num_layers,
        }
        base_config = super(ModalityEncoder, self).get_config()
        config.update(base_config)
        return config


def sage_forward(graph, encoder, num_layers=None):
    """单图GraphSAGE前向, 返回(N, d_model)节点嵌入.
    """
    if num_layers is not None and num_layers != encoder.num_layers:
        raise ShapeError('sage_forward', [(encoder.num_layers,), (num_layers,)],
                         'encoder has %d layers' % encoder.num_layers)
    if not encoder.built:
        encoder.build((None, graph.feature_dim))
    expected = encoder.sage_layers[0].kernel.shape[0] // 2
    if graph.feature_dim != expected:
        raise ShapeError('sage_forward', [graph.node_features.shape, encoder.sage_layers[0].kernel.shape])
    return encoder.node_embeddings(graph.node_features, graph.mean_adjacency())


def attention_pool(node_embeddings, pooling):
    """H_m = sum_n softmax_n(MLP(V_n)) * V_n, 返回(d_model,)向量.
    """
    node_embeddings = B.as_tensor(node_embeddings)
    if node_embeddings.ndim != 2 or node_embeddings.shape[0] == 0:
        raise ShapeError('attention_pool', [node_embeddings.shape], 'need N >= 1 nodes')
    return pooling(node_embeddings)


class ModalityEmbedding(object):
    def __init__(self, kind, vector):
        self.kind = ModalityKind(kind)
        self.vector = B.as_tensor(vector)
        if not np.all(np.isfinite(self.vector.values)):
            raise ValidationError('modality embedding has non-finite values')
