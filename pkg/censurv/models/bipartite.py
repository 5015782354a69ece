import numpy as np
from censurv import backend as B
from censurv.layers import Layer, Dense, MLP
from censurv.models.modality import MODALITY_KINDS, ModalityEmbedding, ModalityKind
from censurv.exceptions import ConfigError, ShapeError, ValidationError


class AlignmentConfig(object):
    """完整-缺失对齐的超参数: 温度phi与训练时的随机边丢弃率.
    """
    def __init__(self, temperature=0.1, dropout_rate=0.3):
        if not temperature > 0:
            raise ConfigError('temperature must be positive, got %r' % temperature)
        if not 0. <= dropout_rate < 1.:
            raise ConfigError('dropout_rate must lie in [0, 1), got %r' % dropout_rate)
        self.temperature = float(temperature)
        self.dropout_rate = float(dropout_rate)

    def get_config(self):
        return {'temperature': self.temperature, 'dropout_rate': self.dropout_rate}


def validate_availability(availability, patient_ids=None):
    availability = np.asarray(availability, dtype=bool)
    if availability.ndim != 2 or availability.shape[1] != len(MODALITY_KINDS):
        raise ValidationError('availability must be a P x %d matrix, got shape %s'
                              % (len(MODALITY_KINDS), availability.shape))
    empty = np.flatnonzero(~availability.any(axis=1))
    if len(empty):
        who = [patient_ids[i] for i in empty] if patient_ids is not None else list(empty)
        raise ValidationError('patients without any modality: %s' % ', '.join(map(str, who[:10])))
    return availability


def perturb_availability(availability, rate, rng):
    """每条可用边以概率rate独立丢弃; 若某个病人的边全部被丢, 随机保留其中一条.
    """
    if not 0. <= rate < 1.:
        raise ValidationError('drop rate must lie in [0, 1), got %r' % rate)
    availability = np.asarray(availability, dtype=bool)
    kept = availability & ~(rng.random(availability.shape) < rate)
    for p in np.flatnonzero(availability.any(axis=1) & ~kept.any(axis=1)):
        kept[p, rng.choice(np.flatnonzero(availability[p]))] = True
    return kept


class BipartiteGraph(object):
    """病人-模态二部图.
    edge_tensor为(P, M, d)张量, 不可用的边对应零向量; 聚合只看availability,
    所以丢边后的图可以与原图共享同一个edge_tensor.
    """
    def __init__(self, patient_ids, availability, edge_tensor):
        self.patient_ids = list(patient_ids)
        self.modality_kinds = list(MODALITY_KINDS)
        self.availability = validate_availability(availability, self.patient_ids)
        self.edge_tensor = B.as_tensor(edge_tensor)
        expected = (len(self.patient_ids), len(self.modality_kinds))
        if self.availability.shape != expected or self.edge_tensor.shape[:2] != expected:
            raise ShapeError('bipartite', [self.availability.shape, self.edge_tensor.shape])

    @property
    def num_patients(self):
        return len(self.patient_ids)

    @property
    def num_edges(self):
        return int(self.availability.sum())

    @property
    def edge_embeddings(self):
        """{(patient_id, ModalityKind): (d,)张量}, 只包含可用边.
        """
        edges = {}
        for p, m in zip(*np.nonzero(self.availability)):
            edges[(self.patient_ids[p], self.modality_kinds[m])] = self.edge_tensor[p, m]
        return edges

    def with_availability(self, availability):
        return BipartiteGraph(self.patient_ids, availability, self.edge_tensor)


def build_bipartite(embeddings, availability, patient_ids=None):
    """由每个病人的模态嵌入建图.
    embeddings: {patient_id: {ModalityKind: ModalityEmbedding或(d,)张量}}, 只能给可用位置.
    """
    patient_ids = list(embeddings) if patient_ids is None else list(patient_ids)
    if not patient_ids:
        raise ValidationError('build_bipartite needs at least one patient')
    availability = validate_availability(availability, patient_ids)
    if availability.shape[0] != len(patient_ids):
        raise ValidationError('availability has %d rows for %d patients'
                              % (availability.shape[0], len(patient_ids)))
    rows, dim = [], None
    for p, pid in enumerate(patient_ids):
        given = {ModalityKind(k): v for k, v in embeddings.get(pid, {}).items()}
        row = []
        for m, kind in enumerate(MODALITY_KINDS):
            if kind in given and not availability[p, m]:
                raise ValidationError('patient %s: embedding given for unavailable %s'
                                      % (pid, kind.value))
            if availability[p, m] and kind not in given:
                raise ValidationError('patient %s: missing %s embedding' % (pid, kind.value))
            row.append(given.get(kind))
        rows.append(row)
        for v in row:
            if v is not None:
                v = v.vector if isinstance(v, ModalityEmbedding) else B.as_tensor(v)
                dim = v.shape[-1] if dim is None else dim
                if v.shape != (dim,):
                    raise ShapeError('build_bipartite', [v.shape, (dim,)])

    pieces = []
    for row in rows:
        for v in row:
            if v is None:
                pieces.append(B.constant(np.zeros((1, dim))))
            else:
                v = v.vector if isinstance(v, ModalityEmbedding) else B.as_tensor(v)
                pieces.append(B.reshape(v, (1, dim)))
    edge_tensor = B.reshape(B.concat(pieces, axis=0), (len(patient_ids), len(MODALITY_KINDS), dim))
    return BipartiteGraph(patient_ids, availability, edge_tensor)


def scatter_modality_rows(kind_embeddings, kind_rows, num_patients):
    """把各模态(P_m, d)的嵌入按行号放回(P, M, d)张量, 缺失的位置为零.
    """
    columns = []
    for kind in MODALITY_KINDS:
        emb, rows = kind_embeddings.get(kind), kind_rows.get(kind, [])
        if emb is None or len(rows) == 0:
            columns.append(None)
            continue
        scatter = np.zeros((num_patients, len(rows)))
        scatter[np.asarray(rows), np.arange(len(rows))] = 1.0
        columns.append(B.matmul(B.constant(scatter), emb))
    dim = next(c.shape[-1] for c in columns if c is not None)
    columns = [B.constant(np.zeros((num_patients, dim))) if c is None else c for c in columns]
    return B.concat([B.reshape(c, (num_patients, 1, dim)) for c in columns], axis=1)


def edge_dropout(graph, rate, rng_seed):
    """随机丢边模拟模态缺失, 每个病人至少保留一条边, 给定种子结果确定.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    return graph.with_availability(perturb_availability(graph.availability, rate, rng))


class PatientEmbeddingPair(object):
    """同一批病人在完整图与缺失图上的表示(Z, Z').
    """
    def __init__(self, complete, incomplete):
        self.complete = B.as_tensor(complete)
        self.incomplete = B.as_tensor(incomplete)
        if self.complete.shape != self.incomplete.shape:
            raise ShapeError('PatientEmbeddingPair', [self.complete.shape, self.incomplete.shape])


class SiameseGNN(Layer):
    """二部图上的孪生GNN, 两个分支共享全部权重.
    病人节点聚合可用边嵌入(加上模态类型嵌入)的均值, 与当前状态拼接后过Dense+ReLU,
    初始状态为可用边的均值, 最后投影到d_z维.
    投影层偏置随机初始化, 隐状态全为0时输出也不是零向量.
    """
    def __init__(self, d_model, d_z, num_layers=2, **kwargs):
        kwargs.setdefault('name', 'Bipartite-GNN')
        super(SiameseGNN, self).__init__(**kwargs)
        self.d_model = d_model
        self.d_z = d_z
        self.num_layers = num_layers
        self.hidden_layers = [
            Dense(d_model, activation='relu', name='%s-Layer-%d' % (self.name, i), seed=self._rng)
            for i in range(num_layers)
        ]
        self.projection = Dense(d_z, bias_initializer='glorot_uniform',
                                name='%s-Projection' % self.name, seed=self._rng)

    def build(self, input_shape):
        super(SiameseGNN, self).build(input_shape)
        self.kind_embeddings = self.add_weight(
            shape=(len(MODALITY_KINDS), self.d_model),
            initializer='zeros',
            name='kind_embeddings',
        )
        for layer in self.hidden_layers:
            layer.build((None, 2 * self.d_model))
        self.projection.build((None, self.d_model))

    @property
    def sublayers(self):
        return self.hidden_layers + [self.projection]

    def input_shape_of(self, inputs):
        return inputs.edge_tensor.shape

    def call(self, inputs, **kwargs):
        graph = inputs
        if graph.edge_tensor.shape[-1] != self.d_model:
            raise ShapeError(self.name, [graph.edge_tensor.shape, self.kind_embeddings.shape])
        num_patients = graph.num_patients
        mask = graph.availability.astype(np.float64)
        weights = mask / mask.sum(axis=1, keepdims=True)
        edges = graph.edge_tensor + self.kind_embeddings
        message = B.reshape(
            B.matmul(B.constant(weights[:, None, :]), edges), (num_patients, self.d_model))
        h = message
        for layer in self.hidden_layers:
            h = layer(B.concat([h, message], axis=-1))
        return self.projection(h)

    def get_config(self):
        config = {'d_model': self.d_model, 'd_z': self.d_z, 'num_layers': self.num_layers}
        base_config = super(SiameseGNN, self).get_config()
        config.update(base_config)
        return config


def siamese_encode(complete, incomplete, gnn):
    """Z = GNN(完整图), Z' = GNN(缺失图), 两个分支共享权重.
    """
    if list(complete.patient_ids) != list(incomplete.patient_ids):
        raise ValidationError('complete and incomplete graphs must share patient order')
    return PatientEmbeddingPair(gnn(complete), gnn(incomplete))


class RiskHead(MLP):
    """风险预测头: 两层感知机, 每个病人输出一个标量风险.
    """
    def __init__(self, hidden_units, **kwargs):
        kwargs.setdefault('name', 'Risk-Head')
        super(RiskHead, self).__init__(hidden_units, units=1, **kwargs)

    def call(self, inputs, **kwargs):
        out = super(RiskHead, self).call(inputs, **kwargs)
        return B.reshape(out, (inputs.shape[0],))


def predict_risk(embeddings, head):
    """(P, d)表示 -> (P,)风险张量, 可微.
    """
    embeddings = B.as_tensor(embeddings)
    if embeddings.ndim != 2:
        raise ShapeError('predict_risk', [embeddings.shape])
    if not np.all(np.isfinite(embeddings.values)):
        raise ValidationError('predict_risk got non-finite embeddings')
    return head(embeddings)


def as_risk_scores(patient_ids, risks):
    """风险张量转成{patient_id: risk}.
    """
    values = B.as_tensor(risks).values
    return {pid: float(v) for pid, v in zip(patient_ids, values)}
