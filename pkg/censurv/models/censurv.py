import numpy as np
from censurv import backend as B
from censurv.layers import Model
from censurv.models.modality import MODALITY_KINDS, ModalityEncoder
from censurv.models.bipartite import (
    BipartiteGraph,
    RiskHead,
    SiameseGNN,
    as_risk_scores,
    edge_dropout,
    predict_risk,
    scatter_modality_rows,
    siamese_encode,
)
from censurv.exceptions import ValidationError


class CenSurv(Model):
    """多模态生存预测模型.
    每个模态一个图编码器, 编码结果作为病人-模态二部图的边;
    use_bpmg时经孪生GNN得到病人表示, 否则直接取可用边嵌入的均值; 最后由风险头输出风险.
    """
    def __init__(self,
                 d_model,
                 d_z,
                 sage_layers=2,
                 use_bpmg=True,
                 **kwargs):
        kwargs.setdefault('name', 'CenSurv')
        super(CenSurv, self).__init__(**kwargs)
        self.d_model = d_model
        self.d_z = d_z
        self.sage_layers = sage_layers
        self.use_bpmg = use_bpmg
        self.encoders = {}
        for kind in MODALITY_KINDS:
            self.encoders[kind] = self.track(
                ModalityEncoder(kind, d_model, num_layers=sage_layers, seed=self._rng))
        self.gnn = self.track(SiameseGNN(d_model, d_z, seed=self._rng)) if use_bpmg else None
        head_dim = d_z if use_bpmg else d_model
        self.head_dim = head_dim
        self.head = self.track(RiskHead(max(1, head_dim // 2), seed=self._rng))

    def build(self, input_shape):
        """input_shape为节点特征维度(补零后各模态一致).
        """
        super(CenSurv, self).build(input_shape)
        feature_dim = input_shape[-1] if isinstance(input_shape, (tuple, list)) else input_shape
        for encoder in self.encoders.values():
            encoder.build((None, feature_dim))
        if self.gnn is not None:
            self.gnn.build((None, len(MODALITY_KINDS), self.d_model))
        self.head.build((None, self.head_dim))

    def edge_tensor(self, batch):
        """各模态编码后放回(P, M, d_model)的边张量.
        """
        kind_embeddings = {}
        for kind in MODALITY_KINDS:
            graphs = batch.graphs.get(kind, [])
            if graphs:
                kind_embeddings[kind] = self.encoders[kind](graphs)
        if not kind_embeddings:
            raise ValidationError('batch carries no modality graphs')
        return scatter_modality_rows(kind_embeddings, batch.rows, len(batch))

    def forward(self, batch, dropout_rate=None, rng=None):
        """返回(风险张量, PatientEmbeddingPair或None).
        给定dropout_rate且use_bpmg时, 随机丢边得到缺失视图并用同一个GNN编码.
        """
        edges = self.edge_tensor(batch)
        complete = BipartiteGraph(batch.patient_ids, batch.availability, edges)
        pair = None
        if self.use_bpmg:
            if dropout_rate is not None:
                incomplete = edge_dropout(complete, dropout_rate, rng)
                pair = siamese_encode(complete, incomplete, self.gnn)
                z = pair.complete
            else:
                z = self.gnn(complete)
        else:
            mask = batch.availability.astype(np.float64)
            weights = mask / mask.sum(axis=1, keepdims=True)
            z = B.reshape(B.matmul(B.constant(weights[:, None, :]), edges),
                          (len(batch), self.d_model))
        return predict_risk(z, self.head), pair

    def input_shape_of(self, inputs):
        graphs = [g for kind in MODALITY_KINDS for g in inputs.graphs.get(kind, [])]
        if not graphs:
            raise ValidationError('batch carries no modality graphs')
        return (None, graphs[0].feature_dim)

    def call(self, inputs, **kwargs):
        risks, _ = self.forward(inputs, **kwargs)
        return risks

    def predict(self, batch):
        """推理, 返回{patient_id: risk}.
        """
        risks, _ = self.forward(batch)
        return as_risk_scores(batch.patient_ids, risks)

    def get_config(self):
        config = {
            'd_model': self.d_model,
            'd_z': self.d_z,
            'sage_layers': self.sage_layers,
            'use_bpmg': self.use_bpmg,
        }
        base_config = super(CenSurv, self).get_config()
        config.update(base_config)
        return config


def build_censurv_model(config, feature_dim, seed=None):
    """按TrainConfig建模型并立即build, 权重由seed确定.
    """
    model = CenSurv(
        d_model=config.d_model,
        d_z=config.d_z,
        sage_layers=config.sage_layers,
        use_bpmg=config.use_bpmg,
        seed=config.seed if seed is None else seed,
    )
    model.build((None, feature_dim))
    return model
