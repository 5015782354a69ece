import os
import json
import logging
import numpy as np
import pandas as pd
from censurv.survstat import (
    SurvivalRecord,
    kaplan_meier,
    logrank_test,
    median_split,
)
from censurv.models.modality import (
    MODALITY_KINDS,
    NUM_GENOMIC_EMBEDDINGS,
    ModalityKind,
    build_modality_graph,
)
from censurv.models.bipartite import perturb_availability, validate_availability
from censurv.exceptions import (
    ConfigError,
    DatasetError,
    MetricsWriteError,
    UndefinedStatisticError,
    ValidationError,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = '%.17g'


class SyntheticConfig(object):
    """合成队列的配置.
    生存时间服从比例风险的Weibull分布, 风险函数正比于exp(r), r = hazard_weights · z;
    time_shape为形状参数, 取1时退化为指数分布, 取值越大生存时间越集中在base_time附近.
    删失样本的观察时间在(0, 真实时间)内均匀截断.
    """
    def __init__(self,
                 num_patients=200,
                 censor_rate=0.4,
                 grid_size=4,
                 clinical_cardinalities=(4, 3, 2),
                 feature_noise=0.5,
                 hazard_weights=(2.0, -1.5, 1.25, 1.0),
                 pathology_dim=16,
                 genomic_dim=8,
                 base_time=40.0,
                 time_shape=10.0,
                 modality_missing_rate=0.0,
                 seed=0):
        if int(num_patients) < 2:
            raise ConfigError('num_patients must be >= 2, got %r' % num_patients)
        if not 0. <= censor_rate < 1.:
            raise ConfigError('censor_rate must lie in [0, 1), got %r' % censor_rate)
        if int(grid_size) < 1:
            raise ConfigError('grid_size must be positive')
        if not clinical_cardinalities or min(clinical_cardinalities) < 1:
            raise ConfigError('clinical cardinalities must be positive integers')
        if not 0. <= modality_missing_rate < 1.:
            raise ConfigError('modality_missing_rate must lie in [0, 1)')
        if base_time <= 0 or feature_noise < 0:
            raise ConfigError('base_time must be positive and feature_noise non-negative')
        if time_shape <= 0:
            raise ConfigError('time_shape must be positive, got %r' % time_shape)
        self.num_patients = int(num_patients)
        self.censor_rate = float(censor_rate)
        self.grid_size = int(grid_size)
        self.clinical_cardinalities = [int(c) for c in clinical_cardinalities]
        self.feature_noise = float(feature_noise)
        self.hazard_weights = [float(w) for w in hazard_weights]
        self.pathology_dim = int(pathology_dim)
        self.genomic_dim = int(genomic_dim)
        self.base_time = float(base_time)
        self.time_shape = float(time_shape)
        self.modality_missing_rate = float(modality_missing_rate)
        self.seed = int(seed)

    def get_config(self):
        return dict(self.__dict__)

    @classmethod
    def from_config(cls, config):
        return cls(**config)


class PatientBatch(object):
    """一批病人的模态图, 按模态分组, rows记录每张图对应的病人行号.
    """
    def __init__(self, patient_ids, availability, graphs, rows):
        self.patient_ids = list(patient_ids)
        self.availability = validate_availability(availability, self.patient_ids)
        self.graphs = graphs
        self.rows = rows

    def __len__(self):
        return len(self.patient_ids)

    def with_availability(self, availability):
        """收窄可用模态(比如测试时模拟缺失), 只能去掉已有的模态.
        """
        availability = validate_availability(availability, self.patient_ids)
        if np.any(availability & ~self.availability):
            raise ValidationError('cannot add modalities that are not in the batch')
        graphs, rows = {}, {}
        for m, kind in enumerate(MODALITY_KINDS):
            keep = [(g, r) for g, r in zip(self.graphs.get(kind, []), self.rows.get(kind, []))
                    if availability[r, m]]
            graphs[kind] = [g for g, _ in keep]
            rows[kind] = [r for _, r in keep]
        return PatientBatch(self.patient_ids, availability, graphs, rows)


class Cohort(object):
    """内存中的完整队列: 标签、模态载荷、可用性矩阵, 合成数据还带真实生存时间.
    """
    def __init__(self,
                 records,
                 payloads,
                 availability,
                 grid_size,
                 clinical_cardinalities,
                 ground_truth=None,
                 latent_risk=None):
        self.records = list(records)
        self.patient_ids = [r.patient_id for r in self.records]
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise ValidationError('duplicated patient ids in cohort')
        self.payloads = payloads
        self.availability = validate_availability(availability, self.patient_ids)
        self.grid_size = int(grid_size)
        self.clinical_cardinalities = list(clinical_cardinalities)
        self.ground_truth = ground_truth
        self.latent_risk = latent_risk
        self._index = {pid: i for i, pid in enumerate(self.patient_ids)}
        self._graph_cache = {}

    def __len__(self):
        return len(self.records)

    def index_of(self, pid):
        return self._index[pid]

    def records_for(self, ids):
        return [self.records[self._index[pid]] for pid in ids]

    def availability_for(self, ids):
        return self.availability[[self._index[pid] for pid in ids]]

    def graph(self, pid, kind, feature_dim):
        key = (pid, kind, feature_dim)
        if key not in self._graph_cache:
            self._graph_cache[key] = build_modality_graph(
                kind,
                self.payloads[pid][kind],
                target_dim=feature_dim,
                cardinalities=self.clinical_cardinalities,
                patient_id=pid,
            )
        return self._graph_cache[key]

    def batch(self, ids, feature_dim, availability=None):
        ids = list(ids)
        availability = self.availability_for(ids) if availability is None \
            else np.asarray(availability, dtype=bool)
        graphs, rows = {}, {}
        for m, kind in enumerate(MODALITY_KINDS):
            rows[kind] = [r for r in range(len(ids)) if availability[r, m]]
            graphs[kind] = [self.graph(ids[r], kind, feature_dim) for r in rows[kind]]
        return PatientBatch(ids, availability, graphs, rows)

    def restrict(self, kinds):
        """只保留给定模态: 没有这些模态的病人被去掉, 其他模态的边被屏蔽.
        """
        kinds = [ModalityKind(k) for k in kinds]
        columns = np.array([kind in kinds for kind in MODALITY_KINDS])
        availability = self.availability & columns[None, :]
        keep = np.flatnonzero(availability.any(axis=1))
        return Cohort(
            [self.records[i] for i in keep],
            self.payloads,
            availability[keep],
            self.grid_size,
            self.clinical_cardinalities,
            ground_truth=self.ground_truth,
            latent_risk=self.latent_risk,
        )

    def feature_dims(self):
        return {
            ModalityKind.PATHOLOGY: self._payload_dim(ModalityKind.PATHOLOGY),
            ModalityKind.GENOMIC: self._payload_dim(ModalityKind.GENOMIC),
            ModalityKind.CLINICAL: int(sum(self.clinical_cardinalities)),
        }

    def _payload_dim(self, kind):
        for pid in self.patient_ids:
            if kind in self.payloads[pid]:
                return int(np.shape(self.payloads[pid][kind])[-1])
        return 0


def generate_synthetic(config):
    """按SyntheticConfig生成合成队列, 给定种子结果确定.
    """
    rng = np.random.default_rng(config.seed)
    n, g = config.num_patients, config.grid_size
    weights = np.asarray(config.hazard_weights)
    latent_dim = len(weights)

    pathology_loading = rng.normal(size=(latent_dim, config.pathology_dim)) / np.sqrt(latent_dim)
    genomic_loadings = rng.normal(
        size=(NUM_GENOMIC_EMBEDDINGS, latent_dim, config.genomic_dim)) / np.sqrt(latent_dim)
    clinical_loadings = rng.normal(size=(len(config.clinical_cardinalities), latent_dim))

    z = rng.normal(size=(n, latent_dim))
    risk = z @ weights
    hazard_draws = rng.exponential(size=n) * np.exp(-risk)
    true_times = config.base_time * hazard_draws ** (1.0 / config.time_shape)
    true_times = np.maximum(true_times, 1e-3)

    censored = rng.random(n) < config.censor_rate
    fractions = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=n)
    observed = np.where(censored, true_times * fractions, true_times)

    patches = (z @ pathology_loading)[:, None, None, :] + config.feature_noise * rng.normal(
        size=(n, g, g, config.pathology_dim))
    genomic = np.einsum('nl,kld->nkd', z, genomic_loadings) + config.feature_noise * rng.normal(
        size=(n, NUM_GENOMIC_EMBEDDINGS, config.genomic_dim))
    clinical_scores = z @ clinical_loadings.T + config.feature_noise * rng.normal(
        size=(n, len(config.clinical_cardinalities)))
    clinical = np.zeros_like(clinical_scores, dtype=int)
    for j, cardinality in enumerate(config.clinical_cardinalities):
        edges = np.quantile(clinical_scores[:, j], np.linspace(0, 1, cardinality + 1)[1:-1])
        clinical[:, j] = np.digitize(clinical_scores[:, j], edges)

    availability = np.ones((n, len(MODALITY_KINDS)), dtype=bool)
    if config.modality_missing_rate > 0:
        availability = perturb_availability(availability, config.modality_missing_rate, rng)

    ids = ['P%04d' % i for i in range(n)]
    records, payloads = [], {}
    for i, pid in enumerate(ids):
        records.append(SurvivalRecord(pid, observed[i], not censored[i]))
        payload = {}
        if availability[i, 0]:
            payload[ModalityKind.PATHOLOGY] = patches[i].reshape(g, g, -1)
        if availability[i, 1]:
            payload[ModalityKind.GENOMIC] = genomic[i]
        if availability[i, 2]:
            payload[ModalityKind.CLINICAL] = clinical[i]
        payloads[pid] = payload
    logger.info('generated %d patients, %d censored', n, int(censored.sum()))
    return Cohort(
        records,
        payloads,
        availability,
        grid_size=g,
        clinical_cardinalities=config.clinical_cardinalities,
        ground_truth={pid: float(t) for pid, t in zip(ids, true_times)},
        latent_risk={pid: float(r) for pid, r in zip(ids, risk)},
    )


class DatasetManifest(object):
    """数据集清单, 对应目录下的manifest.json.
    """
    def __init__(self, directory, labels, availability, payloads, grid_size,
                 clinical_cardinalities, ground_truth=None, schema_version=SCHEMA_VERSION):
        self.directory = str(directory)
        self.labels = labels
        self.availability = availability
        self.payloads = payloads
        self.grid_size = grid_size
        self.clinical_cardinalities = clinical_cardinalities
        self.ground_truth = ground_truth
        self.schema_version = schema_version

    @property
    def path(self):
        return os.path.join(self.directory, 'manifest.json')

    def to_dict(self):
        return {
            'schema_version': self.schema_version,
            'labels': self.labels,
            'availability': self.availability,
            'ground_truth': self.ground_truth,
            'grid_size': self.grid_size,
            'clinical_cardinalities': self.clinical_cardinalities,
            'payloads': self.payloads,
        }


def save_dataset(cohort, directory):
    """把队列写成manifest.json + labels.csv + availability.csv + 每个病人每个模态一个CSV矩阵.
    """
    os.makedirs(os.path.join(directory, 'payloads'), exist_ok=True)
    labels = pd.DataFrame({
        'patient_id': cohort.patient_ids,
        'time_months': [r.time for r in cohort.records],
        'event': [int(r.event) for r in cohort.records],
    })
    labels.to_csv(os.path.join(directory, 'labels.csv'), index=False, float_format=FLOAT_FORMAT)
    availability = pd.DataFrame(cohort.availability.astype(int),
                                columns=[k.value for k in MODALITY_KINDS])
    availability.insert(0, 'patient_id', cohort.patient_ids)
    availability.to_csv(os.path.join(directory, 'availability.csv'), index=False)

    ground_truth = None
    if cohort.ground_truth is not None:
        ground_truth = 'ground_truth.csv'
        frame = pd.DataFrame({
            'patient_id': cohort.patient_ids,
            'true_time_months': [cohort.ground_truth[pid] for pid in cohort.patient_ids],
        })
        if cohort.latent_risk is not None:
            frame['latent_risk'] = [cohort.latent_risk[pid] for pid in cohort.patient_ids]
        frame.to_csv(os.path.join(directory, ground_truth), index=False,
                     float_format=FLOAT_FORMAT)

    payload_paths = {}
    for pid in cohort.patient_ids:
        payload_paths[pid] = {}
        for kind, raw in cohort.payloads[pid].items():
            rel = os.path.join('payloads', '%s_%s.csv' % (pid, kind.value))
            matrix = np.asarray(raw)
            if kind == ModalityKind.PATHOLOGY:
                matrix = matrix.reshape(-1, matrix.shape[-1])
            elif kind == ModalityKind.CLINICAL:
                matrix = matrix.reshape(1, -1)
            frame = pd.DataFrame(matrix, columns=['f%d' % j for j in range(matrix.shape[1])])
            frame.to_csv(os.path.join(directory, rel), index=False, float_format=FLOAT_FORMAT)
            payload_paths[pid][kind.value] = rel

    manifest = DatasetManifest(directory, 'labels.csv', 'availability.csv', payload_paths,
                               cohort.grid_size, list(cohort.clinical_cardinalities),
                               ground_truth)
    with open(manifest.path, 'w') as writer:
        json.dump(manifest.to_dict(), writer, indent=2, sort_keys=True)
    return manifest


def _read_csv(path, required_columns):
    if not os.path.exists(path):
        raise DatasetError(path, 'file', 'referenced file does not exist')
    try:
        frame = pd.read_csv(path, dtype={'patient_id': str}, float_precision='round_trip')
    except (ValueError, pd.errors.ParserError) as e:
        raise DatasetError(path, 'file', 'unparseable CSV (%s)' % e)
    missing = [c for c in required_columns if c not in frame.columns]
    if missing:
        raise DatasetError(path, missing[0], 'missing column')
    return frame


def load_dataset(path):
    """读取并校验数据集, path可以是目录或manifest.json.
    """
    manifest_path = os.path.join(path, 'manifest.json') if os.path.isdir(path) else path
    directory = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, 'r') as reader:
        try:
            manifest = json.load(reader)
        except ValueError as e:
            raise DatasetError(manifest_path, 'manifest', 'invalid JSON (%s)' % e)

    for key in ('schema_version', 'labels', 'availability', 'payloads', 'grid_size',
                'clinical_cardinalities'):
        if key not in manifest:
            raise DatasetError(manifest_path, key, 'missing manifest field')
    if manifest['schema_version'] != SCHEMA_VERSION:
        raise DatasetError(manifest_path, 'schema_version',
                           'unsupported version %r' % manifest['schema_version'])
    grid_size = int(manifest['grid_size'])
    cardinalities = [int(c) for c in manifest['clinical_cardinalities']]

    labels_path = os.path.join(directory, manifest['labels'])
    labels = _read_csv(labels_path, ['patient_id', 'time_months', 'event'])
    times = pd.to_numeric(labels['time_months'], errors='coerce')
    events = pd.to_numeric(labels['event'], errors='coerce')
    records = []
    for row, (pid, raw, time, event) in enumerate(zip(labels['patient_id'].astype(str),
                                                      labels['time_months'], times, events)):
        if not np.isfinite(time) or time <= 0:
            raise DatasetError(labels_path, 'time_months[row %d]' % row,
                               'survival time must be a positive number, got %r' % raw)
        if event not in (0, 1):
            raise DatasetError(labels_path, 'event[row %d]' % row, 'event must be 0 or 1')
        records.append(SurvivalRecord(pid, float(time), bool(event)))
    ids = [r.patient_id for r in records]

    availability_path = os.path.join(directory, manifest['availability'])
    frame = _read_csv(availability_path, ['patient_id'] + [k.value for k in MODALITY_KINDS])
    frame['patient_id'] = frame['patient_id'].astype(str)
    if list(frame['patient_id']) != ids:
        raise DatasetError(availability_path, 'patient_id', 'rows do not match labels.csv')
    availability = frame[[k.value for k in MODALITY_KINDS]].to_numpy().astype(bool)
    empty = np.flatnonzero(~availability.any(axis=1))
    if len(empty):
        raise DatasetError(availability_path, 'row %d' % empty[0],
                           'patient %s has no available modality' % ids[empty[0]])

    payloads = {}
    for p, pid in enumerate(ids):
        entries = manifest['payloads'].get(pid, {})
        payloads[pid] = {}
        for m, kind in enumerate(MODALITY_KINDS):
            field = 'payloads.%s.%s' % (pid, kind.value)
            if not availability[p, m]:
                continue
            if kind.value not in entries:
                raise DatasetError(manifest_path, field, 'available modality has no payload')
            payload_path = os.path.join(directory, entries[kind.value])
            matrix = _read_csv(payload_path, []).apply(pd.to_numeric, errors='coerce')
            matrix = matrix.to_numpy(dtype=np.float64)
            payloads[pid][kind] = _validate_payload(kind, matrix, grid_size, cardinalities,
                                                    payload_path)

    ground_truth, latent_risk = None, None
    if manifest.get('ground_truth'):
        truth_path = os.path.join(directory, manifest['ground_truth'])
        truth = _read_csv(truth_path, ['patient_id', 'true_time_months'])
        truth_ids = list(truth['patient_id'].astype(str))
        ground_truth = dict(zip(truth_ids, truth['true_time_months'].astype(float)))
        if 'latent_risk' in truth.columns:
            latent_risk = dict(zip(truth_ids, truth['latent_risk'].astype(float)))
    return Cohort(records, payloads, availability, grid_size, cardinalities,
                  ground_truth=ground_truth, latent_risk=latent_risk)


def _validate_payload(kind, matrix, grid_size, cardinalities, path):
    bad = np.argwhere(~np.isfinite(matrix))
    if len(bad):
        row, column = bad[0]
        raise DatasetError(path, 'values', 'non-finite or non-numeric value at row %d, column %d'
                           % (row, column))
    if kind == ModalityKind.PATHOLOGY:
        if matrix.shape[0] != grid_size * grid_size:
            raise DatasetError(path, 'rows', 'expected %d patches, found %d'
                               % (grid_size * grid_size, matrix.shape[0]))
        return matrix.astype(np.float64).reshape(grid_size, grid_size, -1)
    if kind == ModalityKind.GENOMIC:
        if matrix.shape[0] != NUM_GENOMIC_EMBEDDINGS:
            raise DatasetError(path, 'rows', 'expected %d genomic embeddings, found %d'
                               % (NUM_GENOMIC_EMBEDDINGS, matrix.shape[0]))
        return matrix.astype(np.float64)
    values = matrix.reshape(-1)
    if len(values) != len(cardinalities):
        raise DatasetError(path, 'columns', 'expected %d clinical fields, found %d'
                           % (len(cardinalities), len(values)))
    for j, (value, size) in enumerate(zip(values, cardinalities)):
        if value != int(value) or not 0 <= value < size:
            raise DatasetError(path, 'f%d' % j, 'category %r out of range [0, %d)' % (value, size))
    return values.astype(int)


def write_metrics(metrics, path):
    """RunMetrics写成JSON, 标准差为总体标准差.
    """
    payload = metrics.to_dict()
    if not payload['folds']:
        raise ValidationError('metrics have no folds')
    try:
        with open(path, 'w') as writer:
            json.dump(payload, writer, indent=2, sort_keys=True)
            writer.write('\n')
    except OSError as e:
        raise MetricsWriteError(path, e.strerror or str(e))


def emit_km_csv(records, scores, path):
    """按风险中位数分组, 输出两条KM曲线(group, time, survival_prob),
    最后一行是logrank的注释行, 无法计算时p为NA.
    """
    if len(records) < 2:
        raise ValidationError('emit_km_csv needs at least two patients')
    split = median_split({r.patient_id: scores[r.patient_id] for r in records})
    rows = []
    for group, members in (('high', split.high_risk), ('low', split.low_risk)):
        subset = [r for r in records if r.patient_id in members]
        if subset:
            rows.extend((group, t, s) for t, s in kaplan_meier(subset))
    try:
        chi_square, p_value = logrank_test(records, split)
        footer = '# logrank chi_square=%.10g p_value=%.10g\n' % (chi_square, p_value)
    except UndefinedStatisticError as e:
        logger.warning('logrank undefined for KM export: %s', e)
        chi_square, p_value = None, None
        footer = '# logrank chi_square=NA p_value=NA\n'
    frame = pd.DataFrame(rows, columns=['group', 'time', 'survival_prob'])
    with open(path, 'w') as writer:
        frame.to_csv(writer, index=False, float_format=FLOAT_FORMAT)
        writer.write(footer)
    return chi_square, p_value
