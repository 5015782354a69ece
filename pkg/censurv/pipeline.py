import os
import json
import logging
import numpy as np
import pandas as pd
from scipy.stats import rankdata
from tqdm import tqdm
from censurv import backend as B
from censurv.dataio import SyntheticConfig, generate_synthetic, write_metrics
from censurv.ecmc import (
    ConfidenceTracker,
    EcmcConfig,
    apply_relabels,
    dmac_update,
    random_select,
    relabel_all,
    relabel_mae,
    select_reliable,
)
from censurv.loss import alignment_loss, cox_loss, total_loss
from censurv.models import build_censurv_model
from censurv.models.bipartite import AlignmentConfig, perturb_availability
from censurv.models.modality import ModalityKind
from censurv.optimizers import Adam
from censurv.survstat import (
    logrank_test,
    median_split,
    risk_ranks,
    safe_concordance,
)
from censurv.utils import DataGenerator
from censurv.exceptions import ConfigError, UndefinedStatisticError, ValidationError

logger = logging.getLogger(__name__)

NUM_FOLDS = 5
VALIDATION_FRACTION = 0.25
ABLATION_COMPONENTS = ('ecmc', 'bpmg', 'dmac')


class TrainConfig(object):
    """训练配置.
    默认值为完整实验的超参数(alpha=5, beta=1, lambda=0.4, lr=3e-5, 预热60轮/共120轮),
    模型维度默认取小尺寸; 完整尺寸用TrainConfig.full().
    """
    def __init__(self,
                 alpha=5.0,
                 beta=1.0,
                 lambda_=0.4,
                 phi=0.1,
                 learning_rate=3e-5,
                 preheat_epochs=60,
                 total_epochs=120,
                 batch_size=None,
                 K=5,
                 select_fraction=0.25,
                 dropout_rate=0.3,
                 feature_dim=None,
                 d_model=32,
                 d_z=16,
                 sage_layers=2,
                 seed=0,
                 use_ecmc=True,
                 use_bpmg=True,
                 use_dmac=True,
                 verbose=True):
        if alpha < 0 or beta < 0:
            raise ConfigError('alpha and beta must be non-negative, got %r / %r' % (alpha, beta))
        if not 0 <= preheat_epochs <= total_epochs or total_epochs < 1:
            raise ConfigError('need 0 <= preheat_epochs <= total_epochs and total_epochs >= 1, '
                              'got %r / %r' % (preheat_epochs, total_epochs))
        if learning_rate <= 0:
            raise ConfigError('learning_rate must be positive, got %r' % learning_rate)
        if batch_size is not None and int(batch_size) < 1:
            raise ConfigError('batch_size must be positive or None, got %r' % batch_size)
        if min(d_model, d_z, sage_layers) < 1:
            raise ConfigError('d_model, d_z and sage_layers must be positive')
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.lambda_ = float(lambda_)
        self.phi = float(phi)
        self.learning_rate = float(learning_rate)
        self.preheat_epochs = int(preheat_epochs)
        self.total_epochs = int(total_epochs)
        self.batch_size = None if batch_size is None else int(batch_size)
        self.K = int(K)
        self.select_fraction = float(select_fraction)
        self.dropout_rate = float(dropout_rate)
        self.feature_dim = None if feature_dim is None else int(feature_dim)
        self.d_model = int(d_model)
        self.d_z = int(d_z)
        self.sage_layers = int(sage_layers)
        self.seed = int(seed)
        self.use_ecmc = bool(use_ecmc)
        self.use_bpmg = bool(use_bpmg)
        self.use_dmac = bool(use_dmac)
        self.verbose = bool(verbose)
        # 构造时校验嵌套配置
        self.alignment_config()
        if self.has_update_stage:
            self.ecmc_config()

    @classmethod
    def full(cls, **kwargs):
        config = dict(d_model=1024, d_z=128)
        config.update(kwargs)
        return cls(**config)

    @classmethod
    def desk(cls, **kwargs):
        config = dict(preheat_epochs=15, total_epochs=30, learning_rate=5e-3, batch_size=32)
        config.update(kwargs)
        return cls(**config)

    @property
    def has_update_stage(self):
        return self.preheat_epochs < self.total_epochs

    def alignment_config(self):
        return AlignmentConfig(temperature=self.phi, dropout_rate=self.dropout_rate)

    def ecmc_config(self):
        return EcmcConfig(
            K=self.K,
            select_fraction=self.select_fraction,
            lambda_=self.lambda_,
            preheat_epochs=self.preheat_epochs,
            total_epochs=self.total_epochs,
        )

    def replace(self, **kwargs):
        if 'lambda_' in kwargs:
            kwargs['lambda'] = kwargs.pop('lambda_')
        config = self.get_config()
        config.update(kwargs)
        return TrainConfig.from_config(config)

    def get_config(self):
        config = dict(self.__dict__)
        config['lambda'] = config.pop('lambda_')
        return config

    @classmethod
    def from_config(cls, config):
        config = dict(config)
        if 'lambda' in config:
            config['lambda_'] = config.pop('lambda')
        known = set(cls().__dict__)
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError('unknown config key: %s' % ', '.join(unknown))
        return cls(**config)

    @classmethod
    def from_json_file(cls, path):
        return cls.from_config(read_config_json(path))


def read_config_json(path):
    with open(path, 'r') as reader:
        try:
            config = json.loads(reader.read())
        except ValueError as e:
            raise ConfigError('%s is not valid JSON (%s)' % (path, e))
    if not isinstance(config, dict):
        raise ConfigError('%s must hold a JSON object' % path)
    return config


class FoldSplit(object):
    def __init__(self, fold_index, train_ids, val_ids, test_ids):
        self.fold_index = int(fold_index)
        self.train_ids = list(train_ids)
        self.val_ids = list(val_ids)
        self.test_ids = list(test_ids)
        parts = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        if sum(len(p) for p in parts) != len(set().union(*parts)):
            raise ValidationError('fold %d: train/val/test ids overlap' % self.fold_index)

    def all_ids(self):
        return self.train_ids + self.val_ids + self.test_ids


def make_folds(patient_ids, seed, num_folds=NUM_FOLDS):
    """打乱后切成num_folds份, 每折一份做测试, 其余的25%做验证、75%做训练.
    """
    patient_ids = list(patient_ids)
    if len(patient_ids) < 2 * num_folds:
        raise ValidationError('cohort of %d patients is too small for %d disjoint folds'
                              % (len(patient_ids), num_folds))
    rng = np.random.default_rng(seed)
    order = [patient_ids[i] for i in rng.permutation(len(patient_ids))]
    chunks = np.array_split(np.arange(len(order)), num_folds)
    splits = []
    for k in range(num_folds):
        test = [order[i] for i in chunks[k]]
        rest = [order[i] for j, chunk in enumerate(chunks) if j != k for i in chunk]
        n_val = int(round(VALIDATION_FRACTION * len(rest)))
        splits.append(FoldSplit(k, rest[n_val:], rest[:n_val], test))
    for split in splits:
        check_partition(split, patient_ids)
    return splits


def check_partition(split, patient_ids):
    if sorted(split.all_ids()) != sorted(patient_ids):
        raise ValidationError('fold %d does not cover the cohort exactly' % split.fold_index)


class RunMetrics(object):
    """交叉验证结果, 标准差为总体标准差(ddof=0).
    """
    def __init__(self, folds=None, relabel_audit=None):
        self.folds = list(folds or [])
        self.relabel_audit = relabel_audit if relabel_audit is not None else {'count': 0}

    def add_fold(self, cindex, logrank_p=None, logrank_chi2=None):
        self.folds.append({
            'cindex': float(cindex),
            'logrank_p': None if logrank_p is None else float(logrank_p),
            'logrank_chi2': None if logrank_chi2 is None else float(logrank_chi2),
        })

    @property
    def fold_cindex(self):
        return [f['cindex'] for f in self.folds]

    @property
    def mean_cindex(self):
        if not self.folds:
            raise ValidationError('no folds recorded')
        return float(np.mean(self.fold_cindex))

    @property
    def std_cindex(self):
        if not self.folds:
            raise ValidationError('no folds recorded')
        return float(np.std(self.fold_cindex))

    def to_dict(self):
        if not self.folds:
            return {'folds': [], 'relabel_audit': self.relabel_audit}
        return {
            'folds': self.folds,
            'mean_cindex': self.mean_cindex,
            'std_cindex': self.std_cindex,
            'relabel_audit': self.relabel_audit,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(payload.get('folds', []), payload.get('relabel_audit'))


class FoldResult(object):
    def __init__(self, split, model, test_scores, cindex, logrank_p, logrank_chi2,
                 best_epoch, epoch_log, decisions, relabel_log):
        self.split = split
        self.model = model
        self.test_scores = test_scores
        self.cindex = cindex
        self.logrank_p = logrank_p
        self.logrank_chi2 = logrank_chi2
        self.best_epoch = best_epoch
        self.epoch_log = epoch_log
        self.decisions = decisions
        self.relabel_log = relabel_log


def fold_streams(seed, fold_index):
    """每折独立的随机数流: 初始化、丢边、随机选择、batch顺序、测试缺失.
    """
    children = np.random.SeedSequence([seed, fold_index]).spawn(5)
    return [np.random.default_rng(s) for s in children]


def score_fold(records, scores):
    cindex = safe_concordance(records, scores)
    try:
        chi2, p = logrank_test(records, median_split(scores))
    except UndefinedStatisticError as e:
        logger.warning('logrank undefined: %s', e)
        chi2, p = None, None
    return cindex, p, chi2


def train_fold(split, cohort, config, test_missing_rate=0.0):
    """单折训练.
    前preheat_epochs轮用原始标签训练并更新DMAC; 之后每轮(use_ecmc时)重新选择可靠的删失样本,
    在原始标签上求替代时间, 用改写后的副本训练这一轮. 每轮在验证集(原始标签)上算C-index,
    返回验证集最优的参数快照在测试集上的结果.
    """
    if not split.train_ids:
        raise ValidationError('fold %d has an empty training split' % split.fold_index)
    if not 0. <= test_missing_rate < 1.:
        raise ValidationError('missing rate must lie in [0, 1), got %r' % test_missing_rate)
    init_rng, drop_rng, select_rng, batch_rng, missing_rng = fold_streams(
        config.seed, split.fold_index)

    feature_dim = config.feature_dim or max(cohort.feature_dims().values())
    model = build_censurv_model(config, feature_dim, seed=init_rng)
    weights = model.weights
    optimizer = Adam(learning_rate=config.learning_rate)
    alignment = config.alignment_config()
    ecmc = config.ecmc_config() if config.use_ecmc and config.has_update_stage else None

    original_train = cohort.records_for(split.train_ids)
    val_records = cohort.records_for(split.val_ids)
    test_records = cohort.records_for(split.test_ids)
    frozen = (tuple(val_records), tuple(test_records))
    train_batch = cohort.batch(split.train_ids, feature_dim)
    val_batch = cohort.batch(split.val_ids, feature_dim)
    generator = DataGenerator(split.train_ids, config.batch_size)
    tracker = ConfidenceTracker(split.train_ids, lambda_=config.lambda_)
    censored_before = sum(r.censored for r in original_train)

    best_cindex, best_weights, best_epoch = -np.inf, None, -1
    epoch_log, relabel_log, decisions = [], [], []
    epochs = tqdm(range(config.total_epochs), desc='fold %d' % split.fold_index,
                  disable=not config.verbose)
    for epoch in epochs:
        scores = model.predict(train_batch)
        dmac_update(tracker, risk_ranks(scores))
        assert all(0. <= t <= 1. for t in tracker.tau.values())

        labels, decisions = original_train, []
        if ecmc is not None and epoch >= config.preheat_epochs:
            if config.use_dmac:
                selected = select_reliable(tracker, original_train, ecmc)
            else:
                selected = random_select(original_train, ecmc, select_rng)
            decisions = relabel_all(selected, original_train, scores, ecmc)
            labels = apply_relabels(original_train, decisions)
            for d in decisions:
                assert not d.applied or d.new_time > d.old_time
                relabel_log.append(dict(d.to_dict(), fold=split.fold_index, epoch=epoch,
                                        tau=tracker.tau[d.patient_id]))
            assert sum(r.censored for r in labels) <= censored_before
        label_map = {r.patient_id: r for r in labels}

        loss_sum, cox_sum, cia_sum = 0., 0., 0.
        for batch_ids in generator.shuffled(batch_rng):
            batch = cohort.batch(batch_ids, feature_dim)
            dropout = config.dropout_rate if config.use_bpmg and config.beta > 0 else None
            risks, pair = model.forward(batch, dropout_rate=dropout, rng=drop_rng)
            cox = cox_loss([label_map[pid] for pid in batch.patient_ids], risks)
            cia = alignment_loss(pair, alignment) if pair is not None else B.constant(0.)
            loss = total_loss(cox, cia, config)
            grads = B.backward(loss, weights)
            optimizer.apply_gradients(weights, grads)
            loss_sum += loss.item()
            cox_sum += cox.item()
            cia_sum += cia.item()

        val_cindex = safe_concordance(val_records, model.predict(val_batch))
        if val_cindex > best_cindex:
            best_cindex, best_weights, best_epoch = val_cindex, model.get_weights(), epoch
        relabel_count = sum(d.applied for d in decisions)
        epoch_log.append({
            'epoch': epoch,
            'train_loss': loss_sum,
            'cox': cox_sum,
            'cia': cia_sum,
            'val_cindex': val_cindex,
            'relabel_count': relabel_count,
        })
        logger.info('epoch=%d loss=%.4f cox=%.4f cia=%.4f val_cindex=%.4f relabels=%d',
                    epoch, loss_sum, cox_sum, cia_sum, val_cindex, relabel_count)

    model.set_weights(best_weights)
    test_availability = cohort.availability_for(split.test_ids)
    if test_missing_rate > 0:
        test_availability = perturb_availability(test_availability, test_missing_rate,
                                                 missing_rng)
    test_batch = cohort.batch(split.test_ids, feature_dim).with_availability(test_availability)
    test_scores = model.predict(test_batch)
    if not all(np.isfinite(v) for v in test_scores.values()):
        raise ValidationError('fold %d produced non-finite test risks' % split.fold_index)
    cindex, p, chi2 = score_fold(test_records, test_scores)
    if (tuple(cohort.records_for(split.val_ids)), tuple(cohort.records_for(split.test_ids))) \
            != frozen:
        raise ValidationError('validation/test labels changed during training')
    logger.info('fold=%d best_epoch=%d test_cindex=%.4f', split.fold_index, best_epoch, cindex)
    return FoldResult(split, model, test_scores, cindex, p, chi2, best_epoch, epoch_log,
                      decisions, relabel_log)


def _relabel_audit(results, cohort):
    decisions = [d for r in results for d in r.decisions]
    if cohort.ground_truth is None:
        return {'count': sum(d.applied for d in decisions)}
    return relabel_mae(decisions, cohort.ground_truth)


def cross_validate(cohort, config, test_missing_rate=0.0, writer=None, num_folds=NUM_FOLDS):
    """五折交叉验证. relabel_audit统计各折最后一轮的替代时间.
    """
    splits = make_folds(cohort.patient_ids, config.seed, num_folds=num_folds)
    if writer is not None:
        writer.write_config(config)
    metrics, results = RunMetrics(), []
    for split in splits:
        result = train_fold(split, cohort, config, test_missing_rate=test_missing_rate)
        metrics.add_fold(result.cindex, result.logrank_p, result.logrank_chi2)
        results.append(result)
        if writer is not None:
            writer.write_fold(result)
    metrics.relabel_audit = _relabel_audit(results, cohort)
    logger.info('cindex=%.4f +- %.4f over %d folds',
                metrics.mean_cindex, metrics.std_cindex, len(metrics.folds))
    if writer is not None:
        writer.write_metrics(metrics)
    return metrics


def ablation_config(config, component):
    if component == 'ecmc':
        return config.replace(use_ecmc=False)
    if component == 'bpmg':
        return config.replace(use_bpmg=False, beta=0.0)
    if component == 'dmac':
        return config.replace(use_dmac=False)
    raise ConfigError('unknown ablation component %r, expected one of %s'
                      % (component, ', '.join(ABLATION_COMPONENTS)))


def ablation_run(cohort, config, component, writer=None):
    """去掉一个组件后重跑交叉验证.
    """
    return cross_validate(cohort, ablation_config(config, component), writer=writer)


def missing_scenario_run(cohort, config, missing_rate, writer=None):
    """正常训练, 测试时每个病人的每个模态以missing_rate独立缺失(至少保留一个).
    """
    if not 0. <= missing_rate < 1.:
        raise ValidationError('missing rate must lie in [0, 1), got %r' % missing_rate)
    return cross_validate(cohort, config, test_missing_rate=missing_rate, writer=writer)


def unimodal_run(cohort, config, kind, writer=None):
    """单模态Cox基线: 只用一个模态, 不做二部图对齐.
    """
    kind = ModalityKind(kind)
    restricted = cohort.restrict([kind])
    return cross_validate(restricted, config.replace(use_bpmg=False, beta=0.0), writer=writer)


def plug_and_play_run(cohort, config):
    """同一种子下有/无ECMC的成对实验, 返回(有, 无, 平均C-index差).
    """
    with_ecmc = cross_validate(cohort, config.replace(use_ecmc=True))
    without_ecmc = cross_validate(cohort, config.replace(use_ecmc=False))
    delta = with_ecmc.mean_cindex - without_ecmc.mean_cindex
    logger.info('plug-and-play: with=%.4f without=%.4f delta=%+.4f',
                with_ecmc.mean_cindex, without_ecmc.mean_cindex, delta)
    return with_ecmc, without_ecmc, delta


def censoring_study(config, seeds, synthetic_config=None):
    """标签质量实验: 每个种子生成合成队列, 在第一折上训练,
    统计被更新病人的原删失时间与替代时间相对真实时间的MAE.
    """
    synthetic_config = synthetic_config or SyntheticConfig(num_patients=500, censor_rate=0.4)
    rows = []
    for seed in seeds:
        cohort = generate_synthetic(
            SyntheticConfig.from_config(dict(synthetic_config.get_config(), seed=seed)))
        run_config = config.replace(seed=seed, use_ecmc=True)
        split = make_folds(cohort.patient_ids, seed)[0]
        result = train_fold(split, cohort, run_config)
        audit = relabel_mae(result.decisions, cohort.ground_truth)
        audit['seed'] = seed
        rows.append(audit)
        logger.info('seed=%d relabeled=%d raw_mae=%s updated_mae=%s',
                    seed, audit['count'], audit['raw_mae'], audit['updated_mae'])
    return rows


def percentile_ranks(scores):
    """折内风险转成(0, 1]的百分位, 让不同折的风险可以合并比较.
    """
    ids = list(scores)
    ranks = rankdata([scores[pid] for pid in ids]) / len(ids)
    return dict(zip(ids, ranks.tolist()))


class RunWriter(object):
    """运行目录:
        config.json, metrics.json, relabels.jsonl,
        fold_k/epochs.csv, fold_k/test_risks.csv, fold_k/model.npz
    """
    def __init__(self, directory, data_path=None):
        self.directory = directory
        self.data_path = data_path
        os.makedirs(directory, exist_ok=True)
        open(os.path.join(directory, 'relabels.jsonl'), 'w').close()

    def fold_dir(self, fold_index):
        path = os.path.join(self.directory, 'fold_%d' % fold_index)
        os.makedirs(path, exist_ok=True)
        return path

    def write_config(self, config):
        payload = {'train': config.get_config()}
        if self.data_path is not None:
            payload['data'] = os.path.abspath(self.data_path)
        with open(os.path.join(self.directory, 'config.json'), 'w') as writer:
            json.dump(payload, writer, indent=2, sort_keys=True)

    def write_fold(self, result):
        path = self.fold_dir(result.split.fold_index)
        pd.DataFrame(result.epoch_log,
                     columns=['epoch', 'train_loss', 'cox', 'cia', 'val_cindex', 'relabel_count']
                     ).to_csv(os.path.join(path, 'epochs.csv'), index=False, float_format='%.17g')
        pd.DataFrame({
            'patient_id': result.split.test_ids,
            'risk': [result.test_scores[pid] for pid in result.split.test_ids],
        }).to_csv(os.path.join(path, 'test_risks.csv'), index=False, float_format='%.17g')
        result.model.save_weights(os.path.join(path, 'model.npz'))
        with open(os.path.join(self.directory, 'relabels.jsonl'), 'a') as writer:
            for row in result.relabel_log:
                writer.write(json.dumps(row, sort_keys=True) + '\n')

    def write_metrics(self, metrics):
        write_metrics(metrics, os.path.join(self.directory, 'metrics.json'))


def load_run(directory):
    """读回运行目录, 返回(config字典, {fold: {patient_id: risk}}).
    """
    with open(os.path.join(directory, 'config.json'), 'r') as reader:
        config = json.load(reader)
    folds = {}
    k = 0
    while os.path.isdir(os.path.join(directory, 'fold_%d' % k)):
        frame = pd.read_csv(os.path.join(directory, 'fold_%d' % k, 'test_risks.csv'),
                            dtype={'patient_id': str}, float_precision='round_trip')
        folds[k] = dict(zip(frame['patient_id'], frame['risk'].astype(float)))
        k += 1
    if not folds:
        raise ValidationError('%s has no fold results' % directory)
    return config, folds


def evaluate_run(directory, cohort):
    """由保存的测试风险重算每折指标.
    """
    _, folds = load_run(directory)
    metrics = RunMetrics()
    for k in sorted(folds):
        records = cohort.records_for(list(folds[k]))
        metrics.add_fold(*score_fold(records, folds[k]))
    previous = os.path.join(directory, 'metrics.json')
    if os.path.exists(previous):
        with open(previous, 'r') as reader:
            metrics.relabel_audit = json.load(reader).get('relabel_audit', {'count': 0})
    return metrics
