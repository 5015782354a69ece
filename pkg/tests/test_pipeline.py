import os
import json
import numpy as np
import pandas as pd
import pytest
from censurv.dataio import SyntheticConfig
from censurv.pipeline import (
    RunMetrics,
    RunWriter,
    TrainConfig,
    ablation_config,
    censoring_study,
    cross_validate,
    evaluate_run,
    load_run,
    make_folds,
    missing_scenario_run,
    percentile_ranks,
    score_fold,
    train_fold,
    unimodal_run,
)
from censurv.utils import DataGenerator
from censurv.exceptions import ConfigError, ValidationError
from conftest import make_records, make_scores


def _tiny(**kwargs):
    config = dict(preheat_epochs=1, total_epochs=3, d_model=4, d_z=4, sage_layers=1,
                  select_fraction=0.5, K=3, verbose=False)
    config.update(kwargs)
    return TrainConfig.desk(**config)


def test_folds_for_100_patients():
    ids = ['p%03d' % i for i in range(100)]
    splits = make_folds(ids, seed=0)
    assert len(splits) == 5
    tests = set()
    for split in splits:
        assert (len(split.test_ids), len(split.val_ids), len(split.train_ids)) == (20, 20, 60)
        assert sorted(split.all_ids()) == sorted(ids)
        assert not tests & set(split.test_ids)
        tests |= set(split.test_ids)
    assert tests == set(ids)


def test_folds_depend_on_seed():
    ids = ['p%03d' % i for i in range(50)]
    a, b = make_folds(ids, seed=1), make_folds(ids, seed=2)
    assert [s.test_ids for s in a] != [s.test_ids for s in b]
    assert [s.test_ids for s in a] == [s.test_ids for s in make_folds(ids, seed=1)]


def test_folds_too_small():
    with pytest.raises(ValidationError):
        make_folds(['p%d' % i for i in range(9)], seed=0)


def test_train_config_json(tmp_path):
    path = str(tmp_path / 'config.json')
    with open(path, 'w') as writer:
        json.dump({'lambda': 0.5, 'total_epochs': 10, 'preheat_epochs': 4}, writer)
    config = TrainConfig.from_json_file(path)
    assert config.lambda_ == 0.5
    assert config.ecmc_config().preheat_epochs == 4
    assert TrainConfig.from_config(config.get_config()).get_config() == config.get_config()
    with open(path, 'w') as writer:
        json.dump({'gamma': 1}, writer)
    with pytest.raises(ConfigError, match='gamma'):
        TrainConfig.from_json_file(path)


def test_train_config_presets_and_validation():
    config = TrainConfig()
    assert (config.alpha, config.beta, config.lambda_, config.learning_rate) == (5, 1, 0.4, 3e-5)
    assert (config.preheat_epochs, config.total_epochs) == (60, 120)
    desk = TrainConfig.desk()
    assert (desk.preheat_epochs, desk.total_epochs, desk.batch_size) == (15, 30, 32)
    assert TrainConfig.full().d_model == 1024
    assert config.replace(lambda_=0.1).lambda_ == 0.1
    assert not TrainConfig(preheat_epochs=5, total_epochs=5).has_update_stage
    with pytest.raises(ConfigError):
        TrainConfig(preheat_epochs=6, total_epochs=5)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


def test_ablation_configs():
    config = TrainConfig()
    assert not ablation_config(config, 'ecmc').use_ecmc
    bpmg = ablation_config(config, 'bpmg')
    assert not bpmg.use_bpmg and bpmg.beta == 0.0
    assert not ablation_config(config, 'dmac').use_dmac
    with pytest.raises(ConfigError):
        ablation_config(config, 'attention')


def test_run_metrics():
    metrics = RunMetrics()
    metrics.add_fold(0.6, 0.01, 6.5)
    metrics.add_fold(0.8)
    assert metrics.mean_cindex == pytest.approx(0.7)
    assert metrics.std_cindex == pytest.approx(0.1)
    restored = RunMetrics.from_dict(metrics.to_dict())
    assert restored.to_dict() == metrics.to_dict()
    with pytest.raises(ValidationError):
        RunMetrics().mean_cindex


def test_score_fold_constant_predictor():
    records = make_records([1, 2, 3, 4], [True, True, False, True])
    cindex, p, chi2 = score_fold(records, make_scores(records, [0.3] * 4))
    assert cindex == 0.5
    assert p is None and chi2 is None


def test_percentile_ranks():
    assert percentile_ranks({'a': 3.0, 'b': -1.0, 'c': 0.5, 'd': 9.0}) == \
        {'a': 0.75, 'b': 0.25, 'c': 0.5, 'd': 1.0}


def test_data_generator_batches(rng):
    generator = DataGenerator(['p%d' % i for i in range(7)], batch_size=3)
    assert len(generator) == 3
    assert [len(b) for b in generator] == [3, 3, 1]
    shuffled = [pid for b in generator.shuffled(rng) for pid in b]
    assert sorted(shuffled) == sorted(generator.data)
    assert len(DataGenerator(['a', 'b'])) == 1


def test_train_fold_runs_ecmc(small_cohort):
    before = list(small_cohort.records)
    split = make_folds(small_cohort.patient_ids, seed=0)[0]
    result = train_fold(split, small_cohort, _tiny(select_fraction=1.0))
    assert small_cohort.records == before
    assert len(result.epoch_log) == 3
    assert [row['epoch'] for row in result.epoch_log] == [0, 1, 2]
    assert set(result.test_scores) == set(split.test_ids)
    assert all(np.isfinite(v) for v in result.test_scores.values())
    assert 0. <= result.cindex <= 1.
    assert 0 <= result.best_epoch < 3
    assert result.epoch_log[0]['relabel_count'] == 0
    for row in result.relabel_log:
        assert row['epoch'] >= 1
        assert row['patient_id'] in split.train_ids
        assert not row['applied'] or row['new_time'] > row['old_time']
    censored_train = [pid for pid in split.train_ids
                      if small_cohort.records_for([pid])[0].censored]
    assert {d.patient_id for d in result.decisions} == set(censored_train)


def test_train_fold_without_update_stage(small_cohort):
    split = make_folds(small_cohort.patient_ids, seed=0)[1]
    for config in (_tiny(preheat_epochs=3), _tiny(use_ecmc=False)):
        result = train_fold(split, small_cohort, config)
        assert result.relabel_log == []
        assert result.decisions == []
        assert all(row['relabel_count'] == 0 for row in result.epoch_log)


def test_train_fold_ablations(small_cohort):
    split = make_folds(small_cohort.patient_ids, seed=3)[2]
    no_bpmg = train_fold(split, small_cohort, ablation_config(_tiny(), 'bpmg'))
    assert all(row['cia'] == 0.0 for row in no_bpmg.epoch_log)
    full = train_fold(split, small_cohort, _tiny())
    assert any(row['cia'] > 0.0 for row in full.epoch_log)
    no_dmac = train_fold(split, small_cohort, ablation_config(_tiny(), 'dmac'))
    assert len(no_dmac.decisions) == len(full.decisions)


def test_train_fold_minibatches(small_cohort):
    split = make_folds(small_cohort.patient_ids, seed=0)[0]
    result = train_fold(split, small_cohort, _tiny(batch_size=5))
    assert all(np.isfinite(row['train_loss']) for row in result.epoch_log)


def test_train_fold_heavy_test_missingness(small_cohort):
    split = make_folds(small_cohort.patient_ids, seed=0)[0]
    result = train_fold(split, small_cohort, _tiny(), test_missing_rate=0.9)
    assert all(np.isfinite(v) for v in result.test_scores.values())
    with pytest.raises(ValidationError):
        train_fold(split, small_cohort, _tiny(), test_missing_rate=1.0)


def test_cross_validate_is_reproducible(small_cohort):
    config = _tiny(seed=4)
    first = cross_validate(small_cohort, config, num_folds=2)
    second = cross_validate(small_cohort, config, num_folds=2)
    assert first.to_dict() == second.to_dict()
    assert len(first.folds) == 2


def test_missing_rate_zero_matches_cross_validate(small_cohort):
    config = _tiny(total_epochs=2)
    expected = cross_validate(small_cohort, config)
    assert missing_scenario_run(small_cohort, config, 0.0).to_dict() == expected.to_dict()
    with pytest.raises(ValidationError):
        missing_scenario_run(small_cohort, config, 1.0)


def test_unimodal_run(small_cohort):
    metrics = unimodal_run(small_cohort, _tiny(total_epochs=2), 'clinical')
    assert len(metrics.folds) == 5
    restricted = small_cohort.restrict(['clinical'])
    assert restricted.availability[:, :2].sum() == 0


def test_run_writer_outputs(small_cohort, tmp_path):
    directory = str(tmp_path / 'run')
    writer = RunWriter(directory, data_path='dataset')
    metrics = cross_validate(small_cohort, _tiny(), writer=writer, num_folds=2)
    with open(os.path.join(directory, 'config.json')) as reader:
        config = json.load(reader)
    assert config['train']['total_epochs'] == 3
    assert config['data'] == os.path.abspath('dataset')
    epochs = pd.read_csv(os.path.join(directory, 'fold_0', 'epochs.csv'))
    assert list(epochs.columns) == ['epoch', 'train_loss', 'cox', 'cia', 'val_cindex',
                                    'relabel_count']
    assert len(epochs) == 3
    assert os.path.exists(os.path.join(directory, 'fold_1', 'model.npz'))
    with open(os.path.join(directory, 'relabels.jsonl')) as reader:
        for line in reader:
            row = json.loads(line)
            assert {'patient_id', 'old_time', 'new_time', 'applied', 'fold', 'epoch',
                    'tau'} <= set(row)
    with open(os.path.join(directory, 'metrics.json')) as reader:
        saved = json.load(reader)
    assert saved['mean_cindex'] == pytest.approx(metrics.mean_cindex)

    _, folds = load_run(directory)
    assert sorted(folds) == [0, 1]
    recomputed = evaluate_run(directory, small_cohort)
    assert recomputed.fold_cindex == pytest.approx(metrics.fold_cindex)


def test_load_run_without_folds(tmp_path):
    directory = str(tmp_path / 'empty')
    RunWriter(directory).write_config(_tiny())
    with pytest.raises(ValidationError):
        load_run(directory)


def test_censoring_study_rows():
    synthetic = SyntheticConfig(num_patients=30, grid_size=1, pathology_dim=3, genomic_dim=2)
    rows = censoring_study(_tiny(select_fraction=1.0), [0, 1], synthetic_config=synthetic)
    assert [row['seed'] for row in rows] == [0, 1]
    for row in rows:
        assert set(row) == {'count', 'raw_mae', 'updated_mae', 'seed'}
        if row['count']:
            assert row['raw_mae'] > 0
