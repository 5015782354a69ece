import os
import sys
import logging
import argparse
from censurv.dataio import (
    SyntheticConfig,
    emit_km_csv,
    generate_synthetic,
    load_dataset,
    save_dataset,
    write_metrics,
)
from censurv.pipeline import (
    ABLATION_COMPONENTS,
    RunWriter,
    TrainConfig,
    ablation_run,
    cross_validate,
    evaluate_run,
    load_run,
    missing_scenario_run,
    percentile_ranks,
    read_config_json,
    unimodal_run,
)
from censurv.models.modality import MODALITY_KINDS
from censurv.exceptions import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _add_train_options(parser):
    parser.add_argument('--data', required=True, help='dataset directory or manifest.json')
    parser.add_argument('--config', help='TrainConfig JSON file')
    preset = parser.add_mutually_exclusive_group()
    preset.add_argument('--desk', action='store_true',
                        help='test-scale preset (15/30 epochs, batch 32)')
    preset.add_argument('--full', action='store_true', help='full-scale preset (60/120 epochs)')
    parser.add_argument('--seed', type=int, help='override the config seed')
    parser.add_argument('--out', required=True, help='run directory')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='censurv',
        description='Multimodal survival prediction with censoring modelling.',
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument('--verbose', action='store_true', help='DEBUG logging')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help='generate a synthetic cohort')
    gen.add_argument('--patients', type=int, default=200)
    gen.add_argument('--censor-rate', type=float, default=0.4)
    gen.add_argument('--grid-size', type=int, default=4)
    gen.add_argument('--missing-rate', type=float, default=0.0)
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out', required=True)

    _add_train_options(commands.add_parser('train', help='5-fold cross-validated training'))

    evaluate = commands.add_parser('eval', help='recompute metrics from a run directory')
    evaluate.add_argument('--run', required=True)
    evaluate.add_argument('--out', required=True)

    ablate = commands.add_parser('ablate', help='train with one component removed')
    _add_train_options(ablate)
    ablate.add_argument('--component', required=True, choices=ABLATION_COMPONENTS)

    missing = commands.add_parser('missing', help='evaluate under test-time modality loss')
    _add_train_options(missing)
    missing.add_argument('--rates', default='0.1,0.3,0.5', help='comma separated missing rates')

    unimodal = commands.add_parser('unimodal', help='single-modality baseline')
    _add_train_options(unimodal)
    unimodal.add_argument('--kind', required=True, choices=[k.value for k in MODALITY_KINDS])

    km = commands.add_parser('km', help='export Kaplan-Meier curves of a run')
    km.add_argument('--run', required=True)
    km.add_argument('--fold', type=int, help='single fold; default pools all folds')
    km.add_argument('--out', required=True)
    return parser


def resolve_config(args):
    if args.full:
        config = TrainConfig.full()
    elif args.desk:
        config = TrainConfig.desk()
    else:
        config = TrainConfig()
    if args.config:
        config = config.replace(**read_config_json(args.config))
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _run_gen(args):
    config = SyntheticConfig(
        num_patients=args.patients,
        censor_rate=args.censor_rate,
        grid_size=args.grid_size,
        modality_missing_rate=args.missing_rate,
        seed=args.seed,
    )
    manifest = save_dataset(generate_synthetic(config), args.out)
    logger.info('wrote %s', manifest.path)


def _run_train(args):
    config, cohort = resolve_config(args), load_dataset(args.data)
    cross_validate(cohort, config, writer=RunWriter(args.out, args.data))


def _run_ablate(args):
    config, cohort = resolve_config(args), load_dataset(args.data)
    ablation_run(cohort, config, args.component, writer=RunWriter(args.out, args.data))


def _run_missing(args):
    config, cohort = resolve_config(args), load_dataset(args.data)
    try:
        rates = [float(r) for r in args.rates.split(',') if r.strip()]
    except ValueError:
        raise ValidationError('--rates must be comma separated numbers, got %r' % args.rates)
    for rate in rates:
        writer = RunWriter(os.path.join(args.out, 'rate_%g' % rate), args.data)
        metrics = missing_scenario_run(cohort, config, rate, writer=writer)
        logger.info('missing_rate=%g cindex=%.4f', rate, metrics.mean_cindex)


def _run_unimodal(args):
    config, cohort = resolve_config(args), load_dataset(args.data)
    unimodal_run(cohort, config, args.kind, writer=RunWriter(args.out, args.data))


def _run_data(run_dir):
    config, folds = load_run(run_dir)
    if 'data' not in config:
        raise ValidationError('%s/config.json does not record the dataset path' % run_dir)
    return load_dataset(config['data']), folds


def _run_eval(args):
    cohort, _ = _run_data(args.run)
    write_metrics(evaluate_run(args.run, cohort), args.out)


def _run_km(args):
    cohort, folds = _run_data(args.run)
    if args.fold is not None:
        if args.fold not in folds:
            raise ValidationError('run has no fold %d' % args.fold)
        scores = folds[args.fold]
    else:
        scores = {}
        for fold_scores in folds.values():
            scores.update(percentile_ranks(fold_scores))
    emit_km_csv(cohort.records_for(list(scores)), scores, args.out)


COMMANDS = {
    'gen': _run_gen,
    'train': _run_train,
    'eval': _run_eval,
    'ablate': _run_ablate,
    'missing': _run_missing,
    'unimodal': _run_unimodal,
    'km': _run_km,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error('%s', e)
        return EXIT_VALIDATION
    except OSError as e:
        logger.error('%s', e)
        return EXIT_IO
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
