#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""cli.py: Command line tool for training, evaluation, ablations, ROC curves, gradient checks and synthetic data."""

import collections
import dataclasses
import getopt
import logging
import os
import sys

import numpy as np

from . import configuration
from . import data
from . import metrics
from . import reports
from . import training
from .ablation import AblationRunner, checkpoint_extra, prepare_data, seed_entry, train_and_evaluate
from .exceptions import ConfigError, DataError, DynFusionError, NumericError
from .model import MODALITIES, DafModel
from .runconfig import RunConfig, RunRecord
from .writequeue import ArtifactWriter


logger = logging.getLogger(__name__)

COMMANDS = ('train', 'evaluate', 'ablate', 'roc', 'gradcheck', 'gen-synth')

# command line option -> configuration item
OPTION_ITEMS = {
    '--data': 'data.path',
    '--seed': 'run.seeds',
    '--seeds': 'run.seeds',
    '--out': 'run.out',
    '--modalities': 'run.modalities',
    '--fusion': 'run.fusion',
    '--missing-policy': 'run.missing_policy',
    '--l2-norm': 'data.l2_norm',
    '--lr': 'train.learning_rate',
    '--epochs': 'train.max_epochs',
    '--workers': 'run.workers',
    '--matrix': 'run.matrix',
    '--split': 'run.split',
    '--noise-std': 'run.noise_std',
    '--tol': 'gradcheck.tol',
    '--samples': 'data.synthetic.n_samples',
}
SHORT_ITEMS = {'-d': '--data', '-s': '--seed', '-o': '--out', '-m': '--modalities', '-f': '--fusion'}

Options = collections.namedtuple('Options', ['command', 'config_file', 'items', 'checkpoint', 'encoding', 'svg',
                                             'corrupt', 'loglevel', 'verbose'])


class App():

    def display_usage(self):
        """Displays usage information"""
        print('Usage: dynfusion <command> [options]')
        print('Commands: ' + ', '.join(COMMANDS))
        print()
        print('  -?, --help                        show program usage')
        print('  -c, --config FILE                 yaml configuration file; options below override it')
        print('  -d, --data DIR                    dataset directory (default: synthetic data)')
        print('  -s, --seed N, --seeds LIST        seed or seeds, e.g. 0,1,2 or 0-4')
        print('  -o, --out DIR                     output directory (dataset directory for gen-synth)')
        print('  -m, --modalities LIST             modality set, e.g. text,audio; text is required')
        print('  -f, --fusion KIND                 softmax3|sigmoid2|static|fixed')
        print('  --missing-policy POLICY           reduce_gate|zero_input')
        print('  --l2-norm on|off                  per-frame L2 normalization of audio/video')
        print('                                    (default: on with --data, off for synthetic data)')
        print('  --lr X, --epochs N                learning rate and maximum number of epochs')
        print('  --workers N                       parallel training runs (ablate)')
        print('  --matrix table1|fusion|full|LIST  ablation cells, LIST like "text:softmax3;text+audio+video:static"')
        print('  --checkpoint FILE                 model checkpoint (evaluate, roc)')
        print('  --split train|val|test            split to evaluate; default: test')
        print('  --noise-std X                     Gaussian noise added to audio/video frames (evaluate, roc)')
        print('  --no-svg                          do not write the ROC figure (roc)')
        print('  --tol X                           gradient check tolerance (gradcheck)')
        print('  --samples N, --encoding FORMAT    number of utterances, jsonl|binary (gen-synth)')
        print('  -l, --loglevel debug|info|error   set the level of debug information')
        print('                                    default: info')
        print('  -v, --verbose                     log to stdout instead of stderr')
        print()
        print('Example: dynfusion ablate --seeds 0-4 --matrix fusion --out runs/fusion')
        print()

    def parse_opts(self, argv):
        """Parse and return command line arguments"""
        long_opts = ['help', 'config=', 'checkpoint=', 'encoding=', 'no-svg', 'corrupt=', 'loglevel=', 'verbose']
        long_opts += [name[2:] + '=' for name in OPTION_ITEMS]
        try:
            opts, args = getopt.gnu_getopt(argv, 'c:d:s:o:m:f:l:v?', long_opts)
        except getopt.GetoptError as ex:
            raise ConfigError(str(ex)) from None
        if any(o in ('-?', '--help') for o, _ in opts):
            return None
        if len(args) != 1 or args[0] not in COMMANDS:
            raise ConfigError(f'expected exactly one command out of {", ".join(COMMANDS)}, got {args}')
        config_file, checkpoint, encoding, svg, corrupt = None, None, 'jsonl', True, None
        loglevel = logging.INFO
        verbose = False
        items = []
        for o, a in opts:
            o = SHORT_ITEMS.get(o, o)
            if o in ('-c', '--config'):
                config_file = a
            elif o in OPTION_ITEMS:
                items.append((OPTION_ITEMS[o], a))
            elif o == '--checkpoint':
                checkpoint = a
            elif o == '--encoding':
                encoding = a
            elif o == '--no-svg':
                svg = False
            elif o == '--corrupt':
                corrupt = a  # names a parameter whose analytic gradient gets falsified
            elif o in ('-l', '--loglevel'):
                a = a.lower().strip()
                if a == 'debug':
                    loglevel = logging.DEBUG
                elif a == 'info':
                    loglevel = logging.INFO
                elif a == 'error':
                    loglevel = logging.ERROR
                else:
                    raise ConfigError('invalid loglevel')
            elif o in ('-v', '--verbose'):
                verbose = True
            else:
                assert False, 'unhandled option'
        return Options(args[0], config_file, items, checkpoint, encoding, svg, corrupt, loglevel, verbose)

    def configure_logging(self, loglevel, verbose):
        """Configure the logging module"""
        format = '%(asctime)s %(levelname)s %(module)s: %(message)s'
        root_handler = logging.getLogger()
        formatter = logging.Formatter(format)
        stream_handler = logging.StreamHandler(sys.stdout if verbose else sys.stderr)
        stream_handler.setFormatter(formatter)
        if getattr(self, '_stream_handler', None) is not None:
            root_handler.removeHandler(self._stream_handler)
        self._stream_handler = stream_handler
        root_handler.addHandler(stream_handler)
        root_handler.setLevel(loglevel)

    def release_logging(self):
        if getattr(self, '_stream_handler', None) is not None:
            logging.getLogger().removeHandler(self._stream_handler)
            self._stream_handler = None

    def load_run_config(self, options):
        """Reads the configuration file, applies the command line options and resolves everything"""
        cfg = configuration.get_config()
        cfg.clear()
        if options.config_file is not None:
            cfg.load_config(options.config_file, required=True)
        for itemname, value in options.items:
            cfg.set_item(itemname, value)
        run_config = RunConfig.from_config(cfg)
        if run_config.data_path is None and not run_config.l2_norm:
            logger.info('L2 normalization of audio/video frames is off for synthetic data (--l2-norm on enables it)')
        return run_config

    def run(self, argv=None):
        """Run the application; returns the exit code"""
        argv = sys.argv[1:] if argv is None else list(argv)
        try:
            options = self.parse_opts(argv)
        except ConfigError as e:
            print(e)
            self.display_usage()
            return ConfigError.exit_code
        if options is None:
            self.display_usage()
            return 0
        self.configure_logging(options.loglevel, options.verbose)
        try:
            run_config = self.load_run_config(options)
            return COMMAND_FUNCTIONS[options.command](run_config, options)
        except DynFusionError as e:
            logger.error(f'{type(e).__name__}: {e}')
            for problem in getattr(e, 'problems', [])[1:]:
                logger.debug(f'Problem: {problem}')
            return e.exit_code
        except KeyboardInterrupt:
            logger.info('Keyboard interrupt received. Exiting...')
            return 130
        except Exception as e:
            logger.critical(f'Exception occured: [{str(e)}]')
            logger.exception('Exception info:')
            return 1
        finally:
            self.release_logging()


def _meta(run_config):
    return reports.provenance(run_config.to_dict(include_location=False))


def cmd_train(run_config, options):
    """Trains one model per seed; writes checkpoints, history CSVs and the run record"""
    splits, run_config = prepare_data(run_config)
    splits = data.apply_modality_set(splits, run_config.modalities, run_config.missing_policy)
    writer = ArtifactWriter(run_config.out)
    record = RunRecord('train', run_config.to_dict())
    meta = _meta(run_config)
    for seed in run_config.seeds:
        result = train_and_evaluate(run_config, splits, run_config.modalities, run_config.fusion, seed)
        extra = checkpoint_extra(meta, run_config.modalities, run_config.missing_policy)
        writer.write(f'seed-{seed}/checkpoint.dafckpt', result.model.checkpoint_bytes(extra=extra))
        writer.write(f'seed-{seed}/history.csv', reports.history_csv(result.fit.history, meta))
        record.add_seed(seed_entry(result), result.report)
        print(f'seed {seed}: best epoch {result.fit.best_epoch}, val_mse {result.fit.best_val_mse:.5f}, '
              f'{run_config.split} mae {result.report.mae:.4f}')
    writer.write('run_record.json', reports.to_json(record.finish().to_dict()))
    return 0


def evaluate_checkpoint(run_config, checkpoint):
    """Evaluates a checkpoint on the configured split with the preprocessing it was trained with

    Returns (model, header, predictions)."""
    if checkpoint is None:
        raise ConfigError('--checkpoint is required')
    model, header = DafModel.from_checkpoint(checkpoint)
    extra = header.get('extra', dict())
    trained = extra.get('config', dict()).get('data', dict())
    if run_config.data_path is None and trained.get('synthetic'):
        run_config = dataclasses.replace(run_config, synthetic=data.SyntheticSpec.from_dict(trained['synthetic']))
    l2_norm = trained.get('l2_norm', run_config.l2_norm)
    splits, _ = prepare_data(run_config)
    expected = {m: model.cfg.input_width(m) for m in MODALITIES}
    if dict(splits.dims) != expected:
        raise DataError(f'Dataset widths {dict(splits.dims)} do not match the checkpoint {expected}', filename=checkpoint)
    modalities = tuple(extra.get('modalities', model.cfg.modalities))
    policy = extra.get('missing_policy', run_config.missing_policy)
    split = data.apply_modality_set(splits, modalities, policy)[run_config.split]
    if run_config.noise_std > 0:
        logger.info(f'Adding noise with std [{run_config.noise_std}] to audio/video frames')
        split = data.add_noise(split, run_config.noise_std, np.random.default_rng(run_config.seeds[0]))
    return model, header, training.evaluate(model, split, l2_norm=l2_norm)


def cmd_evaluate(run_config, options):
    """Writes predictions, gate weights and metrics of a checkpoint"""
    model, header, predictions = evaluate_checkpoint(run_config, options.checkpoint)
    writer = ArtifactWriter(run_config.out)
    meta = dict(_meta(run_config), checkpoint=header.get('extra', dict()).get('config'))
    report = metrics.full_report(predictions)
    gates = reports.gate_summary(predictions, model.cfg.gate_names)
    modalities = tuple(header.get('extra', dict()).get('modalities', model.cfg.modalities))
    writer.write('predictions.csv', reports.predictions_csv(predictions, meta))
    writer.write('gates.csv', reports.gates_csv(predictions, model.cfg.gate_names, meta))
    writer.write('metrics.json', reports.to_json({
        'format_version': meta['format_version'],
        'config': run_config.to_dict(),
        'checkpoint': options.checkpoint,
        'model_config': header['model_config'],
        'seed': header['seed'],
        'metrics': report.to_dict(),
        'gates': gates,
    }))
    writer.write('metrics.md', reports.markdown_row(report, modalities, model.cfg.gate_kind, meta))
    for name, value in report.headline().items():
        print(f'{name}: {"n/a" if value is None else f"{value:.4f}"}')
    return 0


def cmd_roc(run_config, options):
    """Writes the ROC curve of a checkpoint as CSV and SVG"""
    model, header, predictions = evaluate_checkpoint(run_config, options.checkpoint)
    pred = np.array([p.prediction for p in predictions])
    labels = np.array([p.label for p in predictions])
    auc, points = metrics.roc_auc(pred, labels)
    writer = ArtifactWriter(run_config.out)
    meta = dict(_meta(run_config), checkpoint=header.get('extra', dict()).get('config'))
    writer.write('roc.csv', reports.roc_csv(points, meta))
    if options.svg:
        modalities = tuple(header.get('extra', dict()).get('modalities', model.cfg.modalities))
        title = f'ROC {reports.row_label(modalities, model.cfg.gate_kind)}'
        writer.write('roc.svg', reports.roc_svg(points, auc, title, meta))
    print(f'AUC {auc:.4f} over {len(points) - 1} thresholds')
    return 0


def _corrupting(target):
    """Gradient transform falsifying the analytic gradient of one parameter"""
    if target is None:
        return None

    def transform(name, grad):
        return grad * 2.0 + 1e-3 if name == target else grad

    return transform


def run_gradcheck(settings, corrupt=None):
    """Checks every fusion variant for all seeds and sequence lengths; returns (worst error per variant and parameter, failures)"""
    worst = collections.OrderedDict()
    failures = []
    for fusion in settings.fusions:
        worst[fusion] = collections.OrderedDict()
        for seed in settings.seeds:
            rng = np.random.default_rng(seed)
            for length in settings.lengths:
                model_config = settings.model_config(fusion, seed)
                batch = data.random_batch({m: model_config.input_width(m) for m in MODALITIES},
                                          settings.batch_size, length, rng)
                report = training.check_model_gradients(
                    model_config, batch, h=settings.step, tol=settings.tol,
                    max_elements=settings.max_elements or None, rng=rng, grad_transform=_corrupting(corrupt))
                for name, check in report.checks.items():
                    worst[fusion][name] = max(worst[fusion].get(name, 0.0), check.max_rel_error)
                failures.extend((fusion, seed, length, name) for name in report.failures())
                logger.debug(f'Gradient check [{fusion}] seed [{seed}] length [{length}] '
                             f'max relative error [{report.max_rel_error:.3e}]')
    return worst, failures


def cmd_gradcheck(run_config, options):
    """Finite-difference check of all model gradients; fails with exit code 4"""
    settings = run_config.gradcheck
    worst, failures = run_gradcheck(settings, options.corrupt)
    for fusion, values in worst.items():
        print(f'[{fusion}]')
        for name, error in values.items():
            print(f'  {"FAIL" if error > settings.tol else "ok":4} {name:28} max_rel_err={error:.3e}')
    if failures:
        offenders = sorted({f'{fusion}:{name}' for fusion, _, _, name in failures})
        raise NumericError(f'Gradient check failed at tol [{settings.tol}] for {offenders}')
    print(f'Gradient check passed at tol {settings.tol}')
    return 0


def cmd_gen_synth(run_config, options):
    """Writes a synthetic dataset and prints its informative-modality distribution"""
    spec = run_config.synthetic
    if spec is None:
        raise ConfigError('gen-synth generates synthetic data; do not set data.path')
    splits = data.gen_synthetic(spec)
    data.save_dataset(splits, run_config.out, encoding=options.encoding, extra={'synthetic': spec.to_dict()})
    print(f'Synthetic dataset written to [{os.path.abspath(run_config.out)}] '
          f'(noise_std {spec.noise_std}, seed {spec.seed})')
    for name, split in splits.items():
        counts = collections.Counter(utterance.oracle for utterance in split)
        distribution = ', '.join(f'{m} {counts.get(m, 0)}' for m in MODALITIES)
        print(f'  {name}: {len(split)} utterances; informative modality: {distribution}')
    return 0


def cmd_ablate(run_config, options):
    """Runs the ablation matrix; exit code 1 if any cell failed"""
    splits, run_config = prepare_data(run_config)
    writer = ArtifactWriter(run_config.out)
    record = RunRecord('ablate', run_config.to_dict())
    runner = AblationRunner(run_config, splits, writer, record)
    results = runner.run()
    writer.write('run_record.json', reports.to_json(record.finish().to_dict()))
    with open(writer.path('ablation.md'), 'r') as handle:
        print(handle.read())
    return 1 if any(cell.failed for cell in results) else 0


COMMAND_FUNCTIONS = {
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'ablate': cmd_ablate,
    'roc': cmd_roc,
    'gradcheck': cmd_gradcheck,
    'gen-synth': cmd_gen_synth,
}


def main(argv=None):
    """Entry point of the command line tool"""
    return App().run(argv)


if __name__ == '__main__':
    sys.exit(main())
