# -*- coding: utf-8 -*-

"""ablation.py: Trains and evaluates modality set x fusion cells over all seeds in a worker pool."""

import asyncio
from collections import namedtuple
import dataclasses
import datetime
import logging
import traceback

from . import data
from . import metrics
from . import reports
from . import training
from .model import DafModel
from .monitoredthreadpoolexecutor import MonitoredThreadPoolExecutor
from .runconfig import aggregate_dict
from .writequeue import WriteQueue


logger = logging.getLogger(__name__)

SeedResult = namedtuple('SeedResult', ['seed', 'model', 'fit', 'predictions', 'report', 'gates'])


@dataclasses.dataclass
class CellResult():
    """Outcome of one matrix cell; failed seeds are listed in errors"""
    modalities: tuple
    fusion: str
    seeds: dict = dataclasses.field(default_factory=dict)
    errors: list = dataclasses.field(default_factory=list)

    @property
    def failed(self):
        return bool(self.errors) or not self.seeds

    def ordered(self, seeds):
        return [self.seeds[seed] for seed in seeds if seed in self.seeds]


def prepare_data(run_config):
    """Loads the dataset (or generates the synthetic one); returns (splits, run_config with dataset widths)"""
    if run_config.data_path is not None:
        splits = data.load_dataset(run_config.data_path)
    else:
        splits = data.gen_synthetic(run_config.synthetic)
    return splits, run_config.with_dims(splits.dims)


def train_and_evaluate(run_config, splits, modalities, fusion, seed):
    """One training run followed by evaluation of the configured split; splits are already restricted to modalities"""
    model_config = run_config.model_config(modalities, fusion, seed)
    model = DafModel(model_config)
    logger.info(f'Training [{"+".join(modalities)}] with fusion [{fusion}] and seed [{seed}]')
    fit = training.fit(model, splits['train'], splits['val'], run_config.train_config(seed))
    predictions = training.evaluate(model, splits[run_config.split], l2_norm=run_config.l2_norm)
    report = metrics.full_report(predictions)
    gates = reports.gate_summary(predictions, model_config.gate_names)
    return SeedResult(seed, model, fit, predictions, report, gates)


def seed_entry(result):
    """JSON-ready summary of one seed"""
    return {
        'seed': result.seed,
        'metrics': result.report.to_dict(),
        'history': [record._asdict() for record in result.fit.history],
        'best_epoch': result.fit.best_epoch,
        'best_val_mse': result.fit.best_val_mse,
        'stopped_early': result.fit.stopped_early,
        'gates': result.gates,
    }


def checkpoint_extra(meta, modalities, missing_policy):
    """Checkpoint header values needed to evaluate the model on the same inputs later"""
    return dict(meta, modalities=list(modalities), missing_policy=missing_policy)


def cell_slug(cell):
    return '+'.join(cell.modalities) + '-' + cell.fusion


class AblationRunner():
    """Runs every (cell, seed) pair as one job of a thread pool; all files go through one write queue"""

    def __init__(self, run_config, splits, writer, record, exception_log='exceptions.log'):
        """Instance initialization"""
        self.run_config = run_config
        self.splits = splits
        self.writer = writer
        self.record = record
        self._exception_log = exception_log
        self._queue = None
        self.meta = reports.provenance(run_config.to_dict(include_location=False))
        self.results = [CellResult(cell.modalities, cell.fusion) for cell in run_config.matrix]
        self.peak_jobs = 0

    def run(self):
        """Runs the whole matrix and writes the summary artifacts; returns the cell results"""
        loop = asyncio.new_event_loop()
        executor = MonitoredThreadPoolExecutor(max_workers=self.run_config.workers, thread_name_prefix='ablation')
        loop.set_default_executor(executor)
        try:
            asyncio.set_event_loop(loop)
            loop.run_until_complete(self.maintask())
            loop.run_until_complete(loop.shutdown_default_executor())
        finally:
            asyncio.set_event_loop(None)
            loop.close()
        self.peak_jobs = executor.peak_jobs
        logger.debug(f'Ablation finished with at most [{self.peak_jobs}] concurrent jobs')
        return self.results

    async def maintask(self):
        """Schedules all jobs, then writes tables and the comparison summary"""
        self._queue = WriteQueue(self.writer)
        task_writer = asyncio.create_task(self._queue.run_writer())
        restricted = dict()
        for cell in self.run_config.matrix:
            if cell.modalities not in restricted:
                restricted[cell.modalities] = data.apply_modality_set(
                    self.splits, cell.modalities, self.run_config.missing_policy)
        jobs = [self.run_job(index, cell, seed, restricted[cell.modalities])
                for index, cell in enumerate(self.run_config.matrix) for seed in self.run_config.seeds]
        logger.info(f'Running [{len(jobs)}] jobs with [{self.run_config.workers}] workers')
        await asyncio.gather(*jobs)
        await self.write_summary()
        await self._queue.close()
        await task_writer

    async def run_job(self, index, cell, seed, splits):
        """Trains one cell for one seed in a worker thread; failures are logged and recorded, not raised"""
        name = f'{cell_slug(cell)} seed {seed}'
        result = self.results[index]
        try:
            seed_result = await asyncio.to_thread(
                train_and_evaluate, self.run_config, splits, cell.modalities, cell.fusion, seed)
        except Exception as e:
            logger.critical(f'Cell [{name}] failed: [{str(e)}]')
            logger.exception('Exception info:')
            result.errors.append(f'seed {seed}: {e}')
            entry = f'{datetime.datetime.now().isoformat(sep=" ")} cell [{name}]\n{traceback.format_exc()}\n'
            await self._queue.put(self._exception_log, entry, append=True)
            return
        result.seeds[seed] = seed_result
        await self.write_job(cell, seed_result)

    async def write_job(self, cell, seed_result):
        base = f'cells/{cell_slug(cell)}/seed-{seed_result.seed}'
        report = seed_result.report
        await self._queue.put(f'{base}/history.csv', reports.history_csv(seed_result.fit.history, self.meta))
        await self._queue.put(f'{base}/predictions.csv', reports.predictions_csv(seed_result.predictions, self.meta))
        if report.auc is not None:
            await self._queue.put(f'{base}/roc.csv', reports.roc_csv(report.roc_points, self.meta))
            title = f'ROC {reports.row_label(cell.modalities, cell.fusion)}'
            await self._queue.put(f'{base}/roc.svg', reports.roc_svg(report.roc_points, report.auc, title, self.meta))
        await self._queue.put(f'{base}/checkpoint.dafckpt', seed_result.model.checkpoint_bytes(
            extra=checkpoint_extra(self.meta, cell.modalities, self.run_config.missing_policy)))

    def aggregates(self):
        """Aggregated headline metrics per cell, None for failed cells"""
        result = []
        for cell in self.results:
            if cell.failed:
                result.append(None)
            else:
                result.append(metrics.aggregate_reports([r.report for r in cell.ordered(self.run_config.seeds)]))
        return result

    async def write_summary(self):
        aggregates = self.aggregates()
        rows = [reports.table_row(cell.modalities, cell.fusion, aggregate)
                for cell, aggregate in zip(self.results, aggregates)]
        n_seeds = len(self.run_config.seeds)
        await self._queue.put('ablation.csv', reports.table_csv(rows, self.meta))
        await self._queue.put('ablation.md', reports.markdown_table(rows, n_seeds, self.meta))
        conditions = [(reports.row_label(cell.modalities, cell.fusion), aggregate)
                      for cell, aggregate in zip(self.results, aggregates)]
        await self._queue.put('comparison.md', reports.comparison_summary(conditions, self.meta))
        for cell in self.results:
            seed_results = cell.ordered(self.run_config.seeds)
            self.record.add_cell({
                'modalities': list(cell.modalities),
                'fusion': cell.fusion,
                'status': 'failed' if cell.failed else 'ok',
                'errors': list(cell.errors),
                'seeds': [seed_entry(r) for r in seed_results],
                'aggregate': aggregate_dict([r.report for r in seed_results]),
            })
        failed = sum(cell.failed for cell in self.results)
        if failed:
            logger.error(f'[{failed}] of [{len(self.results)}] ablation cells failed; see [{self._exception_log}]')
