"""
Jobs Module for Amplab
Runs independent experiments on a Qt thread pool
"""

import logging
from PyQt6.QtCore import QObject, QRunnable, QThreadPool, QMutex, QMutexLocker, Qt, pyqtSignal

from .config import NumericSettings
from .experiments import run_experiment

# Get logger
logger = logging.getLogger('Amplab')


class JobSignals(QObject):
    """Signals emitted by an ExperimentJob"""
    progress = pyqtSignal(str)
    finished = pyqtSignal(int, object)
    error = pyqtSignal(int, object)


class ExperimentJob(QRunnable):
    """Runnable wrapping one zero-argument task"""

    def __init__(self, index, task, label=''):
        super().__init__()
        self.index = index
        self.task = task
        self.label = label or f"job {index}"
        self.signals = JobSignals()
        self.setAutoDelete(False)

    def run(self):
        try:
            self.signals.progress.emit(f"Starting {self.label}...")
            result = self.task()
            self.signals.progress.emit(f"{self.label} complete")
            self.signals.finished.emit(self.index, result)
        except Exception as e:
            logger.error(f"Error in {self.label}: {e}")
            self.signals.error.emit(self.index, e)


class _Collector:
    """Thread-safe result slots filled by job index"""

    def __init__(self, size):
        self.mutex = QMutex()
        self.results = [None] * size
        self.errors = {}

    def store(self, index, result):
        with QMutexLocker(self.mutex):
            self.results[index] = result

    def fail(self, index, error):
        with QMutexLocker(self.mutex):
            self.errors[index] = error

    def raise_first(self):
        if self.errors:
            raise self.errors[min(self.errors)]


def run_jobs(tasks, max_workers=1, labels=None):
    """Run zero-argument callables, returning their results in task order

    max_workers == 1 runs inline. Otherwise every task runs to completion on
    the pool and the error of the lowest failing index is re-raised.
    """
    labels = labels or [f"job {i}" for i in range(len(tasks))]
    if max_workers <= 1 or len(tasks) <= 1:
        results = []
        for task, label in zip(tasks, labels):
            logger.debug(f"Running {label} inline")
            results.append(task())
        return results

    pool = QThreadPool()
    pool.setMaxThreadCount(max_workers)
    collector = _Collector(len(tasks))
    jobs = []
    for index, (task, label) in enumerate(zip(tasks, labels)):
        job = ExperimentJob(index, task, label)
        job.signals.finished.connect(collector.store, Qt.ConnectionType.DirectConnection)
        job.signals.error.connect(collector.fail, Qt.ConnectionType.DirectConnection)
        job.signals.progress.connect(logger.debug, Qt.ConnectionType.DirectConnection)
        jobs.append(job)
        pool.start(job)
    logger.info(f"Started {len(jobs)} jobs on {max_workers} worker thread(s)")
    pool.waitForDone()
    collector.raise_first()
    return collector.results


def run_specs(specs, settings=None, store=None, force=False, max_workers=1):
    """Run experiment specs, reusing cached records from the store unless forced"""
    settings = settings or NumericSettings()
    records = [None] * len(specs)
    pending = []
    for index, spec in enumerate(specs):
        cached = None if (store is None or force) else store.load(spec, settings)
        if cached is not None:
            records[index] = cached
        else:
            pending.append(index)

    tasks = [lambda spec=specs[i]: run_experiment(spec, settings) for i in pending]
    fresh = run_jobs(tasks, max_workers, [specs[i].name for i in pending])
    for index, record in zip(pending, fresh):
        records[index] = record
        if store is not None:
            store.save(record, specs[index], settings)
    return records
