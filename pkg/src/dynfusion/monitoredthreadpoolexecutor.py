# -*- coding: utf-8 -*-

from concurrent.futures import ThreadPoolExecutor
import logging
import threading


logger = logging.getLogger(__name__)


class MonitoredThreadPoolExecutor(ThreadPoolExecutor):
    """A subclass of ThreadPoolExecutor that tracks active and queued jobs (one training run per job)"""

    def __init__(self, *args, **kwargs):
        """Object initialization"""
        super().__init__(*args, **kwargs)
        self._max_workers = kwargs.get('max_workers', 0) or 0
        self._current_jobs = 0
        self._peak_jobs = 0
        self._lock = threading.Lock()

    def submit(self, fn, *args, **kwargs):
        """Increase job count and handle submission as usual"""
        with self._lock:
            self._current_jobs += 1
            self._peak_jobs = max(self._peak_jobs, self._current_jobs)
            if (self._max_workers > 0) and (self._current_jobs > self._max_workers):
                logger.debug(f'All [{self._max_workers}] workers busy; job [{getattr(fn, "__name__", fn)}] is queued')
        result = super().submit(fn, *args, **kwargs)

        def callback(_):
            """Callback to decrease the job count once the job is done"""
            with self._lock:
                self._current_jobs -= 1

        result.add_done_callback(callback)
        return result

    @property
    def current_jobs(self):
        with self._lock:
            return self._current_jobs

    @property
    def peak_jobs(self):
        with self._lock:
            return self._peak_jobs
