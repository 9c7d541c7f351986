# -*- coding: utf-8 -*-

"""writequeue.py: Single writer for all artifacts of a run directory, usable directly or fed through an asyncio queue."""

import asyncio
from collections import namedtuple
import logging
import os

from .exceptions import ConfigError


logger = logging.getLogger(__name__)


class ArtifactWriter():
    """Writes files below one run directory; the only component creating files there"""

    def __init__(self, run_dir):
        """Instance initialization"""
        self.run_dir = run_dir
        self.written = []
        try:
            os.makedirs(run_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f'Output directory [{run_dir}] is not writable: {e}') from None

    def path(self, relpath):
        return os.path.join(self.run_dir, relpath)

    def write(self, relpath, content):
        """Writes text (str) or binary (bytes) content; returns the full path"""
        filename = self.path(relpath)
        os.makedirs(os.path.dirname(filename), exist_ok=True)
        if isinstance(content, bytes):
            with open(filename, 'wb') as handle:
                handle.write(content)
        else:
            with open(filename, 'w', newline='\n') as handle:
                handle.write(content)
        self.written.append(relpath)
        logger.info(f'Wrote artifact [{filename}]')
        return filename

    def append(self, relpath, content):
        """Appends text content"""
        filename = self.path(relpath)
        with open(filename, 'a') as handle:
            handle.write(content)
        return filename


class WriteQueue():
    """Queue of pending writes processed by one coroutine"""

    WriteItem = namedtuple('WriteItem', ['relpath', 'content', 'append'])

    def __init__(self, writer):
        """Initialization"""
        self._writer = writer
        self._queue = asyncio.Queue()

    async def put(self, relpath, content, append=False):
        """Put a write request into the queue"""
        await self._queue.put(WriteQueue.WriteItem(relpath, content, append))

    async def close(self):
        """Signal that no more writes will follow"""
        await self._queue.put(None)

    async def run_writer(self):
        """Processes write requests until the queue is closed"""
        while True:
            item = await self._queue.get()
            if item is None:
                self._queue.task_done()
                break
            logger.debug(f'Got write request [{item.relpath}] from queue')
            if item.append:
                self._writer.append(item.relpath, item.content)
            else:
                self._writer.write(item.relpath, item.content)
            self._queue.task_done()
