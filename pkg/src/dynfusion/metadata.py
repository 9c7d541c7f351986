# -*- coding: utf-8 -*-

from collections import namedtuple
import datetime


FORMAT_VERSION = 1


class RunMetadata(namedtuple('RunMetadata', ('run_id', 'created', 'format_version', 'tool_version'))):
    """Identification of a run; not part of the reproducible results"""

    counter = 0  # counter for identifiers
    last_time = None  # formatted time of last run identifier

    def __new__(cls, run_id=None, created=None, format_version=FORMAT_VERSION, tool_version=None):
        now = datetime.datetime.now(datetime.timezone.utc)
        # Create a run identifier based on current UTC time and a counter
        if run_id is None:
            formatted_time = now.strftime('%Y%m%d-%H%M%S')
            if RunMetadata.last_time != formatted_time:
                RunMetadata.last_time = formatted_time
                RunMetadata.counter = 0
            run_id = formatted_time + f'-{RunMetadata.counter:06}'
            RunMetadata.counter += 1
        if created is None:
            created = now.isoformat(timespec='seconds')
        if tool_version is None:
            from . import __version__
            tool_version = __version__
        return super(RunMetadata, cls).__new__(cls, run_id, created, format_version, tool_version)

    def to_dict(self):
        return dict(self._asdict())
