# -*- coding: utf-8 -*-

import logging
import yaml

from .exceptions import ConfigError


logger = logging.getLogger(__name__)
cfg = None


def get_config():
    """Returns the object with the configuration"""
    global cfg
    if cfg is None:
        cfg = Configuration()
    return cfg


def fold_dotted_keys(values):
    """Returns a nested copy of a mapping in which flat dotted keys ("model.d_attn: 32") became sections

    A flat key wins over the same item given in a nested section."""
    nested = dict()
    flat = []
    for key, value in values.items():
        key = str(key)
        if '.' in key:
            flat.append((key, value))
        elif isinstance(value, dict):
            nested[key] = fold_dotted_keys(value)
        else:
            nested[key] = value
    for key, value in flat:
        section = nested
        *parents, leaf = key.split('.')
        for part in parents:
            if not isinstance(section.get(part), dict):
                section[part] = dict()
            section = section[part]
        if leaf in section:
            logger.debug(f'Flat item [{key}] replaces the nested value [{section[leaf]}]')
        section[leaf] = fold_dotted_keys(value) if isinstance(value, dict) else value
    return nested


class Configuration():
    """Run configuration read from a yaml file; items are addressed with dotted names like "train.learning_rate" """

    def __init__(self, values=None):
        """Instance initialization"""
        self._cfg = fold_dotted_keys(values or dict())
        self._filename = None  # file the configuration was read from

    @property
    def cfg(self):
        return self._cfg

    def __getitem__(self, key):
        return self._cfg[key]

    def __iter__(self):
        return iter(self._cfg)

    def __len__(self):
        return len(self._cfg)

    @property
    def filename(self):
        return self._filename

    def clear(self):
        """Drops all configuration items"""
        self._cfg = dict()
        self._filename = None

    def load_config(self, filename, required=False):
        """Replaces the configuration by the content of the given yaml file"""
        self._filename = filename
        try:
            with open(filename, 'r') as ymlfile:
                content = yaml.load(ymlfile, Loader=yaml.SafeLoader)
        except FileNotFoundError:
            if required:
                raise ConfigError(f'Config file [{filename}] not found') from None
            logger.warning(f'Config file [{filename}] not found; just using defaults')
            content = None
        except yaml.YAMLError as e:
            raise ConfigError(f'Config file [{filename}] is not valid YAML: {e}') from None
        if content is None:
            content = dict()  # empty file
        if not isinstance(content, dict):
            raise ConfigError(f'Config file [{filename}] must contain a mapping, not [{type(content).__name__}]')
        self._cfg = fold_dotted_keys(content)
        logger.debug(f'Loaded config file [{filename}] with sections {sorted(self._cfg)}')

    def get_item(self, itemname, default=None):
        """Return a specific item from the configuration or the provided default value if not present"""
        value = self._cfg
        for part in itemname.split('.'):
            if not isinstance(value, dict) or part not in value:
                return default
            value = value[part]
        if value is None or value == dict():
            return default
        return value

    def set_item(self, itemname, value):
        """Set a specific item in the configuration, creating missing sections"""
        section = self._cfg
        *parents, leaf = itemname.split('.')
        for part in parents:
            if not isinstance(section.get(part), dict):
                section[part] = dict()
            section = section[part]
        section[leaf] = value
