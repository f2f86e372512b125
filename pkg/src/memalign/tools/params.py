#!/usr/bin/env python3

'''
yaml parameter files, the offline counterpart of a parameter server:
config/<concern>/<file>.yaml is looked up in MEMALIGN_CONFIG_DIR, the source tree and the install prefix
'''

import os
import sys
import dataclasses
import logging

from pathlib import Path

import yaml

from memalign.tools.errors import ConfigValidationError, DatasetIOError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

def config_search_path():
    paths = []
    if os.environ.get('MEMALIGN_CONFIG_DIR'):
        paths.append(Path(os.environ['MEMALIGN_CONFIG_DIR']))
    # source checkout: <repo>/src/memalign/tools/params.py -> <repo>/config
    paths.append(Path(__file__).resolve().parents[3] / 'config')
    paths.append(Path(sys.prefix) / 'share' / 'memalign' / 'config')
    return paths

def find_config_file(relative_path):
    for base in config_search_path():
        candidate = base / relative_path
        if candidate.is_file():
            return candidate
    return None

def load_yaml(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError('parameter file not found', path)
    with open(path, 'r') as f:
        try:
            content = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigValidationError(f'could not parse {path}: {e}')
    return content if content is not None else {}

def get_params(relative_path, default=None):
    '''
    load a parameter file from the config tree, return default (or {}) if it is not installed
    '''
    path = find_config_file(relative_path)
    if path is None:
        logger.warning(f'parameter file {relative_path} not found in {config_search_path()}, using built-in defaults')
        return {} if default is None else default
    return load_yaml(path)

def build_dataclass(cls, overrides, context):
    '''
    instantiate a config dataclass from a dict, rejecting unknown keys (typo safety)
    '''
    overrides = dict(overrides or {})
    version = overrides.pop('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigValidationError(f'{context}: unsupported schema_version {version}, expected {SCHEMA_VERSION}',
                                    ['schema_version'])
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigValidationError(f'{context}: unknown keys', unknown)
    return cls(**overrides)

def dataclass_to_dict(config):
    d = dataclasses.asdict(config)
    d['schema_version'] = SCHEMA_VERSION
    return d
