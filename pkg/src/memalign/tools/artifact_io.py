#!/usr/bin/env python3

'''
byte level codecs shared by the dataset, memory snapshot and experiment artifacts
'''

import os
import json
import struct
import logging

from pathlib import Path

import numpy as np

from memalign.tools.common import sha256_of_bytes, sha256_of_json
from memalign.tools.errors import DatasetIOError, IntegrityError, UsageError

logger = logging.getLogger(__name__)

IMAGE_HEADER = struct.Struct('<3i')
LOCK_FILE_NAME = '.memalign.lock'

def encode_image(image):
    '''
    raw little-endian float32 blob with a (H, W, channels) int32 header
    '''
    image = np.asarray(image, dtype='<f4')
    assert image.ndim == 3
    return IMAGE_HEADER.pack(*image.shape) + np.ascontiguousarray(image).tobytes()

def decode_image(data, path=None):
    if len(data) < IMAGE_HEADER.size:
        raise DatasetIOError('image blob is truncated', path)
    h, w, c = IMAGE_HEADER.unpack(data[:IMAGE_HEADER.size])
    expected = IMAGE_HEADER.size + h * w * c * 4
    if h <= 0 or w <= 0 or c <= 0 or len(data) != expected:
        raise DatasetIOError(f'image blob size {len(data)} does not match header {h}x{w}x{c}', path)
    return np.frombuffer(data, dtype='<f4', offset=IMAGE_HEADER.size).reshape(h, w, c).astype(np.float32)

def encode_vectors(matrix):
    return np.ascontiguousarray(np.asarray(matrix, dtype='<f4')).tobytes()

def decode_vectors(data, rows, cols, path=None):
    if len(data) != rows * cols * 4:
        raise DatasetIOError(f'vector blob has {len(data)} bytes, expected {rows}x{cols} float32', path)
    return np.frombuffer(data, dtype='<f4').reshape(rows, cols).astype(np.float32)

def write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(data)

def read_bytes(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError('file not found', path)
    with open(path, 'rb') as f:
        return f.read()

def write_json(path, obj, sealed=False):
    '''
    sealed documents carry a sha256 of their own canonical content under "sha256"
    '''
    obj = dict(obj)
    if sealed:
        obj.pop('sha256', None)
        obj['sha256'] = sha256_of_json(obj)
    write_bytes(path, (json.dumps(obj, sort_keys=True, indent=1) + '\n').encode('utf-8'))
    return obj

def read_json(path, sealed=False):
    data = read_bytes(path)
    try:
        obj = json.loads(data.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetIOError(f'corrupt json: {e}', path)
    if sealed:
        stored = obj.pop('sha256', None)
        if stored is None or stored != sha256_of_json(obj):
            raise IntegrityError('content hash mismatch, the file was modified after it was written', path)
    return obj

def verify_file_hash(path, expected_sha256):
    data = read_bytes(path)
    if sha256_of_bytes(data) != expected_sha256:
        raise IntegrityError('file hash does not match the manifest', path)
    return data

def prepare_output_dir(out_dir, force=False):
    '''
    refuse to write into an existing non-empty directory unless forced
    '''
    out_dir = Path(out_dir)
    if out_dir.exists() and any(p.name != LOCK_FILE_NAME for p in out_dir.iterdir()) and not force:
        raise UsageError(f'output directory {out_dir} is not empty, use --force to overwrite')
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir

class DirectoryLock():
    '''
    advisory lock file, concurrent invocations on the same output directory are unsupported
    '''
    def __init__(self, directory):
        self.path = Path(directory) / LOCK_FILE_NAME
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(f'{self.path.parent} is locked by another memalign process (remove {self.path} if stale)')
        os.write(self.fd, str(os.getpid()).encode('utf-8'))
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None
        try:
            self.path.unlink()
        except FileNotFoundError:
            logger.warning(f'lock file {self.path} disappeared before release')
        return False
