"""Run folders, manifests and content hashes."""
from datetime import datetime
from typing import Iterable, List
import hashlib
import json
import logging
import os
import re
import shutil

from dateutil.parser import parse
import numpy as np

from kinetiq.tools.general_tools import JSONEncoder

__all__ = ['create_run_folder', 'finalize_run_folder', 'discard_run_folder',
           'get_run_folder', 'write_manifest', 'read_manifest',
           'file_sha256', 'corpus_hash', 'PARTIAL_SUFFIX']

logger = logging.getLogger(__name__)

PARTIAL_SUFFIX = '.partial'
_COUNTER_PATTERN = re.compile(r'^#(\d+)_')


def _next_counter(date_folder: str) -> int:
    if not os.path.isdir(date_folder):
        return 1
    counters = [int(match.group(1)) for match in
                (_COUNTER_PATTERN.match(name) for name in os.listdir(date_folder))
                if match]
    return max(counters, default=0) + 1


def create_run_folder(name: str, base_folder: str, now: datetime = None) -> str:
    """Create a staging folder for a run.

    Runs live in ``{base_folder}/{date}/#{counter}_{name}_{time}``. The folder
    is created with a ``.partial`` suffix and only renamed by
    `finalize_run_folder` once the run succeeded.

    Args:
        name: Run name, e.g. ``train``.
        base_folder: Main data folder.
        now: Time stamp, the current time by default.

    Returns:
        Path of the staging folder.
    """
    now = datetime.now() if now is None else now
    date_folder = os.path.join(base_folder, now.strftime('%Y-%m-%d'))
    counter = _next_counter(date_folder)
    folder = os.path.join(date_folder,
                          f'#{counter:03}_{name}_{now.strftime("%H%M%S")}' + PARTIAL_SUFFIX)
    os.makedirs(folder)
    logger.debug(f'Created run folder {folder}')
    return folder


def finalize_run_folder(folder: str) -> str:
    """Strip the ``.partial`` suffix of a staging folder."""
    if not folder.endswith(PARTIAL_SUFFIX):
        return folder
    final = folder[:-len(PARTIAL_SUFFIX)]
    os.replace(folder, final)
    logger.info(f'Run stored in {final}')
    return final


def discard_run_folder(folder: str):
    if folder.endswith(PARTIAL_SUFFIX) and os.path.isdir(folder):
        shutil.rmtree(folder)
        logger.debug(f'Removed staging folder {folder}')


def get_run_folder(*path: str, base_folder: str) -> str:
    """Get the newest run folder satisfying conditions.

    Args:
        *path: Filters. An item ``#12`` selects run 12, any other string must
            be contained in the run folder name. A first item of the form
            ``{date}/{filter}`` restricts the search to that date folder.
            Without filters the newest finished run is returned.
        base_folder: Main data folder.

    Returns:
        Absolute path to the run folder.

    Raises:
        FileNotFoundError: No matching run.
    """
    path = [p.replace('\\', '/') for p in path]
    if path and os.path.isabs(path[0]):
        return path[0]

    if path and '/' in path[0]:
        date_folder, path[0] = path[0].split('/', 1)
        date_folders = [date_folder]
    else:
        date_folders = []
        for folder in sorted(os.listdir(base_folder), reverse=True) \
                if os.path.isdir(base_folder) else []:
            # Check if folder is an actual date folder
            try:
                parse(folder)
            except ValueError:
                continue
            date_folders.append(folder)

    for date_folder in date_folders:
        candidates = sorted((name for name in os.listdir(os.path.join(base_folder, date_folder))
                             if not name.endswith(PARTIAL_SUFFIX)), reverse=True)
        for name in candidates:
            matches = True
            for subpath in path:
                if subpath[:1] == '#' and subpath[1:].isdigit():
                    # Run indices are zero-padded
                    subpath = f'#{int(subpath[1:]):03}_'
                    matches &= name.startswith(subpath)
                else:
                    matches &= subpath in name
            if matches:
                return os.path.join(base_folder, date_folder, name)
    raise FileNotFoundError(f'No run matching {path} in {base_folder}')


def write_manifest(folder: str, manifest: dict, filename: str = 'manifest.json') -> str:
    filepath = os.path.join(folder, filename)
    with open(filepath, 'w') as f:
        json.dump(manifest, f, cls=JSONEncoder, indent=4, sort_keys=True)
    return filepath


def read_manifest(folder: str, filename: str = 'manifest.json') -> dict:
    with open(os.path.join(folder, filename), 'r') as f:
        return json.load(f)


def file_sha256(filepath: str) -> str:
    sha = hashlib.sha256()
    with open(filepath, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            sha.update(block)
    return sha.hexdigest()


def corpus_hash(arrays: Iterable[np.ndarray], names: List[str] = None) -> str:
    """SHA-256 over the bytes of a sequence of arrays and their names."""
    sha = hashlib.sha256()
    for name in names or []:
        sha.update(name.encode())
    for array in arrays:
        sha.update(np.ascontiguousarray(array, dtype='<f8').tobytes())
    return sha.hexdigest()
