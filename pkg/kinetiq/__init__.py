import logging
import os

from .tools.config import DictConfig, load_config_file
from .version import __version__

logger = logging.getLogger(__name__)

data_env_var = 'KINETIQ_DATA_DIR'
cache_env_var = 'KINETIQ_CACHE_DIR'


def get_kinetiq_folder() -> str:
    """Get root folder of kinetiq source code."""
    return os.path.split(__file__)[0]


def default_config_path() -> str:
    return os.path.join(get_kinetiq_folder(), 'kinetiqrc.json')


def load_default_config() -> DictConfig:
    """Fresh `DictConfig` holding the packaged defaults."""
    return DictConfig(name='config', config=load_config_file(default_config_path()))


def get_data_folder(folder: str = None) -> str:
    """Folder receiving run directories.

    Resolved from the argument, then the ``KINETIQ_DATA_DIR`` environment
    variable, then ``./runs``.
    """
    if folder is not None:
        return folder
    return os.getenv(data_env_var, os.path.join(os.getcwd(), 'runs'))


def get_cache_folder(folder: str = None, data_folder: str = None) -> str:
    """Folder for cached foot speed reconstructions.

    Resolved from the argument, then ``KINETIQ_CACHE_DIR``, then a
    ``.cache`` folder inside the data folder.
    """
    if folder is not None:
        return folder
    cache_folder = os.getenv(cache_env_var, None)
    if cache_folder is not None:
        return cache_folder
    return os.path.join(get_data_folder(data_folder), '.cache')


# Dictionary of kinetiq settings
config = load_default_config()
