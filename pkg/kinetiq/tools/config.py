from typing import Any, Tuple, Union
import os
import collections.abc
from blinker import Signal
import json
import copy
import logging

from kinetiq.errors import ConfigError

__all__ = ['SubConfig', 'DictConfig', 'ListConfig', 'update_dict',
           'load_config_file']

logger = logging.getLogger(__name__)

MIRROR_PREFIX = 'config:'


class SubConfig:
    """Node of a run configuration tree, the root being named ``config``.

    Dicts and lists placed in a config become `DictConfig` and `ListConfig`
    nodes, each knowing its parent, so that every value has a path such as
    ``config:losses.weights.kane``.

    A node is stored either as a single JSON file ``{name}.json`` or, when
    ``save_as_dir`` is set, as a folder ``{name}/`` holding one JSON file or
    subfolder per key. Run configs are normally single files; the folder form
    suits hand-maintained collections of presets.

    Parameters:
        name: Node name, ``config`` for the root.
        folder: Folder the node is loaded from and saved to.
        parent: Parent node, None for the root.
        save_as_dir: Store as a folder instead of a single file. Inferred on
            load when not given.
    """
    def __init__(self,
                 name: str,
                 folder: str = None,
                 parent: 'SubConfig' = None,
                 save_as_dir: bool = None):
        self.name = name
        self.folder = folder
        self.parent = parent
        self.save_as_dir = save_as_dir

    @property
    def config_path(self) -> str:
        """Path of the node, e.g. ``config:losses.weights``"""
        if self.parent is None:
            return MIRROR_PREFIX
        return join_config_path(self.parent.config_path, self.name)

    def load(self, folder: str = None):
        """Read the node from ``{folder}/{name}.json`` or ``{folder}/{name}/``.

        Args:
            folder: Folder to read from, ``self.folder`` by default.

        Returns:
            Loaded contents; a dict of child nodes for the folder form.

        Raises:
            FileNotFoundError: Neither file nor folder exists.
        """
        folder = self.folder if folder is None else folder
        filepath = os.path.join(folder, f'{self.name}.json')
        folderpath = os.path.join(folder, self.name)

        if os.path.exists(filepath):
            stored_as_dir = False
            config = load_config_file(filepath)
        elif os.path.isdir(folderpath):
            stored_as_dir = True
            config = {}
            for entry in sorted(os.listdir(folderpath)):
                child = _load_child(folderpath, entry, parent=self)
                if child is not None:
                    config[child.name] = child
        else:
            raise FileNotFoundError(f'No config file or folder {self.name} in {folder}')

        if self.save_as_dir is None:
            self.save_as_dir = stored_as_dir
        return config

    def refresh(self, config=None):
        """Bring the node in line with ``config``, logging every change.

        Args:
            config: New contents, reloaded from ``self.folder`` by default.
        """
        if config is None:
            config = self.load(update=False)

        if isinstance(self, dict) and isinstance(config, dict):
            _refresh_dict(self, config)
        elif isinstance(self, list) and isinstance(config, list):
            if config != self:
                logger.info(f'{self.config_path} replaced by {config}')
                self[:] = config
        else:
            raise ConfigError(f'Cannot refresh {self.config_path} with '
                              f'{type(config).__name__} {config}')

    def save(self,
             folder: str = None,
             save_as_dir: bool = None,
             dependent_value: bool = False):
        """Write the node as a JSON file or folder.

        Args:
            folder: Target folder, ``self.folder`` by default.
            save_as_dir: Overrides ``self.save_as_dir``.
            dependent_value: Store resolved values of ``config:`` mirrors
                instead of the mirror strings.
        """
        folder = self.folder if folder is None else folder
        save_as_dir = self.save_as_dir if save_as_dir is None else save_as_dir

        if not save_as_dir:
            _write_json(os.path.join(folder, f'{self.name}.json'),
                        self.serialize(dependent_value=dependent_value))
            return

        folderpath = os.path.join(folder, self.name)
        os.makedirs(folderpath, exist_ok=True)
        for key, val in self.items(dependent_value=False):
            if isinstance(val, SubConfig):
                val.save(folder=folderpath, dependent_value=dependent_value)
            else:
                _write_json(os.path.join(folderpath, f'{key}.json'), val)

    def serialize(self, dependent_value: bool = False):
        raise NotImplementedError('Implement in subclass')


class DictConfig(SubConfig, dict):
    """`SubConfig` for dictionaries.

    Values can be read as items, attributes or dotted keys, so these are
    equivalent:

    >>> config['training']['steps']
    >>> config.training.steps
    >>> config['training.steps']

    Setting a dotted key creates the intermediate nodes. Every set emits
    `DictConfig.signal` with the value path as sender and ``value`` as
    keyword.

    A string value ``config:{path}`` mirrors the value at that path. A key
    ``inherit`` makes missing keys fall back to a sibling node
    (``"inherit": "baseline"``) or to any node (``"inherit": "config:path"``).

    Args:
        name: Node name, ``config`` for the root.
        folder: Folder to load from when ``config`` is not given.
        parent: Parent node, None for the root.
        config: Initial contents.
        save_as_dir: Store as a folder instead of a single file.
    """
    exclude_from_dict = ['name', 'folder', 'parent', 'save_as_dir',
                         'config_path']

    signal = Signal()

    def __init__(self,
                 name: str,
                 folder: str = None,
                 parent: SubConfig = None,
                 config: dict = None,
                 save_as_dir: bool = None):
        SubConfig.__init__(self, name=name, folder=folder, parent=parent,
                           save_as_dir=save_as_dir)
        dict.__init__(self)

        if config is not None:
            update_dict(self, config)
        elif folder is not None:
            self.load()

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(f'{self.config_path} has no attribute {key}')

    def __setattr__(self, key, val):
        if key in self.exclude_from_dict:
            object.__setattr__(self, key, val)
        else:
            self[key] = val

    def __contains__(self, key):
        if '.' in key and not key.startswith(MIRROR_PREFIX):
            first, rest = key.split('.', 1)
            child = self.get(first)
            return isinstance(child, DictConfig) and rest in child
        if dict.__contains__(self, key):
            return True
        if dict.__contains__(self, 'inherit'):
            try:
                return key in self._inherited_config()
            except KeyError:
                return False
        return False

    def _root(self) -> 'DictConfig':
        node = self
        while node.parent is not None:
            node = node.parent
        return node

    def _inherited_config(self) -> 'DictConfig':
        inherit = dict.__getitem__(self, 'inherit')
        if inherit.startswith(MIRROR_PREFIX):
            return self[inherit]
        if self.parent is None:
            raise KeyError(f'Root config cannot inherit {inherit}')
        return self.parent[inherit]

    def __getitem__(self, key):
        if key.startswith(MIRROR_PREFIX):
            path = key[len(MIRROR_PREFIX):]
            root = self._root()
            return root[path] if path else root
        if '.' in key:
            first, rest = key.split('.', 1)
            return self[first][rest]
        if dict.__contains__(self, key):
            val = dict.__getitem__(self, key)
            if key == 'inherit' or not isinstance(val, str) \
                    or not val.startswith(MIRROR_PREFIX):
                return val
            try:
                return self[val]
            except KeyError:
                raise KeyError(f'{self.config_path}.{key} mirrors missing {val}')
        if dict.__contains__(self, 'inherit'):
            return self._inherited_config()[key]
        raise KeyError(f'{self.config_path} has no key {key}')

    def __setitem__(self, key, val):
        if not isinstance(key, str):
            raise ConfigError(f'Config key {key!r} must be a str, '
                              f'not {type(key).__name__}')

        if '.' in key:
            first, rest = key.split('.', 1)
            if not dict.__contains__(self, first):
                dict.__setitem__(self, first, DictConfig(name=first, parent=self))
            self[first][rest] = val
            return

        if isinstance(val, SubConfig):
            val.parent = self
            val.name = key
            dict.__setitem__(self, key, val)
        elif isinstance(val, collections.abc.Mapping):
            node = DictConfig(name=key, parent=self)
            dict.__setitem__(self, key, node)
            # Nested values emit their own signals
            update_dict(node, val)
            return
        elif isinstance(val, (list, tuple)):
            dict.__setitem__(self, key, ListConfig(name=key, parent=self,
                                                   config=list(val)))
        else:
            dict.__setitem__(self, key, val)

        self.signal.send(join_config_path(self.config_path, key),
                         value=self.get(key))

    def values(self):
        return [self[key] for key in self.keys()]

    def items(self, dependent_value=True):
        getter = self.__getitem__ if dependent_value else \
            (lambda key: dict.__getitem__(self, key))
        return [(key, getter(key)) for key in self.keys()]

    def get(self, key: str, default: Any = None):
        """`dict.get` going through mirrors, dotted keys and inheritance."""
        try:
            return self[key]
        except KeyError:
            return default

    def load(self, folder: str = None, update: bool = True):
        """Load the node, replacing the contents unless ``update`` is False.

        Returns:
            Loaded contents.
        """
        config = super().load(folder=folder)
        if update:
            self.clear()
            update_dict(self, config)
        return config

    def to_dict(self, dependent_value: bool = True) -> dict:
        """Plain nested dict of the node.

        Args:
            dependent_value: Resolve ``config:`` mirrors.
        """
        return {key: _plain(val, dependent_value)
                for key, val in self.items(dependent_value=dependent_value)}

    serialize = to_dict

    def __deepcopy__(self, memo):
        return copy.deepcopy(self.to_dict(dependent_value=False))


class ListConfig(SubConfig, list):
    """`SubConfig` for lists.

    Args:
        name: Node name.
        folder: Folder to load from when ``config`` is not given.
        parent: Parent node.
        config: Initial contents.
    """
    def __init__(self, name, folder=None, parent=None, config=None, **kwargs):
        list.__init__(self)
        SubConfig.__init__(self, name=name, folder=folder, parent=parent)

        if config is not None:
            self.extend(config)
        elif folder is not None:
            self.load()

    def load(self, folder: str = None, update: bool = True):
        config = super().load(folder=folder)
        if update:
            self[:] = config
        return config

    def items(self, dependent_value=True):
        return enumerate(self)

    def to_list(self, dependent_value: bool = True) -> list:
        return [_plain(val, dependent_value) for val in self]

    serialize = to_list

    def __deepcopy__(self, memo):
        return copy.deepcopy(self.to_list())


def _plain(val, dependent_value: bool):
    if isinstance(val, DictConfig):
        return val.to_dict(dependent_value=dependent_value)
    if isinstance(val, ListConfig):
        return val.to_list(dependent_value=dependent_value)
    return val


def _load_child(folderpath: str, entry: str, parent: SubConfig) -> Union[SubConfig, None]:
    """Child node for a file or subfolder of a config folder."""
    path = os.path.join(folderpath, entry)
    if os.path.isdir(path):
        return DictConfig(name=entry, folder=folderpath, save_as_dir=True,
                          parent=parent)
    if not entry.endswith('.json'):
        logger.warning(f'Skipping {path}, not a JSON config file')
        return None

    contents = load_config_file(path)
    name = entry[:-len('.json')]
    if isinstance(contents, dict):
        return DictConfig(name=name, config=contents, save_as_dir=False, parent=parent)
    if isinstance(contents, list):
        return ListConfig(name=name, config=contents, parent=parent)
    raise ConfigError(f'Config file {path} must hold a JSON object or list')


def _refresh_dict(node: DictConfig, config: dict):
    for key, val in config.items():
        if not dict.__contains__(node, key):
            logger.info(f'New key {node.config_path}.{key} = {val}')
            node[key] = val
        elif isinstance(node[key], SubConfig):
            node[key].refresh(config=val)
        elif node[key] != val:
            logger.info(f'{node.config_path}.{key}: {node[key]} -> {val}')
            node[key] = val

    for key in [key for key in node.keys() if key not in config]:
        logger.info(f'{node.config_path}.{key} removed')
        node.pop(key)


def _write_json(filepath: str, contents):
    with open(filepath, 'w') as f:
        json.dump(contents, f, indent=4)


def update_dict(d, u):
    """Merge ``u`` into ``d`` recursively.

    Nested mappings are merged key by key instead of being replaced.
    """
    for key, val in u.items():
        if isinstance(val, collections.abc.Mapping) and key in d \
                and isinstance(d[key], collections.abc.Mapping):
            update_dict(d[key], val)
        else:
            d[key] = val
    return d


def load_config_file(filepath: str,
                     _include_stack: Tuple[str, ...] = ()) -> Union[dict, list]:
    """Load a JSON config file, resolving ``include`` entries.

    An ``include`` key (string or list of strings) names other JSON files,
    relative to the including file. Included files are merged first, in
    order, and the including document is merged on top.

    Args:
        filepath: JSON file to load.

    Returns:
        Plain dict (or list) with includes resolved.

    Raises:
        ConfigError: Malformed JSON, or an include cycle.
    """
    filepath = os.path.abspath(filepath)
    if filepath in _include_stack:
        chain = ' -> '.join(_include_stack + (filepath,))
        raise ConfigError(f'Config include cycle: {chain}')

    try:
        with open(filepath, 'r') as fp:
            config = json.load(fp)
    except json.JSONDecodeError as e:
        raise ConfigError(f'Error reading json file {filepath}: {e}') from e

    if not isinstance(config, dict) or 'include' not in config:
        return config

    includes = config.pop('include')
    if isinstance(includes, str):
        includes = [includes]

    merged = {}
    for include in includes:
        include_path = os.path.join(os.path.dirname(filepath), include)
        included = load_config_file(include_path,
                                    _include_stack=_include_stack + (filepath,))
        update_dict(merged, _expand_dotted(included))
    return update_dict(merged, _expand_dotted(config))


def _expand_dotted(config: dict) -> dict:
    expanded = {}
    for key, val in config.items():
        if isinstance(val, dict):
            val = _expand_dotted(val)
        if '.' in key and not key.startswith(MIRROR_PREFIX):
            first, rest = key.split('.', 1)
            update_dict(expanded, {first: _expand_dotted({rest: val})})
        elif key in expanded and isinstance(val, dict):
            update_dict(expanded[key], val)
        else:
            expanded[key] = val
    return expanded


def join_config_path(config_path: str, config_attr: str) -> str:
    delimiter = '' if config_path.endswith(':') else '.'
    return f'{config_path}{delimiter}{config_attr}'
