""" Run configuration: defaults < config file < command-line flags.

The config file is TOML. Top-level keys apply to every subcommand, a table
named after a subcommand (``[train]``) applies to that subcommand only.
"""
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from chd_screen import errors

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PathLike = Union[str, Path]

GLOBAL_DEFAULTS: Dict[str, Any] = {
    'seed': 0,
    'threads': 1,
    'out': '.',
}


def package_version() -> str:
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version('fetal-chd-screen')
    except PackageNotFoundError:
        return '0+unknown'


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """
    Reads a TOML config file.

    :raises IOFailure: the file can't be read
    :raises MalformedFile: the file is not valid TOML
    """
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    except tomllib.TOMLDecodeError as exc:
        raise errors.MalformedFile(f'{path}: {exc}') from exc


def _coerce(key: str, value: Any, default: Any) -> Any:
    if default is None or value is None:
        return value
    expected = type(default)
    if expected is float and isinstance(value, int) and not isinstance(
            value, bool):
        return float(value)
    if expected is tuple and isinstance(value, list):
        return tuple(value)
    if not isinstance(value, expected) or (
            expected is int and isinstance(value, bool)):
        raise errors.InvalidParameters(
            f'{key}: expected {expected.__name__}, got {value!r}')
    return value


@dataclass(frozen=True)
class RunConfig:
    """ Fully resolved parameters of one subcommand run."""
    command: str
    seed: int
    threads: int
    out: Path
    params: Mapping[str, Any] = field(default_factory=dict)
    config_file: Optional[Path] = None

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    def to_dict(self) -> Dict[str, Any]:
        params = {k: list(v) if isinstance(v, tuple) else v
                  for k, v in sorted(self.params.items())}
        return {
            'version': package_version(),
            'command': self.command,
            'seed': self.seed,
            'threads': self.threads,
            'out': str(self.out),
            'config_file': (None if self.config_file is None
                            else str(self.config_file)),
            'params': params,
        }

    def write(self, directory: Optional[PathLike] = None) -> Path:
        """ Writes ``run.json`` next to the outputs."""
        path = Path(directory if directory is not None else self.out)
        path = path / 'run.json'
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding='utf-8')
        except OSError as exc:
            raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
        return path


def resolve(command: str, defaults: Mapping[str, Any],
            flags: Mapping[str, Any],
            config_file: Optional[PathLike] = None) -> RunConfig:
    """
    Merges defaults, config file values and flags, in increasing priority.

    Flags set to ``None`` count as not given. Unknown config file keys are
    rejected.

    :param command: subcommand name, also the config file table consulted
    :param defaults: subcommand parameters and their defaults
    :param flags: parsed command-line values
    :raises InvalidParameters: unknown key or wrongly typed value
    """
    known = dict(GLOBAL_DEFAULTS)
    known.update(defaults)
    values = dict(known)
    if config_file is not None:
        data = load_config_file(config_file)
        tables = {k for k, v in data.items() if isinstance(v, dict)}
        layers = [{k: v for k, v in data.items() if k not in tables},
                  data.get(command, {})]
        for layer in layers:
            for key, value in layer.items():
                if key not in known:
                    if layer is layers[0]:
                        # global keys may target other subcommands
                        continue
                    raise errors.InvalidParameters(
                        f'{config_file}: unknown [{command}] key {key!r}')
                values[key] = _coerce(key, value, known[key])
    for key, value in flags.items():
        if key in known and value is not None:
            values[key] = value
    params = {k: v for k, v in values.items() if k not in GLOBAL_DEFAULTS}
    return RunConfig(
        command=command,
        seed=int(values['seed']),
        threads=int(values['threads']),
        out=Path(values['out']),
        params=params,
        config_file=None if config_file is None else Path(config_file),
    )
