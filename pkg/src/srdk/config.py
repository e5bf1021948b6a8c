"""Run configuration: loading, validation, overrides and metadata."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from importlib.metadata import PackageNotFoundError, version
from inspect import signature
from json import dumps
from logging import getLogger
from pathlib import Path
from typing import Any

from cfgenvy import Parser, YamlMapping

from .corpus import SynthConfig
from .distill import DistillConfig
from .model import ModelConfig
from .train import TrainConfig
from .utils import ConfigError, digest, dump_json_file

try:
    __version__ = version("srdk")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

logger = getLogger(__name__)

SECTIONS: dict[str, type] = {
    "distill": DistillConfig,
    "student": ModelConfig,
    "synth": SynthConfig,
    "teacher": ModelConfig,
    "teacher_train": TrainConfig,
    "train": TrainConfig,
}

DEFAULT_METHODS = ("vanilla", "fitnet", "lfd", "lsfd")

METADATA = dumps({"key": "run.metadata", "path": "%s"})


def _keys(cls: type) -> set[str]:
    return {
        name
        for name in signature(cls.__init__).parameters
        if name != "self"
    }


def section(cls: type, value: Any, key: str) -> Any:
    """Coerce a mapping into a config object, rejecting unknown keys."""
    if value is None:
        return cls()
    if isinstance(value, cls):
        return value
    if not isinstance(value, Mapping):
        raise ConfigError(f"{key} must be a mapping", key)
    unknown = sorted(set(value) - _keys(cls))
    if unknown:
        raise ConfigError(
            f"Unknown key in {key}: {unknown[0]}", f"{key}.{unknown[0]}"
        )
    return cls(**value)


class RunConfig(  # pylint: disable=too-many-instance-attributes
    Parser,
    YamlMapping,
):
    """Everything a subcommand needs, fully validated before compute."""

    YAML = "!run"

    @classmethod
    def yaml_types(cls) -> None:
        """Register the run tag and every section tag."""
        for each in (DistillConfig, ModelConfig, SynthConfig, TrainConfig):
            each.as_yaml_type()
        cls.as_yaml_type()

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> RunConfig:
        """Build from a plain mapping, rejecting unknown keys."""
        if not isinstance(mapping, Mapping):
            raise ConfigError("Config must be a mapping", None)
        unknown = sorted(set(mapping) - _keys(cls))
        if unknown:
            raise ConfigError(f"Unknown key: {unknown[0]}", unknown[0])
        return cls(**mapping)

    @classmethod
    def load(
        cls,
        path: str | Path,
        env_path: str | Path | None = None,
        env: Mapping[str, str] | None = None,
    ) -> RunConfig:
        """Parse a json or yaml config with optional env file.

        ${VAR} values are interpolated from the env file and env, as
        with -c and -e on any cfgenvy parser. A tagged !run document
        or a plain mapping are both accepted.
        """
        if not Path(path).is_file():
            raise ConfigError(f"No config file: {path}", "config")
        env_file = None
        if env_path is not None:
            if not Path(env_path).is_file():
                raise ConfigError(f"No env file: {env_path}", "env")
            env_file = str(env_path)
        try:
            # Parser.parse dispatches to cls.load, which this overrides.
            loaded = super().load(
                config_file=str(path), env=env, env_file=env_file
            )
        except ConfigError:
            raise
        except (Exception, SystemExit) as e:  # pylint: disable=broad-except
            raise ConfigError(f"Malformed config {path}: {e}", "config") from e
        if isinstance(loaded, cls):
            return loaded
        return cls.from_mapping(loaded or {})

    def __init__(  # pylint: disable=too-many-arguments,too-many-locals
        self,
        *,
        teacher: ModelConfig | Mapping[str, Any] | None = None,
        student: ModelConfig | Mapping[str, Any] | None = None,
        teacher_train: TrainConfig | Mapping[str, Any] | None = None,
        train: TrainConfig | Mapping[str, Any] | None = None,
        distill: DistillConfig | Mapping[str, Any] | None = None,
        synth: SynthConfig | Mapping[str, Any] | None = None,
        corpus: str | None = None,
        out: str = "runs",
        teacher_ckpt: str | None = None,
        methods: Sequence[str] = DEFAULT_METHODS,
        seeds: Sequence[int] = (0,),
        scale: int = 2,
        on_y: bool = True,
        cache: str | None = None,
        workers: int = 1,
        splits: Sequence[str] = ("val", "test"),
    ):
        """__init__."""
        self.teacher = section(ModelConfig, teacher, "teacher")
        self.student = section(ModelConfig, student, "student")
        self.teacher_train = section(
            TrainConfig, teacher_train, "teacher_train"
        )
        self.train = section(TrainConfig, train, "train")
        self.distill = section(DistillConfig, distill, "distill")
        self.synth = section(SynthConfig, synth, "synth")
        self.corpus = corpus
        self.out = out
        self.teacher_ckpt = teacher_ckpt
        self.methods = list(methods)
        self.seeds = [int(each) for each in seeds]
        self.scale = scale
        self.on_y = on_y
        self.cache = cache
        self.workers = workers
        self.splits = list(splits)

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "cache": self.cache,
            "corpus": self.corpus,
            "distill": self.distill.as_yaml(),
            "methods": self.methods,
            "on_y": self.on_y,
            "out": self.out,
            "scale": self.scale,
            "seeds": self.seeds,
            "splits": self.splits,
            "student": self.student.as_yaml(),
            "synth": self.synth.as_yaml(),
            "teacher": self.teacher.as_yaml(),
            "teacher_ckpt": self.teacher_ckpt,
            "teacher_train": self.teacher_train.as_yaml(),
            "train": self.train.as_yaml(),
            "workers": self.workers,
        }

    def override(self, key: str, value: Any) -> None:
        """Set a top-level or dotted section key; None leaves it unset."""
        if value is None:
            return
        name, _, attr = key.partition(".")
        if not attr:
            if name not in _keys(type(self)) or name in SECTIONS:
                raise ConfigError(f"Unknown key: {key}", key)
            setattr(self, name, value)
            if name == "scale":
                self.teacher.scale = value
                self.student.scale = value
            return
        if name not in SECTIONS or attr not in _keys(SECTIONS[name]):
            raise ConfigError(f"Unknown key: {key}", key)
        setattr(getattr(self, name), attr, value)

    def validate(self) -> None:
        """Raise ConfigError naming the first invalid key."""
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except ConfigError as e:
                key = name if e.key is None else f"{name}.{e.key}"
                raise ConfigError(str(e), key) from e
        if not self.teacher.scale == self.student.scale == self.scale:
            raise ConfigError(
                f"teacher, student and run scales differ: "
                f"{self.teacher.scale}, {self.student.scale}, {self.scale}",
                "scale",
            )
        candidate = DistillConfig(**self.distill.as_yaml())
        for method in self.methods:
            candidate.method = method
            try:
                candidate.validate()
            except ConfigError as e:
                raise ConfigError(str(e), "methods") from e
        if not self.seeds:
            raise ConfigError("seeds must not be empty", "seeds")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")

    def run_id(self, command: str) -> str:
        """Return the run directory name of a command under this config."""
        return f"{command}-{digest(self.as_yaml(), command.encode())[:12]}"

    def run_dir(self, command: str) -> Path:
        """Return and create <out>/<run-id>."""
        path = Path(self.out) / self.run_id(command)
        path.mkdir(parents=True, exist_ok=True)
        return path


def write_metadata(
    run_dir: str | Path,
    command: str,
    config: RunConfig,
    **extra: Any,
) -> Path:
    """Write metadata.json sufficient to reproduce the run."""
    path = Path(run_dir) / "metadata.json"
    dump_json_file(
        {
            "command": command,
            "config": config.as_yaml(),
            "extra": extra,
            "seeds": config.seeds,
            "version": __version__,
        },
        path,
    )
    logger.info(METADATA, path)
    return path


__all__ = (
    "ConfigError",
    "RunConfig",
    "SynthConfig",
    "section",
    "write_metadata",
)
