"""Test config."""

from io import StringIO
from json import dump, loads
from pathlib import Path

from cfgenvy import yaml_dumps, yaml_loads
from pytest import mark, raises

from srdk.config import RunConfig, section, write_metadata
from srdk.train import TrainConfig
from srdk.utils import ConfigError

YAML = """
corpus: corpus/manifest.json
methods: [vanilla, lsfd]
seeds: [0, 1]
train:
  epochs: 4
  halve_at_epoch: 2
distill:
  alpha1: 100.0
""".strip()


def test_load_json(tmp_path):
    """Test json configs load with sections coerced."""
    path = tmp_path / "run.json"
    with open(path, "w", encoding="utf-8") as fout:
        dump({"scale": 2, "train": {"epochs": 3, "halve_at_epoch": 2}}, fout)
    config = RunConfig.load(path)
    assert isinstance(config.train, TrainConfig)
    assert config.train.epochs == 3
    assert config.teacher_train.epochs == TrainConfig().epochs
    config.validate()


def test_load_yaml(tmp_path):
    """Test yaml configs load."""
    path = tmp_path / "run.yaml"
    path.write_text(YAML, encoding="utf-8")
    config = RunConfig.load(path)
    assert config.methods == ["vanilla", "lsfd"]
    assert config.seeds == [0, 1]
    assert config.distill.alpha1 == 100.0


def test_load_errors(tmp_path):
    """Test missing, malformed and unknown-key files."""
    with raises(ConfigError) as e:
        RunConfig.load(tmp_path / "missing.json")
    assert e.value.key == "config"
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [", encoding="utf-8")
    with raises(ConfigError):
        RunConfig.load(bad)
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("epochs: 3", encoding="utf-8")
    with raises(ConfigError) as e:
        RunConfig.load(unknown)
    assert e.value.key == "epochs"


ENV_YAML = """
!run
out: ${SRDK_RUNS}
seeds: [5]
train:
  epochs: 3
""".strip()


def test_load_env_file(tmp_path):
    """Test ${VAR} values are filled from the env file."""
    path = tmp_path / "run.yaml"
    path.write_text(ENV_YAML, encoding="utf-8")
    env_path = tmp_path / "run.env"
    runs = str(tmp_path / "runs")
    env_path.write_text(f"SRDK_RUNS={runs}\n", encoding="utf-8")
    config = RunConfig.load(path, env_path, env={})
    assert isinstance(config, RunConfig)
    assert config.out == runs
    assert config.seeds == [5]
    assert config.train.epochs == 3


def test_load_env_mapping(tmp_path):
    """Test ${VAR} values are filled from the environment mapping."""
    path = tmp_path / "run.yaml"
    path.write_text(ENV_YAML, encoding="utf-8")
    config = RunConfig.load(path, env={"SRDK_RUNS": "elsewhere"})
    assert config.out == "elsewhere"


def test_load_missing_env_file(tmp_path):
    """Test a missing env file names the env key."""
    path = tmp_path / "run.yaml"
    path.write_text(ENV_YAML, encoding="utf-8")
    with raises(ConfigError) as e:
        RunConfig.load(path, tmp_path / "missing.env")
    assert e.value.key == "env"


def test_section_unknown_key():
    """Test unknown section keys are named with their section."""
    with raises(ConfigError) as e:
        RunConfig(train={"epoch": 3})
    assert e.value.key == "train.epoch"
    with raises(ConfigError):
        section(TrainConfig, [1, 2], "train")
    assert isinstance(section(TrainConfig, None, "train"), TrainConfig)


def test_override():
    """Test top-level, dotted and scale overrides."""
    config = RunConfig()
    config.override("train.epochs", 7)
    config.override("distill.method", "lfd")
    config.override("scale", 3)
    config.override("out", None)
    assert config.train.epochs == 7
    assert config.distill.method == "lfd"
    assert config.scale == config.teacher.scale == config.student.scale == 3
    assert config.out == "runs"
    for key in ("train.epoch", "nope", "train", "model.channels"):
        with raises(ConfigError) as e:
            config.override(key, 1)
        assert e.value.key == key


@mark.parametrize(
    "kwargs,key",
    (
        ({"train": {"lr": -1.0}}, "train.lr"),
        ({"distill": {"method": "at"}}, "distill.method"),
        ({"student": {"scale": 3}}, "scale"),
        ({"methods": ["vanilla", "at"]}, "methods"),
        ({"seeds": []}, "seeds"),
        ({"workers": 0}, "workers"),
        ({"synth": {"n_train": 0}}, "synth.n_train"),
    ),
)
def test_validate(kwargs, key):
    """Test validation names the first invalid key."""
    with raises(ConfigError) as e:
        RunConfig(**kwargs).validate()
    assert e.value.key == key


def test_run_id(tmp_path):
    """Test run ids depend on the command and the config only."""
    a = RunConfig(out=str(tmp_path))
    b = RunConfig(out=str(tmp_path))
    assert a.run_id("distill") == b.run_id("distill")
    assert a.run_id("distill") != a.run_id("bench")
    assert a.run_id("distill").startswith("distill-")
    b.override("train.lr", 1e-3)
    assert a.run_id("distill") != b.run_id("distill")
    path = a.run_dir("eval")
    assert path.is_dir()
    assert path.parent == tmp_path


def test_write_metadata(tmp_path):
    """Test metadata carries the command, config, seeds and extras."""
    config = RunConfig(seeds=[3])
    path = write_metadata(tmp_path, "gradcheck", config, errors={"x": 0.0})
    actual = loads(path.read_text())
    assert actual["command"] == "gradcheck"
    assert actual["seeds"] == [3]
    assert actual["config"] == config.as_yaml()
    assert actual["extra"] == {"errors": {"x": 0.0}}
    assert actual["version"]


def test_yaml_round_trip():
    """Test the run tag round trip."""
    RunConfig.yaml_types()
    config = RunConfig(methods=["kd"], seeds=[4], train={"epochs": 9})
    actual = yaml_loads(StringIO(yaml_dumps(config)))
    assert actual.as_yaml() == config.as_yaml()


@mark.parametrize("name", ("desk.yaml", "smoke.json"))
def test_local_configs(name):
    """Test the shipped configs load and validate."""
    path = Path(__file__).parent.parent / "local" / name
    config = RunConfig.load(path)
    config.validate()
    assert config.teacher.channels > config.student.channels
