"""Experiment configuration: one JSON document drives every command.

A config file is validated against the shipped JSON schema before any
work happens (unknown keys are rejected), deep-merged over the defaults
below, then dotted-path overrides are applied on top; precedence is
CLI > file > defaults. Validation errors carry the JSON path and a
best-effort line number in the source file.

RunManifest records what a command actually did (config hash, code
version, dataset hash, output inventory) and is written atomically so a
crash never leaves a half-written manifest.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from importlib import resources

import jsonschema

from . import __version__
from .core import WeatherTag
from .perturb import PerturberConfig
from .synth import DEFAULT_WEATHER, SceneSpec, TrajectorySpec, WeatherSpec
from .train import TrainConfig


class ConfigError(Exception):
    """Invalid experiment configuration; message includes path and line hint."""


DEFAULTS: dict = {
    "seed": 0,
    "out_dir": None,
    "dataset_dir": None,
    "tuple_len": 3,
    "test_frames": 40,
    "train_mix": {"overcast": 1.0},
    "test_mix": {"rain": 0.5, "snow": 0.5},
    "scene": {
        "seed": None,
        "num_landmarks": 12,
        "landmark_kinds": ["block", "post", "canopy"],
        "world_extent": [24.0, 24.0],
        "trajectory_len": 40,
        "image_dims": [64, 64, 3],
    },
    "trajectory": {
        "radius_frac": 0.3,
        "wobble": 0.08,
        "wobble_cycles": 3,
        "camera_height": 1.2,
        "toe_in": 0.7,
    },
    "weather": {},
    "train": {
        "epochs": 5,
        "batch_tuples": 8,
        "lr": 3e-3,
        "mix_mode": "original_plus_adversarial",
        "seed": None,
        "checkpoint_every": 0,
        "threshold_per_epoch": False,
        "perturber": {
            "method": "rada",
            "epsilon": 158.0,
            "pow": 1.5,
            "eta": 10,
            "use_threshold": True,
            "use_clip": True,
            "threshold_per_image": False,
            "gaussian_mean": 0.0,
            "gaussian_var": 0.05,
            "seed": 0,
        },
    },
    "eval": {"checkpoint": None, "dataset_dir": None, "plot": False},
    "histogram": {
        "methods": ["gaussian", "fgsm", "rada"],
        "frames": 4,
        "threshold_abs": 1e-6,
        "count_mode": False,
        "overrides": {},
    },
    "mixing": {
        "fractions": [0.0, 0.2, 0.4],
        "source_weather": "overcast",
        "target_weather": "rain",
        "test_frames": None,
    },
}


def _load_schema(name: str) -> dict:
    with resources.files("radaug.schemas").joinpath(name).open() as f:
        return json.load(f)


def experiment_schema() -> dict:
    return _load_schema("experiment_config.schema.json")


def eval_result_schema() -> dict:
    return _load_schema("eval_result.schema.json")


def _line_hint(source: str | None, json_path) -> str:
    """Best-effort line number of the deepest key in json_path."""
    if not source:
        return ""
    line = None
    pos = 0
    for token in json_path:
        if isinstance(token, int):
            continue
        found = source.find(f'"{token}"', pos)
        if found < 0:
            break
        pos = found
        line = source.count("\n", 0, found) + 1
    return f" (line {line})" if line else ""


def validate_document(doc: dict, schema: dict, *, source: str | None = None,
                      label: str = "config") -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{label}: {path}: {err.message}"
                          f"{_line_hint(source, err.absolute_path)}")


def _deep_merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {k!r} is not an object")
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """'a.b.c=value' with the value parsed as JSON, falling back to string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path=None, *, overrides=(), seed=None, out=None,
                perturber=None) -> dict:
    """Resolve the effective config: defaults <- file <- overrides <- flags."""
    source = None
    file_doc: dict = {}
    if path is not None:
        try:
            with open(path) as f:
                source = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            file_doc = json.loads(source)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(file_doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        validate_document(file_doc, experiment_schema(), source=source,
                          label=str(path))
    cfg = _deep_merge(DEFAULTS, file_doc)
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(cfg, key, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out_dir"] = str(out)
    if perturber is not None:
        _set_dotted(cfg, "train.perturber.method", str(perturber))
    validate_document(cfg, experiment_schema(), source=source,
                      label="effective config")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def scene_spec_from(cfg: dict) -> SceneSpec:
    s = cfg["scene"]
    seed = s["seed"] if s["seed"] is not None else cfg["seed"]
    try:
        return SceneSpec(seed=int(seed), num_landmarks=s["num_landmarks"],
                         landmark_kinds=tuple(s["landmark_kinds"]),
                         world_extent=tuple(s["world_extent"]),
                         trajectory_len=s["trajectory_len"],
                         image_dims=tuple(s["image_dims"]))
    except ValueError as e:
        raise ConfigError(f"scene: {e}") from e


def trajectory_spec_from(cfg: dict) -> TrajectorySpec:
    try:
        return TrajectorySpec(**cfg["trajectory"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"trajectory: {e}") from e


def weather_table_from(cfg: dict) -> dict[WeatherTag, WeatherSpec]:
    table = dict(DEFAULT_WEATHER)
    for tag_name, fields in cfg["weather"].items():
        tag = WeatherTag(tag_name)
        try:
            table[tag] = replace(table[tag], **fields)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"weather.{tag_name}: {e}") from e
    return table


def mix_from(cfg_mix: dict) -> dict[WeatherTag, float]:
    return {WeatherTag(k): float(v) for k, v in cfg_mix.items()}


def perturber_from(cfg: dict, method: str | None = None) -> PerturberConfig:
    doc = dict(cfg["train"]["perturber"])
    if method is not None:
        doc["method"] = method
    try:
        return PerturberConfig(**doc)
    except ValueError as e:
        raise ConfigError(f"train.perturber: {e}") from e


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    seed = t["seed"] if t["seed"] is not None else cfg["seed"]
    try:
        return TrainConfig(epochs=t["epochs"], batch_tuples=t["batch_tuples"],
                           lr=t["lr"], perturber=perturber_from(cfg),
                           mix_mode=t["mix_mode"], seed=int(seed),
                           checkpoint_every=t["checkpoint_every"],
                           threshold_per_epoch=t["threshold_per_epoch"])
    except ValueError as e:
        raise ConfigError(f"train: {e}") from e


@dataclass
class RunManifest:
    """What a command ran and produced; written atomically at run end."""

    command: str
    config_hash: str
    seed: int
    code_version: str = __version__
    created_utc: str = ""
    dataset_hash: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.created_utc:
            self.created_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    def inventory(self, run_dir, *, exclude=("run_manifest.json",)) -> None:
        """Record sha256 of every file under run_dir (relative paths)."""
        for root, _, files in os.walk(run_dir):
            for name in files:
                full = os.path.join(root, name)
                rel = os.path.relpath(full, run_dir).replace(os.sep, "/")
                if rel in exclude:
                    continue
                h = hashlib.sha256()
                with open(full, "rb") as f:
                    h.update(f.read())
                self.outputs[rel] = h.hexdigest()

    def write(self, run_dir) -> str:
        path = os.path.join(run_dir, "run_manifest.json")
        doc = {"command": self.command, "config_hash": self.config_hash,
               "seed": self.seed, "code_version": self.code_version,
               "created_utc": self.created_utc, "dataset_hash": self.dataset_hash,
               "outputs": dict(sorted(self.outputs.items()))}
        fd, tmp = tempfile.mkstemp(dir=run_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(doc, f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path


def resolve_out_root(cfg: dict, flag_out=None) -> str:
    """Output root precedence: --out, config out_dir, RADAUG_OUT_DIR, ./runs."""
    if flag_out:
        return str(flag_out)
    if cfg.get("out_dir"):
        return str(cfg["out_dir"])
    env = os.environ.get("RADAUG_OUT_DIR")
    if env:
        return env
    return "runs"


def make_run_dir(root, command: str, cfg_hash: str) -> str:
    """Fresh timestamped run directory under root, collision-safe."""
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = os.path.join(root, f"{command}-{stamp}-{cfg_hash[:8]}")
    path = base
    n = 1
    while True:
        try:
            os.makedirs(path)
            return path
        except FileExistsError:
            n += 1
            path = f"{base}-{n}"
