"""Experiment configuration as flat ``section.key = value`` text.

Every value is written so that parsing it back gives an equal config; floats
use ``repr`` and therefore round-trip exactly.
"""
import dataclasses
import os
import types
import zlib
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

OUTPUT_ROOT_ENV = "ADVMP_OUTPUT_ROOT"


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"
    n: int = 512
    n_test: int = 256
    d: int = 2
    K: int = 2
    noise: float = 1.0
    separation: float = 6.0
    weak_features: int = 0
    weak_scale: float = 0.5
    seed: int = 0
    path: str = ""


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp"
    hidden: int = 32
    activation: str = "relu"
    seed: int = 0


@dataclass(frozen=True)
class ThreatConfig:
    kinds: tuple = ("l1", "l2", "linf")
    eps_l1: float = 12.0
    eps_l2: float = 0.5
    eps_linf: float = 0.03
    step_l1: float | None = 1.0
    step_l2: float | None = 0.05
    step_linf: float | None = 0.003
    steps: int = 50
    eval_steps: int = 100
    restarts: int = 0
    l1_k: int = 1


@dataclass(frozen=True)
class TrainSection:
    strategy: str = "adt"
    epochs: int = 10
    batch_size: int = 128
    lr_kind: str = "cyclic"
    lr_peak: float = 0.1
    lr_mid: float = 0.005
    lr_phases: tuple = (40, 40, 20)
    momentum: float = 0.0
    weight_decay: float = 0.0
    swa_start_epoch: int | None = 60
    swa_gamma: float = 0.9
    label_smoothing: float = 0.0
    label_noise: float = 0.0
    delta_mixup: bool = False
    loss_floor: float = 1e-8
    alpha_caps: tuple | None = None
    early_stop_metric: str = "mix"
    eval_examples: int = 128
    probe_examples: int = 128
    log_grad_norms: bool = True


@dataclass(frozen=True)
class AnalysisConfig:
    risk: bool = True
    landscape: bool = False
    landscape_range: float = 2.0
    landscape_resolution: int = 201
    stability: bool = False
    stability_trials: int = 5
    stability_steps: int = 200
    stability_alpha: float = 0.01
    smoothness: bool = False
    smoothness_samples: int = 200
    smoothness_radius: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    output_dir: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    threat: ThreatConfig = field(default_factory=ThreatConfig)
    train: TrainSection = field(default_factory=TrainSection)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def fingerprint(self):
        """CRC32 of the serialised config minus the output directory."""
        text = dumps(replace(self, output_dir=""))
        return zlib.crc32(text.encode("utf-8"))

    def resolved_output_dir(self):
        root = self.output_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs")
        return os.path.join(root, f"{self.name}-seed{self.seed}-{self.fingerprint():08x}")


_SECTIONS = ("data", "model", "threat", "train", "analysis")


def _encode(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_encode(v) for v in value)
    return str(value)


def _scalar(text, kind, key):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    return text


def _decode(text, annotation, default, key):
    text = text.strip()
    optional = isinstance(annotation, types.UnionType) and type(None) in annotation.__args__
    if optional:
        if text.lower() in ("none", ""):
            return None
        annotation = next(a for a in annotation.__args__ if a is not type(None))
    if annotation is tuple:
        if text == "":
            return ()
        sample = default[0] if default else None
        kind = type(sample) if sample is not None else (float if key.endswith("caps") else str)
        return tuple(_scalar(t.strip(), kind, key) for t in text.split(","))
    return _scalar(text, annotation, key)


def _leaf_fields(obj, prefix=""):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _leaf_fields(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", f, value


def to_flat(config):
    return {key: _encode(value) for key, _, value in _leaf_fields(config)}


def dumps(config):
    return "".join(f"{k} = {v}\n" for k, v in to_flat(config).items())


def apply_overrides(config, pairs):
    """Return ``config`` with dotted ``key -> text`` overrides applied."""
    pairs = dict(pairs)
    known = {key: (f, value) for key, f, value in _leaf_fields(config)}
    unknown = sorted(set(pairs) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sections = {s: {} for s in _SECTIONS}
    top = {}
    for key, text in pairs.items():
        f, default = known[key]
        value = _decode(text, f.type, default, key)
        if "." in key:
            section, name = key.split(".", 1)
            sections[section][name] = value
        else:
            top[key] = value
    try:
        updated = {s: replace(getattr(config, s), **v) for s, v in sections.items() if v}
        return replace(config, **top, **updated)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_assignment(line, where="override"):
    if "=" not in line:
        raise ConfigError(f"{where}: expected key = value, got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def loads(text, base=None):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, value = parse_assignment(line, f"line {lineno}")
        pairs[key] = value
    return apply_overrides(base or ExperimentConfig(), pairs)


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(config, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(config))
