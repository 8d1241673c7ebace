"""Experiment configuration.

The on-disk format is line oriented: ``[section]`` headers followed by
``key = value`` lines; ``#`` or ``;`` start a comment line. Exactly one of
the ``[class_removal]`` / ``[homogeneous_removal]`` sections selects the
scenario. Unknown sections or keys are rejected, and ``config_to_text``
emits a canonical echo with every default spelled out that parses back to
an equal config.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import data

METHOD_NAMES = ("centroid_match", "retrain", "finetune", "neg_grad", "rand_label")
DATASET_KINDS = ("blobs", "idx", "cifar10")
MIA_MODES = ("auto", "on", "off")
REPORT_FORMATS = ("json", "csv")

_REQUIRED = object()


class ConfigError(ValueError):
    """Configuration file or value problem."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    classes: int | None = None
    dim: int | None = None
    per_class: int | None = None
    test_per_class: int | None = None
    spread: float | None = None
    seed: int | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_files: tuple | None = None
    test_files: tuple | None = None


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple
    embedding_dim: int
    init_seed: int


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    forget_classes: tuple | None = None
    fraction: float | None = None


@dataclass(frozen=True)
class TrainSpec:
    epochs: int
    learning_rate: float
    batch_size: int
    weight_decay: float
    seed: int


@dataclass(frozen=True)
class MethodSpec:
    name: str
    lambda_forget: float
    lambda_retain: float
    batch_ratio: int
    learning_rate: float
    batch_size: int
    temperature: float
    max_epochs: int
    target_forget_accuracy: float | None
    epochs: int
    weight_decay: float
    disable_forget_loss: bool
    disable_retain_loss: bool


@dataclass(frozen=True)
class RunSpec:
    seeds: tuple
    protocol: bool
    mia: str
    parallel: int
    cache_dir: str
    output: str
    format: str


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    model: ModelSpec
    scenario: ScenarioSpec
    train: TrainSpec
    method: MethodSpec
    run: RunSpec


def _parse_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = {}
            sections[name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return sections


class _Section:
    """Typed access to one section's raw strings with unknown-key tracking."""

    def __init__(self, name, raw):
        self.name = name
        self.raw = dict(raw)
        self.seen = set()

    def _fetch(self, key, default):
        self.seen.add(key)
        if key in self.raw:
            return self.raw[key]
        if default is _REQUIRED:
            raise ConfigError(f"[{self.name}] missing required key {key!r}")
        return None

    def get_str(self, key, default=_REQUIRED, choices=None):
        value = self._fetch(key, default)
        value = default if value is None else value
        if choices is not None and value not in choices:
            raise ConfigError(f"[{self.name}] {key} must be one of {choices}, got {value!r}")
        return value

    def get_int(self, key, default=_REQUIRED):
        value = self._fetch(key, default)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must be an integer, got {value!r}") from exc

    def get_float(self, key, default=_REQUIRED):
        value = self._fetch(key, default)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must be a number, got {value!r}") from exc

    def get_bool(self, key, default=_REQUIRED):
        value = self._fetch(key, default)
        if value is None:
            return default
        lowered = value.lower()
        if lowered not in ("true", "false"):
            raise ConfigError(f"[{self.name}] {key} must be true or false, got {value!r}")
        return lowered == "true"

    def get_ints(self, key, default=_REQUIRED):
        value = self._fetch(key, default)
        if value is None:
            return default
        parts = value.replace(",", " ").split()
        if not parts:
            raise ConfigError(f"[{self.name}] {key} needs at least one integer")
        try:
            return tuple(int(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must list integers, got {value!r}") from exc

    def get_strs(self, key, default=_REQUIRED):
        value = self._fetch(key, default)
        if value is None:
            return default
        parts = tuple(value.split())
        if not parts:
            raise ConfigError(f"[{self.name}] {key} needs at least one entry")
        return parts

    def get_optional_float(self, key, default=None):
        value = self._fetch(key, default)
        if value is None or value == "auto":
            return None
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(
                f"[{self.name}] {key} must be a number or 'auto', got {value!r}"
            ) from exc

    def finish(self):
        unknown = set(self.raw) - self.seen
        if unknown:
            names = ", ".join(sorted(unknown))
            raise ConfigError(f"[{self.name}] unknown key(s): {names}")


def _parse_dataset(section):
    kind = section.get_str("kind", choices=DATASET_KINDS)
    if kind == "blobs":
        spec = DatasetSpec(
            kind=kind,
            classes=section.get_int("classes", 10),
            dim=section.get_int("dim", 32),
            per_class=section.get_int("per_class", 200),
            test_per_class=section.get_int("test_per_class", 50),
            spread=section.get_float("spread", 0.08),
            seed=section.get_int("seed", 7),
        )
    elif kind == "idx":
        spec = DatasetSpec(
            kind=kind,
            train_images=section.get_str("train_images"),
            train_labels=section.get_str("train_labels"),
            test_images=section.get_str("test_images"),
            test_labels=section.get_str("test_labels"),
        )
    else:
        spec = DatasetSpec(
            kind=kind,
            train_files=section.get_strs("train_files"),
            test_files=section.get_strs("test_files"),
        )
    section.finish()
    return spec


def _parse_model(section):
    spec = ModelSpec(
        hidden=section.get_ints("hidden", (64,)),
        embedding_dim=section.get_int("embedding_dim", 16),
        init_seed=section.get_int("init_seed", 1),
    )
    section.finish()
    if spec.embedding_dim < 1 or any(h < 1 for h in spec.hidden):
        raise ConfigError("[model] layer widths must be positive")
    return spec


def _parse_train(section):
    spec = TrainSpec(
        epochs=section.get_int("epochs", 60),
        learning_rate=section.get_float("learning_rate", 1e-3),
        batch_size=section.get_int("batch_size", 64),
        weight_decay=section.get_float("weight_decay", 5e-4),
        seed=section.get_int("seed", 42),
    )
    section.finish()
    return spec


def _parse_method(section):
    spec = MethodSpec(
        name=section.get_str("name", "centroid_match", choices=METHOD_NAMES),
        lambda_forget=section.get_float("lambda_forget", 1.5),
        lambda_retain=section.get_float("lambda_retain", 1.5),
        batch_ratio=section.get_int("batch_ratio", 5),
        learning_rate=section.get_float("learning_rate", 1e-3),
        batch_size=section.get_int("batch_size", 64),
        temperature=section.get_float("temperature", 2.0),
        max_epochs=section.get_int("max_epochs", 100),
        target_forget_accuracy=section.get_optional_float("target_forget_accuracy"),
        epochs=section.get_int("epochs", 30),
        weight_decay=section.get_float("weight_decay", 5e-4),
        disable_forget_loss=section.get_bool("disable_forget_loss", False),
        disable_retain_loss=section.get_bool("disable_retain_loss", False),
    )
    section.finish()
    if spec.name == "centroid_match" and spec.disable_forget_loss and spec.disable_retain_loss:
        raise ConfigError("[method] cannot disable both loss terms")
    return spec


def _parse_run(section, scenario_kind):
    spec = RunSpec(
        seeds=section.get_ints("seeds", (0,)),
        protocol=section.get_bool("protocol", False),
        mia=section.get_str("mia", "auto", choices=MIA_MODES),
        parallel=section.get_int("parallel", 1),
        cache_dir=section.get_str("cache_dir", ".model_cache"),
        output=section.get_str("output", "report.json"),
        format=section.get_str("format", "json", choices=REPORT_FORMATS),
    )
    section.finish()
    if not spec.seeds:
        raise ConfigError("[run] seeds must not be empty")
    if spec.parallel < 1:
        raise ConfigError("[run] parallel must be >= 1")
    if spec.mia == "on" and scenario_kind != data.HOMOGENEOUS_REMOVAL:
        raise ConfigError("[run] mia = on requires the homogeneous_removal scenario")
    return spec


def parse_config_text(text):
    sections = _parse_sections(text)
    known = {
        "dataset",
        "model",
        "train",
        "method",
        "run",
        "class_removal",
        "homogeneous_removal",
    }
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for required in ("dataset",):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]")
    has_cr = "class_removal" in sections
    has_hr = "homogeneous_removal" in sections
    if has_cr == has_hr:
        raise ConfigError(
            "exactly one of [class_removal] or [homogeneous_removal] is required"
        )

    if has_cr:
        section = _Section("class_removal", sections["class_removal"])
        forget_classes = section.get_ints("forget_classes")
        section.finish()
        if not forget_classes:
            raise ConfigError("[class_removal] forget_classes must not be empty")
        scenario = ScenarioSpec(data.CLASS_REMOVAL, forget_classes=forget_classes)
    else:
        section = _Section("homogeneous_removal", sections["homogeneous_removal"])
        fraction = section.get_float("fraction", 0.1)
        section.finish()
        if not 0.0 < fraction < 1.0:
            raise ConfigError("[homogeneous_removal] fraction must be in (0, 1)")
        scenario = ScenarioSpec(data.HOMOGENEOUS_REMOVAL, fraction=fraction)

    dataset = _parse_dataset(_Section("dataset", sections["dataset"]))
    model = _parse_model(_Section("model", sections.get("model", {})))
    train = _parse_train(_Section("train", sections.get("train", {})))
    method = _parse_method(_Section("method", sections.get("method", {})))
    run = _parse_run(_Section("run", sections.get("run", {})), scenario.kind)

    if dataset.kind == "blobs" and scenario.kind == data.CLASS_REMOVAL:
        bad = [c for c in scenario.forget_classes if not 0 <= c < dataset.classes]
        if bad:
            raise ConfigError(f"[class_removal] classes {bad} outside the label range")
        if len(set(scenario.forget_classes)) >= dataset.classes:
            raise ConfigError("[class_removal] cannot forget every class")
    return ExperimentConfig(dataset, model, scenario, train, method, run)


def parse_config(path):
    """Parse a config file; syntax errors carry the offending line number."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def config_to_text(config):
    """Canonical echo of a config with every default explicit.

    parse_config_text(config_to_text(c)) == c for any valid config.
    """
    lines = []

    def emit(section, pairs):
        lines.append(f"[{section}]")
        for key, value in pairs:
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")

    ds = config.dataset
    if ds.kind == "blobs":
        emit(
            "dataset",
            [
                ("kind", ds.kind),
                ("classes", ds.classes),
                ("dim", ds.dim),
                ("per_class", ds.per_class),
                ("test_per_class", ds.test_per_class),
                ("spread", ds.spread),
                ("seed", ds.seed),
            ],
        )
    elif ds.kind == "idx":
        emit(
            "dataset",
            [
                ("kind", ds.kind),
                ("train_images", ds.train_images),
                ("train_labels", ds.train_labels),
                ("test_images", ds.test_images),
                ("test_labels", ds.test_labels),
            ],
        )
    else:
        emit(
            "dataset",
            [
                ("kind", ds.kind),
                ("train_files", ds.train_files),
                ("test_files", ds.test_files),
            ],
        )

    emit(
        "model",
        [
            ("hidden", config.model.hidden),
            ("embedding_dim", config.model.embedding_dim),
            ("init_seed", config.model.init_seed),
        ],
    )

    if config.scenario.kind == data.CLASS_REMOVAL:
        emit("class_removal", [("forget_classes", config.scenario.forget_classes)])
    else:
        emit("homogeneous_removal", [("fraction", config.scenario.fraction)])

    tr = config.train
    emit(
        "train",
        [
            ("epochs", tr.epochs),
            ("learning_rate", tr.learning_rate),
            ("batch_size", tr.batch_size),
            ("weight_decay", tr.weight_decay),
            ("seed", tr.seed),
        ],
    )

    m = config.method
    emit(
        "method",
        [
            ("name", m.name),
            ("lambda_forget", m.lambda_forget),
            ("lambda_retain", m.lambda_retain),
            ("batch_ratio", m.batch_ratio),
            ("learning_rate", m.learning_rate),
            ("batch_size", m.batch_size),
            ("temperature", m.temperature),
            ("max_epochs", m.max_epochs),
            ("target_forget_accuracy", m.target_forget_accuracy),
            ("epochs", m.epochs),
            ("weight_decay", m.weight_decay),
            ("disable_forget_loss", m.disable_forget_loss),
            ("disable_retain_loss", m.disable_retain_loss),
        ],
    )

    r = config.run
    emit(
        "run",
        [
            ("seeds", r.seeds),
            ("protocol", r.protocol),
            ("mia", r.mia),
            ("parallel", r.parallel),
            ("cache_dir", r.cache_dir),
            ("output", r.output),
            ("format", r.format),
        ],
    )
    return "\n".join(lines)
