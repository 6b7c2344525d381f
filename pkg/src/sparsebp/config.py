"""Run-config files: flat INI sections parsed into dataclasses.

Everything is validated up front (before any dataset generation or
training); errors carry the offending ``section.key`` so the CLI can report
them and exit with the config-error status.  The full grammar is documented
in the README; the short form:

    [dataset]   source = mnist | synthetic:images | synthetic:anomaly | synthetic:blobs
                mnist: train_images/train_labels/test_images/test_labels paths
                synthetic: train_samples, test_samples, dataset_seed [, classes]
                limit = optional truncation of the train split
    [network]   layers = 784 128 64 10 ; hidden = relu ; output = softmax_ce
                loss = cross_entropy
    [engine]    kind = full | topk | adaptive ; ratio = 0.33 (topk)
    [adaptive]  s_min, s_max, zeta (defaults depend on trainer.mode)
    [trainer]   learning_rate, epochs, batch_size, seed, mode,
                pretrain_target_accuracy
    [output]    dir = runs/exp ; trace = true
    [compare]   engines = full topk:0.1 ... adaptive
    [sweep]     s_min/s_max/zeta value lists, repeats
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field

from .controller import FINETUNE_PRESET, SCRATCH_PRESET, AdaptiveConfig
from .data import Dataset, load_mnist_idx, synth_anomaly, synth_blobs, synth_images
from .engines import Adaptive, EngineKind, FixedTopK, Full
from .network import Activation, Loss
from .train import TrainConfig


class ConfigError(ValueError):
    """A config problem, carrying the offending section.key."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


_REQUIRED = object()


def _get(cp, section, key, cast=str, default=_REQUIRED):
    if not cp.has_option(section, key):
        if default is _REQUIRED:
            raise ConfigError(f"{section}.{key}", "missing required key")
        return default
    raw = cp.get(section, key).strip()
    try:
        return cast(raw)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r}: {e}") from None


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_list(raw: str) -> list[int]:
    return [int(t) for t in raw.replace(",", " ").split()]


def _float_list(raw: str) -> list[float]:
    return [float(t) for t in raw.replace(",", " ").split()]


@dataclass
class DatasetConfig:
    source: str
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_samples: int = 10000
    test_samples: int = 2000
    dataset_seed: int = 7
    classes: int = 2
    limit: int | None = None


@dataclass
class NetworkConfig:
    widths: list[int]
    hidden: Activation
    output: Activation
    loss: Loss


@dataclass
class OutputConfig:
    dir: str = "runs/out"
    trace: bool = True


@dataclass
class RunConfig:
    dataset: DatasetConfig
    network: NetworkConfig
    engine: EngineKind
    trainer: TrainConfig
    output: OutputConfig
    compare_engines: list[str] = field(default_factory=list)
    sweep_s_min: list[float] = field(default_factory=list)
    sweep_s_max: list[float] = field(default_factory=list)
    sweep_zeta: list[float] = field(default_factory=list)
    sweep_repeats: int = 1


DEFAULT_COMPARE_GRID = ["full", "topk:0.1", "topk:0.15", "topk:0.2",
                        "topk:0.33", "topk:0.66", "adaptive"]


def _adaptive_config(cp, mode: str) -> AdaptiveConfig:
    preset = SCRATCH_PRESET if mode == "scratch" else FINETUNE_PRESET
    s_min = _get(cp, "adaptive", "s_min", float, preset[0])
    s_max = _get(cp, "adaptive", "s_max", float, preset[1])
    zeta = _get(cp, "adaptive", "zeta", float, preset[2])
    try:
        return AdaptiveConfig(s_min=s_min, s_max=s_max, zeta=zeta)
    except ValueError as e:
        raise ConfigError("adaptive", str(e)) from None


def parse_engine_token(token: str, cp=None, mode: str = "scratch") -> EngineKind:
    """Parse an engine spec: full, topk:R, adaptive, or adaptive:s_min,s_max,zeta."""
    token = token.strip()
    if token == "full":
        return Full()
    if token == "topk" or token.startswith("topk:"):
        if ":" not in token:
            raise ConfigError("engine.ratio", "topk engine needs a ratio (topk:R)")
        try:
            ratio = float(token.split(":", 1)[1])
            return FixedTopK(ratio=ratio)
        except ValueError as e:
            raise ConfigError("engine", f"bad topk ratio in {token!r}: {e}") from None
    if token == "adaptive":
        if cp is not None:
            return Adaptive(config=_adaptive_config(cp, mode))
        preset = SCRATCH_PRESET if mode == "scratch" else FINETUNE_PRESET
        return Adaptive(config=AdaptiveConfig(*preset))
    if token.startswith("adaptive:"):
        parts = token.split(":", 1)[1].split(",")
        if len(parts) != 3:
            raise ConfigError("engine", f"adaptive spec needs s_min,s_max,zeta: {token!r}")
        try:
            return Adaptive(config=AdaptiveConfig(*(float(p) for p in parts)))
        except ValueError as e:
            raise ConfigError("engine", f"bad adaptive spec {token!r}: {e}") from None
    raise ConfigError("engine.kind", f"unknown engine {token!r}")


_ACTIVATIONS = {a.value: a for a in Activation}
_LOSSES = {l.value: l for l in Loss}


def parse_run_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError("config", f"file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError("config", f"parse error: {e}") from None

    for section in ("dataset", "network", "trainer"):
        if not cp.has_section(section):
            raise ConfigError(section, "missing required section")

    # dataset
    source = _get(cp, "dataset", "source")
    ds = DatasetConfig(source=source)
    if source == "mnist":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            p = _get(cp, "dataset", key)
            if not os.path.exists(p):
                raise ConfigError(f"dataset.{key}", f"file not found: {p}")
            setattr(ds, key, p)
    elif source in ("synthetic:images", "synthetic:anomaly", "synthetic:blobs"):
        ds.train_samples = _get(cp, "dataset", "train_samples", int, ds.train_samples)
        ds.test_samples = _get(cp, "dataset", "test_samples", int, ds.test_samples)
        ds.dataset_seed = _get(cp, "dataset", "dataset_seed", int, ds.dataset_seed)
        ds.classes = _get(cp, "dataset", "classes", int, ds.classes)
        if ds.train_samples < 1 or ds.test_samples < 1:
            raise ConfigError("dataset.train_samples", "sample counts must be >= 1")
    else:
        raise ConfigError("dataset.source", f"unknown source {source!r}")
    ds.limit = _get(cp, "dataset", "limit", int, None)

    # network
    widths = _get(cp, "network", "layers", _int_list)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError("network.layers", f"need >= 2 positive widths, got {widths}")
    hidden = _get(cp, "network", "hidden", lambda s: _ACTIVATIONS[s], Activation.RELU)
    output = _get(cp, "network", "output",
                  lambda s: _ACTIVATIONS[s], Activation.SOFTMAX_CE)
    loss = _get(cp, "network", "loss", lambda s: _LOSSES[s], Loss.CROSS_ENTROPY)
    net = NetworkConfig(widths=widths, hidden=hidden, output=output, loss=loss)

    # trainer
    mode = _get(cp, "trainer", "mode", str, "scratch")
    try:
        trainer = TrainConfig(
            engine=Full(),  # replaced below once [engine] is parsed
            epochs=_get(cp, "trainer", "epochs", int),
            learning_rate=_get(cp, "trainer", "learning_rate", float, 0.01),
            batch_size=_get(cp, "trainer", "batch_size", int, 1),
            seed=_get(cp, "trainer", "seed", int, 0),
            mode=mode,
            pretrain_target_accuracy=_get(
                cp, "trainer", "pretrain_target_accuracy", float, 0.85),
            pretrain_max_epochs=_get(cp, "trainer", "pretrain_max_epochs", int, 20),
            gate_check_interval=_get(cp, "trainer", "gate_check_interval", int, 1000),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("trainer", str(e)) from None

    # engine
    kind = _get(cp, "engine", "kind", str, "full") if cp.has_section("engine") else "full"
    if kind == "topk":
        ratio = _get(cp, "engine", "ratio", float)
        try:
            engine: EngineKind = FixedTopK(ratio=ratio)
        except ValueError as e:
            raise ConfigError("engine.ratio", str(e)) from None
    else:
        engine = parse_engine_token(kind, cp, mode)
    trainer = dataclasses.replace(trainer, engine=engine)

    # output
    out = OutputConfig()
    if cp.has_section("output"):
        out.dir = _get(cp, "output", "dir", str, out.dir)
        out.trace = _get(cp, "output", "trace", _bool, out.trace)

    cfg = RunConfig(dataset=ds, network=net, engine=engine, trainer=trainer, output=out)

    if cp.has_section("compare"):
        tokens = _get(cp, "compare", "engines", lambda s: s.split(), DEFAULT_COMPARE_GRID)
        for t in tokens:
            parse_engine_token(t, cp, mode)  # validate up front
        cfg.compare_engines = tokens
    else:
        cfg.compare_engines = list(DEFAULT_COMPARE_GRID)

    if cp.has_section("sweep"):
        cfg.sweep_s_min = _get(cp, "sweep", "s_min", _float_list, [SCRATCH_PRESET[0]])
        cfg.sweep_s_max = _get(cp, "sweep", "s_max", _float_list, [SCRATCH_PRESET[1]])
        cfg.sweep_zeta = _get(cp, "sweep", "zeta", _float_list, [SCRATCH_PRESET[2]])
        cfg.sweep_repeats = _get(cp, "sweep", "repeats", int, 1)
        if cfg.sweep_repeats < 1:
            raise ConfigError("sweep.repeats", "repeats must be >= 1")
        for where, vals in (("sweep.s_min", cfg.sweep_s_min),
                            ("sweep.s_max", cfg.sweep_s_max),
                            ("sweep.zeta", cfg.sweep_zeta)):
            if not vals:
                raise ConfigError(where, "empty value list")

    return cfg


def load_datasets(ds: DatasetConfig, limit_override: int | None = None
                  ) -> tuple[Dataset, Dataset]:
    """Materialize the (train, test) pair a config describes."""
    if ds.source == "mnist":
        train = load_mnist_idx(ds.train_images, ds.train_labels, split="train")
        test = load_mnist_idx(ds.test_images, ds.test_labels, split="test")
    elif ds.source == "synthetic:images":
        train = synth_images(ds.train_samples, ds.dataset_seed, split="train")
        test = synth_images(ds.test_samples, ds.dataset_seed, split="test")
    elif ds.source == "synthetic:anomaly":
        train = synth_anomaly(ds.train_samples, ds.dataset_seed, split="train")
        test = synth_anomaly(ds.test_samples, ds.dataset_seed, split="test")
    elif ds.source == "synthetic:blobs":
        train = synth_blobs(ds.train_samples, ds.classes, ds.dataset_seed, split="train")
        test = synth_blobs(ds.test_samples, ds.classes, ds.dataset_seed, split="test")
    else:
        raise ConfigError("dataset.source", f"unknown source {ds.source!r}")
    limit = limit_override if limit_override is not None else ds.limit
    return train.truncated(limit), test
