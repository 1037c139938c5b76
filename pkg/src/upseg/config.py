"""Run configuration: a flat ``section.key = value`` text format.

One assignment per line; blank lines and lines starting with ``#`` are
skipped. No nesting, no quoting — values are plain scalars or comma lists —
so the format stays trivially parsable from any language. Every diagnostic
names the file, line and key it complains about, and unknown keys are
rejected (they are always typos).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import DatasetSpec
from .errors import ConfigError
from .graph import BackboneConfig, UpscaleStackConfig
from .loss import LossConfig


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 50
    seed: int = 0
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer.kind must be adam or sgd, "
                              f"got {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("optimizer.max_epochs must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("optimizer.seed must be a 64-bit unsigned integer")
        if self.early_stop_patience < 1:
            raise ConfigError("optimizer.early_stop_patience must be >= 1")
        if self.early_stop_min_delta < 0:
            raise ConfigError("optimizer.early_stop_min_delta must be >= 0")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"                # "synthetic" or a dataset path
    spec: DatasetSpec | None = None          # set when source == "synthetic"
    val_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("data.val_fraction must lie in (0, 1)")
        if (self.source == "synthetic") != (self.spec is not None):
            raise ConfigError("synthetic data requires a DatasetSpec and "
                              "file data forbids one")


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str = "checkpoint.utsr"      # resolved relative to --out
    report_path: str = "metrics.csv"
    split: str = "val"                       # which samples eval scores

    def __post_init__(self):
        if self.split not in ("val", "train", "all"):
            raise ConfigError(f"eval.split must be val, train or all, "
                              f"got {self.split!r}")


@dataclass(frozen=True)
class SweepConfig:
    resolutions: tuple[int, ...] = (16, 32, 64)
    parallel: bool = False


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    upscale: UpscaleStackConfig = field(
        default_factory=lambda: UpscaleStackConfig(num_stages=0))
    loss: LossConfig = field(default_factory=lambda: LossConfig(num_stages=0))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=lambda: _default_data())
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    profile_input_res: int | None = None     # key profile.input_res

    def resolve_profile_res(self) -> int:
        if self.profile_input_res is not None:
            return self.profile_input_res
        if self.data.spec is not None:
            return self.data.spec.input_res
        raise ConfigError("profiling a file-based dataset needs an explicit "
                          "profile.input_res")


def _default_data() -> DataConfig:
    return DataConfig(spec=DatasetSpec(num_samples=96, input_res=16, gt_res=16))


def validate_class_channels(channels: int, foreground_classes: int) -> None:
    """Model channels vs mask labels: one sigmoid channel covers one
    foreground class; otherwise softmax needs foreground + background."""
    ok = (channels == 1 and foreground_classes == 1) or \
        channels == foreground_classes + 1
    if not ok:
        raise ConfigError(
            f"model.num_classes={channels} cannot score masks with "
            f"{foreground_classes} foreground classes; use 1 channel for "
            f"binary or foreground+1 channels for softmax")


# ---------------------------------------------------------------------------
# parsing


class _RawConfig:
    def __init__(self, path: str):
        self.path = path
        self.entries: dict[str, tuple[str, int]] = {}
        self.used: set[str] = set()

    def error(self, message: str, line: int | None = None) -> ConfigError:
        where = f"{self.path}:{line}" if line else self.path
        return ConfigError(f"{where}: {message}")

    def key_error(self, key: str, message: str) -> ConfigError:
        line = self.entries[key][1] if key in self.entries else None
        return self.error(f"key {key!r}: {message}", line)

    def get(self, key: str, default):
        self.used.add(key)
        if key not in self.entries:
            return default
        return self.entries[key][0]

    def get_typed(self, key: str, default, convert, describe: str):
        value = self.get(key, default)
        if value is default:
            return default
        try:
            return convert(value)
        except (ValueError, TypeError):
            raise self.key_error(key, f"expected {describe}, got {value!r}") from None

    def get_int(self, key, default):
        return self.get_typed(key, default, lambda v: int(v, 0), "an integer")

    def get_float(self, key, default):
        return self.get_typed(key, default, float, "a number")

    def get_bool(self, key, default):
        def conv(v):
            lowered = v.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(v)
        return self.get_typed(key, default, conv, "a boolean (true/false)")

    def get_str(self, key, default):
        return self.get(key, default)

    def get_int_list(self, key, default):
        return self.get_typed(
            key, default,
            lambda v: tuple(int(p.strip(), 0) for p in v.split(",") if p.strip()),
            "a comma-separated integer list")

    def get_float_list(self, key, default):
        return self.get_typed(
            key, default,
            lambda v: tuple(float(p.strip()) for p in v.split(",") if p.strip()),
            "a comma-separated number list")

    def reject_unknown(self) -> None:
        unknown = sorted(set(self.entries) - self.used)
        if unknown:
            key = unknown[0]
            raise self.key_error(key, "unknown configuration key")


def parse_config_text(text: str, path: str = "<config>") -> _RawConfig:
    raw = _RawConfig(path)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise raw.error("expected 'section.key = value'", lineno)
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key or "." not in key:
            raise raw.error(f"key {key!r} must look like 'section.key'", lineno)
        if key in raw.entries:
            raise raw.error(f"duplicate key {key!r} (first set on line "
                            f"{raw.entries[key][1]})", lineno)
        raw.entries[key] = (value, lineno)
    return raw


def _wrap(raw: _RawConfig, build):
    try:
        return build()
    except ConfigError as exc:
        if str(exc).startswith(raw.path):
            raise
        raise ConfigError(f"{raw.path}: {exc}") from exc


def build_run_config(raw: _RawConfig) -> RunConfig:
    backbone = _wrap(raw, lambda: BackboneConfig(
        in_channels=raw.get_int("model.in_channels", 1),
        base_channels=raw.get_int("model.base_channels", 64),
        depth=raw.get_int("model.depth", 4),
        num_classes=raw.get_int("model.num_classes", 1),
    ))
    num_stages = raw.get_int("model.num_stages", 0)
    upscale = _wrap(raw, lambda: UpscaleStackConfig(
        num_stages=num_stages,
        num_classes=backbone.num_classes,
        use_skips=raw.get_bool("model.use_skips", False),
        skip_exempt_stages=raw.get_int_list("model.skip_exempt_stages", (2,)),
    ))
    loss = _wrap(raw, lambda: LossConfig(
        num_stages=num_stages,
        base_loss=raw.get_str("loss.base_loss", "cross_entropy"),
        stage_weights=raw.get_float_list("loss.stage_weights", ()),
    ))
    optimizer = _wrap(raw, lambda: OptimizerConfig(
        kind=raw.get_str("optimizer.kind", "adam"),
        lr=raw.get_float("optimizer.lr", 1e-3),
        batch_size=raw.get_int("optimizer.batch_size", 8),
        max_epochs=raw.get_int("optimizer.max_epochs", 50),
        seed=raw.get_int("optimizer.seed", 0),
        early_stop_patience=raw.get_int("optimizer.early_stop_patience", 10),
        early_stop_min_delta=raw.get_float("optimizer.early_stop_min_delta", 1e-4),
    ))

    source = raw.get_str("data.source", "synthetic")
    if source == "synthetic":
        input_res = raw.get_int("data.input_res", 16)
        default_classes = max(1, backbone.num_classes - 1)
        spec = _wrap(raw, lambda: DatasetSpec(
            num_samples=raw.get_int("data.num_samples", 96),
            input_res=input_res,
            gt_res=raw.get_int("data.gt_res", input_res * 2 ** num_stages),
            num_classes=raw.get_int("data.num_classes", default_classes),
            shape_family=raw.get_str("data.shape_family", "ellipses"),
            noise_level=raw.get_float("data.noise_level", 0.05),
            seed=raw.get_int("data.seed", 0),
        ))
        _wrap(raw, lambda: validate_class_channels(backbone.num_classes,
                                                   spec.num_classes))
    else:
        spec = None
        for key in ("data.num_samples", "data.input_res", "data.gt_res",
                    "data.num_classes", "data.shape_family",
                    "data.noise_level", "data.seed"):
            if raw.get_str(key, None) is not None:
                raise raw.key_error(key, "only valid with data.source = synthetic")
    data = _wrap(raw, lambda: DataConfig(
        source=source, spec=spec,
        val_fraction=raw.get_float("data.val_fraction", 1.0 / 3.0)))

    eval_cfg = _wrap(raw, lambda: EvalConfig(
        checkpoint=raw.get_str("eval.checkpoint", "checkpoint.utsr"),
        report_path=raw.get_str("eval.report_path", "metrics.csv"),
        split=raw.get_str("eval.split", "val")))
    sweep = _wrap(raw, lambda: SweepConfig(
        resolutions=raw.get_int_list("sweep.resolutions", (16, 32, 64)),
        parallel=raw.get_bool("sweep.parallel", False)))
    profile_res = raw.get_int("profile.input_res", None)

    raw.reject_unknown()
    return RunConfig(backbone=backbone, upscale=upscale, loss=loss,
                     optimizer=optimizer, data=data, eval=eval_cfg,
                     sweep=sweep, profile_input_res=profile_res)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_run_config(parse_config_text(text, str(path)))
