"""Model and run configuration: presets, config files, introspection.

Config files are flat `key = value` documents. A line `inherit = <preset>`
pulls in a named preset first; later keys override it. Unknown keys are
rejected rather than ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigMismatch, UnknownConfigKey

FUSION_MODES = ("affa", "concat", "add", "none")

DEFAULT_SEED = 12345


@dataclass
class ModelConfig:
    name: str = "custom"
    resolution: int = 256
    base_channels: int = 64
    channel_cap: int = 512
    bottleneck_resolution: int = 8
    use_mapping: bool = True
    use_ifsr: bool = False
    fusion_plan: dict = field(default_factory=dict)

    @property
    def decoder_resolutions(self) -> list:
        """Ascending: bottleneck, 2x, ..., working resolution."""
        out = []
        r = self.bottleneck_resolution
        while r <= self.resolution:
            out.append(r)
            r *= 2
        return out

    def channels(self, r: int) -> int:
        return min(self.channel_cap, self.base_channels * (self.resolution // r))

    def validate(self):
        if self.resolution < self.bottleneck_resolution or self.bottleneck_resolution < 1:
            raise ConfigMismatch(
                f"bottleneck {self.bottleneck_resolution} incompatible with resolution {self.resolution}"
            )
        ratio = self.resolution // self.bottleneck_resolution
        if self.bottleneck_resolution * ratio != self.resolution or ratio & (ratio - 1):
            raise ConfigMismatch(
                f"resolution {self.resolution} must be bottleneck {self.bottleneck_resolution} times a power of 2"
            )
        expected = set(self.decoder_resolutions)
        got = set(self.fusion_plan)
        if expected != got:
            raise ConfigMismatch(
                f"fusion plan must cover exactly {sorted(expected)}, got {sorted(got)}"
            )
        for r, mode in self.fusion_plan.items():
            if mode not in FUSION_MODES:
                raise ConfigMismatch(f"unknown fusion mode {mode!r} at resolution {r}")
        if self.base_channels < 1 or self.channel_cap < self.base_channels:
            raise ConfigMismatch("need 1 <= base_channels <= channel_cap")
        return self


PRESET_NAMES = (
    "baseline1",
    "baseline2",
    "configA",
    "configB",
    "configC",
    "configD",
    "configE",
)


def make_preset(
    name: str,
    resolution: int = 256,
    base_channels: int = 64,
    channel_cap: int = 512,
    bottleneck_resolution: int = 8,
) -> ModelConfig:
    """Materialize a named preset's fusion plan at the given scale.

    Plans are positional over decoder resolutions, highest first, so presets
    scale down coherently from their native 256 definitions.
    """
    if name not in PRESET_NAMES:
        raise ConfigMismatch(f"unknown preset {name!r}; choose one of {', '.join(PRESET_NAMES)}")
    cfg = ModelConfig(
        name=name,
        resolution=resolution,
        base_channels=base_channels,
        channel_cap=channel_cap,
        bottleneck_resolution=bottleneck_resolution,
    )
    rs = sorted(cfg.decoder_resolutions, reverse=True)
    plan = {r: "none" for r in rs}
    if name == "baseline1":
        for r in rs[:3]:
            plan[r] = "concat"
    elif name == "baseline2":
        for r in rs[:3]:
            plan[r] = "add"
    elif name in ("configA", "configB"):
        for r in rs[:3]:
            plan[r] = "affa"
    elif name == "configC":
        plan[rs[0]] = "concat"
        for r in rs[1:4]:
            plan[r] = "affa"
    else:  # configD, configE: concat top skip, gate every other one
        plan[rs[0]] = "concat"
        for r in rs[1:]:
            plan[r] = "affa"
    cfg.fusion_plan = plan
    cfg.use_ifsr = name != "configA"
    cfg.use_mapping = name != "configE"
    return cfg.validate()


@dataclass
class TrainSettings:
    batch_size: int = 10
    same_prob: float = 0.2
    lr0: float = 1e-4
    decay: float = 0.97
    decay_every: int = 100000
    decay_mode: str = "staircase"  # or "continuous"
    beta1: float = 0.0
    beta2: float = 0.99
    lambda_adv: float = 1.0
    lambda_i: float = 10.0
    lambda_r: float = 5.0
    lambda_p: float = 0.2
    lambda_c: float = 1.0
    lambda_ifsr: float = 1.0
    lambda_gp: float = 10.0
    gp_mode: str = "interpolated"  # or "real-only"
    ifsr_first: int = 2
    ifsr_last: int = 13
    ifsr_scale: float = 1.2
    ifsr_literal: bool = False
    seed: int = DEFAULT_SEED
    deterministic: bool = False
    augment_enabled: bool = True
    augment_brightness: float = 0.2
    augment_contrast_lo: float = 0.8
    augment_contrast_hi: float = 1.25
    augment_saturation_lo: float = 0.8
    augment_saturation_hi: float = 1.25

    def validate(self):
        if self.decay_mode not in ("staircase", "continuous"):
            raise ConfigMismatch(f"decay_mode must be staircase or continuous, got {self.decay_mode!r}")
        if self.gp_mode not in ("interpolated", "real-only"):
            raise ConfigMismatch(f"gp_mode must be interpolated or real-only, got {self.gp_mode!r}")
        if not (0.0 <= self.same_prob <= 1.0):
            raise ConfigMismatch("same_prob must be in [0, 1]")
        if self.batch_size < 1:
            raise ConfigMismatch("batch_size must be >= 1")
        for name in (
            "lambda_adv",
            "lambda_i",
            "lambda_r",
            "lambda_p",
            "lambda_c",
            "lambda_ifsr",
            "lambda_gp",
        ):
            if getattr(self, name) < 0:
                raise ConfigMismatch(f"{name} must be >= 0")
        if self.ifsr_scale <= 0:
            raise ConfigMismatch("ifsr_scale must be > 0")
        if not (1 <= self.ifsr_first <= self.ifsr_last):
            raise ConfigMismatch("need 1 <= ifsr_first <= ifsr_last")
        return self


@dataclass
class RunSettings:
    model: ModelConfig
    train: TrainSettings

    def validate(self):
        self.model.validate()
        self.train.validate()
        return self


_MODEL_KEYS = {
    "resolution": int,
    "base_channels": int,
    "channel_cap": int,
    "bottleneck_resolution": int,
    "use_mapping": bool,
    "use_ifsr": bool,
}

_TRAIN_KEYS = {f.name: f.type for f in fields(TrainSettings)}
_TRAIN_TYPES = {
    name: (bool if "bool" in str(tp) else int if "int" in str(tp) else float if "float" in str(tp) else str)
    for name, tp in _TRAIN_KEYS.items()
}


def _coerce(key: str, value: str, target_type):
    value = value.strip()
    if target_type is bool:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigMismatch(f"{key}: expected a boolean, got {value!r}")
    try:
        return target_type(value)
    except ValueError as exc:
        raise ConfigMismatch(f"{key}: expected {target_type.__name__}, got {value!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> list:
    """Return ordered (key, value) pairs from a flat key=value document."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigMismatch(f"{source}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def build_run_settings(pairs, default_preset: str | None = None) -> RunSettings:
    """Assemble settings from (key, value) pairs, presets first."""
    preset_name = default_preset
    structural = {}
    fusion_overrides = {}
    model_flags = {}
    train_kv = {}
    for key, value in pairs:
        if key == "inherit":
            preset_name = value
        elif key in ("resolution", "base_channels", "channel_cap", "bottleneck_resolution"):
            structural[key] = _coerce(key, value, int)
        elif key in _MODEL_KEYS:
            model_flags[key] = _coerce(key, value, _MODEL_KEYS[key])
        elif key.startswith("fusion."):
            try:
                r = int(key.split(".", 1)[1])
            except ValueError as exc:
                raise UnknownConfigKey(f"bad fusion key {key!r}") from exc
            mode = value.lower()
            if mode not in FUSION_MODES:
                raise ConfigMismatch(f"{key}: unknown fusion mode {value!r}")
            fusion_overrides[r] = mode
        elif key in _TRAIN_TYPES:
            train_kv[key] = _coerce(key, value, _TRAIN_TYPES[key])
        else:
            raise UnknownConfigKey(f"unknown config key {key!r}")

    if preset_name is not None:
        model = make_preset(preset_name, **structural)
    else:
        model = ModelConfig(**structural)
        rs = model.decoder_resolutions
        model.fusion_plan = {r: "none" for r in rs}
    for flag, val in model_flags.items():
        setattr(model, flag, val)
    for r, mode in fusion_overrides.items():
        if r not in model.fusion_plan:
            raise ConfigMismatch(
                f"fusion.{r} does not match a decoder resolution of this model"
            )
        model.fusion_plan[r] = mode
    train = TrainSettings(**train_kv)
    return RunSettings(model=model, train=train).validate()


def load_run_settings(spec: str, overrides=()) -> RunSettings:
    """`spec` is a preset name or a config file path; overrides are key=value strings."""
    pairs = []
    if spec in PRESET_NAMES:
        pairs.append(("inherit", spec))
    else:
        with open(spec, "r", encoding="utf-8") as fh:
            pairs.extend(parse_config_text(fh.read(), source=spec))
    for item in overrides:
        pairs.extend(parse_config_text(item, source="<override>"))
    return build_run_settings(pairs)


def show_model_config(cfg: ModelConfig) -> str:
    """Stable introspection text, one key per line."""
    lines = [
        f"name = {cfg.name}",
        f"resolution = {cfg.resolution}",
        f"base_channels = {cfg.base_channels}",
        f"channel_cap = {cfg.channel_cap}",
        f"bottleneck_resolution = {cfg.bottleneck_resolution}",
        f"use_mapping = {str(cfg.use_mapping).lower()}",
        f"use_ifsr = {str(cfg.use_ifsr).lower()}",
    ]
    for r in sorted(cfg.fusion_plan, reverse=True):
        lines.append(f"fusion.{r} = {cfg.fusion_plan[r]}")
    return "\n".join(lines) + "\n"


def desk_preset(name: str) -> ModelConfig:
    """Small variant for CPU-scale tests: 64 input, base 32, cap 128."""
    return make_preset(
        name, resolution=64, base_channels=32, channel_cap=128, bottleneck_resolution=8
    )
