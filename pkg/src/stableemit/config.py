"""Run configuration: mode matrix, flat dotted-key config files, overrides.

The config file format is plain text, one `section.key = value` per line,
`#` comments allowed. Every key can be overridden on the command line with
`--section.key=value`. Modes combine with `+` (e.g. ``ctc-st+stableemit``);
mode/weight consistency is enforced here.
"""

from dataclasses import asdict, dataclass, field, replace

from .decoder import DecodeConfig
from .losses import LossWeights
from .model import ModelConfig

BASE_MODES = ("baseline", "stableemit", "decot", "decot-ctc", "ctc-st", "minlt")
LATENCY_MODES = {"ctc-st", "minlt"}
MASK_MODES = {"decot", "decot-ctc"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "baseline"
    seed: int = 0
    epochs: int = 1
    warmup_epochs: int = 0
    batch_size: int = 1
    learning_rate: float = 2e-3
    boundary_style: str = "onset"  # ctc spike frame: onset | peak
    train_dir: str = ""
    eval_dir: str = ""
    out_dir: str = "runs/default"
    boundaries_file: str = ""  # external reference boundaries (minlt/decot)
    model: ModelConfig = field(default_factory=ModelConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    @property
    def weights(self):
        return self.model.weights

    def mode_parts(self):
        parts = [p.strip() for p in self.mode.split("+") if p.strip()]
        if not parts:
            raise ConfigError("empty mode")
        for p in parts:
            if p not in BASE_MODES:
                raise ConfigError(f"unknown mode {p!r} (choose from {BASE_MODES})")
        return parts

    def boundary_source(self):
        """Where reference boundaries come from, or None."""
        parts = set(self.mode_parts())
        if "ctc-st" in parts or "decot-ctc" in parts:
            return "ctc-viterbi"
        if "minlt" in parts or "decot" in parts:
            return "external"
        return None

    def uses_mask(self):
        return bool(set(self.mode_parts()) & MASK_MODES)

    def uses_latency_loss(self):
        return bool(set(self.mode_parts()) & LATENCY_MODES)

    def validate(self):
        parts = self.mode_parts()
        if len(set(parts)) != len(parts):
            raise ConfigError(f"repeated mode in {self.mode!r}")
        if "baseline" in parts and len(parts) > 1:
            raise ConfigError("baseline does not combine with other modes")
        if len(set(parts) & LATENCY_MODES) > 1:
            raise ConfigError("ctc-st and minlt are mutually exclusive")
        if len(set(parts) & MASK_MODES) > 1:
            raise ConfigError("decot and decot-ctc are mutually exclusive")

        w = self.model.weights
        if "baseline" in parts and w.lambda_se != 0.0:
            raise ConfigError("baseline requires lambda_se = 0")
        if self.uses_latency_loss():
            # the latency loss replaces quantity regularization
            if w.lambda_latency == 0.0:
                self.model.weights = w = replace(w, lambda_latency=1.0,
                                                 lambda_qua=0.0)
            if w.lambda_qua != 0.0:
                raise ConfigError(
                    "latency-loss modes require lambda_qua = 0 "
                    "(it is forced to (1.0, 0.0) unless overridden)")
        elif w.lambda_latency > 0.0:
            raise ConfigError(
                f"lambda_latency > 0 needs a latency mode, got {self.mode!r}")
        if set(parts) & LATENCY_MODES and self.uses_mask():
            raise ConfigError("path masking and the latency loss are exclusive")
        if "stableemit" in parts and w.lambda_se == 0.0:
            self.model.weights = w = replace(w, lambda_se=0.1)
        if self.boundary_source() == "external" and not self.boundaries_file:
            raise ConfigError(
                f"mode {self.mode!r} needs --boundaries_file with reference "
                "boundaries (or use the ctc variant)")
        if "ctc-viterbi" == self.boundary_source() and w.lambda_ctc == 0.0:
            raise ConfigError("ctc-derived boundaries need lambda_ctc > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ConfigError("invalid training schedule")
        if self.boundary_style not in ("onset", "peak"):
            raise ConfigError(f"unknown boundary_style {self.boundary_style!r}")
        try:
            self.model.validate()
            self.decode.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------
# flat dotted-key config text
# ---------------------------------------------------------------------

def _parse_scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text):
    """`a.b.c = value` lines into a flat {dotted_key: scalar} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_scalar(value)
    return out


def load_config_file(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


_SECTIONS = {
    "run": (lambda cfg: cfg, ("mode", "seed", "epochs", "warmup_epochs",
                              "batch_size", "learning_rate", "boundary_style",
                              "train_dir", "eval_dir", "out_dir",
                              "boundaries_file")),
    "model": (lambda cfg: cfg.model, ("input_dim", "hidden_dim", "vocab_size",
                                      "encoder_layers", "chunk_width",
                                      "noise_std", "seed", "downsample")),
    "loss": (lambda cfg: cfg.model.weights, ("lambda_ctc", "lambda_qua",
                                             "lambda_latency", "lambda_se",
                                             "delta", "tau")),
    "decode": (lambda cfg: cfg.decode, ("tau", "max_tokens", "discount_at_test",
                                        "lambda_se", "max_lookahead")),
}


def apply_flat_config(config, flat):
    """Apply {dotted_key: value} entries onto a RunConfig in place."""
    for key, value in flat.items():
        if "." not in key:
            raise ConfigError(f"key {key!r} must be section.key")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in {key!r}")
        target_fn, names = _SECTIONS[section]
        if name not in names:
            raise ConfigError(f"unknown key {key!r}")
        target = target_fn(config)
        current = getattr(target, name)
        if value is None:
            setattr(target, name, None)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} expects true/false, got {value!r}")
            setattr(target, name, value)
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key} expects an integer, got {value!r}")
            if isinstance(value, str):
                raise ConfigError(f"{key} expects an integer, got {value!r}")
            setattr(target, name, int(value))
        elif isinstance(current, float):
            if isinstance(value, str):
                raise ConfigError(f"{key} expects a number, got {value!r}")
            setattr(target, name, float(value))
        elif current is None:  # e.g. decode.max_lookahead
            setattr(target, name, value)
        else:
            setattr(target, name, str(value))
    return config


def build_run_config(config_path=None, overrides=None):
    """Config file first, then --key=value overrides, then validation."""
    config = RunConfig()
    if config_path:
        apply_flat_config(config, load_config_file(config_path))
    if overrides:
        apply_flat_config(config, overrides)
    return config.validate()
