"""Experiment configuration: one flat key-value file drives everything.

The file holds ``key = value`` lines (# comments allowed). Corpus keys are
unprefixed (sample_rate, clip_seconds, snr_list, n_train,
n_test_per_condition, noise_kind, seed, ...); feature and per-method
hyperparameters use dotted prefixes (features.*, sad.*, gmm.*, ae.*,
eval.*). Unknown keys are rejected. A content hash of the resolved
configuration (out_dir excluded, so runs are relocatable) is embedded in
every artifact the pipeline produces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .autoencoder import AeTrainConfig
from .activity import ActivityTrainConfig
from .corpus import GenerationConfig
from .errors import ConfigError
from .features import FeatureConfig
from .gmm import GmmConfig
from .seeding import derive_seed


def _parse_snr_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad snr_list {text!r}") from exc


def _format_snr_list(value) -> str:
    return ",".join(f"{v:g}" for v in value)


# key -> (attribute path, parse, format)
_KEYS: dict[str, tuple[str, ...]] = {}


def _register(key: str, path: str, parse, fmt=str):
    _KEYS[key] = (path, parse, fmt)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes"):
        return True
    if str(text).lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


_register("sample_rate", "corpus.sample_rate", int)
_register("clip_seconds", "corpus.clip_seconds", float)
_register("snr_list", "corpus.snr_list", _parse_snr_list, _format_snr_list)
_register("n_train", "corpus.n_train", int)
_register("n_test_per_condition", "corpus.n_test_per_condition", int)
_register("noise_kind", "corpus.noise_kind", str)
_register("machine_fundamental_hz", "corpus.machine_fundamental_hz", float)
_register("n_harmonics", "corpus.n_harmonics", int)
_register("duty_cycle", "corpus.duty_cycle", float)
_register("features.frame_samples", "features.frame_samples", int)
_register("features.hop_samples", "features.hop_samples", int)
_register("features.n_mels", "features.n_mels", int)
_register("features.window_frames", "features.window_frames", int)
_register("sad.epochs", "sad.epochs", int)
_register("sad.lr", "sad.lr", float)
_register("sad.batch_size", "sad.batch_size", int)
_register("sad.channels", "sad.channels", int)
_register("sad.blocks", "sad.blocks", int)
_register("sad.embedding_dim", "sad.embedding_dim", int)
_register("sad.windows_per_epoch", "sad.windows_per_epoch", int)
_register("sad.log_cost_every", "sad.log_cost_every", int)
_register("gmm.components", "gmm.components", int)
_register("gmm.max_iter", "gmm.max_iter", int)
_register("gmm.tol", "gmm.tol", float)
_register("gmm.max_vectors", "gmm.max_vectors", int)
_register("ae.epochs", "ae.epochs", int)
_register("ae.lr", "ae.lr", float)
_register("ae.batch_size", "ae.batch_size", int)
_register("ae.hidden_dim", "ae.hidden_dim", int)
_register("ae.bottleneck_dim", "ae.bottleneck_dim", int)
_register("eval.epsilon_sad", "epsilon_sad", float)
_register("eval.epsilon_default", "epsilon_default", float)
_register("seed", "seed", int)
_register("out_dir", "out_dir", str)

_HASH_EXCLUDED = {"out_dir"}


@dataclass
class ExperimentConfig:
    corpus: GenerationConfig = field(default_factory=GenerationConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    sad: ActivityTrainConfig = field(default_factory=ActivityTrainConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    ae: AeTrainConfig = field(default_factory=AeTrainConfig)
    epsilon_sad: float = 1000.0
    epsilon_default: float = 0.0
    seed: int = 0
    out_dir: str = "runs/experiment"

    def __post_init__(self):
        # Corpus randomness is the master seed's "corpus" sub-seed.
        self.corpus.seed = derive_seed(self.seed, "corpus")

    def _get(self, path: str):
        obj = self
        *parents, leaf = path.split(".")
        for name in parents:
            obj = getattr(obj, name)
        return getattr(obj, leaf)

    def _set(self, path: str, value):
        obj = self
        *parents, leaf = path.split(".")
        for name in parents:
            obj = getattr(obj, name)
        setattr(obj, leaf, value)

    def apply(self, key: str, raw_value: str) -> None:
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        path, parse, _ = _KEYS[key]
        try:
            value = parse(raw_value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw_value!r}") from exc
        self._set(path, value)
        if key == "seed":
            self.corpus.seed = derive_seed(self.seed, "corpus")

    def lines(self, include_excluded: bool = True) -> list[str]:
        out = []
        for key in sorted(_KEYS):
            if not include_excluded and key in _HASH_EXCLUDED:
                continue
            path, _, fmt = _KEYS[key]
            out.append(f"{key} = {fmt(self._get(path))}")
        return out

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def content_hash(self) -> str:
        canon = "\n".join(self.lines(include_excluded=False))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def epsilon_for(self, method_id: str) -> float:
        return self.epsilon_sad if method_id == "sad" else self.epsilon_default

    def validate(self) -> None:
        self.corpus.validate()
        self.features.validate()
        min_samples = 2 * self.features.window_frames * self.features.hop_samples
        if self.corpus.clip_seconds * self.corpus.sample_rate < min_samples:
            raise ConfigError(
                "clips are too short for the feature window: need at least "
                f"{min_samples} samples per clip"
            )
        if self.sad.epochs < 1 or self.ae.epochs < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.epsilon_sad < 0 or self.epsilon_default < 0:
            raise ConfigError("epsilons must be non-negative")


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    config = base or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        config.apply(key.strip(), value.strip())
    return config


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, then the file (if any), then --set key=value overrides."""
    config = ExperimentConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            config = parse_config_text(fh.read(), config)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        config.apply(key.strip(), value.strip())
    config.validate()
    return config
