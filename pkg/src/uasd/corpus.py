"""Corpus generation and manifest management.

A generated corpus is a directory tree:

    <out_dir>/audio/<clip_id>.wav      mono PCM16
    <out_dir>/labels/<clip_id>.json    {"clip_id": ..., "intervals": [[s, e], ...]}
    <out_dir>/manifest.json            entries + generator config hash + seed

The train split holds only normal clips (anomalies exist solely at test
time); the test split is balanced normal/anomalous per SNR level. All file
paths in the manifest are relative to the manifest's directory, so a
corpus can be relocated wholesale. Generation is deterministic: every clip
derives its own seed from the corpus seed and its clip id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import mix_at_snr, read_wav, write_wav
from .errors import ConfigError, DataError
from .ioutil import read_json, write_json
from .seeding import derive_seed
from .synth import (
    ANOMALY_KINDS,
    NOISE_KINDS,
    ActivityIntervals,
    SynthSpec,
    synth_machine_clip,
    synth_noise,
)

SPLITS = ("train", "test")
CONDITIONS = ("normal", "anomalous")
_TEST_ANOMALY_KINDS = tuple(k for k in ANOMALY_KINDS if k != "none")


@dataclass
class GenerationConfig:
    """Flat corpus-generation settings (documented key-value file keys)."""

    sample_rate: int = 16000
    clip_seconds: float = 4.0
    snr_list: tuple[float, ...] = (6.0, 0.0, -6.0, -12.0)
    n_train: int = 120
    n_test_per_condition: int = 30
    noise_kind: str = "similar_machine"
    seed: int = 0
    machine_fundamental_hz: float = 170.0
    n_harmonics: int = 8
    duty_cycle: float = 0.5

    def validate(self) -> None:
        if self.n_train <= 0:
            raise ConfigError("n_train must be positive (empty training set rejected)")
        if self.n_test_per_condition <= 0:
            raise ConfigError("n_test_per_condition must be positive")
        if not self.snr_list:
            raise ConfigError("snr_list must not be empty")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise_kind {self.noise_kind!r}")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            d[f.name] = list(value) if isinstance(value, tuple) else value
        return d

    def content_hash(self) -> str:
        canon = ";".join(f"{k}={self.to_dict()[k]!r}" for k in sorted(self.to_dict()))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class ManifestEntry:
    clip_id: str
    file_path: str  # relative to the manifest directory
    split: str
    condition: str
    activity: ActivityIntervals | None  # None: no labels available
    snr_db: float
    noise_profile_id: str

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "file_path": self.file_path,
            "split": self.split,
            "condition": self.condition,
            "intervals": None if self.activity is None else self.activity.to_jsonable(),
            "snr_db": self.snr_db,
            "noise_profile_id": self.noise_profile_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        intervals = d.get("intervals")
        return cls(
            clip_id=d["clip_id"],
            file_path=d["file_path"],
            split=d["split"],
            condition=d["condition"],
            activity=None if intervals is None
            else ActivityIntervals.from_jsonable(intervals),
            snr_db=float(d["snr_db"]),
            noise_profile_id=d["noise_profile_id"],
        )


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    generator_config_hash: str
    seed: int
    sample_rate_hz: int
    root: Path = field(default=Path("."), compare=False)

    def clip_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.file_path

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def by_id(self, clip_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise DataError(f"clip_id {clip_id!r} not in manifest")

    def validate(self, check_files: bool = True) -> None:
        seen = set()
        for e in self.entries:
            if e.clip_id in seen:
                raise DataError(f"duplicate clip_id {e.clip_id!r}")
            seen.add(e.clip_id)
            if e.split not in SPLITS or e.condition not in CONDITIONS:
                raise DataError(f"bad split/condition on {e.clip_id!r}")
            if e.split == "train" and e.condition != "normal":
                raise DataError(
                    f"train entry {e.clip_id!r} is not normal; training data "
                    "must contain only normal sounds"
                )
        if check_files:
            for e in self.entries:
                clip = read_wav(self.clip_path(e))
                if clip.sample_rate_hz != self.sample_rate_hz:
                    raise DataError(f"{e.clip_id!r}: sample rate mismatch")
                if e.activity is not None:
                    e.activity.validate_for_length(clip.n_samples)

    def to_dict(self) -> dict:
        return {
            "generator_config_hash": self.generator_config_hash,
            "seed": self.seed,
            "sample_rate_hz": self.sample_rate_hz,
            "entries": [e.to_dict() for e in self.entries],
        }

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        payload = read_json(path)
        return cls(
            entries=[ManifestEntry.from_dict(d) for d in payload["entries"]],
            generator_config_hash=payload["generator_config_hash"],
            seed=int(payload["seed"]),
            sample_rate_hz=int(payload["sample_rate_hz"]),
            root=Path(path).parent,
        )


def _clip_id(split: str, condition: str, index: int, snr_db: float) -> str:
    return f"{split}_{condition}_{index:04d}_snr{snr_db:+g}"


def _make_clip(
    config: GenerationConfig, clip_id: str, anomaly_kind: str, snr_db: float
):
    clip_seed = derive_seed(config.seed, f"clip/{clip_id}")
    spec = SynthSpec(
        clip_seconds=config.clip_seconds,
        sample_rate_hz=config.sample_rate,
        machine_fundamental_hz=config.machine_fundamental_hz,
        n_harmonics=config.n_harmonics,
        duty_cycle=config.duty_cycle,
        noise_kind=config.noise_kind,
        anomaly_kind=anomaly_kind,
        seed=clip_seed,
    )
    machine, intervals, condition = synth_machine_clip(spec)
    noise_rng = np.random.default_rng(derive_seed(clip_seed, "noise"))
    noise = synth_noise(
        config.noise_kind,
        noise_rng,
        machine.n_samples,
        config.sample_rate,
        config.machine_fundamental_hz,
        config.n_harmonics,
    )
    mixed = mix_at_snr(machine, noise, snr_db)
    return mixed, intervals, condition


def generate_corpus(config: GenerationConfig, out_dir) -> CorpusManifest:
    """Write the corpus tree and return its manifest.

    Train clips are all normal, with SNRs cycling through snr_list so one
    training set covers every test condition. Test clips are balanced
    normal/anomalous per SNR, the anomalous ones cycling through the three
    anomaly kinds.
    """
    config.validate()
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)

    plan: list[tuple[str, str, int, float]] = []  # (split, anomaly, idx, snr)
    for i in range(config.n_train):
        plan.append(("train", "none", i, config.snr_list[i % len(config.snr_list)]))
    for snr in config.snr_list:
        for i in range(config.n_test_per_condition):
            plan.append(("test", "none", i, snr))
            kind = _TEST_ANOMALY_KINDS[i % len(_TEST_ANOMALY_KINDS)]
            plan.append(("test", kind, i, snr))

    entries = []
    for split, anomaly_kind, index, snr_db in plan:
        condition = "normal" if anomaly_kind == "none" else "anomalous"
        clip_id = _clip_id(split, condition, index, snr_db)
        clip, intervals, cond = _make_clip(config, clip_id, anomaly_kind, snr_db)
        assert cond == condition
        rel_path = f"audio/{clip_id}.wav"
        write_wav(clip, out_dir / rel_path)
        write_json(
            out_dir / "labels" / f"{clip_id}.json",
            {"clip_id": clip_id, "intervals": intervals.to_jsonable()},
        )
        entries.append(
            ManifestEntry(
                clip_id=clip_id,
                file_path=rel_path,
                split=split,
                condition=condition,
                activity=intervals,
                snr_db=snr_db,
                noise_profile_id=config.noise_kind,
            )
        )

    manifest = CorpusManifest(
        entries=entries,
        generator_config_hash=config.content_hash(),
        seed=config.seed,
        sample_rate_hz=config.sample_rate,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
