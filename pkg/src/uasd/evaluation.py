"""Score standardization, ensembling, AUC, and the evaluation report.

Anomaly scores are standardized per method with the training-split mean
and population variance plus a per-method stabilizer epsilon,
(score - mu) / sqrt(sigma^2 + eps); an ensemble is the plain sum of its
members' standardized scores. AUC is computed from midranks (the
Mann-Whitney statistic: fraction of anomalous/normal pairs ranked
correctly, ties at 0.5), which equals the trapezoidal ROC area exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError
from .ioutil import atomic_write_text, dump_json

METHOD_LABELS = {
    "ae_labeled": "(i) AE w/ labels",
    "sad": "(ii) UASD-SAD",
    "ae_unlabeled": "(iii) AE w/o labels",
    "od_sad": "(iv) UASD-OD-SAD",
    "ensemble_labeled": "Ensemble (i)+(ii)",
    "ensemble_unlabeled": "Ensemble (iii)+(iv)",
}

# Which methods need ground-truth activity labels at inference time.
NEEDS_LABELS_AT_INFERENCE = {
    "ae_labeled": True,
    "sad": True,
    "ae_unlabeled": False,
    "od_sad": False,
}

DEFAULT_ENSEMBLES = {
    "ensemble_labeled": ("ae_labeled", "sad"),
    "ensemble_unlabeled": ("ae_unlabeled", "od_sad"),
}


@dataclass
class StandardizationStats:
    mu: float
    sigma2: float
    epsilon: float

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma2": self.sigma2, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(float(d["mu"]), float(d["sigma2"]), float(d["epsilon"]))


def fit_standardizer(training_scores, epsilon: float) -> StandardizationStats:
    """Training-score mean and population variance, stored with epsilon."""
    scores = np.asarray(list(training_scores), dtype=np.float64)
    if scores.size < 2:
        raise DegenerateInputError("need at least 2 training scores")
    if epsilon < 0:
        raise DegenerateInputError("epsilon must be non-negative")
    mu = float(scores.mean())
    sigma2 = float(scores.var())
    if sigma2 + epsilon <= 0.0:
        raise DegenerateInputError(
            "zero score variance with epsilon=0 leaves standardization "
            "undefined; use a positive epsilon"
        )
    return StandardizationStats(mu, sigma2, epsilon)


def standardize(score: float, stats: StandardizationStats) -> float:
    return (score - stats.mu) / math.sqrt(stats.sigma2 + stats.epsilon)


def ensemble(standardized_scores) -> float:
    """Sum of the member methods' standardized scores for one clip."""
    values = list(standardized_scores)
    if not values:
        raise DegenerateInputError("ensemble of zero members")
    if any(v is None for v in values):
        raise DataError("a member method is missing a standardized score")
    return float(sum(values))


def auc(normal_scores, anomalous_scores) -> float:
    """Mann-Whitney AUC via midranks; ties count one half."""
    normal = np.asarray(list(normal_scores), dtype=np.float64)
    anomalous = np.asarray(list(anomalous_scores), dtype=np.float64)
    if normal.size == 0 or anomalous.size == 0:
        raise DegenerateInputError("AUC needs both normal and anomalous scores")
    combined = np.concatenate([normal, anomalous])
    _, inverse, counts = np.unique(combined, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    midranks = (upper - counts + 1 + upper) / 2.0
    rank_sum = float(midranks[inverse][normal.size :].sum())
    n_a, n_n = anomalous.size, normal.size
    return (rank_sum - n_a * (n_a + 1) / 2.0) / (n_a * n_n)


@dataclass
class ScoreRecord:
    clip_id: str
    method_id: str
    raw_score: float
    condition: str
    snr_db: float
    noise_profile_id: str = ""
    standardized_score: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.raw_score):
            raise DataError(f"non-finite score for clip {self.clip_id!r}")


_CSV_HEADER = ["clip_id", "method", "snr_db", "condition", "raw", "standardized"]


def score_records_csv(records: list[ScoreRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for r in records:
        writer.writerow(
            [
                r.clip_id,
                r.method_id,
                repr(r.snr_db),
                r.condition,
                repr(r.raw_score),
                "" if r.standardized_score is None else repr(r.standardized_score),
            ]
        )
    return buf.getvalue()


def write_score_csv(records: list[ScoreRecord], path) -> None:
    atomic_write_text(path, score_records_csv(records))


def read_score_csv(path, noise_profile_id: str = "") -> list[ScoreRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_HEADER:
            raise DataError(f"{path}: unexpected score CSV header {header}")
        records = []
        for row in reader:
            records.append(
                ScoreRecord(
                    clip_id=row[0],
                    method_id=row[1],
                    snr_db=float(row[2]),
                    condition=row[3],
                    raw_score=float(row[4]),
                    standardized_score=float(row[5]) if row[5] else None,
                    noise_profile_id=noise_profile_id,
                )
            )
    return records


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "results": self.rows}

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    def auc_for(self, method_id: str, snr_db: float) -> float:
        for row in self.rows:
            if row["method"] == method_id and row["snr_db"] == snr_db:
                return row["auc"]
        raise KeyError(f"no row for ({method_id}, {snr_db})")

    def to_text_table(self) -> str:
        """Aligned table: method rows, SNR columns, per noise profile."""
        profiles = sorted({r["noise_profile_id"] for r in self.rows})
        methods = list(dict.fromkeys(r["method"] for r in self.rows))
        lines = []
        for profile in profiles:
            rows = [r for r in self.rows if r["noise_profile_id"] == profile]
            snrs = sorted({r["snr_db"] for r in rows}, reverse=True)
            label_width = max(
                len(METHOD_LABELS.get(m, m)) for m in methods
            )
            header = "AUC (%)".ljust(label_width) + "".join(
                f"{snr:>9g} dB" for snr in snrs
            )
            lines.append(f"noise profile: {profile}")
            lines.append(header)
            lines.append("-" * len(header))
            for method in methods:
                cells = []
                for snr in snrs:
                    match = [
                        r for r in rows
                        if r["method"] == method and r["snr_db"] == snr
                    ]
                    cells.append(
                        f"{100.0 * match[0]['auc']:>12.1f}" if match else " " * 12
                    )
                lines.append(
                    METHOD_LABELS.get(method, method).ljust(label_width)
                    + "".join(cells)
                )
            lines.append("")
        return "\n".join(lines)


def run_evaluation(
    test_records: dict[str, list[ScoreRecord]],
    train_scores: dict[str, list[float]],
    epsilons: dict[str, float],
    ensembles: dict[str, tuple[str, ...]] | None = None,
    metadata: dict | None = None,
) -> EvalReport:
    """Standardize, ensemble, and compute AUC per (method, SNR, profile).

    Standardizers are fitted on the training-split scores only; ensemble
    scores are the sums of their members' standardized test scores.
    """
    ensembles = DEFAULT_ENSEMBLES if ensembles is None else ensembles
    all_records: dict[str, list[ScoreRecord]] = {}
    for method, records in test_records.items():
        if method not in train_scores:
            raise DataError(f"method {method!r} has no training scores")
        stats = fit_standardizer(train_scores[method], epsilons.get(method, 0.0))
        for r in records:
            r.standardized_score = standardize(r.raw_score, stats)
        all_records[method] = list(records)

    for name, members in ensembles.items():
        missing = [m for m in members if m not in all_records]
        if missing:
            raise DataError(f"ensemble {name!r} is missing members {missing}")
        by_clip: dict[str, list[ScoreRecord]] = {}
        for m in members:
            for r in all_records[m]:
                by_clip.setdefault(r.clip_id, []).append(r)
        combined = []
        for clip_id, rs in sorted(by_clip.items()):
            if len(rs) != len(members):
                raise DataError(
                    f"ensemble {name!r}: clip {clip_id!r} was scored by "
                    f"{len(rs)} of {len(members)} members"
                )
            total = ensemble([r.standardized_score for r in rs])
            combined.append(
                ScoreRecord(
                    clip_id=clip_id,
                    method_id=name,
                    raw_score=total,
                    condition=rs[0].condition,
                    snr_db=rs[0].snr_db,
                    noise_profile_id=rs[0].noise_profile_id,
                    standardized_score=total,
                )
            )
        all_records[name] = combined

    report = EvalReport(metadata=metadata or {})
    for method, records in all_records.items():
        groups: dict[tuple[float, str], list[ScoreRecord]] = {}
        for r in records:
            groups.setdefault((r.snr_db, r.noise_profile_id), []).append(r)
        for (snr_db, profile) in sorted(groups, key=lambda k: (-k[0], k[1])):
            rs = groups[(snr_db, profile)]
            normal = [r.raw_score for r in rs if r.condition == "normal"]
            anomalous = [r.raw_score for r in rs if r.condition == "anomalous"]
            report.rows.append(
                {
                    "method": method,
                    "snr_db": snr_db,
                    "noise_profile_id": profile,
                    "auc": auc(normal, anomalous),
                    "n_normal": len(normal),
                    "n_anomalous": len(anomalous),
                }
            )
    return report
