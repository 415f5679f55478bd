"""Detection metrics: ROC curves, AUROC, and acceptance-rate reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anomaly import Decision
from .ingest import Adversarial


class MetricsError(Exception):
    pass


class SingleClassError(MetricsError):
    pass


class LengthMismatchError(MetricsError):
    pass


class EmptyInputError(MetricsError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over score thresholds, descending.

    Point k is the (false positive rate, true positive rate) of the rule
    "positive iff score >= thresholds[k]"; the first point is (0, 0) at
    threshold +inf. ``auroc`` is the trapezoidal area, which equals the
    probability that a random positive outscores a random negative (ties
    count one half).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auroc: float


def roc(scores, labels) -> RocCurve:
    """Build a ROC curve; labels are 1 for positive, 0 for negative.

    Tied scores collapse into a single operating point.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatchError(f"scores shape {s.shape} vs labels shape {y.shape}")
    if s.size == 0:
        raise EmptyInputError("no scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos + neg != s.size:
        raise ValueError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise SingleClassError(f"need both classes, got {pos} positive / {neg} negative")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # one operating point per distinct score: cumulative counts at group ends
    boundaries = np.nonzero(np.diff(s_sorted))[0]
    ends = np.concatenate([boundaries, [s.size - 1]])
    tp = np.cumsum(y_sorted == 1)[ends]
    fp = np.cumsum(y_sorted == 0)[ends]
    fpr = np.concatenate([[0.0], fp / neg])
    tpr = np.concatenate([[0.0], tp / pos])
    thresholds = np.concatenate([[np.inf], s_sorted[ends]])

    area = 0.5 * np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auroc=float(area))


@dataclass(frozen=True)
class DetectionReport:
    """Acceptance-rate summary over a decided image set.

    Noisy-but-legitimate inputs count toward the legitimate pool: the
    detector is supposed to pass benign corruption and reject attacks.
    Rates are None when the corresponding pool is empty.
    """

    n_legitimate: int
    n_adversarial: int
    true_acceptance_rate: float | None
    false_alarm_rate: float | None
    attacker_rejection_rate: float | None


def detection_report(decisions, provenances) -> DetectionReport:
    """Tally accept/reject decisions against image provenance."""
    decisions = list(decisions)
    provenances = list(provenances)
    if len(decisions) != len(provenances):
        raise LengthMismatchError(
            f"{len(decisions)} decisions vs {len(provenances)} provenances"
        )
    if not decisions:
        raise EmptyInputError("no decisions to report on")
    n_legit = n_adv = accepted_legit = rejected_adv = 0
    for decision, prov in zip(decisions, provenances):
        if not isinstance(decision, Decision):
            raise ValueError(f"not a Decision: {decision!r}")
        if isinstance(prov, Adversarial):
            n_adv += 1
            if decision is Decision.REJECT:
                rejected_adv += 1
        else:
            n_legit += 1
            if decision is Decision.ACCEPT:
                accepted_legit += 1
    tar = accepted_legit / n_legit if n_legit else None
    return DetectionReport(
        n_legitimate=n_legit,
        n_adversarial=n_adv,
        true_acceptance_rate=tar,
        false_alarm_rate=(1.0 - tar) if tar is not None else None,
        attacker_rejection_rate=(rejected_adv / n_adv) if n_adv else None,
    )


# ---------------------------------------------------------------------------
# wire formats

def write_roc_csv(curve: RocCurve, path) -> None:
    """Rows of ``threshold,fpr,tpr``; the +inf threshold serializes as inf."""
    lines = ["threshold,fpr,tpr"]
    for t, f, r in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{'inf' if np.isinf(t) else repr(float(t))},{float(f)!r},{float(r)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_roc_csv(path) -> RocCurve:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != "threshold,fpr,tpr":
        raise ValueError(f"unexpected ROC CSV header in {path}")
    rows = [tuple(float(c) for c in ln.split(",")) for ln in lines[1:]]
    thresholds = np.array([r[0] for r in rows])
    fpr = np.array([r[1] for r in rows])
    tpr = np.array([r[2] for r in rows])
    area = 0.5 * np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auroc=float(area))


def report_to_json(report: DetectionReport) -> str:
    return json.dumps(
        {
            "n_legitimate": report.n_legitimate,
            "n_adversarial": report.n_adversarial,
            "true_acceptance_rate": report.true_acceptance_rate,
            "false_alarm_rate": report.false_alarm_rate,
            "attacker_rejection_rate": report.attacker_rejection_rate,
        },
        sort_keys=True,
        indent=2,
    )


def report_from_json(text: str) -> DetectionReport:
    doc = json.loads(text)
    return DetectionReport(
        n_legitimate=int(doc["n_legitimate"]),
        n_adversarial=int(doc["n_adversarial"]),
        true_acceptance_rate=doc["true_acceptance_rate"],
        false_alarm_rate=doc["false_alarm_rate"],
        attacker_rejection_rate=doc["attacker_rejection_rate"],
    )
