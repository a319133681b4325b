"""Open-world evaluation: features, the built-in nearest-neighbour oracle,
threshold sweeps, the external-oracle file protocol, and cross-classification.

The built-in classifier (cumulative-direction features + k nearest
neighbours) is deliberately lightweight: it is the desk-scale fitness oracle.
Attack fidelity is delegated to an external oracle speaking the file
protocol below.
"""

from __future__ import annotations

import os
import shlex
import subprocess
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .trace import NUM_SITES, TEST, TRAIN, VALIDATION

ORACLE_SCORE_COLUMNS = 50


class OracleProtocolError(RuntimeError):
    pass


def featurize(seq, m=100):
    """Direction counts plus the cumulative sum sampled at m positions.

    The cumulative sum is sampled at m equispaced positions over the extent
    of the nonzero cells and scale-normalized by the nonzero count, so
    trailing zeros never change the feature. The three leading entries are
    the raw +1, -1, and nonzero counts.
    """
    if m < 2:
        raise ValueError("need at least 2 sample points")
    seq = np.asarray(seq)
    nonzero = np.flatnonzero(seq)
    n_plus = int(np.count_nonzero(seq == 1))
    n_minus = int(np.count_nonzero(seq == -1))
    n = n_plus + n_minus
    out = np.zeros(3 + m, dtype=np.float64)
    out[0], out[1], out[2] = n_plus, n_minus, n
    if n == 0:
        return out
    extent = int(nonzero[-1]) + 1
    cumsum = np.cumsum(seq[:extent], dtype=np.float64)
    idx = np.ceil(np.arange(1, m + 1) * (extent / m)).astype(int) - 1
    out[3:] = cumsum[idx] / n
    return out


def featurize_all(seqs, m=100):
    return np.stack([featurize(s, m) for s in seqs])


@dataclass
class ScoreMatrix:
    """Per-sample monitored-class scores; residual mass means unmonitored."""

    labels: list
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or len(self.labels) != self.scores.shape[0]:
            raise ValueError("scores must be one row per labelled sample")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")
        if (self.scores < 0).any() or (self.scores > 1).any():
            raise ValueError("scores must lie in [0, 1]")

    @property
    def n_classes(self):
        return self.scores.shape[1]


def knn_scores(train_features, train_labels, test_features, test_labels, k=5, n_classes=NUM_SITES):
    """Score test samples by their k nearest training neighbours (Euclidean).

    A class score is the fraction of neighbours carrying that monitored
    label; unmonitored neighbours leave residual mass. Distance ties break
    toward the lower training index.
    """
    train_features = np.asarray(train_features, dtype=np.float64)
    test_features = np.asarray(test_features, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(train_features) == 0 or k > len(train_features):
        raise ValueError(f"k={k} exceeds training set size {len(train_features)}")
    classes = np.array([lab.class_index for lab in train_labels])
    scores = np.zeros((len(test_features), n_classes))
    # squared distances suffice for ranking
    train_sq = np.einsum("ij,ij->i", train_features, train_features)
    for i, x in enumerate(test_features):
        d = train_sq - 2.0 * (train_features @ x) + x @ x
        neighbours = np.argsort(d, kind="stable")[:k]
        for j in neighbours:
            if classes[j] < n_classes:  # monitored neighbour
                scores[i, classes[j]] += 1.0 / k
    return ScoreMatrix(labels=list(test_labels), scores=scores)


class PRPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float


def _predictions(sm, threshold):
    best = np.argmax(sm.scores, axis=1)  # ties break to the lower class
    top = sm.scores[np.arange(len(best)), best]
    predicted = top >= threshold
    return best, predicted


def pr_sweep(sm, thresholds=16):
    """Precision/recall at `thresholds` equispaced cutoffs over [0, 1).

    A sample is predicted as its argmax monitored class when that score
    reaches the cutoff, otherwise as unmonitored. False positives count
    every sample predicted as a monitored class other than its own true
    class, including monitored samples predicted as the wrong class.
    Cutoffs with no positive predictions yield no point.
    """
    if thresholds < 2:
        raise ValueError("need at least 2 thresholds")
    truth = np.array([lab.class_index for lab in sm.labels])
    monitored = np.array([lab.is_monitored for lab in sm.labels])
    n_monitored = int(monitored.sum())
    if n_monitored == 0:
        raise ValueError("need at least one monitored test sample")
    points = []
    for i in range(thresholds):
        t = i / thresholds
        best, predicted = _predictions(sm, t)
        tp = int((predicted & monitored & (best == truth)).sum())
        fp = int((predicted & ~(monitored & (best == truth))).sum())
        if tp + fp == 0:
            continue
        points.append(PRPoint(t, tp / (tp + fp), tp / n_monitored))
    return points


def max_recall(sm):
    """Recall at threshold zero: every sample takes its argmax class."""
    truth = np.array([lab.class_index for lab in sm.labels])
    monitored = np.array([lab.is_monitored for lab in sm.labels])
    n_monitored = int(monitored.sum())
    if n_monitored == 0:
        raise ValueError("need at least one monitored test sample")
    best = np.argmax(sm.scores, axis=1)
    return int((monitored & (best == truth)).sum()) / n_monitored


def average_points(per_fold_points):
    """Mean precision/recall per threshold across folds (per-fold data kept)."""
    by_threshold = {}
    for points in per_fold_points:
        for p in points:
            by_threshold.setdefault(p.threshold, []).append(p)
    out = []
    for t in sorted(by_threshold):
        ps = by_threshold[t]
        out.append(
            PRPoint(
                t,
                sum(p.precision for p in ps) / len(ps),
                sum(p.recall for p in ps) / len(ps),
            )
        )
    return out


# --- fold pipeline ------------------------------------------------------------


def split_indices(labels, plan):
    """Index arrays for the train/validation/test roles of one fold."""
    roles = {TRAIN: [], VALIDATION: [], TEST: []}
    for i, label in enumerate(labels):
        roles[plan.role(label)].append(i)
    return (
        np.array(roles[TRAIN], dtype=int),
        np.array(roles[VALIDATION], dtype=int),
        np.array(roles[TEST], dtype=int),
    )


def evaluate_fold(labels, features, plan, k=5, n_classes=NUM_SITES):
    """Built-in oracle on one fold; validation samples are held out entirely."""
    train_idx, _, test_idx = split_indices(labels, plan)
    return knn_scores(
        features[train_idx],
        [labels[i] for i in train_idx],
        features[test_idx],
        [labels[i] for i in test_idx],
        k=k,
        n_classes=n_classes,
    )


def evaluate_folds(labels, seqs, folds, k=5, thresholds=16, n_classes=NUM_SITES, m=100):
    """Run the builtin oracle over the given folds.

    Returns (per-fold list of (fold, points, max_recall), averaged points).
    """
    features = featurize_all(seqs, m=m)
    per_fold = []
    for plan in folds:
        sm = evaluate_fold(labels, features, plan, k=k, n_classes=n_classes)
        per_fold.append((plan.fold, pr_sweep(sm, thresholds), max_recall(sm)))
    averaged = average_points([points for _, points, _ in per_fold])
    return per_fold, averaged


def cross_classify(datasets, folds, k=5, n_classes=NUM_SITES, m=100):
    """Max-recall matrix: rows train, columns test, averaged over folds.

    Each dataset is (labels, seqs). All datasets must share the direction
    sequence length and the monitored class universe.
    """
    lengths = {len(seqs[0]) for _, seqs in datasets}
    if len(lengths) != 1:
        raise ValueError(f"datasets disagree on sequence length: {sorted(lengths)}")
    universes = {frozenset(l.site for l in labels if l.is_monitored) for labels, _ in datasets}
    if len(universes) != 1:
        raise ValueError("datasets disagree on the monitored class universe")
    features = [featurize_all(seqs, m=m) for _, seqs in datasets]
    n = len(datasets)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            recalls = []
            for plan in folds:
                train_idx, _, _ = split_indices(datasets[i][0], plan)
                _, _, test_idx = split_indices(datasets[j][0], plan)
                sm = knn_scores(
                    features[i][train_idx],
                    [datasets[i][0][x] for x in train_idx],
                    features[j][test_idx],
                    [datasets[j][0][x] for x in test_idx],
                    k=k,
                    n_classes=n_classes,
                )
                recalls.append(max_recall(sm))
            matrix[i, j] = sum(recalls) / len(recalls)
    return matrix


# --- external oracle protocol ---------------------------------------------


def write_oracle_file(path, labels, seqs):
    """One sample per line: integer class label, then the signed directions."""
    with open(path, "w", encoding="utf-8") as f:
        for label, seq in zip(labels, seqs):
            row = ",".join(str(int(v)) for v in seq)
            f.write(f"{label.class_index},{row}\n")


def run_external_oracle(oracle_cmd, workdir, train, valid, test):
    """Invoke a classifier oracle through the file protocol.

    Writes train.csv/valid.csv/test.csv into workdir, runs the oracle with
    workdir as its single argument, and validates scores.csv: one row of 50
    monitored-class scores in [0, 1] per test sample.
    """
    os.makedirs(workdir, exist_ok=True)
    for name, (labels, seqs) in (("train", train), ("valid", valid), ("test", test)):
        write_oracle_file(os.path.join(workdir, f"{name}.csv"), labels, seqs)
    cmd = shlex.split(oracle_cmd) + [str(workdir)]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise OracleProtocolError(
            f"oracle exited {result.returncode}: {result.stderr.strip()[-500:]}"
        )
    scores_path = os.path.join(workdir, "scores.csv")
    if not os.path.isfile(scores_path):
        raise OracleProtocolError("oracle wrote no scores.csv")
    rows = []
    with open(scores_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = [float(v) for v in line.strip().split(",")]
            except ValueError:
                raise OracleProtocolError(f"scores.csv line {lineno}: non-numeric score") from None
            if len(row) != ORACLE_SCORE_COLUMNS:
                raise OracleProtocolError(
                    f"scores.csv line {lineno}: expected {ORACLE_SCORE_COLUMNS}"
                    f" columns, got {len(row)}"
                )
            rows.append(row)
    test_labels = test[0]
    if len(rows) != len(test_labels):
        raise OracleProtocolError(
            f"scores.csv has {len(rows)} rows for {len(test_labels)} test samples"
        )
    scores = np.array(rows)
    if not np.isfinite(scores).all() or (scores < 0).any() or (scores > 1).any():
        raise OracleProtocolError("scores must be finite and within [0, 1]")
    if (scores.sum(axis=1) > 1.0 + 1e-6).any():
        raise OracleProtocolError("per-sample scores must sum to at most 1")
    return ScoreMatrix(labels=list(test_labels), scores=scores)
