"""Agreement and performance statistics.

Cohen's kappa with the standard interpretation bands, pairwise kappa
matrices with median/IQR summaries over the label set, per-label, micro and
macro F1, percentile-bootstrap confidence intervals with a documented seed
protocol, per-label threshold selection, and prevalence tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .schema import DataContractError, LabelSchema, PredictionSet, DEFAULT_SCHEMA

BANDS = ("poor", "slight", "fair", "moderate", "substantial", "almost perfect")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    band: str
    label: str | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class MetricWithCI:
    point: float
    ci_low: float
    ci_high: float
    resamples: int
    seed: int
    method: str = "percentile"  # bootstrap variant used for the interval


def kappa_band(k: float) -> str:
    """Interpretation band for a kappa value.

    <0 poor; [0, 0.20] slight; (0.20, 0.40] fair; (0.40, 0.60] moderate;
    (0.60, 0.80] substantial; (0.80, 1.0] almost perfect.
    """
    if not (-1.0 <= k <= 1.0):
        raise DataContractError(f"kappa {k} outside [-1, 1]")
    if k < 0:
        return "poor"
    if k <= 0.20:
        return "slight"
    if k <= 0.40:
        return "fair"
    if k <= 0.60:
        return "moderate"
    if k <= 0.80:
        return "substantial"
    return "almost perfect"


def cohen_kappa(a: Sequence[int], b: Sequence[int], label: str | None = None) -> KappaResult:
    """Chance-corrected agreement between two aligned binary series.

    kappa = (p_o - p_e) / (1 - p_e) with p_o the observed agreement fraction
    and p_e the marginal-product chance agreement. When p_e = 1 (both series
    the same constant) the result is degenerate: kappa = 1 if the series
    agree everywhere, else 0.
    """
    if len(a) != len(b):
        raise DataContractError(f"series length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise DataContractError("kappa needs at least one observation")
    xs = np.asarray(a, dtype=np.int64)
    ys = np.asarray(b, dtype=np.int64)
    if not (np.isin(xs, (0, 1)).all() and np.isin(ys, (0, 1)).all()):
        raise DataContractError("kappa series must be binary 0/1")
    n = len(xs)
    n11 = int(np.sum((xs == 1) & (ys == 1)))
    n00 = int(np.sum((xs == 0) & (ys == 0)))
    a_pos = int(np.sum(xs))
    b_pos = int(np.sum(ys))
    pe_num = a_pos * b_pos + (n - a_pos) * (n - b_pos)
    p_o = (n11 + n00) / n
    if pe_num == n * n:
        k = 1.0 if p_o == 1.0 else 0.0
        return KappaResult(kappa=k, band=kappa_band(k), label=label, degenerate=True)
    p_e = pe_num / (n * n)
    k = (p_o - p_e) / (1.0 - p_e)
    k = min(1.0, max(-1.0, k))
    return KappaResult(kappa=k, band=kappa_band(k), label=label)


@dataclass
class PairKappa:
    model_a: str
    model_b: str
    per_label: dict[str, KappaResult] = field(default_factory=dict)
    median: float | None = None
    iqr_low: float | None = None
    iqr_high: float | None = None
    n_reports: int = 0
    available: bool = True


def pairwise_kappa_matrix(
    preds: list[PredictionSet], schema: LabelSchema | None = None
) -> list[PairKappa]:
    """Per-label kappa for every unordered model pair, with the pair's median
    and (25th, 75th) percentile IQR across the label set.

    Each pair is evaluated on the reports both members labeled; a pair with
    no shared reports is marked unavailable.
    """
    schema = schema or DEFAULT_SCHEMA
    if len(preds) < 2:
        raise DataContractError("pairwise kappa needs at least 2 prediction sets")
    pairs: list[PairKappa] = []
    for i in range(len(preds)):
        for j in range(i + 1, len(preds)):
            pa, pb = preds[i], preds[j]
            shared = sorted(pa.covered_ids() & pb.covered_ids())
            pair = PairKappa(model_a=pa.labeler_name, model_b=pb.labeler_name,
                             n_reports=len(shared))
            if not shared:
                pair.available = False
                pairs.append(pair)
                continue
            for label in schema.labels:
                series_a = [pa.predictions[rid].decisions[label] for rid in shared]
                series_b = [pb.predictions[rid].decisions[label] for rid in shared]
                pair.per_label[label] = cohen_kappa(series_a, series_b, label=label)
            values = np.array([r.kappa for r in pair.per_label.values()])
            pair.median = float(np.percentile(values, 50))
            pair.iqr_low = float(np.percentile(values, 25))
            pair.iqr_high = float(np.percentile(values, 75))
            pairs.append(pair)
    return pairs


Truth = Mapping[str, Mapping[str, int]]


def align_matrices(
    pred: PredictionSet,
    truth: Truth,
    labels: Sequence[str],
) -> tuple[list[str], np.ndarray, np.ndarray, list[str]]:
    """Align predictions and reference labels into matrices over sorted ids.

    Reports the labeler errored on are excluded from both sides and returned
    as the coverage note; a truth id the labeler never saw at all is a
    contract failure.
    """
    error_ids = pred.error_ids()
    unknown = sorted(set(truth) - pred.covered_ids() - error_ids)
    if unknown:
        raise DataContractError(
            f"reference ids absent from prediction set: {unknown[:5]}"
        )
    excluded = sorted(set(truth) & error_ids)
    ids = sorted(set(truth) - error_ids)
    y_pred = np.array(
        [[pred.predictions[rid].decisions[lbl] for lbl in labels] for rid in ids],
        dtype=np.int64,
    ).reshape(len(ids), len(labels))
    y_true = np.array(
        [[truth[rid][lbl] for lbl in labels] for rid in ids], dtype=np.int64
    ).reshape(len(ids), len(labels))
    return ids, y_pred, y_true, excluded


def _f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 2 * tp / denom, False


@dataclass
class F1Report:
    labels: list[str]
    per_label: dict[str, float]
    counts: dict[str, ConfusionCounts]
    macro: float
    micro: float
    zero_division_labels: set[str]
    excluded_errored: list[str]
    n_evaluated: int


def f1_scores(
    pred: PredictionSet,
    truth: Truth,
    schema: LabelSchema | None = None,
    labels: Sequence[str] | None = None,
) -> F1Report:
    """Per-label, macro and micro F1 of a prediction set against reference labels.

    Per-label F1 = 2TP / (2TP + FP + FN), defined as 0 (and flagged) when the
    denominator is zero; macro is the unweighted mean over labels; micro pools
    the confusion counts across labels.
    """
    schema = schema or DEFAULT_SCHEMA
    labels = list(labels) if labels is not None else list(schema.labels)
    ids, y_pred, y_true, excluded = align_matrices(pred, truth, labels)
    per_label: dict[str, float] = {}
    counts: dict[str, ConfusionCounts] = {}
    zero_division: set[str] = set()
    for idx, label in enumerate(labels):
        p, t = y_pred[:, idx], y_true[:, idx]
        cc = ConfusionCounts(
            tp=int(np.sum((p == 1) & (t == 1))),
            fp=int(np.sum((p == 1) & (t == 0))),
            fn=int(np.sum((p == 0) & (t == 1))),
            tn=int(np.sum((p == 0) & (t == 0))),
        )
        counts[label] = cc
        score, degenerate = _f1_from_counts(cc.tp, cc.fp, cc.fn)
        per_label[label] = score
        if degenerate:
            zero_division.add(label)
    macro = float(np.mean([per_label[lbl] for lbl in labels])) if labels else 0.0
    tp = sum(c.tp for c in counts.values())
    fp = sum(c.fp for c in counts.values())
    fn = sum(c.fn for c in counts.values())
    micro, _ = _f1_from_counts(tp, fp, fn)
    return F1Report(
        labels=labels,
        per_label=per_label,
        counts=counts,
        macro=macro,
        micro=micro,
        zero_division_labels=zero_division,
        excluded_errored=excluded,
        n_evaluated=len(ids),
    )


MatrixMetric = Callable[[np.ndarray, np.ndarray], float]


def macro_f1_metric(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    scores = []
    for idx in range(y_pred.shape[1]):
        tp = int(np.sum((y_pred[:, idx] == 1) & (y_true[:, idx] == 1)))
        fp = int(np.sum((y_pred[:, idx] == 1) & (y_true[:, idx] == 0)))
        fn = int(np.sum((y_pred[:, idx] == 0) & (y_true[:, idx] == 1)))
        scores.append(_f1_from_counts(tp, fp, fn)[0])
    return float(np.mean(scores))


def micro_f1_metric(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    return _f1_from_counts(tp, fp, fn)[0]


def label_f1_metric(column: int) -> MatrixMetric:
    def metric(y_pred: np.ndarray, y_true: np.ndarray) -> float:
        return micro_f1_metric(y_pred[:, [column]], y_true[:, [column]])

    return metric


def bootstrap_resample_indices(seed: int, index: int, n: int) -> np.ndarray:
    """Resample protocol: stream (seed, index) drawing n ids with replacement.

    Fixed protocol so independent implementations reproduce identical CIs:
    ``default_rng((seed, index)).integers(0, n, size=n)`` over the sorted
    evaluated report ids.
    """
    return np.random.default_rng((seed, index)).integers(0, n, size=n)


def bootstrap_ci(
    metric: MatrixMetric,
    pred: PredictionSet,
    truth: Truth,
    resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    schema: LabelSchema | None = None,
    labels: Sequence[str] | None = None,
) -> MetricWithCI:
    """Percentile-bootstrap confidence interval for a metric.

    Report ids are resampled with replacement (same size) per the documented
    seed protocol; the CI is the (2.5th, 97.5th) percentile pair at the
    default level. A metric undefined on a resample is recorded under the
    zero-division convention (the metric functions return 0), never dropped.
    """
    if resamples < 1:
        raise DataContractError("resamples must be >= 1")
    if not (0.0 < level < 1.0):
        raise DataContractError("level must be inside (0, 1)")
    schema = schema or DEFAULT_SCHEMA
    labels = list(labels) if labels is not None else list(schema.labels)
    ids, y_pred, y_true, _ = align_matrices(pred, truth, labels)
    n = len(ids)
    if n == 0:
        raise DataContractError("no evaluable reports after exclusions")
    point = metric(y_pred, y_true)
    values = np.empty(resamples)
    for i in range(resamples):
        idx = bootstrap_resample_indices(seed, i, n)
        values[i] = metric(y_pred[idx], y_true[idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return MetricWithCI(
        point=float(point),
        ci_low=float(lo),
        ci_high=float(hi),
        resamples=resamples,
        seed=seed,
    )


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    f1: float
    degenerate: bool = False


def select_threshold(scores: Sequence[float], truth: Sequence[int]) -> ThresholdResult:
    """Pick the binarization threshold maximizing F1 (prediction = score >= t).

    Candidates are the midpoints between adjacent distinct sorted scores plus
    0 and 1; ties resolve to the lowest threshold. All-constant scores return
    0.5 with the degeneracy flag.
    """
    if len(scores) != len(truth):
        raise DataContractError("scores and truth must align")
    if len(scores) == 0:
        raise DataContractError("threshold selection needs data")
    xs = np.asarray(scores, dtype=float)
    ts = np.asarray(truth, dtype=np.int64)
    if np.any((xs < 0) | (xs > 1)):
        raise DataContractError("scores must lie in [0, 1]")
    distinct = np.unique(xs)
    if len(distinct) == 1:
        return ThresholdResult(threshold=0.5, f1=_f1_at(xs, ts, 0.5), degenerate=True)
    candidates = [0.0] + [
        float((a + b) / 2.0) for a, b in zip(distinct, distinct[1:])
    ] + [1.0]
    best_t, best_f1 = None, -1.0
    for t in sorted(set(candidates)):
        score = _f1_at(xs, ts, t)
        if score > best_f1:
            best_t, best_f1 = t, score
    return ThresholdResult(threshold=best_t, f1=best_f1)


def _f1_at(scores: np.ndarray, truth: np.ndarray, threshold: float) -> float:
    pred = (scores >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    return _f1_from_counts(tp, fp, fn)[0]


def select_thresholds(
    scores_by_label: Mapping[str, Sequence[float]],
    truth_by_label: Mapping[str, Sequence[int]],
) -> dict[str, ThresholdResult]:
    missing = sorted(set(scores_by_label) ^ set(truth_by_label))
    if missing:
        raise DataContractError(f"scores/truth label mismatch: {missing}")
    return {
        label: select_threshold(scores_by_label[label], truth_by_label[label])
        for label in scores_by_label
    }


@dataclass(frozen=True)
class PrevalenceRow:
    label: str
    positives: int
    rate: float


def prevalence_table(
    labels_by_report: Truth, schema: LabelSchema | None = None
) -> list[PrevalenceRow]:
    """Per-label positive counts and rates over a labeled report collection."""
    schema = schema or DEFAULT_SCHEMA
    n = len(labels_by_report)
    rows = []
    for label in schema.labels:
        count = sum(int(v.get(label, 0)) for v in labels_by_report.values())
        rows.append(PrevalenceRow(label=label, positives=count, rate=count / n if n else 0.0))
    return rows
