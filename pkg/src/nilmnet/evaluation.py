"""Sliding-window inference, median reconstruction, and the three metrics.

Disaggregation standardizes the aggregate with the model's stored training
statistics, runs the gated forward pass over every hop-1 window, converts
each window back to watts, and combines the overlapped windows with a
per-sample median. Metrics are mean absolute error, per-period signal
aggregate error, and precision/recall/F1 of thresholded on/off states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import PowerSeries, denormalize_target, standardize_input
from .errors import DataError

REPORT_COLUMNS = ("appliance", "mae_w", "sae_w", "precision", "recall", "f1",
                  "threshold_w", "period_len_k")

DEFAULT_THRESHOLD_W = 15.0
DEFAULT_PERIOD_LEN_K = 1200

# memory cap for the median matrix, in values per chunk
_MEDIAN_CHUNK_VALUES = 8_000_000


def reconstruct_median(windows, starts, total_len):
    """Combine overlapped windows: output[t] = median of all values covering t.

    Even coverage counts take the mean of the two middle values. Every
    position in [0, total_len) must be covered by at least one window.
    """
    windows = np.asarray(windows, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    if windows.ndim != 2 or starts.ndim != 1 or windows.shape[0] != starts.size:
        raise DataError("windows must be (N, L) with one start per window")
    if windows.shape[0] == 0:
        raise DataError("no windows to reconstruct from")
    window = windows.shape[1]
    if starts.min() < 0 or (starts + window).max() > total_len:
        raise DataError("window extends outside [0, total_len)")
    if np.unique(starts).size != starts.size:
        return _median_slow(windows, starts, total_len)
    out = np.empty(total_len, dtype=np.float64)
    chunk = max(window, _MEDIAN_CHUNK_VALUES // window)
    for lo in range(0, total_len, chunk):
        hi = min(lo + chunk, total_len)
        mat = np.full((window, hi - lo), np.nan)
        for k in range(window):
            pos = starts + k
            inside = (pos >= lo) & (pos < hi)
            mat[k, pos[inside] - lo] = windows[inside, k]
        if np.all(np.isnan(mat), axis=0).any():
            uncovered = lo + int(np.flatnonzero(np.all(np.isnan(mat), axis=0))[0])
            raise DataError(f"position {uncovered} is covered by no window")
        out[lo:hi] = np.nanmedian(mat, axis=0)
    return out


def _median_slow(windows, starts, total_len):
    covering = [[] for _ in range(total_len)]
    for win, start in zip(windows, starts):
        for k, value in enumerate(win):
            covering[start + k].append(value)
    out = np.empty(total_len, dtype=np.float64)
    for t, values in enumerate(covering):
        if not values:
            raise DataError(f"position {t} is covered by no window")
        out[t] = np.median(values)
    return out


def disaggregate(model, aggregate: PowerSeries, export_attention=False,
                 batch_size=256):
    """Predict the appliance load under the aggregate, sample for sample.

    Returns (prediction PowerSeries, attention) where attention is None or
    an (alphas (N, L), starts (N,)) pair of per-window attention weights.
    The model must carry normalization metadata; the output has the same
    length, period, and origin as the input and is clamped at 0 W.
    """
    meta = model.norm_meta
    if meta is None:
        raise DataError("model has no normalization metadata; cannot disaggregate")
    window = model.window
    total = len(aggregate)
    if total < window:
        raise DataError(
            f"series of {total} samples is shorter than the {window}-sample window")
    standardized = standardize_input(aggregate.values, meta)
    views = np.lib.stride_tricks.sliding_window_view(standardized, window)
    n = views.shape[0]
    outputs = np.empty((n, window), dtype=np.float64)
    alphas = np.empty((n, window), dtype=np.float64) if export_attention else None
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        result = model.forward(views[lo:hi])
        outputs[lo:hi] = result.output
        if export_attention:
            alphas[lo:hi] = result.attention
    watts = denormalize_target(outputs, meta)
    starts = np.arange(n, dtype=np.int64)
    reconstructed = np.maximum(reconstruct_median(watts, starts, total), 0.0)
    prediction = PowerSeries(model.appliance or "prediction",
                             aggregate.period_s, aggregate.t0, reconstructed)
    return prediction, ((alphas, starts) if export_attention else None)


def mae(y, y_hat):
    """Mean absolute per-sample error, in watts."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"series lengths differ: {y.shape} vs {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


def sae(y, y_hat, period_len):
    """Mean absolute error of per-period energy sums, scaled by 1/period.

    The series is cut into consecutive periods of period_len samples; a
    trailing partial period is dropped.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"series lengths differ: {y.shape} vs {y_hat.shape}")
    if period_len < 1:
        raise DataError("period length must be >= 1")
    n_periods = y.size // period_len
    if n_periods == 0:
        raise DataError(
            f"series of {y.size} samples is shorter than one period "
            f"of {period_len}")
    usable = n_periods * period_len
    sums_true = y[:usable].reshape(n_periods, period_len).sum(axis=1)
    sums_pred = y_hat[:usable].reshape(n_periods, period_len).sum(axis=1)
    return float(np.mean(np.abs(sums_true - sums_pred) / period_len))


@dataclass(frozen=True)
class ClassificationScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def classification_scores(y, y_hat, threshold_w=DEFAULT_THRESHOLD_W):
    """Per-sample on/off scores after thresholding both series.

    Zero-denominator conventions: precision is 0 when nothing is predicted
    on, recall is 0 when nothing is truly on, F1 is 0 when both are 0.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"series lengths differ: {y.shape} vs {y_hat.shape}")
    truth = y > threshold_w
    pred = y_hat > threshold_w
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return ClassificationScores(precision, recall, f1, tp, fp, fn)


@dataclass(frozen=True)
class EvalReport:
    """All metrics for one appliance, plus the settings that produced them."""
    appliance: str
    mae_w: float
    sae_w: float
    precision: float
    recall: float
    f1: float
    threshold_w: float
    period_len_k: int
    tp: int
    fp: int
    fn: int
    sae_dropped_samples: int


def evaluate(appliance, y_true, y_pred, threshold_w=DEFAULT_THRESHOLD_W,
             period_len_k=DEFAULT_PERIOD_LEN_K) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.float64)
    scores = classification_scores(y_true, y_pred, threshold_w)
    return EvalReport(
        appliance=appliance,
        mae_w=mae(y_true, y_pred),
        sae_w=sae(y_true, y_pred, period_len_k),
        precision=scores.precision,
        recall=scores.recall,
        f1=scores.f1,
        threshold_w=threshold_w,
        period_len_k=period_len_k,
        tp=scores.tp,
        fp=scores.fp,
        fn=scores.fn,
        sae_dropped_samples=int(y_true.size % period_len_k),
    )


def write_report_csv(path, reports):
    """One flat key-value row per appliance, fixed column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.appliance, float(r.mae_w), float(r.sae_w),
                             float(r.precision), float(r.recall), float(r.f1),
                             float(r.threshold_w), int(r.period_len_k)])


def read_report_csv(path):
    """Rows of the results CSV as dictionaries keyed by column name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise DataError(f"{path}: unexpected results header {header!r}")
        rows = []
        for row in reader:
            record = dict(zip(REPORT_COLUMNS, row))
            for key in REPORT_COLUMNS[1:]:
                record[key] = float(record[key])
            rows.append(record)
    return rows
