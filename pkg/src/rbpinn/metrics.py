"""Accuracy statistics, spectra, PDFs and the linear-regression baseline.

Statistics that cannot be computed (reference mean zero up to round-off,
zero variance, mean error of a centred pressure) are reported as ``None``.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

STAT_NAMES = ("rmse", "mae", "mu_err", "sigma_err", "r_corr", "r2")
STAT_HEADERS = ("RMSE", "MAE", "mu_err_pct", "sigma_err_pct", "R_corr", "R2")


@dataclass(frozen=True)
class FieldStats:
    rmse: float
    mae: float
    mu_err: float | None
    sigma_err: float | None
    r_corr: float | None
    r2: float | None


@dataclass(frozen=True)
class AggregateStats:
    armse: float | None
    amae: float | None
    mu_err: float | None
    sigma_err: float | None
    ar_corr: float | None
    ar2: float | None


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction has {pred.size} samples, reference {ref.size}")
    if pred.size == 0:
        raise ValueError("no samples")
    return pred, ref


def center(a: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
    """Subtract the mean of ``a`` (within each group label if ``groups`` is given)."""
    a = np.asarray(a, dtype=np.float64)
    if groups is None:
        return a - a.mean()
    groups = np.asarray(groups).reshape(-1)
    if groups.shape != a.shape:
        raise ValueError("one group label per sample is required")
    _, inv = np.unique(groups, return_inverse=True)
    sums = np.bincount(inv, weights=a)
    counts = np.bincount(inv)
    return a - (sums / counts)[inv]


def field_stats(pred, ref, kind: str = "scalar", groups=None) -> FieldStats:
    """RMSE, MAE, relative mean/std errors (percent), correlation and R^2.

    ``kind='pressure'`` centres both signals first (per ``groups``, e.g. the
    snapshot index, when given) and reports the mean error as not computable.
    """
    if kind not in ("scalar", "pressure"):
        raise ValueError("kind must be 'scalar' or 'pressure'")
    pred, ref = _pair(pred, ref)
    if kind == "pressure":
        pred, ref = center(pred, groups), center(ref, groups)
    err = pred - ref
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    mr, mp = float(ref.mean()), float(pred.mean())
    sr, sp = float(ref.std()), float(pred.std())
    # a mean at round-off level (zero-mean velocity components) makes the ratio meaningless
    zero_mean = abs(mr) <= 1e-10 * float(np.sqrt(np.mean(ref * ref)))
    mu_err = None if kind == "pressure" or zero_mean else abs(mp - mr) / abs(mr) * 100.0
    sigma_err = None if sr == 0.0 else abs(sp - sr) / sr * 100.0
    if sr == 0.0 or sp == 0.0:
        r_corr = None
    else:
        r_corr = float(np.mean((pred - mp) * (ref - mr)) / (sp * sr))
    ss_tot = float(np.sum((ref - mr) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(err * err)) / ss_tot
    return FieldStats(rmse, mae, mu_err, sigma_err, r_corr, r2)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(stats: Mapping[str, FieldStats] | Sequence[FieldStats]) -> AggregateStats:
    """Arithmetic mean over fields of every statistic (not-computable entries skipped)."""
    items = list(stats.values()) if isinstance(stats, Mapping) else list(stats)
    if not items:
        raise ValueError("at least one field is required")
    return AggregateStats(*(_mean(getattr(s, n) for s in items) for n in STAT_NAMES))


def relative_l2(pred, ref, pressure: bool = False, groups=None) -> float:
    """``100 * ||pred - ref|| / ||ref||`` (pressure centred first)."""
    pred, ref = _pair(pred, ref)
    if pressure:
        pred, ref = center(pred, groups), center(ref, groups)
    nref = float(np.linalg.norm(ref))
    if nref == 0.0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(pred - ref)) / nref * 100.0


def _series(x, field: str | None) -> np.ndarray:
    if hasattr(x, "fields"):
        if field is None:
            raise ValueError("a field name is required for databases")
        x = x.fields[field]
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


def temporal_l2_profile(pred, ref, field: str | None = None, pressure: bool = False,
                        baseline=None) -> np.ndarray:
    """Per-snapshot spatial relative L2 error.

    ``pred``/``ref`` are databases (with ``field``) or arrays whose first axis
    is time. If ``baseline`` (a profile) is given the result is divided by its
    maximum.
    """
    p, r = _series(pred, field), _series(ref, field)
    if p.shape != r.shape:
        raise ValueError(f"grid mismatch: {p.shape} vs {r.shape}")
    if hasattr(pred, "times") and hasattr(ref, "times") and not np.array_equal(pred.times, ref.times):
        raise ValueError("snapshot times differ")
    if pressure:
        p = p - p.mean(axis=1, keepdims=True)
        r = r - r.mean(axis=1, keepdims=True)
    nr = np.linalg.norm(r, axis=1)
    if np.any(nr == 0.0):
        raise ValueError("a reference snapshot has zero norm")
    prof = np.linalg.norm(p - r, axis=1) / nr
    if baseline is not None:
        m = float(np.max(baseline))
        if m <= 0.0:
            raise ValueError("baseline profile maximum must be positive")
        prof = prof / m
    return prof


@dataclass
class Density:
    centers: np.ndarray
    density: np.ndarray
    edges: np.ndarray


def pdf_estimate(samples, bins: int = 50, range: tuple[float, float] | None = None) -> Density:  # noqa: A002
    """Histogram density normalized to unit integral over the sample range."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < 2 or bins < 2:
        raise ValueError("need at least 2 samples and 2 bins")
    lo, hi = range if range is not None else (float(x.min()), float(x.max()))
    if not hi > lo:
        raise ValueError("degenerate sample range")
    dens, edges = np.histogram(x, bins=bins, range=(lo, hi), density=True)
    return Density(0.5 * (edges[:-1] + edges[1:]), dens, edges)


@dataclass
class Spectrum:
    freqs: np.ndarray
    power: np.ndarray
    f_max: float


def power_spectrum(series, dt: float | None = None, times=None, window: str = "boxcar") -> Spectrum:
    """One-sided periodogram (no detrending) and its dominant non-zero frequency.

    ``f_max`` ignores the zero-frequency bin unless all power sits there.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if times is not None:
        t = np.asarray(times, dtype=np.float64).reshape(-1)
        if t.size != x.size:
            raise ValueError("one timestamp per sample is required")
        steps = np.diff(t)
        if steps.size and (np.any(steps <= 0) or np.ptp(steps) > 1e-9 * abs(steps.mean())):
            raise ValueError("timestamps are not uniformly spaced")
        dt = float(steps.mean()) if dt is None else dt
    if dt is None or not dt > 0:
        raise ValueError("a positive sampling interval is required")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    f, pxx = signal.periodogram(x, fs=1.0 / dt, window=window, detrend=False, scaling="spectrum")
    if pxx.size > 1 and np.any(pxx[1:] > 0):
        f_max = float(f[1 + int(np.argmax(pxx[1:]))])
    else:
        f_max = 0.0
    return Spectrum(f, pxx, f_max)


@dataclass
class MORResult:
    stats: dict[str, FieldStats]
    coef: dict[str, np.ndarray]
    rank: int
    rank_deficient: bool


def mor_baseline(X, targets: Mapping[str, np.ndarray], X_test=None, targets_test=None,
                 pressure: Sequence[str] = ("p",), groups_test=None) -> MORResult:
    """Ordinary least squares (with intercept) of each target on the regressors.

    Fitted on ``(X, targets)``; scored on the test pair when given, otherwise
    in-sample. A rank-deficient design is flagged, and the minimum-norm
    solution is used.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.column_stack([X, np.ones(X.shape[0])])
    rank = int(np.linalg.matrix_rank(A))
    At = A if X_test is None else np.column_stack([np.asarray(X_test, dtype=np.float64), np.ones(len(X_test))])
    stats, coefs = {}, {}
    for name, y in targets.items():
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        c, *_ = np.linalg.lstsq(A, y, rcond=None)
        coefs[name] = c
        yt = y if targets_test is None else np.asarray(targets_test[name], dtype=np.float64).reshape(-1)
        kind = "pressure" if name in pressure else "scalar"
        stats[name] = field_stats(At @ c, yt, kind, groups_test if kind == "pressure" else None)
    return MORResult(stats, coefs, rank, rank < A.shape[1])


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    return "n/a" if v is None else repr(float(v))


def stats_csv(stats: Mapping[str, FieldStats], aggregate_row: AggregateStats | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("field",) + STAT_HEADERS)
    for name, s in stats.items():
        w.writerow([name] + [_fmt(getattr(s, n)) for n in STAT_NAMES])
    if aggregate_row is not None:
        w.writerow(["aggregate"] + [_fmt(v) for v in asdict(aggregate_row).values()])
    return buf.getvalue()


def table_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) or v is None else v for v in r])
    return buf.getvalue()


def write_text(path: str | os.PathLike, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
