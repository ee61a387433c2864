"""ROC / PR estimation, DeLong inference and operating points.

Conventions, fixed across the module:

- classification rule: ``score >= threshold`` predicts positive;
- tied scores are grouped, one curve point per distinct score, which
  matches the pair statistic's half-credit for ties;
- the empirical ROC always contains the endpoints (sens, spec) = (0, 1)
  (threshold above every score) and (1, 0) (threshold at the minimum).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from .errors import DegenerateInputError, ShapeError


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: int
    scan_id: str = ""
    patient_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite; got {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0/1; got {self.label}")


@dataclass(frozen=True)
class RocCurve:
    """Points ordered by descending threshold: sensitivity rises from 0
    to 1 while specificity falls from 1 to 0."""

    thresholds: np.ndarray  # leading +inf sentinel for the all-negative rule
    sensitivity: np.ndarray
    specificity: np.ndarray

    @property
    def fpr(self):
        return 1.0 - self.specificity


@dataclass(frozen=True)
class AucEstimate:
    auc: float
    variance: float
    ci_low: float
    ci_high: float
    alpha: float
    degenerate: bool = False


def _split_scores(samples):
    scores = np.asarray([s.score for s in samples], dtype=np.float64)
    labels = np.asarray([s.label for s in samples])
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateInputError(
            f"need both classes; got {pos.size} pos / {neg.size} neg"
        )
    return pos, neg


def roc_curve(samples) -> RocCurve:
    """Empirical ROC over every distinct score threshold."""
    pos, neg = _split_scores(samples)
    cuts = np.unique(np.concatenate([pos, neg]))[::-1]
    thresholds = np.concatenate([[np.inf], cuts])
    sens = np.empty(thresholds.size)
    spec = np.empty(thresholds.size)
    for i, t in enumerate(thresholds):
        sens[i] = (pos >= t).mean()
        spec[i] = (neg < t).mean()
    return RocCurve(thresholds, sens, spec)


def auc_trapezoid(curve: RocCurve) -> float:
    """Trapezoidal area under the (FPR, sensitivity) polyline."""
    return float(np.trapezoid(curve.sensitivity, curve.fpr))


def auc_pair_count(samples) -> float:
    """Oracle AUC: (#concordant + #tied/2) / (#pos * #neg), exactly."""
    pos, neg = _split_scores(samples)
    twice = 0
    for p in pos:
        for q in neg:
            if p > q:
                twice += 2
            elif p == q:
                twice += 1
    return float(Fraction(twice, 2 * pos.size * neg.size))


def _pr_points(samples):
    """Cumulative (tp, fp) per distinct descending threshold."""
    pos, neg = _split_scores(samples)
    cuts = np.unique(np.concatenate([pos, neg]))[::-1]
    tp = np.array([(pos >= t).sum() for t in cuts], dtype=np.int64)
    fp = np.array([(neg >= t).sum() for t in cuts], dtype=np.int64)
    return tp, fp, pos.size


def pr_auc_davis_goadrich(samples) -> float:
    """PR AUC with nonlinear interpolation between achievable points.

    Between consecutive points whose true-positive counts differ by
    more than one, intermediate points step TP one unit at a time with
    FP incremented linearly; precision is then integrated over recall
    with trapezoids.  The curve is anchored at recall 0 with the
    precision of its lowest-recall point.
    """
    tp, fp, n_pos = _pr_points(samples)
    if n_pos == 0:
        raise DegenerateInputError("PR AUC requires at least one positive")
    recalls = [0.0]
    precisions = [None]  # back-filled with the first real precision
    prev_tp, prev_fp = 0, 0
    for tpb, fpb in zip(tp, fp):
        dtp = tpb - prev_tp
        if dtp > 0:
            slope = (fpb - prev_fp) / dtp
            for x in range(1, dtp + 1):
                tpx = prev_tp + x
                fpx = prev_fp + x * slope
                recalls.append(tpx / n_pos)
                precisions.append(tpx / (tpx + fpx))
        else:
            recalls.append(tpb / n_pos)
            precisions.append(tpb / (tpb + fpb) if tpb + fpb else 0.0)
        prev_tp, prev_fp = tpb, fpb
    first = next((p for p in precisions if p is not None), 0.0)
    precisions[0] = first
    r = np.asarray(recalls)
    p = np.asarray(precisions, dtype=np.float64)
    return float(np.trapezoid(p, r))


def pr_auc_linear(samples) -> float:
    """Naive PR AUC: straight-line trapezoids between achievable points
    only.  Kept as the comparison baseline for the interpolated value."""
    tp, fp, n_pos = _pr_points(samples)
    keep = tp > 0
    r = tp[keep] / n_pos
    p = tp[keep] / (tp[keep] + fp[keep])
    if r.size == 0:
        return 0.0
    r = np.concatenate([[0.0], r])
    p = np.concatenate([[p[0]], p])
    return float(np.trapezoid(p, r))


def _placement_components(pos, neg):
    # V10[i] = P(pos_i beats a random negative), V01[j] symmetric.
    cmp = (pos[:, None] > neg[None, :]).astype(np.float64)
    cmp += 0.5 * (pos[:, None] == neg[None, :])
    return cmp.mean(axis=1), cmp.mean(axis=0), cmp.mean()


def delong_ci(samples, alpha=0.05) -> AucEstimate:
    """Nonparametric AUC variance and normal-approximation CI."""
    pos, neg = _split_scores(samples)
    if pos.size < 2 or neg.size < 2:
        raise DegenerateInputError("DeLong needs >= 2 samples per class")
    v10, v01, auc = _placement_components(pos, neg)
    var = v10.var(ddof=1) / pos.size + v01.var(ddof=1) / neg.size
    degenerate = var <= 0.0
    z = norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(max(var, 0.0))
    return AucEstimate(
        auc=float(auc),
        variance=float(max(var, 0.0)),
        ci_low=float(max(0.0, auc - half)),
        ci_high=float(min(1.0, auc + half)),
        alpha=alpha,
        degenerate=bool(degenerate),
    )


def delong_compare(samples_a, samples_b, paired=True, alpha=0.05):
    """Difference of two AUCs with a DeLong z-test.

    In paired mode both score sets must cover the same cases (matched
    by scan_id then patient_id) and the covariance of the estimators is
    taken from the shared placement components; in unpaired mode the
    covariance term is zero.  Returns (delta, (lo, hi), p).
    """
    if paired:
        key = lambda s: (s.scan_id, s.patient_id)
        map_a = {key(s): s for s in samples_a}
        map_b = {key(s): s for s in samples_b}
        if len(map_a) != len(samples_a) or len(map_b) != len(samples_b):
            raise ShapeError("paired comparison requires unique sample ids")
        if set(map_a) != set(map_b):
            raise ShapeError("paired comparison requires identical case sets")
        keys = sorted(map_a)
        if any(map_a[k].label != map_b[k].label for k in keys):
            raise ShapeError("paired samples disagree on labels")
        labels = np.asarray([map_a[k].label for k in keys])
        sa = np.asarray([map_a[k].score for k in keys])
        sb = np.asarray([map_b[k].score for k in keys])
        pos_mask = labels == 1
        if pos_mask.all() or (~pos_mask).all():
            raise DegenerateInputError("need both classes")
        va10, va01, auc_a = _placement_components(sa[pos_mask], sa[~pos_mask])
        vb10, vb01, auc_b = _placement_components(sb[pos_mask], sb[~pos_mask])
        m, n = int(pos_mask.sum()), int((~pos_mask).sum())
        var_a = va10.var(ddof=1) / m + va01.var(ddof=1) / n
        var_b = vb10.var(ddof=1) / m + vb01.var(ddof=1) / n
        cov = (np.cov(va10, vb10, ddof=1)[0, 1] / m
               + np.cov(va01, vb01, ddof=1)[0, 1] / n)
        var_diff = var_a + var_b - 2.0 * cov
    else:
        est_a = delong_ci(samples_a, alpha)
        est_b = delong_ci(samples_b, alpha)
        auc_a, auc_b = est_a.auc, est_b.auc
        var_diff = est_a.variance + est_b.variance

    delta = float(auc_a - auc_b)
    var_diff = max(float(var_diff), 0.0)
    z_crit = norm.ppf(1.0 - alpha / 2.0)
    se = np.sqrt(var_diff)
    if se == 0.0:
        p = 1.0 if delta == 0.0 else 0.0
    else:
        p = float(2.0 * norm.sf(abs(delta) / se))
    return delta, (delta - z_crit * se, delta + z_crit * se), p


def operating_point(curve: RocCurve, target: float = 0.80, which: str = "sensitivity"):
    """Threshold achieving the smallest sensitivity (or specificity)
    at or above ``target`` on the empirical curve, no interpolation.

    Ties at the chosen value go to the point with the better partner
    metric.  Returns (threshold, sensitivity, specificity, clipped);
    ``clipped`` flags an unattainable target, in which case the best
    extreme point is returned.
    """
    if which not in ("sensitivity", "specificity"):
        raise ValueError(f"which must be sensitivity|specificity; got {which!r}")
    primary = curve.sensitivity if which == "sensitivity" else curve.specificity
    partner = curve.specificity if which == "sensitivity" else curve.sensitivity
    ok = primary >= target
    clipped = not ok.any()
    if clipped:
        ok = primary >= primary.max()
    best_primary = primary[ok].min()
    cand = ok & (primary == best_primary)
    idx = np.flatnonzero(cand)[np.argmax(partner[cand])]
    return (
        float(curve.thresholds[idx]),
        float(curve.sensitivity[idx]),
        float(curve.specificity[idx]),
        bool(clipped),
    )


def patient_aggregate(samples, mode: str = "mean"):
    """Collapse scan-level scores to one score per patient."""
    if mode not in ("mean", "max"):
        raise ValueError(f"mode must be mean|max; got {mode!r}")
    by_patient: dict[str, list[ScoredSample]] = {}
    for s in samples:
        by_patient.setdefault(s.patient_id, []).append(s)
    out = []
    for pid in sorted(by_patient):
        group = by_patient[pid]
        labels = {g.label for g in group}
        if len(labels) != 1:
            raise ValueError(f"patient {pid!r} has conflicting labels")
        scores = [g.score for g in group]
        agg = float(np.mean(scores)) if mode == "mean" else float(np.max(scores))
        out.append(ScoredSample(agg, group[0].label, scan_id="", patient_id=pid))
    return out
