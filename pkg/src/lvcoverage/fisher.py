"""Batch scatter statistics, the discriminant penalty, and the training objective.

Within one classifier the two scatter "classes" are the polarity groups
t in {0, 1} (structure present / absent). Traces are computed directly as
squared norms — the d x d scatter matrices are never materialized — and the
penalty gradient treats the group and global means as constants for the
current mini-batch (the usual center-loss-style convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ParameterError, StatisticsError


@dataclass(frozen=True)
class ScatterReport:
    """Per-batch scatter summary for one classifier's features."""

    class_means: np.ndarray  # (2, d): row 0 = polarity 0, row 1 = polarity 1
    global_mean: np.ndarray  # (d,)
    tr_sw: float
    tr_sb: float

    @property
    def phi(self) -> float:
        return self.tr_sw - self.tr_sb


def _check_batch(features: np.ndarray, labels: np.ndarray):
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise DimensionError(f"features must be (n, d), got ndim={features.ndim}")
    if labels.shape != (features.shape[0],):
        raise DimensionError(
            f"labels shape {labels.shape} != ({features.shape[0]},)"
        )
    if not np.isin(labels, (0, 1)).all():
        raise DomainError("labels must be 0 or 1")
    return features, labels.astype(np.int64)


def scatter_traces(features: np.ndarray, labels: np.ndarray) -> ScatterReport:
    """Within/between-class scatter traces of a feature batch.

    tr_sw sums squared deviations of samples from their polarity-group mean;
    tr_sb sums group sizes times squared deviations of group means from the
    global mean. Both polarity groups must be present.
    """
    features, labels = _check_batch(features, labels)
    n = features.shape[0]
    if n < 2:
        raise StatisticsError(f"need at least 2 samples, got {n}")
    means = []
    tr_sw = 0.0
    tr_sb = 0.0
    global_mean = features.mean(axis=0)
    for group in (0, 1):
        rows = features[labels == group]
        if rows.shape[0] == 0:
            raise StatisticsError(
                f"polarity group {group} is empty; rebalance the batch"
            )
        m = rows.mean(axis=0)
        means.append(m)
        tr_sw += float(((rows - m) ** 2).sum())
        tr_sb += rows.shape[0] * float(((m - global_mean) ** 2).sum())
    return ScatterReport(
        class_means=np.stack(means),
        global_mean=global_mean,
        tr_sw=tr_sw,
        tr_sb=tr_sb,
    )


def fisher_grad(features: np.ndarray, labels: np.ndarray,
                report: ScatterReport) -> np.ndarray:
    """Gradient of 0.5*(tr_sw - tr_sb) w.r.t. each feature row, means frozen.

    With the means held fixed the between-class term contributes nothing, so
    row j is simply F_j - m_group(j). Each group's rows therefore sum to zero.
    """
    features, labels = _check_batch(features, labels)
    if report.class_means.shape[1] != features.shape[1]:
        raise DimensionError("report feature width differs from batch")
    return features - report.class_means[labels]


def bce_loss(a, y):
    """Negative log-likelihood of a Bernoulli prediction, elementwise.

    ``a`` must lie strictly inside (0, 1); the stable sigmoid upstream
    guarantees that for network outputs.
    """
    a = np.asarray(a, dtype=np.result_type(a, np.float64))
    y = np.asarray(y)
    if np.any(a <= 0) or np.any(a >= 1):
        raise DomainError("probabilities must lie in the open interval (0, 1)")
    return -(y * np.log(a) + (1 - y) * np.log1p(-a))


def bce_grad(a, y):
    """Gradient of the Bernoulli NLL with respect to the pre-sigmoid logit."""
    return np.asarray(a) - np.asarray(y)


def objective_components(batch_losses, weights, lam: float, eta: float,
                         report: ScatterReport | None):
    """The three terms of the training objective, separately.

    Returns ``(data, l2, fisher)`` where data is the batch-mean NLL, l2 is
    0.5*lam*sum(||W||^2) over all conv and dense weights (biases excluded),
    and fisher is 0.5*eta*(tr_sw - tr_sb).
    """
    if not 0 <= lam <= 1:
        raise ParameterError(f"lambda must be in [0, 1], got {lam}")
    if not 0 <= eta <= 1:
        raise ParameterError(f"eta must be in [0, 1], got {eta}")
    data = float(np.mean(batch_losses))
    l2 = 0.5 * lam * sum(float((w.astype(np.float64) ** 2).sum()) for w in weights)
    fisher = 0.5 * eta * (report.tr_sw - report.tr_sb) if report is not None else 0.0
    return data, l2, fisher


def total_objective(batch_losses, weights, lam: float, eta: float,
                    report: ScatterReport | None) -> float:
    """Composite objective: mean NLL + L2 penalty + discriminant penalty."""
    data, l2, fisher = objective_components(batch_losses, weights, lam, eta, report)
    return data + l2 + fisher
