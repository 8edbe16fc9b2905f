import numpy as np

from .errors import DimensionError, DomainError


def _pair(preds, targets):
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise DimensionError(f"need equal non-empty vectors, got {p.shape} and {t.shape}")
    return p, t


def male(preds, targets, price_is_log_scaled=False) -> float:
    """Mean absolute difference of natural-log prices."""
    p, t = _pair(preds, targets)
    if price_is_log_scaled:
        return float(np.mean(np.abs(p - t)))
    if np.any(p <= 0) or np.any(t <= 0):
        raise DomainError("raw-scale MALE needs strictly positive prices")
    return float(np.mean(np.abs(np.log(p) - np.log(t))))


def rmse(preds, targets) -> float:
    p, t = _pair(preds, targets)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def price_metrics(preds, targets, price_is_log_scaled=False) -> tuple[float, float]:
    """(MALE, RMSE), RMSE always in native currency.

    Log-scaled inputs are exponentiated before the RMSE.
    """
    m = male(preds, targets, price_is_log_scaled)
    if price_is_log_scaled:
        return m, rmse(np.exp(preds), np.exp(targets))
    return m, rmse(preds, targets)
