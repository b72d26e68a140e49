"""Input checks and the sealed-label audit trail."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


def check_array(X, *, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return X


def check_X_y(X, y):
    X = check_array(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} entries")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or infinite values")
    return X, y


def check_n_features(X, expected: int, what="model") -> np.ndarray:
    X = check_array(X)
    if X.shape[1] != expected:
        raise ValueError(f"{what} expects {expected} features, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class AccessRecord:
    setting: str
    purpose: str
    fingerprint: str


class AuditLog:
    """Thread-safe append-only record of sealed-label reads and standardizer fits."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[AccessRecord] = []

    def record(self, setting, purpose, fingerprint=""):
        with self._lock:
            self._records.append(AccessRecord(setting, purpose, fingerprint))

    def records(self, setting=None, purpose=None) -> list[AccessRecord]:
        with self._lock:
            return [r for r in self._records
                    if (setting is None or r.setting == setting)
                    and (purpose is None or r.purpose == purpose)]

    def clear(self):
        with self._lock:
            self._records.clear()


AUDIT = AuditLog()


def fingerprint(X) -> str:
    """Cheap content hash used to match a fitted standardizer to the data it saw."""
    import hashlib

    a = np.ascontiguousarray(np.asarray(X, dtype=float))
    return hashlib.blake2b(a.tobytes() + str(a.shape).encode(), digest_size=12).hexdigest()
