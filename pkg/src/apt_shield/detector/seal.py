"""Encrypted detection status: the detector's verdict on a window, sealed to
the consortium key so only the peers acting jointly can read it."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import NotFittedError

from ..crypto import CiphertextEnvelope, GroupParams, encrypt

_STATUS = struct.Struct(">Bd")
LABELS = {0: "attack", 1: "normal"}


@dataclass(frozen=True)
class DetectionStatus:
    label: int  # 0 attack, 1 normal
    confidence: float

    @property
    def is_attack(self) -> bool:
        return self.label == 0

    def to_bytes(self) -> bytes:
        return _STATUS.pack(self.label, self.confidence)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DetectionStatus":
        if len(data) != _STATUS.size:
            raise ValueError("malformed detection status")
        label, conf = _STATUS.unpack(data)
        if label not in LABELS:
            raise ValueError("malformed detection status")
        return cls(label, conf)


def detect(classifier, window) -> DetectionStatus:
    """Classify a single row (d,) or window (d, width)."""
    if not hasattr(classifier, "model_"):
        raise NotFittedError("detector has not been trained")
    x = np.asarray(window, dtype=np.float64)[None, ...]
    proba = classifier.predict_proba(x)[0]
    k = int(np.argmax(proba))
    return DetectionStatus(int(classifier.classes_[k]), float(proba[k]))


def detect_and_seal(classifier, window, params: GroupParams, consortium_pub: int,
                    rng=None) -> bytes:
    """Detection status encrypted to the consortium key, ready for a transaction."""
    status = detect(classifier, window)
    return encrypt(params, consortium_pub, status.to_bytes(), rng).to_bytes()


def open_status(state, sealed: bytes) -> DetectionStatus:
    """Joint consortium decryption (``state`` is a ``KgdState``).

    Raises :class:`apt_shield.crypto.DecryptionError` on tampering.
    """
    return DetectionStatus.from_bytes(state.decrypt(CiphertextEnvelope.from_bytes(sealed)))
