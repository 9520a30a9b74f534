"""POS tag distributions and their learnable 64-dimensional projection.

Distributions come from a sidecar TSV (`sentence_id<TAB>p1 p2 ... p9`,
space-separated floats) standing in for an external tagger, or from the
bundled uniform tagger. The nine categories are positional (index 0..8).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .nn import NoRecordedForward

POS_DIM = 9
POS_PROJ_DIM = 64


class WrongArity(ValueError):
    pass


class NegativeEntry(ValueError):
    pass


class DuplicateId(ValueError):
    pass


def normalize_distribution(values) -> np.ndarray:
    """Renormalize 9 non-negative weights to a probability vector."""
    probs = np.asarray(values, dtype=np.float64)
    if probs.shape != (POS_DIM,):
        raise WrongArity(f"expected {POS_DIM} values, got {probs.shape}")
    if (probs < 0).any():
        raise NegativeEntry(f"negative POS weight in {probs.tolist()}")
    total = probs.sum()
    if total == 0:
        return np.full(POS_DIM, 1.0 / POS_DIM)
    return probs / total


def load_pos_table(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise WrongArity(f"{path}:{lineno}: expected id<TAB>9 floats")
            sid, payload = cols
            if sid in table:
                raise DuplicateId(f"{path}:{lineno}: duplicate sentence_id {sid!r}")
            try:
                values = [float(v) for v in payload.split()]
            except ValueError:
                raise WrongArity(f"{path}:{lineno}: non-numeric POS weight") from None
            try:
                table[sid] = normalize_distribution(values)
            except (WrongArity, NegativeEntry) as err:
                raise type(err)(f"{path}:{lineno}: {err}") from None
    return table


def uniform_tagger(sentence_ids: list[str]) -> dict[str, np.ndarray]:
    """Trivial tagger: every sentence gets the uniform distribution."""
    uniform = np.full(POS_DIM, 1.0 / POS_DIM)
    return {sid: uniform.copy() for sid in sentence_ids}


def project_pos(probs: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """relu(weight @ probs + bias); probs may be (9,) or a (B, 9) batch.

    Returns (output, cache) for the matching backward.
    """
    pre = probs @ weight.T + bias
    out = np.maximum(pre, 0.0)
    return out, (probs, pre > 0.0)


def project_pos_backward(cache, d_out: np.ndarray):
    """Gradients (d_weight, d_bias) of the linear+ReLU projection."""
    if cache is None:
        raise NoRecordedForward("project_pos has not been run")
    probs, active = cache
    dpre = d_out * active
    probs2 = np.atleast_2d(probs)
    dpre2 = np.atleast_2d(dpre)
    d_weight = dpre2.T @ probs2
    d_bias = dpre2.sum(axis=0)
    return d_weight, d_bias
