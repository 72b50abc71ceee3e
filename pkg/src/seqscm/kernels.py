"""Numeric kernels with a numba path and a pure-numpy path.

The numba versions are used when numba imports cleanly and the environment
variable ``SEQSCM_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are always
importable as ``*_nb`` / ``*_np`` so tests and ``benchmarks/bench_kernels.py``
can compare them directly.

Conventions shared by every kernel
----------------------------------
Variables are addressed by their position in the topological order.  A model
is flattened into

* ``cards[v]``            number of values of variable ``v``
* ``par_ptr, par_idx``    CSR-style parent lists, ``par_idx[par_ptr[v]:par_ptr[v+1]]``
                          ascending (topological) positions
* ``cpt_ptr, cpt_flat``   conditional tables; rows for ``v`` start at ``cpt_ptr[v]``,
                          row ``r`` is the parent configuration in mixed radix with
                          the first parent most significant, each row has
                          ``cards[v]`` entries
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _flag_disabled() -> bool:
    return os.environ.get("SEQSCM_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


# --------------------------------------------------------------------------
# inverse-CDF draw
# --------------------------------------------------------------------------


def draw_index(probs, u: float) -> int:
    """Inverse-CDF draw of one index from ``probs`` using the uniform ``u``.

    Accumulates left to right, so zero-probability entries are never chosen.
    If rounding leaves ``u`` above the accumulated total, the last index with
    positive mass is returned.
    """
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if u < acc:
            return k
    for k in range(len(probs) - 1, -1, -1):
        if probs[k] > 0.0:
            return k
    return len(probs) - 1


@njit(cache=True, nogil=True)
def _draw_row(cpt_flat, start, card, u):
    acc = 0.0
    for k in range(card):
        acc += cpt_flat[start + k]
        if u < acc:
            return k
    for k in range(card - 1, -1, -1):
        if cpt_flat[start + k] > 0.0:
            return k
    return card - 1


# --------------------------------------------------------------------------
# joint enumeration
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def joint_table_nb(cards, par_ptr, par_idx, cpt_ptr, cpt_flat):
    n_vars = cards.shape[0]
    total = 1
    for v in range(n_vars):
        total *= cards[v]
    out = np.empty(total, dtype=np.float64)
    digits = np.zeros(n_vars, dtype=np.int64)
    for cell in range(total):
        rem = cell
        for v in range(n_vars - 1, -1, -1):
            digits[v] = rem % cards[v]
            rem //= cards[v]
        prob = 1.0
        for v in range(n_vars):
            row = 0
            for j in range(par_ptr[v], par_ptr[v + 1]):
                p = par_idx[j]
                row = row * cards[p] + digits[p]
            prob *= cpt_flat[cpt_ptr[v] + row * cards[v] + digits[v]]
            if prob == 0.0:
                break
        out[cell] = prob
    return out


def joint_table_np(cards, par_ptr, par_idx, cpt_ptr, cpt_flat):
    n_vars = len(cards)
    joint = np.ones(tuple(int(c) for c in cards), dtype=np.float64)
    for v in range(n_vars):
        parents = [int(p) for p in par_idx[par_ptr[v]:par_ptr[v + 1]]]
        rows = 1
        for p in parents:
            rows *= int(cards[p])
        size = rows * int(cards[v])
        factor = np.asarray(cpt_flat[cpt_ptr[v]:cpt_ptr[v] + size])
        shape = [1] * n_vars
        for p in parents:
            shape[p] = int(cards[p])
        shape[v] = int(cards[v])
        joint = joint * factor.reshape(shape)
    return joint.ravel()


# --------------------------------------------------------------------------
# batch ancestral sampling
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def sample_batch_nb(cards, par_ptr, par_idx, cpt_ptr, cpt_flat, base, uniforms):
    n_units, n_vars = base.shape
    out = base.copy()
    for i in range(n_units):
        used = 0
        for v in range(n_vars):
            if out[i, v] >= 0:
                continue
            row = 0
            for j in range(par_ptr[v], par_ptr[v + 1]):
                p = par_idx[j]
                row = row * cards[p] + out[i, p]
            start = cpt_ptr[v] + row * cards[v]
            out[i, v] = _draw_row(cpt_flat, start, cards[v], uniforms[i, used])
            used += 1
    return out


def sample_batch_np(cards, par_ptr, par_idx, cpt_ptr, cpt_flat, base, uniforms):
    out = np.array(base, dtype=np.int64, copy=True)
    n_units, n_vars = out.shape
    used = np.zeros(n_units, dtype=np.int64)
    rows_idx = np.arange(n_units)
    for v in range(n_vars):
        todo = out[:, v] < 0
        if not todo.any():
            continue
        card = int(cards[v])
        row = np.zeros(n_units, dtype=np.int64)
        for p in par_idx[par_ptr[v]:par_ptr[v + 1]]:
            row = row * int(cards[p]) + out[:, p]
        start = int(cpt_ptr[v]) + row * card
        probs = np.asarray(cpt_flat)[start[:, None] + np.arange(card)[None, :]]
        # sequential accumulation, identical to draw_index
        cdf = np.cumsum(probs, axis=1)
        u = uniforms[rows_idx, np.minimum(used, uniforms.shape[1] - 1)]
        hit = u[:, None] < cdf
        idx = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
        if (idx < 0).any():
            positive = probs > 0.0
            last = card - 1 - np.argmax(positive[:, ::-1], axis=1)
            idx = np.where(idx < 0, last, idx)
        out[todo, v] = idx[todo]
        used = used + todo
    return out


if USE_NUMBA:
    joint_table = joint_table_nb
    sample_batch = sample_batch_nb
else:
    joint_table = joint_table_np
    sample_batch = sample_batch_np


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
