"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``CASCADE_ASR_DISABLE_NUMBA`` is unset (or ``0``). Both paths are
always importable as ``numpy_impl`` / ``numba_impl`` so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# loop kernels (numba-compatible; also runnable as plain python, slowly)
# ---------------------------------------------------------------------------


def _joint_scores_loops(enc_part, pred_parts, embedding, blank_row):
    n_batch, dim = pred_parts.shape
    n_labels = embedding.shape[0]
    log_blank = np.empty(n_batch)
    log_not_blank = np.empty(n_batch)
    label_lsm = np.empty((n_batch, n_labels))
    hidden = np.empty(dim)
    for b in range(n_batch):
        z = 0.0
        for j in range(dim):
            hidden[j] = np.tanh(enc_part[j] + pred_parts[b, j])
            z += blank_row[j] * hidden[j]
        # log sigmoid(z) and log sigmoid(-z) without overflow
        if z >= 0.0:
            tail = np.log1p(np.exp(-z))
            log_blank[b] = -tail
            log_not_blank[b] = -z - tail
        else:
            tail = np.log1p(np.exp(z))
            log_blank[b] = z - tail
            log_not_blank[b] = -tail
        top = -np.inf
        for v in range(n_labels):
            acc = 0.0
            for j in range(dim):
                acc += embedding[v, j] * hidden[j]
            label_lsm[b, v] = acc
            if acc > top:
                top = acc
        total = 0.0
        for v in range(n_labels):
            total += np.exp(label_lsm[b, v] - top)
        norm = top + np.log(total)
        for v in range(n_labels):
            label_lsm[b, v] -= norm
    return log_blank, log_not_blank, label_lsm


def _forward_lattice_loops(log_blank, log_emit, cap):
    n_frames = log_blank.shape[0]
    n_labels = log_emit.shape[1]
    if cap <= 0 or cap > n_labels:
        cap = n_labels
    alpha = np.full((n_labels + 1, cap + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(n_frames):
        for u in range(1, n_labels + 1):
            for k in range(1, cap + 1):
                alpha[u, k] = alpha[u - 1, k - 1] + log_emit[t, u - 1]
        nxt = np.full((n_labels + 1, cap + 1), -np.inf)
        for u in range(n_labels + 1):
            top = -np.inf
            for k in range(cap + 1):
                if alpha[u, k] > top:
                    top = alpha[u, k]
            if top == -np.inf:
                continue
            total = 0.0
            for k in range(cap + 1):
                total += np.exp(alpha[u, k] - top)
            nxt[u, 0] = top + np.log(total) + log_blank[t, u]
        alpha = nxt
    return alpha[n_labels, 0]


def _edit_cost_loops(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        cost[i, 0] = i
    for j in range(m + 1):
        cost[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = cost[i - 1, j] + 1
            ins = cost[i, j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            cost[i, j] = best
    return cost


def _backtrace(cost, ref, hyp):
    # preference order on ties: match/substitution, deletion, insertion
    i = ref.shape[0]
    j = hyp.shape[0]
    subs = 0
    ins = 0
    dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            diag = 0 if ref[i - 1] == hyp[j - 1] else 1
            if cost[i, j] == cost[i - 1, j - 1] + diag:
                subs += diag
                i -= 1
                j -= 1
                continue
        if i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, ins, dels


# ---------------------------------------------------------------------------
# vectorised numpy fallbacks
# ---------------------------------------------------------------------------


def _joint_scores_numpy(enc_part, pred_parts, embedding, blank_row):
    hidden = np.tanh(enc_part[None, :] + pred_parts)
    z = hidden @ blank_row
    log_blank = -np.logaddexp(0.0, -z)
    log_not_blank = -np.logaddexp(0.0, z)
    logits = hidden @ embedding.T
    top = logits.max(axis=1, keepdims=True)
    norm = top + np.log(np.exp(logits - top).sum(axis=1, keepdims=True))
    return log_blank, log_not_blank, logits - norm


def _forward_lattice_numpy(log_blank, log_emit, cap):
    n_frames = log_blank.shape[0]
    n_labels = log_emit.shape[1]
    if cap <= 0 or cap > n_labels:
        cap = n_labels
    alpha = np.full((n_labels + 1, cap + 1), -np.inf)
    alpha[0, 0] = 0.0
    with np.errstate(invalid="ignore"):
        for t in range(n_frames):
            for k in range(1, cap + 1):
                alpha[1:, k] = alpha[:-1, k - 1] + log_emit[t]
            merged = np.logaddexp.reduce(alpha, axis=1)
            alpha = np.full_like(alpha, -np.inf)
            alpha[:, 0] = merged + log_blank[t]
    return float(alpha[n_labels, 0])


def _edit_cost_numpy(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    steps = np.arange(m + 1)
    cost = np.empty((n + 1, m + 1), dtype=np.int64)
    cost[0] = steps
    for i in range(1, n + 1):
        prev = cost[i - 1]
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (hyp != ref[i - 1]))
        # insertions chain left to right: row[j] = min_k<=j cand[k] + (j - k)
        cost[i] = np.minimum.accumulate(cand - steps) + steps
    return cost


numpy_impl = SimpleNamespace(
    name="numpy",
    joint_scores=_joint_scores_numpy,
    forward_lattice=_forward_lattice_numpy,
    edit_cost=_edit_cost_numpy,
)


def _build_numba_impl():
    try:
        import numba
    except ImportError:
        return None
    njit = numba.njit(cache=True, nogil=True)
    lattice = njit(_forward_lattice_loops)
    return SimpleNamespace(
        name="numba",
        joint_scores=njit(_joint_scores_loops),
        forward_lattice=lambda lb, le, cap: float(lattice(lb, le, cap)),
        edit_cost=njit(_edit_cost_loops),
    )


numba_impl = _build_numba_impl()

_disabled = os.environ.get("CASCADE_ASR_DISABLE_NUMBA", "0") not in ("", "0")
active = numpy_impl if (_disabled or numba_impl is None) else numba_impl
BACKEND = active.name


def joint_scores(enc_part, pred_parts, embedding, blank_row):
    """Batched HAT scores for one encoder contribution and many histories.

    ``enc_part`` is the projected encoder frame (d_h,), ``pred_parts`` the
    projected prediction vectors plus joint bias (B, d_h). Returns
    ``(log_blank, log_not_blank, label_log_softmax)`` with shapes
    (B,), (B,), (B, |V|).
    """
    return active.joint_scores(
        np.ascontiguousarray(enc_part, dtype=np.float64),
        np.ascontiguousarray(pred_parts, dtype=np.float64),
        np.ascontiguousarray(embedding, dtype=np.float64),
        np.ascontiguousarray(blank_row, dtype=np.float64),
    )


def forward_lattice(log_blank, log_emit, cap=0):
    """Transducer forward algorithm over the (t, u) lattice.

    ``log_blank[t, u]`` is the blank score at frame t after u labels,
    ``log_emit[t, u]`` the score of emitting label u+1 from there. ``cap``
    limits label emissions per frame (0 means unlimited).
    """
    log_blank = np.ascontiguousarray(log_blank, dtype=np.float64)
    log_emit = np.ascontiguousarray(log_emit, dtype=np.float64)
    if log_emit.ndim != 2:
        log_emit = log_emit.reshape(log_blank.shape[0], log_blank.shape[1] - 1)
    return active.forward_lattice(log_blank, log_emit, int(cap))


def edit_counts(ref, hyp):
    """(substitutions, insertions, deletions) of a minimum-cost alignment."""
    ref = np.asarray(ref, dtype=np.int64)
    hyp = np.asarray(hyp, dtype=np.int64)
    return _backtrace(active.edit_cost(ref, hyp), ref, hyp)
