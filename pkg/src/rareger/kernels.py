"""Levenshtein kernels over integer-coded token sequences.

Two interchangeable implementations live here: numba-compiled loops and a
row-vectorised numpy version (the insertion recurrence along a row is solved
with a running minimum).  ``BACKEND`` names the one bound to the public
functions; set ``RAREGER_DISABLE_NUMBA=1`` before import to force numpy.

Operation codes returned by the backtrace: 0 match, 1 substitution,
2 deletion (reference token dropped), 3 insertion (hypothesis token added).
"""

import numpy as np

from rareger._accel import HAVE_NUMBA, njit

MATCH, SUB, DEL, INS = 0, 1, 2, 3


# -- numpy ------------------------------------------------------------------

def dp_matrix_numpy(a, b):
    n, m = a.shape[0], b.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    cols = np.arange(m + 1, dtype=np.int64)
    d[0] = cols
    tmp = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        prev = d[i - 1]
        cost = (b != a[i - 1]).astype(np.int64)
        tmp[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=tmp[1:])
        d[i] = np.minimum.accumulate(tmp - cols) + cols
    return d


def edit_distance_numpy(a, b):
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    m = b.shape[0]
    if m == 0:
        return int(a.shape[0])
    cols = np.arange(m + 1, dtype=np.int64)
    prev = cols.copy()
    tmp = np.empty(m + 1, dtype=np.int64)
    for i in range(1, a.shape[0] + 1):
        cost = (b != a[i - 1]).astype(np.int64)
        tmp[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=tmp[1:])
        prev = np.minimum.accumulate(tmp - cols) + cols
    return int(prev[m])


def backtrace_python(d, a, b):
    i, j = a.shape[0], b.shape[0]
    out = []
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = a[i - 1] == b[j - 1]
            if d[i, j] == d[i - 1, j - 1] + (0 if same else 1):
                out.append(MATCH if same else SUB)
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            out.append(DEL)
            i -= 1
        else:
            out.append(INS)
            j -= 1
    out.reverse()
    return np.asarray(out, dtype=np.int8)


def align_codes_numpy(a, b):
    d = dp_matrix_numpy(a, b)
    return int(d[a.shape[0], b.shape[0]]), backtrace_python(d, a, b)


# -- numba ------------------------------------------------------------------

@njit(cache=True)
def _dp_matrix_jit(a, b):
    n, m = a.shape[0], b.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        d[i, 0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = d[i - 1, j - 1] + (0 if ai == b[j - 1] else 1)
            dl = d[i - 1, j] + 1
            if dl < best:
                best = dl
            ins = d[i, j - 1] + 1
            if ins < best:
                best = ins
            d[i, j] = best
    return d


@njit(cache=True)
def _edit_distance_jit(a, b):
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    m = b.shape[0]
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, a.shape[0] + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            dl = prev[j] + 1
            if dl < best:
                best = dl
            ins = cur[j - 1] + 1
            if ins < best:
                best = ins
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True)
def _backtrace_jit(d, a, b):
    i, j = a.shape[0], b.shape[0]
    out = np.empty(i + j, dtype=np.int8)
    k = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = a[i - 1] == b[j - 1]
            if d[i, j] == d[i - 1, j - 1] + (0 if same else 1):
                out[k] = MATCH if same else SUB
                k += 1
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            out[k] = DEL
            i -= 1
        else:
            out[k] = INS
            j -= 1
        k += 1
    return out[:k][::-1].copy()


def edit_distance_numba(a, b):
    return int(_edit_distance_jit(a, b))


def align_codes_numba(a, b):
    d = _dp_matrix_jit(a, b)
    return int(d[a.shape[0], b.shape[0]]), _backtrace_jit(d, a, b)


# -- dispatch ---------------------------------------------------------------

if HAVE_NUMBA:
    BACKEND = "numba"
    edit_distance = edit_distance_numba
    align_codes = align_codes_numba
else:
    BACKEND = "numpy"
    edit_distance = edit_distance_numpy
    align_codes = align_codes_numpy


def encode_pair(ref, hyp):
    """Map two token sequences onto a shared integer vocabulary."""
    vocab = {}
    a = np.fromiter((vocab.setdefault(t, len(vocab)) for t in ref), dtype=np.int64, count=len(ref))
    b = np.fromiter((vocab.setdefault(t, len(vocab)) for t in hyp), dtype=np.int64, count=len(hyp))
    return a, b
