"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and the environment
variable ``HAZARDLENS_DISABLE_NUMBA`` is unset (or set to ``0``/``false``).
Both paths are always importable so tests and ``benchmarks/`` can compare
them directly through :data:`BACKENDS`.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled():
    flag = os.environ.get("HAZARDLENS_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()

# relative eigenvalue floor below which a Gram matrix counts as rank deficient
RANK_TOL = 1e-10


# ---------------------------------------------------------------------------
# Inversion counting (Kendall's tau)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _count_inversions_numba(y):
    n = y.shape[0]
    a = y.copy()
    buf = np.empty_like(a)
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if a[i] <= a[j]:
                    buf[k] = a[i]
                    i += 1
                else:
                    buf[k] = a[j]
                    j += 1
                    inversions += mid - i
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        a, buf = buf, a
        width *= 2
    return inversions


def _count_inversions_numpy(y):
    # bottom-up merge sort, one vectorised pass per level: O(n log^2 n)
    a = np.unique(y, return_inverse=True)[1].astype(np.int64).ravel()
    n = a.shape[0]
    big = n + 1
    idx = np.arange(n)
    inversions = 0
    width = 1
    while width < n:
        block = idx // width
        pair = block // 2
        right = (block % 2) == 1
        keys = pair * big + a
        left_keys = keys[~right]
        pos = np.searchsorted(left_keys, keys[right], side="right")
        end = np.searchsorted(pair[~right], pair[right], side="right")
        inversions += int(np.sum(end - pos))
        a = np.sort(keys) % big
        width *= 2
    return inversions


def count_inversions(y, backend=None):
    """Number of pairs ``i < j`` with ``y[i] > y[j]`` (ties are not counted)."""
    y = np.ascontiguousarray(y)
    impl = _pick(backend, _count_inversions_numba, _count_inversions_numpy)
    if impl is _count_inversions_numba:
        y = np.unique(y, return_inverse=True)[1].astype(np.int64).ravel()
    return int(impl(y))


# ---------------------------------------------------------------------------
# Cox risk-set sums
# ---------------------------------------------------------------------------


@njit(cache=True)
def _risk_set_sums_numba(ev_times, stop_s, wstop, xstop, start_s, wstart, xstart):
    m = ev_times.shape[0]
    n = stop_s.shape[0]
    nstart = start_s.shape[0]
    p = xstop.shape[1]
    s0 = np.zeros(m)
    s1 = np.zeros((m, p))
    s2 = np.zeros((m, p, p))
    a0 = 0.0
    a1 = np.zeros(p)
    a2 = np.zeros((p, p))
    i = n - 1
    j = nstart - 1
    for k in range(m - 1, -1, -1):
        t = ev_times[k]
        while i >= 0 and stop_s[i] >= t:
            w = wstop[i]
            a0 += w
            for u in range(p):
                a1[u] += w * xstop[i, u]
                for v in range(p):
                    a2[u, v] += w * xstop[i, u] * xstop[i, v]
            i -= 1
        while j >= 0 and start_s[j] >= t:
            w = wstart[j]
            a0 -= w
            for u in range(p):
                a1[u] -= w * xstart[j, u]
                for v in range(p):
                    a2[u, v] -= w * xstart[j, u] * xstart[j, v]
            j -= 1
        s0[k] = a0
        s1[k] = a1
        s2[k] = a2
    return s0, s1, s2


def _revcum(stacked):
    out = np.zeros((stacked.shape[0] + 1,) + stacked.shape[1:])
    out[:-1] = np.cumsum(stacked[::-1], axis=0)[::-1]
    return out


def _risk_set_sums_numpy(ev_times, stop_s, wstop, xstop, start_s, wstart, xstart):
    def sums(times, w, x, t):
        pos = np.searchsorted(times, t, side="left")
        c0 = _revcum(w)[pos]
        c1 = _revcum(w[:, None] * x)[pos]
        c2 = _revcum(w[:, None, None] * x[:, :, None] * x[:, None, :])[pos]
        return c0, c1, c2

    s0, s1, s2 = sums(stop_s, wstop, xstop, ev_times)
    if start_s.shape[0]:
        r0, r1, r2 = sums(start_s, wstart, xstart, ev_times)
        s0, s1, s2 = s0 - r0, s1 - r1, s2 - r2
    return s0, s1, s2


def risk_set_sums(ev_times, stop, weights, x, start=None, backend=None):
    """Weighted zeroth, first and second moments of ``x`` over each risk set.

    The risk set at time ``t`` is ``{j : start_j < t <= stop_j}``; with
    ``start=None`` every subject enters at time zero. ``ev_times`` must be
    sorted ascending. Returns ``(s0, s1, s2)`` with shapes ``(m,)``,
    ``(m, p)`` and ``(m, p, p)``.
    """
    x = np.asarray(x, dtype=float)
    order = np.argsort(stop, kind="stable")
    stop_s = np.ascontiguousarray(stop[order], dtype=float)
    wstop = np.ascontiguousarray(weights[order], dtype=float)
    xstop = np.ascontiguousarray(x[order])
    if start is None:
        start_s = np.empty(0)
        wstart = np.empty(0)
        xstart = np.empty((0, x.shape[1]))
    else:
        o2 = np.argsort(start, kind="stable")
        start_s = np.ascontiguousarray(start[o2], dtype=float)
        wstart = np.ascontiguousarray(weights[o2], dtype=float)
        xstart = np.ascontiguousarray(x[o2])
    impl = _pick(backend, _risk_set_sums_numba, _risk_set_sums_numpy)
    ev = np.ascontiguousarray(ev_times, dtype=float)
    return impl(ev, stop_s, wstop, xstop, start_s, wstart, xstart)


# ---------------------------------------------------------------------------
# Aalen least-squares increments
# ---------------------------------------------------------------------------


@njit(cache=True)
def _aalen_increments_numba(times, x, is_event, ev_times):
    n, p = x.shape
    m = ev_times.shape[0]
    dB = np.zeros((m, p))
    dvar = np.zeros((m, p))
    ok = np.zeros(m, dtype=np.bool_)
    gram = np.zeros((p, p))
    i = n - 1
    for k in range(m - 1, -1, -1):
        t = ev_times[k]
        r = np.zeros(p)
        q = np.zeros((p, p))
        while i >= 0 and times[i] >= t:
            for u in range(p):
                for v in range(p):
                    gram[u, v] += x[i, u] * x[i, v]
            if is_event[i] and times[i] == t:
                for u in range(p):
                    r[u] += x[i, u]
                    for v in range(p):
                        q[u, v] += x[i, u] * x[i, v]
            i -= 1
        eig = np.linalg.eigvalsh(gram)
        if eig[0] > RANK_TOL * eig[p - 1]:
            ok[k] = True
            ginv = np.linalg.inv(gram)
            dB[k] = ginv @ r
            dvar[k] = np.diag(ginv @ q @ ginv)
    return dB, dvar, ok


def _aalen_increments_numpy(times, x, is_event, ev_times):
    m = ev_times.shape[0]
    p = x.shape[1]
    outer = x[:, :, None] * x[:, None, :]
    gram = _revcum(outer)[np.searchsorted(times, ev_times, side="left")]
    ev_rows = np.flatnonzero(is_event)
    slot = np.searchsorted(ev_times, times[ev_rows])
    # events at times not listed in ev_times carry no increment
    hit = slot < m
    hit[hit] = ev_times[slot[hit]] == times[ev_rows[hit]]
    ev_rows, slot = ev_rows[hit], slot[hit]
    r = np.zeros((m, p))
    q = np.zeros((m, p, p))
    np.add.at(r, slot, x[ev_rows])
    np.add.at(q, slot, outer[ev_rows])
    eig = np.linalg.eigvalsh(gram)
    ok = eig[:, 0] > RANK_TOL * eig[:, -1]
    dB = np.zeros((m, p))
    dvar = np.zeros((m, p))
    if ok.any():
        ginv = np.linalg.inv(gram[ok])
        dB[ok] = np.einsum("kuv,kv->ku", ginv, r[ok])
        dvar[ok] = np.einsum("kuv,kvw,kwu->ku", ginv, q[ok], ginv)
    return dB, dvar, ok


def aalen_increments(times, x, is_event, ev_times, backend=None):
    """Least-squares increments of the Aalen cumulative coefficients.

    ``times`` must be sorted ascending with ``x`` and ``is_event`` aligned;
    ``ev_times`` are the distinct event times, ascending. Returns
    ``(dB, dvar, ok)`` where ``ok[k]`` is False when the at-risk design is
    rank deficient at ``ev_times[k]`` (its increments are then zero).
    """
    impl = _pick(backend, _aalen_increments_numba, _aalen_increments_numpy)
    return impl(
        np.ascontiguousarray(times, dtype=float),
        np.ascontiguousarray(x, dtype=float),
        np.ascontiguousarray(is_event, dtype=np.bool_),
        np.ascontiguousarray(ev_times, dtype=float),
    )


# ---------------------------------------------------------------------------

BACKENDS = ("numba", "numpy") if NUMBA_AVAILABLE else ("numpy",)


def _pick(backend, numba_impl, numpy_impl):
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        return numba_impl
    if backend == "numpy":
        return numpy_impl
    raise ValueError(f"unknown backend {backend!r}")
