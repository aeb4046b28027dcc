# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: haversine, anchor/pairwise stay scan, complete linkage.

Every routine mirrors ``_fallback.py`` operation for operation so the two
paths return bit-identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, M_PI

cnp.import_array()

cdef double EARTH_RADIUS_M = 6371008.8
cdef double DEG = M_PI / 180.0


cdef inline double _hav(double lat1, double lon1, double lat2, double lon2) noexcept nogil:
    cdef double p1 = lat1 * DEG
    cdef double p2 = lat2 * DEG
    cdef double dp = p2 - p1
    cdef double dl = lon2 * DEG - lon1 * DEG
    cdef double s1 = sin(0.5 * dp)
    cdef double s2 = sin(0.5 * dl)
    cdef double h = s1 * s1 + cos(p1) * cos(p2) * s2 * s2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * asin(sqrt(h))


def haversine(double lat1, double lon1, double lat2, double lon2):
    return _hav(lat1, lon1, lat2, lon2)


def stay_scan(const double[::1] lat, const double[::1] lon, const cnp.int64_t[::1] ts,
              const cnp.int64_t[::1] offsets, double dist_m, long long time_s, bint pairwise=False):
    """Scan every device segment ``offsets[k]:offsets[k+1]`` for stay points.

    Returns (start, stop, centroid_lat, centroid_lon) arrays; member pings of
    a stay are the half-open global index range [start, stop).
    """
    cdef Py_ssize_t n_dev = offsets.shape[0] - 1
    cdef Py_ssize_t cap = 64, count = 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] starts = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stops = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] clat = np.empty(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] clon = np.empty(cap, dtype=np.float64)
    cdef Py_ssize_t d, i, j, k, lo, hi
    cdef double slat, slon
    cdef bint ok
    for d in range(n_dev):
        lo = offsets[d]
        hi = offsets[d + 1]
        i = lo
        while i < hi:
            j = i + 1
            if pairwise:
                while j < hi:
                    ok = True
                    for k in range(i, j):
                        if _hav(lat[k], lon[k], lat[j], lon[j]) > dist_m:
                            ok = False
                            break
                    if not ok:
                        break
                    j += 1
            else:
                while j < hi and _hav(lat[i], lon[i], lat[j], lon[j]) <= dist_m:
                    j += 1
            if ts[j - 1] - ts[i] >= time_s:
                if count == cap:
                    cap *= 2
                    starts = np.resize(starts, cap)
                    stops = np.resize(stops, cap)
                    clat = np.resize(clat, cap)
                    clon = np.resize(clon, cap)
                slat = 0.0
                slon = 0.0
                for k in range(i, j):
                    slat += lat[k]
                    slon += lon[k]
                starts[count] = i
                stops[count] = j
                clat[count] = slat / (j - i)
                clon[count] = slon / (j - i)
                count += 1
                i = j
            else:
                i += 1
    return starts[:count].copy(), stops[:count].copy(), clat[:count].copy(), clon[:count].copy()


def complete_linkage(const double[::1] lat, const double[::1] lon, double threshold):
    """Threshold-cut complete-linkage clustering.

    Returns an int64 label per point: the smallest input index in its cluster.
    At each step the active pair (a, b), a < b, with the smallest linkage
    distance merges, ties going to the lexicographically smallest (a, b);
    merging stops once that distance exceeds ``threshold``.
    """
    cdef Py_ssize_t n = lat.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.arange(n, dtype=np.int64)
    if n < 2:
        return labels
    cdef double[:, ::1] D = np.empty((n, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] active_arr = np.ones(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] active = active_arr
    cdef double[::1] nn_dist = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] nn_idx = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] parent = np.arange(n, dtype=np.int64)
    cdef Py_ssize_t i, j, k, a, b
    cdef double best, v, inf = float("inf")

    for i in range(n):
        D[i, i] = 0.0
        for j in range(i + 1, n):
            v = _hav(lat[i], lon[i], lat[j], lon[j])
            D[i, j] = v
            D[j, i] = v
    # nn_* of row i caches the nearest active j > i (smallest j on ties)
    for i in range(n):
        _row_min(D, active, nn_dist, nn_idx, i, n)

    while True:
        a = -1
        best = inf
        for i in range(n):
            if active[i] and nn_idx[i] >= 0 and nn_dist[i] < best:
                best = nn_dist[i]
                a = i
        if a < 0 or best > threshold:
            break
        b = nn_idx[a]
        # merge b into a (a < b); complete linkage takes the max
        active[b] = 0
        parent[b] = a
        for k in range(n):
            if active[k] and k != a:
                v = D[a, k] if D[a, k] > D[b, k] else D[b, k]
                D[a, k] = v
                D[k, a] = v
        _row_min(D, active, nn_dist, nn_idx, a, n)
        for k in range(a):
            if active[k]:
                if nn_idx[k] == a or nn_idx[k] == b:
                    _row_min(D, active, nn_dist, nn_idx, k, n)
        for k in range(a + 1, b):
            if active[k] and nn_idx[k] == b:
                _row_min(D, active, nn_dist, nn_idx, k, n)

    for i in range(n):
        k = i
        while parent[k] != k:
            k = parent[k]
        labels[i] = k
    return labels


cdef inline void _row_min(double[:, ::1] D, cnp.uint8_t[::1] active, double[::1] nn_dist,
                          cnp.int64_t[::1] nn_idx, Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j, bj = -1
    cdef double bd = 0.0
    for j in range(i + 1, n):
        if active[j] and (bj < 0 or D[i, j] < bd):
            bd = D[i, j]
            bj = j
    nn_dist[i] = bd
    nn_idx[i] = bj
