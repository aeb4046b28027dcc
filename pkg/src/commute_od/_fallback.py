"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Kept operation-for-operation identical (sequential sums, same haversine
expression) so results match the extension bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from .geo import haversine


def stay_scan(lat, lon, ts, offsets, dist_m, time_s, pairwise=False):
    lat = np.asarray(lat, dtype=np.float64).tolist()
    lon = np.asarray(lon, dtype=np.float64).tolist()
    ts = np.asarray(ts, dtype=np.int64).tolist()
    offsets = np.asarray(offsets, dtype=np.int64).tolist()
    starts, stops, clat, clon = [], [], [], []
    for d in range(len(offsets) - 1):
        lo, hi = offsets[d], offsets[d + 1]
        i = lo
        while i < hi:
            j = i + 1
            if pairwise:
                while j < hi and all(haversine(lat[k], lon[k], lat[j], lon[j]) <= dist_m for k in range(i, j)):
                    j += 1
            else:
                la, lo_ = lat[i], lon[i]
                while j < hi and haversine(la, lo_, lat[j], lon[j]) <= dist_m:
                    j += 1
            if ts[j - 1] - ts[i] >= time_s:
                slat = 0.0
                slon = 0.0
                for k in range(i, j):
                    slat += lat[k]
                    slon += lon[k]
                starts.append(i)
                stops.append(j)
                clat.append(slat / (j - i))
                clon.append(slon / (j - i))
                i = j
            else:
                i += 1
    return (
        np.asarray(starts, dtype=np.int64),
        np.asarray(stops, dtype=np.int64),
        np.asarray(clat, dtype=np.float64),
        np.asarray(clon, dtype=np.float64),
    )


def complete_linkage(lat, lon, threshold):
    lat = np.asarray(lat, dtype=np.float64).tolist()
    lon = np.asarray(lon, dtype=np.float64).tolist()
    n = len(lat)
    if n < 2:
        return np.arange(n, dtype=np.int64)
    D = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            v = haversine(lat[i], lon[i], lat[j], lon[j])
            D[i][j] = v
            D[j][i] = v
    active = [True] * n
    parent = list(range(n))
    nn_dist = [0.0] * n
    nn_idx = [-1] * n

    def row_min(i):
        bj, bd = -1, 0.0
        row = D[i]
        for j in range(i + 1, n):
            if active[j] and (bj < 0 or row[j] < bd):
                bd, bj = row[j], j
        nn_dist[i], nn_idx[i] = bd, bj

    for i in range(n):
        row_min(i)
    while True:
        a, best = -1, math.inf
        for i in range(n):
            if active[i] and nn_idx[i] >= 0 and nn_dist[i] < best:
                best, a = nn_dist[i], i
        if a < 0 or best > threshold:
            break
        b = nn_idx[a]
        active[b] = False
        parent[b] = a
        for k in range(n):
            if active[k] and k != a:
                v = max(D[a][k], D[b][k])
                D[a][k] = v
                D[k][a] = v
        row_min(a)
        for k in range(a):
            if active[k] and (nn_idx[k] == a or nn_idx[k] == b):
                row_min(k)
        for k in range(a + 1, b):
            if active[k] and nn_idx[k] == b:
                row_min(k)

    labels = []
    for i in range(n):
        k = i
        while parent[k] != k:
            k = parent[k]
        labels.append(k)
    return np.asarray(labels, dtype=np.int64)
