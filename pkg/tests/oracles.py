"""Independent reference implementations used only by the tests."""

import math

import numpy as np

R = 6_371_008.8


def hav(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(lon2 - lon1) / 2) ** 2
    return 2 * R * math.asin(math.sqrt(a))


def stay_points_oracle(traj, dist, tmin):
    """Anchor scan written line by line from the textual description.

    Returns (first_index, last_index, mean_lat, mean_lon) per stay.
    """
    out = []
    n = len(traj)
    i = 0
    while i < n:
        j = i + 1
        while j < n and hav(traj[i][0], traj[i][1], traj[j][0], traj[j][1]) <= dist:
            j += 1
        if traj[j - 1][2] - traj[i][2] >= tmin:
            members = traj[i:j]
            out.append((i, j - 1, sum(p[0] for p in members) / len(members), sum(p[1] for p in members) / len(members)))
            i = j
        else:
            i = i + 1
    return out


def complete_linkage_oracle(points, threshold):
    """O(n^3) agglomerative complete linkage.

    Each round recomputes every inter-cluster distance as the maximum member
    distance and merges the closest pair, ties broken by the smaller
    (min-member, min-member) pair. Returns a sorted list of sorted index tuples.
    """
    clusters = [[i] for i in range(len(points))]
    d = [[hav(*points[i], *points[j]) for j in range(len(points))] for i in range(len(points))]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                dist = max(d[i][j] for i in clusters[a] for j in clusters[b])
                key = (dist, min(clusters[a]), min(clusters[b]))
                if best is None or key < best[0]:
                    best = (key, a, b)
        if best[0][0] > threshold:
            break
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return sorted(tuple(sorted(c)) for c in clusters)


def random_trajectory(rng, n_max=50, lat0=29.75, lon0=-95.40):
    """Piecewise-stationary trajectory: visits of 1-10 pings at random spots within ~2 km.

    Spots are jittered by 60 m and gaps between pings are exponential (mean 300 s).
    """
    n = int(rng.integers(1, n_max + 1))
    pts = []
    t = 0
    while len(pts) < n:
        cy, cx = rng.uniform(-1000, 1000, 2)
        for _ in range(int(rng.integers(1, 11))):
            if len(pts) == n:
                break
            t += int(rng.exponential(300)) + 1
            dy, dx = rng.normal(0, 60, 2)
            lat = lat0 + (cy + dy) / 111_195.0
            lon = lon0 + (cx + dx) / (111_195.0 * math.cos(math.radians(lat0)))
            pts.append((lat, lon, t))
    return pts


def random_stay_cloud(rng, n_max=200):
    """Stay centroids scattered around a few hubs, spacing comparable to a 250 m cut."""
    n = int(rng.integers(1, n_max + 1))
    hubs = rng.uniform(-1500, 1500, (int(rng.integers(1, 8)), 2))
    pick = hubs[rng.integers(0, len(hubs), n)] + rng.normal(0, 150, (n, 2))
    lat = 29.75 + pick[:, 0] / 111_195.0
    lon = -95.40 + pick[:, 1] / (111_195.0 * math.cos(math.radians(29.75)))
    return list(zip(lat.tolist(), lon.tolist()))


def pearson_closed_form(x, y):
    n = len(x)
    sx, sy = math.fsum(x), math.fsum(y)
    sxx = math.fsum(v * v for v in x)
    syy = math.fsum(v * v for v in y)
    sxy = math.fsum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def uniform_grid(lo, hi, k):
    return lo + (np.arange(k) + 0.5) * (hi - lo) / k
