"""Reference implementations written independently of the package, used as test oracles."""
import math
from collections import deque

import numpy as np

EPS_M, EPS_THETA, D_NEAR, EPS_Z = 0.15, math.radians(25.0), 2.0, 0.15


def predicate(rho, v, c_r, c_t, z_r, z_t):
    """Direct transcription of the seven relation clauses (target rho reference, seen from v)."""
    yaw = math.atan2(c_r[1] - v[1], c_r[0] - v[0])
    ux = (math.cos(yaw), math.sin(yaw))
    uy = (-math.sin(yaw), math.cos(yaw))

    def loc(q):
        dx, dy = q[0] - v[0], q[1] - v[1]
        return dx * ux[0] + dy * ux[1], dx * uy[0] + dy * uy[1]

    xr, yr = loc(c_r)
    xt, yt = loc(c_t)
    bt = math.atan2(yt, xt)
    table = {
        "left": yt - yr >= EPS_M,
        "right": yr - yt >= EPS_M,
        "front": abs(bt) <= EPS_THETA and xt <= xr - EPS_M,
        "behind": abs(bt) <= EPS_THETA and xt >= xr + EPS_M,
        "near": math.dist(c_t, c_r) <= D_NEAR,
        "above": z_t - z_r >= EPS_Z,
        "below": z_r - z_t >= EPS_Z,
    }
    return table[rho]


def voxel_set(points, res):
    return {tuple(int(math.floor(c / res)) for c in p) for p in points}


def overlap(a, b, res=0.05):
    sa, sb = voxel_set(a, res), voxel_set(b, res)
    return len(sa & sb) / min(len(sa), len(sb))


def bfs_geodesic(free, a, b):
    """Dijkstra over 8-connected cells with unit/sqrt(2) steps; returns cells or inf."""
    import heapq
    dist = {a: 0.0}
    pq = [(0.0, a)]
    while pq:
        d, c = heapq.heappop(pq)
        if c == b:
            return d
        if d > dist.get(c, math.inf):
            continue
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                n = (c[0] + di, c[1] + dj)
                if not (0 <= n[0] < free.shape[0] and 0 <= n[1] < free.shape[1]) or not free[n]:
                    continue
                nd = d + (math.sqrt(2) if di and dj else 1.0)
                if nd < dist.get(n, math.inf):
                    dist[n] = nd
                    heapq.heappush(pq, (nd, n))
    return math.inf


def flood_components(mask):
    """4-connected component count by explicit BFS."""
    seen = np.zeros(mask.shape, bool)
    n = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        n += 1
        q = deque([start])
        seen[start] = True
        while q:
            i, j = q.popleft()
            for n2 in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if 0 <= n2[0] < mask.shape[0] and 0 <= n2[1] < mask.shape[1] and mask[n2] and not seen[n2]:
                    seen[n2] = True
                    q.append(n2)
    return n


def ray_segment(o, theta, a, b):
    """Distance along the ray o + t(cos, sin) to segment ab, or inf."""
    d = np.array([math.cos(theta), math.sin(theta)])
    e = np.asarray(b, float) - np.asarray(a, float)
    m = np.array([[d[0], -e[0]], [d[1], -e[1]]])
    det = np.linalg.det(m)
    if abs(det) < 1e-12:
        return math.inf
    t, s = np.linalg.solve(m, np.asarray(a, float) - np.asarray(o, float))
    return t if t >= 0 and 0 <= s <= 1 else math.inf


def spl(results):
    """results: (success, ell, p) triples."""
    return sum(s * l / max(p, l) for s, l, p in results) / len(results)
