"""Independent brute-force oracles shared by the unit and acceptance tests."""
import itertools
import math

import numpy as np


def brute_knn_scores(pts, k):
    """Half incident length over the symmetric kNN graph, from a full distance sort."""
    n = len(pts)
    if n <= k:
        return np.full(n, np.inf)
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    edges = set()
    for i in range(n):
        order = [j for j in np.argsort(D[i], kind="stable") if j != i][:k]
        for j in order:
            edges.add((min(i, j), max(i, j)))
    out = np.zeros(n)
    for i, j in edges:
        out[i] += D[i, j]
        out[j] += D[i, j]
    return out / 2


def prufer_trees(n):
    """Edge lists of all n^(n-2) labelled trees on n vertices."""
    trees = []
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        edges = []
        for v in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[leaf] -= 1
            degree[v] -= 1
        u, w = [i for i in range(n) if degree[i] == 1]
        edges.append((u, w))
        trees.append(edges)
    return trees


class ExhaustiveMST:
    """Minimum total length over every labelled spanning tree (Cayley enumeration)."""

    def __init__(self, n):
        self.n = n
        self.pairs = list(itertools.combinations(range(n), 2))
        pid = {p: i for i, p in enumerate(self.pairs)}
        self.T = np.array([[pid[e] for e in t] for t in prufer_trees(n)])

    def __call__(self, pts):
        i, j = np.array(self.pairs).T
        w = np.sqrt(((pts[i] - pts[j]) ** 2).sum(-1))
        return float(w[self.T].sum(axis=1).min())


def gf2_rank(M):
    M = (np.array(M, dtype=np.uint8) & 1).copy()
    if M.size == 0:
        return 0
    rank = 0
    rows, cols = M.shape
    for c in range(cols):
        piv = [r for r in range(rank, rows) if M[r, c]]
        if not piv:
            continue
        M[[rank, piv[0]]] = M[[piv[0], rank]]
        for r in range(rows):
            if r != rank and M[r, c]:
                M[r] ^= M[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def gf2_nullspace(M):
    """Basis (as columns) of the kernel of M over Z/2."""
    M = (np.array(M, dtype=np.uint8) & 1).copy()
    rows, cols = M.shape
    pivots = []
    r = 0
    for c in range(cols):
        piv = [i for i in range(r, rows) if M[i, c]]
        if not piv:
            continue
        M[[r, piv[0]]] = M[[piv[0], r]]
        for i in range(rows):
            if i != r and M[i, c]:
                M[i] ^= M[r]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    free = [c for c in range(cols) if c not in pivots]
    basis = []
    for f in free:
        v = np.zeros(cols, dtype=np.uint8)
        v[f] = 1
        for i, p in enumerate(pivots):
            if M[i, f]:
                v[p] = 1
        basis.append(v)
    return np.array(basis, dtype=np.uint8).T if basis else np.zeros((cols, 0), dtype=np.uint8)


def enclosing_radius(P):
    """Smallest enclosing circle of 2 or 3 points by checking every candidate circle."""
    P = np.asarray(P, float)
    cands = []
    for a, b in itertools.combinations(range(len(P)), 2):
        c = (P[a] + P[b]) / 2
        cands.append((c, np.linalg.norm(P[a] - P[b]) / 2))
    if len(P) == 3:
        (ax, ay), (bx, by), (cx, cy) = P
        d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
        if d != 0:
            ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
            uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
            c = np.array([ux, uy])
            cands.append((c, np.linalg.norm(P[0] - c)))
    best = math.inf
    for c, rad in cands:
        if np.all(np.linalg.norm(P - c, axis=1) <= rad * (1 + 1e-12) + 1e-15):
            best = min(best, rad)
    return best


def betti1_rank_oracle(pts, r, s):
    """rank(H1(K_r) -> H1(K_s)) = rank[Z1(K_r) | B1(K_s)] - rank B1(K_s) over Z/2."""
    n = len(pts)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2)]
    ev = {e: np.linalg.norm(pts[e[0]] - pts[e[1]]) / 2 for e in edges}
    tris = list(itertools.combinations(range(n), 3))
    tv = {t: enclosing_radius(pts[list(t)]) for t in tris}
    Es = [e for e in edges if ev[e] <= s]
    eid = {e: i for i, e in enumerate(Es)}
    Er = [e for e in Es if ev[e] <= r]
    d1 = np.zeros((n, len(Er)), dtype=np.uint8)
    for c, (i, j) in enumerate(Er):
        d1[i, c] = d1[j, c] = 1
    Zr_local = gf2_nullspace(d1)
    Zr = np.zeros((len(Es), Zr_local.shape[1]), dtype=np.uint8)
    for c, e in enumerate(Er):
        Zr[eid[e]] = Zr_local[c]
    Ts = [t for t in tris if tv[t] <= s and all(f in eid for f in itertools.combinations(t, 2))]
    Bs = np.zeros((len(Es), len(Ts)), dtype=np.uint8)
    for c, t in enumerate(Ts):
        for f in itertools.combinations(t, 2):
            Bs[eid[f], c] = 1
    return gf2_rank(np.hstack([Zr, Bs])) - gf2_rank(Bs)


def components_oracle(pts, s):
    """Connected components of the union of closed s-balls via repeated flood fill."""
    n = len(pts)
    if n == 0:
        return 0
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    seen = np.zeros(n, bool)
    c = 0
    for i in range(n):
        if seen[i]:
            continue
        c += 1
        stack = [i]
        seen[i] = True
        while stack:
            j = stack.pop()
            for k in np.flatnonzero((D[j] <= 2 * s) & ~seen):
                seen[k] = True
                stack.append(k)
    return c
