"""Independent reference implementations used by the tests.

Written in plain Python (or with a different algorithm than the library)
so agreement is meaningful.
"""

import math
import statistics


def zscore_filter(samples, threshold):
    """Per-element recomputation of the single-pass z-score rule."""
    xs = [float(x) for x in samples]
    if len(xs) < 2:
        return list(xs)
    m = statistics.fmean(xs)
    s = math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))
    if s == 0:
        return list(xs)
    out = []
    for x in xs:
        if abs(x - m) / s <= threshold:
            out.append(x)
    return out


def normal_equations(X, y):
    """Solve (A'A) b = A'y with A = [1|X] by Gauss-Jordan elimination, partial pivoting."""
    n = len(y)
    rows = [[1.0] + [float(v) for v in X[i]] for i in range(n)]
    p = len(rows[0])
    ata = [[math.fsum(r[a] * r[b] for r in rows) for b in range(p)] for a in range(p)]
    aty = [math.fsum(rows[i][a] * float(y[i]) for i in range(n)) for a in range(p)]
    aug = [ata[a] + [aty[a]] for a in range(p)]
    for col in range(p):
        piv = max(range(col, p), key=lambda r: abs(aug[r][col]))
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [v / pv for v in aug[col]]
        for r in range(p):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return [aug[a][p] for a in range(p)]


def pearson(a, b):
    ma, mb = statistics.fmean(a), statistics.fmean(b)
    num = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(math.fsum((x - ma) ** 2 for x in a) * math.fsum((y - mb) ** 2 for y in b))
    return num / den


def spearman(x, y):
    """Spearman rank correlation (average ranks for ties)."""

    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for k in range(i, j + 1):
                r[order[k]] = (i + j) / 2 + 1
            i = j + 1
        return r

    return pearson(ranks(x), ranks(y))
