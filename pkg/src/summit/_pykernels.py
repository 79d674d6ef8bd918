"""Pure-Python versions of the loop kernels; used when the extension is absent."""
import math

import numpy as np

KIND_NUMERICAL = 0
KIND_MODE = 1
KIND_LAST = 2


def summarize_rows(win, values, kinds, k, max_vocab):
    """Aggregate raw rows into ``k`` windows.

    ``win[r]`` is the window of row ``r``; ``values`` holds NaN for missing
    cells. Returns ``(out, mask)`` of shape ``(k, n + 1)`` with the row count
    in the last column.
    """
    m, n = values.shape
    out = np.full((k, n + 1), np.nan)
    mask = np.zeros((k, n + 1), dtype=np.uint8)
    sums = [[0.0] * n for _ in range(k)]
    counts = [[0] * n for _ in range(k)]
    rows = [0] * k
    cats = [[None] * n for _ in range(k)]
    vals = values.tolist()
    kinds = [int(x) for x in kinds]

    for r in range(m):
        w = int(win[r])
        rows[w] += 1
        row = vals[r]
        for j in range(n):
            v = row[j]
            if math.isnan(v):
                continue
            counts[w][j] += 1
            kind = kinds[j]
            if kind == KIND_NUMERICAL:
                sums[w][j] += v
            elif kind == KIND_MODE:
                seen = cats[w][j]
                if seen is None:
                    seen = cats[w][j] = {}
                c = int(v)
                if c in seen:
                    seen[c][0] += 1
                else:
                    seen[c] = [1, r]
            else:
                sums[w][j] = v

    for w in range(k):
        for j in range(n):
            if counts[w][j] == 0:
                continue
            mask[w, j] = 1
            kind = kinds[j]
            if kind == KIND_NUMERICAL:
                out[w, j] = sums[w][j] / counts[w][j]
            elif kind == KIND_MODE:
                seen = cats[w][j]
                out[w, j] = min(seen, key=lambda c: (-seen[c][0], seen[c][1]))
            else:
                out[w, j] = sums[w][j]
        out[w, n] = rows[w]
        mask[w, n] = 1
    return out, mask


def concordance_counts(times, events, ranks, n_ranks):
    """Fenwick-tree pair counting over time-sorted inputs.

    For every event sample ``q`` counts later samples (strictly greater time)
    with lower score rank (concordant), equal rank (tied), and in total
    (comparable).
    """
    times = times.tolist()
    events = events.tolist()
    ranks = ranks.tolist()
    n = len(times)
    tree = [0] * (n_ranks + 1)
    concordant = tied = comparable = total = 0
    i = n - 1
    while i >= 0:
        j = i
        while j >= 0 and times[j] == times[i]:
            j -= 1
        for q in range(j + 1, i + 1):
            if not events[q]:
                continue
            below = 0
            pos = ranks[q]
            while pos > 0:
                below += tree[pos]
                pos -= pos & (-pos)
            upto = 0
            pos = ranks[q] + 1
            while pos > 0:
                upto += tree[pos]
                pos -= pos & (-pos)
            concordant += below
            tied += upto - below
            comparable += total
        for q in range(j + 1, i + 1):
            pos = ranks[q] + 1
            while pos <= n_ranks:
                tree[pos] += 1
                pos += pos & (-pos)
            total += 1
        i = j
    return concordant, tied, comparable
