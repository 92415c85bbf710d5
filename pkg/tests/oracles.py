"""Brute-force reference implementations, kept independent of the package code."""
from fractions import Fraction


def ordered(preds):
    """preds: (video, frame, class, score) tuples."""
    return sorted(preds, key=lambda p: (-p[3], p[1], p[2], p[0]))


def greedy_flags(preds, gts, delta):
    """preds ordered; gts: (video, frame) pairs of one class."""
    used = set()
    flags = []
    for video, frame, _, _ in preds:
        options = [(abs(f - frame), f) for v, f in gts
                   if v == video and (v, f) not in used and abs(f - frame) <= delta]
        if options:
            _, f = min(options)
            used.add((video, f))
            flags.append(True)
        else:
            flags.append(False)
    return flags


def ap_oracle(preds, gts, delta):
    """Exact AP via rational arithmetic: mean over recall levels k/n of the best
    precision achieved at any rank whose recall is at least k/n."""
    preds = ordered(preds)
    n = len(gts)
    if n == 0:
        return None if not preds else 0.0
    flags = greedy_flags(preds, gts, delta)
    points = []
    tp = 0
    for i, hit in enumerate(flags, 1):
        tp += hit
        points.append((Fraction(tp, n), Fraction(tp, i)))
    total = Fraction(0)
    for k in range(1, n + 1):
        level = Fraction(k, n)
        reachable = [p for r, p in points if r >= level]
        total += max(reachable) if reachable else 0
    return float(total / n)


def nms_oracle(preds, window):
    """preds: (frame, class, score); exhaustive greedy simulation."""
    remaining = sorted(preds, key=lambda p: (-p[2], p[0], p[1]))
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [p for p in remaining if not (p[1] == top[1] and abs(p[0] - top[0]) <= window)]
    return sorted(kept, key=lambda p: (-p[2], p[0], p[1]))


def dilate_oracle(labels, radius):
    """For each background frame, collect every event within radius and pick
    (distance, event frame) minimal."""
    out = list(labels)
    events = [t for t, c in enumerate(labels) if c]
    for s, c in enumerate(labels):
        if c:
            continue
        near = [(abs(s - t), t) for t in events if abs(s - t) <= radius]
        if near:
            out[s] = labels[min(near)[1]]
    return out
