"""Naive loop implementations used as independent references.

Nothing here is vectorized on purpose; these exist to be obviously correct.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    bsz, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.zeros((bsz, c, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph : ph + h, pw : pw + wd] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((bsz, f, ho, wo))
    for n in range(bsz):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ch, i * sh + u, j * sw + v] * w[o, ch, u, v]
                    out[n, o, i, j] = acc
    return out


def naive_pool2d(x, kind, kernel, stride):
    bsz, c, h, w = x.shape
    kh, kw = kernel
    sh, sw = stride
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((bsz, c, ho, wo))
    for n in range(bsz):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    vals = [x[n, ch, i * sh + u, j * sw + v] for u in range(kh) for v in range(kw)]
                    out[n, ch, i, j] = max(vals) if kind == "max" else math.fsum(vals) / len(vals)
    return out


def naive_linear(x, w, b=None):
    n, k = x.shape
    o = w.shape[0]
    out = np.zeros((n, o))
    for r in range(n):
        for q in range(o):
            acc = 0.0 if b is None else float(b[q])
            for i in range(k):
                acc += x[r, i] * w[q, i]
            out[r, q] = acc
    return out


def naive_histogram(x, centers, widths, kernel, stride):
    """Direct loops over batch, bin, channel and output position.

    ``x`` is (batch, D, M, N); centers/widths are (bins, D); the result uses
    channel index ``d * bins + b``.
    """
    bsz, d, m, n = x.shape
    nb = centers.shape[0]
    s, t = kernel
    sr, sc = stride
    r_out, c_out = (m - s) // sr + 1, (n - t) // sc + 1
    out = np.zeros((bsz, nb * d, r_out, c_out))
    for q in range(bsz):
        for b in range(nb):
            for ch in range(d):
                mu, gamma = centers[b, ch], widths[b, ch]
                for r in range(r_out):
                    for c in range(c_out):
                        acc = 0.0
                        for u in range(s):
                            for v in range(t):
                                val = x[q, ch, r * sr + u, c * sc + v]
                                acc += math.exp(-(gamma**2) * (val - mu) ** 2)
                        out[q, ch * nb + b, r, c] = acc / (s * t)
    return out


def naive_calinski_harabasz(points, labels):
    """Scalar-loop version for small inputs."""
    points = [list(map(float, p)) if np.ndim(p) else [float(p)] for p in points]
    groups: dict = {}
    for p, lab in zip(points, labels):
        groups.setdefault(lab, []).append(p)
    n, k, dim = len(points), len(groups), len(points[0])
    overall = [sum(p[i] for p in points) / n for i in range(dim)]
    between = within = 0.0
    for members in groups.values():
        cen = [sum(p[i] for p in members) / len(members) for i in range(dim)]
        between += len(members) * sum((cen[i] - overall[i]) ** 2 for i in range(dim))
        within += sum((p[i] - cen[i]) ** 2 for p in members for i in range(dim))
    return (between / (k - 1)) / (within / (n - k))
