"""Independent reference computations used by the tests.

Nothing here imports the package's differentiation or eigen code.
"""
import math

import numpy as np


def triple_loop_matmul(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def central_gradient(f, x, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=1e-3):
    """Elementwise max |a - n| / max(|a|, |n|, floor * largest entry).

    Entries far below the tensor's own scale are judged against that scale,
    since finite differences cannot resolve them relatively.
    """
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(floor * scale, 1e-300))
    return float(np.max(np.abs(a - n) / denom))


def jacobi_eigenvalues(a, sweeps=100, tol=1e-14):
    """Cyclic Jacobi rotations for a symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def fd_hessian(f, x, h=1e-4):
    """Dense Hessian of a scalar function by second-order central differences."""
    x = np.array(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            def at(di, dj):
                y = x.copy()
                y[i] += di
                y[j] += dj
                return f(y)
            v = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def fd_hessian_from_grad(grad, x, h=1e-5):
    """Dense Hessian by central differences of an analytic gradient, symmetrized."""
    x = np.array(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def scalar_mlp_forward(layers, x, act):
    """Plain-Python forward pass; layers is a list of (W[in][out], b[out])."""
    h = list(x)
    for li, (W, b) in enumerate(layers):
        out = []
        for j in range(len(b)):
            s = b[j]
            for i in range(len(h)):
                s += h[i] * W[i][j]
            out.append(s)
        if li < len(layers) - 1:
            out = [act(v) for v in out]
        h = out
    return h


def scalar_cross_entropy(logits_rows, labels):
    total = 0.0
    for row, y in zip(logits_rows, labels):
        m = max(row)
        lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def scalar_kl(p_logits_rows, q_logits_rows):
    total = 0.0
    for pr, qr in zip(p_logits_rows, q_logits_rows):
        pz = math.fsum(math.exp(v) for v in pr)
        qz = math.fsum(math.exp(v) for v in qr)
        for a, b in zip(pr, qr):
            p, q = math.exp(a) / pz, math.exp(b) / qz
            total += p * math.log(p / q)
    return total / len(p_logits_rows)
