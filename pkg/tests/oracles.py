"""Independent reference implementations used only by the tests.

Everything here is deliberately slow and written without reference to the
package internals: explicit loops, textbook formulas, no shared helpers.
"""
import cmath
import math
import struct

import numpy as np


def naive_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i, j] = s
    return out


def gauss_jordan_inverse(a):
    """Inverse by Gauss-Jordan elimination with partial pivoting."""
    a = [list(map(float, row)) for row in a]
    n = len(a)
    inv = [[float(i == j) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        inv[col], inv[piv] = inv[piv], inv[col]
        p = a[col][col]
        a[col] = [v / p for v in a[col]]
        inv[col] = [v / p for v in inv[col]]
        for r in range(n):
            if r != col and a[r][col] != 0.0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                inv[r] = [x - f * y for x, y in zip(inv[r], inv[col])]
    return np.array(inv)


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


OFFSETS = {"deg0": (0, 1), "deg45": (-1, 1), "deg90": (-1, 0), "deg135": (-1, -1)}


def brute_glcm(img, direction, levels):
    """G[k, l] = #{(r, c): img[r, c] == k and img[r + dr, c + dc] == l}."""
    dr, dc = OFFSETS[direction]
    m = len(img)
    G = np.zeros((levels, levels))
    for r in range(m):
        for c in range(m):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < m and 0 <= c2 < m:
                G[int(img[r][c]), int(img[r2][c2])] += 1
    return G


def shift_matrix(m, direction):
    """Dense m^2 x m^2 operator D with (D a)_i = a_neighbor(i), plus a validity vector."""
    dr, dc = OFFSETS[direction]
    D = np.zeros((m * m, m * m))
    valid = np.zeros(m * m)
    for r in range(m):
        for c in range(m):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < m and 0 <= c2 < m:
                D[r * m + c, r2 * m + c2] = 1.0
                valid[r * m + c] = 1.0
    return D, valid


def dense_nglcm(img, phi_a, phi_b, direction):
    """NGLCM through the explicit shift operator and explicit loops."""
    m = len(img)
    a = np.array(img, dtype=np.float64).reshape(-1)
    D, valid = shift_matrix(m, direction)
    b = (a - D @ a) * valid
    la, lb = len(phi_a), len(phi_b)
    S_a = np.zeros((la, m * m))
    S_b = np.zeros((lb, m * m))
    for i in range(m * m):
        for k in range(la):
            S_a[k, i] = min(max(a[i] - phi_a[k], 0.0), 1.0) * valid[i]
        for k in range(lb):
            S_b[k, i] = min(max(b[i] - phi_b[k], 0.0), 1.0) * valid[i]
    return naive_matmul(S_a, S_b.T)


def lstsq_residual(F_A, F_G):
    """Least-squares residual of every column of F_A regressed on F_G.

    Solves the normal equations column by column with Gauss-Jordan, so it
    shares nothing with a Cholesky- or LAPACK-based implementation.
    """
    gram_inv = gauss_jordan_inverse(naive_matmul(F_G.T, F_G))
    out = np.zeros_like(F_A)
    for j in range(F_A.shape[1]):
        beta = gram_inv @ (F_G.T @ F_A[:, j])
        out[:, j] = F_A[:, j] - F_G @ beta
    return out


def naive_dft2(x, inverse=False):
    """O(m^4) two-dimensional DFT by the defining double sum."""
    m, n = x.shape
    sign = 1 if inverse else -1
    out = np.zeros((m, n), dtype=complex)
    for u in range(m):
        for v in range(n):
            s = 0j
            for r in range(m):
                for c in range(n):
                    s += x[r, c] * cmath.exp(sign * 2j * math.pi * (u * r / m + v * c / n))
            out[u, v] = s
    return out / (m * n) if inverse else out


def textbook_rescale(x):
    lo, hi = float(np.min(x)), float(np.max(x))
    if 0.0 <= lo and hi <= 255.0:
        return x
    if hi - lo < 1e-12:
        return np.full_like(x, min(max(float(np.mean(x)), 0.0), 255.0))
    return (x - lo) / (hi - lo) * 255.0


def idx_bytes(array):
    """Reference IDX encoder (unsigned byte payload, big-endian header)."""
    arr = np.asarray(array, dtype=np.uint8)
    out = bytes([0, 0, 0x08, arr.ndim])
    for d in arr.shape:
        out += struct.pack(">I", d)
    return out + arr.tobytes()


def softmax_ce(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        mx = max(row)
        lse = mx + math.log(sum(math.exp(v - mx) for v in row))
        total += lse - row[y]
    return total / len(labels)
