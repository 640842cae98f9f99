"""Compiled SMO inner loop for the bias-unregularised soft-margin SVM dual.

Solves  min_a 0.5 a'Qa - sum(a)  s.t.  0 <= a <= C,  y'a = 0,
with Q_ij = y_i y_j K_ij, using maximal-gain (second order) working pair
selection. ``alpha`` and ``grad`` are updated in place.
"""

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True)
def smo_loop(K, y, C, alpha, grad, eps, max_iter):
    n = y.shape[0]
    it = 0
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v >= gmax:
                    gmax = v
                    i = t
        if i < 0:
            break
        gmax2 = -np.inf
        j = -1
        best = np.inf
        kii = K[i, i]
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = y[t] * grad[t]
                if v >= gmax2:
                    gmax2 = v
                diff = gmax + v
                if diff > 0:
                    quad = kii + K[t, t] - 2.0 * K[i, t]
                    if quad <= 0:
                        quad = TAU
                    obj = -(diff * diff) / quad
                    if obj <= best:
                        best = obj
                        j = t
        if gmax + gmax2 < eps or j < 0:
            break
        it += 1

        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = kii + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        yi = y[i]
        yj = y[j]
        for t in range(n):
            grad[t] += y[t] * (yi * K[t, i] * dai + yj * K[t, j] * daj)
    return it
