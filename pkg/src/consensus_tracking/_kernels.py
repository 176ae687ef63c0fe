"""Compiled inner loop for closed-loop rollouts.

The closed loop is linear in ``(s_k, eta_k)``:

    s_{k+1} = M s_k + G eta_k,        c_k = Cs s_k + Cn eta_k

where ``c_k`` holds the signals entering the running costs.  Costs are
accumulated by the trapezoidal rule at every step while states are stored
only every ``stride`` steps.
"""

import numpy as np
from numba import njit

DIVERGENCE_BOUND = 1e12


@njit(cache=True)
def rollout(M, G, eta, s0, Cs, Cn, Wr, We, dt, n, stride, noisy):
    d = s0.shape[0]
    m = G.shape[1]
    nc = Cs.shape[0]
    nrec = n // stride + 1
    S = np.empty((nrec, d))
    Jr_rec = np.empty(nrec)
    Je_rec = np.empty(nrec)
    s = s0.copy()
    snew = np.empty(d)
    c = np.empty(nc)
    jr = 0.0
    je = 0.0
    fr_prev = 0.0
    fe_prev = 0.0
    diverged_at = -1
    for k in range(n + 1):
        for i in range(nc):
            acc = 0.0
            for j in range(d):
                acc += Cs[i, j] * s[j]
            if noisy:
                for j in range(m):
                    acc += Cn[i, j] * eta[k, j]
            c[i] = acc
        fr = 0.0
        fe = 0.0
        for i in range(nc):
            ri = 0.0
            ei = 0.0
            for j in range(nc):
                ri += Wr[i, j] * c[j]
                ei += We[i, j] * c[j]
            fr += c[i] * ri
            fe += c[i] * ei
        if k > 0:
            jr += 0.5 * dt * (fr + fr_prev)
            je += 0.5 * dt * (fe + fe_prev)
        fr_prev = fr
        fe_prev = fe
        if k % stride == 0:
            r = k // stride
            for i in range(d):
                S[r, i] = s[i]
            Jr_rec[r] = jr
            Je_rec[r] = je
        if k == n:
            break
        bad = False
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += M[i, j] * s[j]
            if noisy:
                for j in range(m):
                    acc += G[i, j] * eta[k, j]
            if not (abs(acc) <= DIVERGENCE_BOUND):
                bad = True
            snew[i] = acc
        if bad:
            diverged_at = k + 1
            break
        for i in range(d):
            s[i] = snew[i]
    return S, Jr_rec, Je_rec, jr, je, c, diverged_at
