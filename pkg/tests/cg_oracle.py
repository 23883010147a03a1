"""Clebsch-Gordan coefficients by explicit lowering-operator recursion.

Builds the coupled |J M> states inside the product space of two angular
momenta: the top state |J J> is the null vector of J+ in the M=J subspace
(phase fixed so that <j1 j1; j2 J-j1|J J> > 0), and lower states follow from
repeated application of J-. Independent of any closed-form sum.
"""

from __future__ import annotations

import numpy as np


def _ladder(j):
    """J+ on |j m>, basis ordered m = j..-j (doubled j allowed via float)."""
    ms = np.arange(j, -j - 1, -1)
    n = ms.size
    jp = np.zeros((n, n))
    for k in range(1, n):
        m = ms[k]
        jp[k - 1, k] = np.sqrt(j * (j + 1) - m * (m + 1))
    return ms, jp


def coupled_table(j1, j2):
    """dict (m1, m2, J, M) -> <j1 m1; j2 m2 | J M>."""
    m1s, jp1 = _ladder(j1)
    m2s, jp2 = _ladder(j2)
    I1, I2 = np.eye(m1s.size), np.eye(m2s.size)
    Jp = np.kron(jp1, I2) + np.kron(I1, jp2)
    Jm = Jp.T
    Mtot = np.add.outer(m1s, m2s).ravel()
    out = {}
    J = j1 + j2
    while J >= abs(j1 - j2) - 1e-9:
        sub = np.nonzero(np.isclose(Mtot, J))[0]
        # null space of J+ restricted to the M=J subspace
        A = Jp[:, sub]
        _, s, vt = np.linalg.svd(A)
        v = vt[-1]
        top = np.zeros(Mtot.size)
        top[sub] = v
        # Condon-Shortley phase: coefficient with m1 = j1 positive
        k = int(np.nonzero(np.isclose(np.repeat(m1s, m2s.size), j1) & np.isclose(Mtot, J))[0][0])
        if top[k] < 0:
            top = -top
        state = top
        M = J
        while M >= -J - 1e-9:
            for a, m1 in enumerate(m1s):
                for b, m2 in enumerate(m2s):
                    c = state[a * m2s.size + b]
                    if abs(m1 + m2 - M) < 1e-9:
                        out[(round(2 * m1), round(2 * m2), round(2 * J), round(2 * M))] = c
            if M - 1 < -J - 1e-9:
                break
            state = Jm @ state
            state /= np.sqrt(J * (J + 1) - M * (M - 1))
            M -= 1
        J -= 1
    return out


def cg(j1, m1, j2, m2, J, M, _cache={}):
    key = (j1, j2)
    if key not in _cache:
        _cache[key] = coupled_table(j1, j2)
    return _cache[key].get((round(2 * m1), round(2 * m2), round(2 * J), round(2 * M)), 0.0)
