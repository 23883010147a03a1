"""Brute-force density-matrix oracle for one stationary atom.

Basis: ground sublevels, excited sublevels, times H-mode Fock states 0..nmax.
The generator is written out from scratch (no engine tables): Zeeman terms,
resonant pi drive, excited decay, cavity damping, and H emission through the
photon creation operator only (reabsorption neglected), plus spontaneous
emission as Lindblad terms. The zero-photon block is then an ordinary atomic
master equation, and higher blocks are driven by it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply, spsolve

MU_B = 1.399624e6  # Hz per gauss


def _cg(j1, m1, j2, m2, J, M):
    """<j1 m1; j2 m2 | J M> by direct Racah sum, integer arguments."""
    if m1 + m2 != M or abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    f = math.factorial
    pre = math.sqrt((2 * J + 1) * f(J + j1 - j2) * f(J - j1 + j2) * f(j1 + j2 - J) / f(j1 + j2 + J + 1))
    pre *= math.sqrt(f(J + M) * f(J - M) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2))
    s = 0.0
    for k in range(0, j1 + j2 + 1):
        d = [k, j1 + j2 - J - k, j1 - m1 - k, j2 + m2 - k, J - j2 + m1 + k, J - j1 - m2 + k]
        if min(d) < 0:
            continue
        s += (-1) ** k / np.prod([f(x) for x in d])
    return pre * s


def _lande(F, J, I, gJ):
    return gJ * (F * (F + 1) + J * (J + 1) - I * (I + 1)) / (2 * F * (F + 1))


class StationaryAtomOracle:
    def __init__(self, *, Fg=3, Fe=4, g_mhz=1.5, kappa_mhz=3.2, gamma_mhz=6.0, B=5.0, v_photons=2.5,
                 gF_g=None, gF_e=None, detuning_mhz=0.0, biref_mhz=0.0, nmax=2, coupling=1.0):
        tp = 2 * math.pi * 1e6
        self.Fg, self.Fe, self.nmax = Fg, Fe, nmax
        gF_g = _lande(Fg, 0.5, 2.5, 2.002) if gF_g is None else gF_g
        gF_e = _lande(Fe, 1.5, 2.5, 4.0 / 3.0) if gF_e is None else gF_e
        dg = 2 * math.pi * gF_g * MU_B * B
        de = 2 * math.pi * gF_e * MU_B * B
        g = g_mhz * tp * coupling
        kap, gam = kappa_mhz * tp, gamma_mhz * tp
        c00 = _cg(Fg, 0, 1, 0, Fe, 0)
        Omega = g * math.sqrt(v_photons)
        ng, ne = 2 * Fg + 1, 2 * Fe + 1
        na = ng + ne
        self.na = na
        self.gi = {m: m + Fg for m in range(-Fg, Fg + 1)}
        self.ei = {m: ng + m + Fe for m in range(-Fe, Fe + 1)}
        nf = nmax + 1
        D = na * nf
        self.D = D

        def idx(level, n):
            return level * nf + n

        self.idx = idx
        H = np.zeros((D, D), complex)
        for n in range(nf):
            for m, i in self.gi.items():
                H[idx(i, n), idx(i, n)] = m * dg + n * (biref_mhz * tp - 1j * kap)
            for m, i in self.ei.items():
                H[idx(i, n), idx(i, n)] = m * de - detuning_mhz * tp - 0.5j * gam + n * (biref_mhz * tp - 1j * kap)
            for m, i in self.gi.items():
                if abs(m) <= Fe:
                    c = _cg(Fg, m, 1, 0, Fe, m) / c00
                    H[idx(self.ei[m], n), idx(i, n)] = Omega * c
                    H[idx(i, n), idx(self.ei[m], n)] = np.conj(Omega) * c
            if n < nmax:
                # H polarization = (sigma_- - sigma_+)/sqrt2 in the engine's sign convention
                for m, i in self.gi.items():
                    for q, w in ((-1, 1 / math.sqrt(2)), (1, -1 / math.sqrt(2))):
                        if abs(m + q) <= Fe:
                            c = _cg(Fg, m, 1, q, Fe, m + q) / c00
                            H[idx(i, n + 1), idx(self.ei[m + q], n)] += g * w * c * math.sqrt(n + 1)
        self.H = H
        Cs = []
        for q in (-1, 0, 1):
            C = np.zeros((D, D))
            for me, j in self.ei.items():
                mg = me - q
                if abs(mg) <= Fg:
                    c = _cg(Fg, mg, 1, q, Fe, me)
                    for n in range(nf):
                        C[idx(self.gi[mg], n), idx(j, n)] = math.sqrt(gam) * c
            Cs.append(C)
        self.C = Cs
        b = np.zeros((D, D))
        for lev in range(na):
            for n in range(1, nf):
                b[idx(lev, n - 1), idx(lev, n)] = math.sqrt(n)
        self.b = b
        self.P = [np.diag([1.0 if k % nf == n else 0.0 for k in range(D)]) for n in range(nf)]
        I = sparse.identity(D, format="csr")
        Hs = sparse.csr_matrix(H)
        Ls = -1j * sparse.kron(I, Hs) + 1j * sparse.kron(Hs.conj(), I)
        for C in Cs:
            Cs_ = sparse.csr_matrix(C)
            Ls = Ls + sparse.kron(Cs_.conj(), Cs_)
        self.Ls = Ls.tocsr()
        self._L = None

    @property
    def L(self):
        if self._L is None:
            self._L = self.Ls.toarray()
        return self._L

    # column-stacked vec
    @staticmethod
    def vec(r):
        return r.reshape(-1, order="F")

    def unvec(self, v):
        return v.reshape(self.D, self.D, order="F")

    def ground_state(self, m=0):
        r = np.zeros((self.D, self.D), complex)
        k = self.idx(self.gi[m], 0)
        r[k, k] = 1.0
        return r

    def evolve(self, rho, t):
        return self.unvec(expm(self.L * t) @ self.vec(rho))

    def pop(self, rho, n):
        return float(np.real(np.trace(self.P[n] @ rho)))

    def nbar(self, rho):
        return sum(n * self.pop(rho, n) for n in range(self.nmax + 1))

    def steady(self):
        """Stationary state normalized to Tr(P0 rho) = 1."""
        A = self.Ls.tolil()
        A[0, :] = self.vec(self.P[0])  # Tr(P0 rho) for a column-stacked vec
        rhs = np.zeros(A.shape[0], complex)
        rhs[0] = 1.0
        return self.unvec(spsolve(A.tocsc(), rhs))

    def populations(self, rho0, dt, nsteps, n=1):
        """Tr(Pn rho) on t = 0, dt, ..., nsteps*dt."""
        U = expm(self.L * dt)
        v = self.vec(rho0)
        out = [self.pop(rho0, n)]
        for _ in range(nsteps):
            v = U @ v
            out.append(self.pop(self.unvec(v), n))
        return np.array(out)

    def g2(self, dt, nsteps):
        """Tr(P1 e^{L tau} b rho b^+) / Tr(P1 rho)^2 on tau = 0, dt, ..., nsteps*dt.

        Cavity loss is pure damping here, so the two-photon block of the
        conditional state never feeds the one-photon block and no further
        truncation is needed.
        """
        rho = self.steady()
        alpha = self.pop(rho, 1)
        sig = self.b @ rho @ self.b.T
        return self.populations(sig, dt, nsteps) / alpha ** 2, alpha

    def g2_sparse(self, dt, nsteps):
        """Same as ``g2`` but propagated with a sparse Krylov exponential."""
        rho = self.steady()
        alpha = self.pop(rho, 1)
        sig = self.b @ rho @ self.b.T
        vs = expm_multiply(self.Ls, self.vec(sig).astype(complex), start=0.0, stop=nsteps * dt,
                           num=nsteps + 1, endpoint=True)
        return np.array([self.pop(self.unvec(v), 1) for v in vs]) / alpha ** 2, alpha
