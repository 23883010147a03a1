# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled trajectory kernel; same contract and layout as ``_kernel_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sqrt, fabs
from libc.stdint cimport int64_t, uint64_t

ctypedef double complex cplx

BACKEND = "cython"

# keep in sync with kernel_layout.py
DEF MOFF = 6
DEF P_DT = 0
DEF P_GMAX = 1
DEF P_WAIST = 2
DEF P_KWAVE = 3
DEF P_V0 = 4
DEF P_KAPPA = 5
DEF P_STANDING = 7
DEF P_ABS = 8
DEF P_BETAV = 9
DEF Q_REC = 0
DEF Q_SAMP = 1
DEF Q_NB = 2
DEF Q_S = 3
DEF Q_START = 4
DEF Q_MAXAT = 5
DEF I_STEP = 0
DEF I_NEXT_SLOT = 1
DEF I_NEXT_ID = 2
DEF I_ARR = 3
DEF I_NEV = 4
DEF I_STATUS = 5
DEF I_TRACE = 6
DEF ST_OVERFLOW = 1
DEF ST_RING = 2
DEF NACC = 12

cdef int SRC1_TP[2]
cdef int SRC1_SP[2]
cdef int SRC2_TP[4]
cdef int SRC2_SP[4]
SRC1_TP[:] = [0, 1]
SRC1_SP[:] = [0, 0]
SRC2_TP[:] = [0, 1, 1, 2]
SRC2_SP[:] = [0, 0, 1, 1]


cdef inline cplx cj(cplx z) noexcept nogil:
    return z.real - z.imag * 1j


cdef inline double abs2(cplx z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline void nadd(double[:, ::1] acc, double[:, ::1] comp, int r, Py_ssize_t k, double x) noexcept nogil:
    cdef double s = acc[r, k]
    cdef double t = s + x
    if fabs(s) >= fabs(x):
        comp[r, k] += (s - t) + x
    else:
        comp[r, k] += (x - t) + s
    acc[r, k] = t


cdef inline void nadd1(double[::1] arr, double[::1] comp, int j, double x) noexcept nogil:
    cdef double s = arr[j]
    cdef double t = s + x
    if fabs(s) >= fabs(x):
        comp[j] += (s - t) + x
    else:
        comp[j] += (x - t) + s
    arr[j] = t


cdef inline double coupling(double[::1] prm, double[:, ::1] geo, Py_ssize_t i, double t) noexcept nogil:
    cdef double x = geo[i, 0] + geo[i, 3] * (t - geo[i, 5])
    cdef double y = geo[i, 1] + geo[i, 4] * (t - geo[i, 5])
    cdef double z = geo[i, 2]
    cdef double w = prm[P_WAIST]
    cdef double g = prm[P_GMAX] * exp(-(y * y + z * z) / (w * w))
    if prm[P_STANDING] != 0.0:
        g = g * cos(prm[P_KWAVE] * x)
    return g


cdef inline void deriv(const cplx* Y, int P, cplx om, const double* c0,
                       int nsrc, const int* tp, const int* sp, const double* hq,
                       double gk, const cplx* src, cplx* d) noexcept nogil:
    cdef int p, j
    cdef cplx mi = -1j
    for p in range(P):
        d[2 * p] = mi * cj(om) * c0[p] * Y[2 * p + 1]
        d[2 * p + 1] = mi * om * c0[p] * Y[2 * p]
    for j in range(nsrc):
        d[2 * tp[j]] = d[2 * tp[j]] + mi * gk * hq[j] * src[sp[j]]


cdef void lawson(cplx* Y, int P, const cplx* Eh2, const cplx* Eh, double h,
                 const cplx* om, const double* c0, int nsrc, const int* tp,
                 const int* sp, const double* hq, const double* gk,
                 const cplx* src, int psrc, cplx* stage_e) noexcept nogil:
    # src holds 4 stages x psrc excited amplitudes; stage_e receives 4 x P
    cdef cplx k1[6]
    cdef cplx k2[6]
    cdef cplx k3[6]
    cdef cplx k4[6]
    cdef cplx Ys[6]
    cdef int n = 2 * P
    cdef int c
    cdef double hh = 0.5 * h
    deriv(Y, P, om[0], c0, nsrc, tp, sp, hq, gk[0], src, k1)
    if stage_e != NULL:
        for c in range(P):
            stage_e[c] = Y[2 * c + 1]
    for c in range(n):
        Ys[c] = Eh2[c] * (Y[c] + hh * k1[c])
    deriv(Ys, P, om[1], c0, nsrc, tp, sp, hq, gk[1], src + psrc, k2)
    if stage_e != NULL:
        for c in range(P):
            stage_e[P + c] = Ys[2 * c + 1]
    for c in range(n):
        Ys[c] = Eh2[c] * Y[c] + hh * k2[c]
    deriv(Ys, P, om[2], c0, nsrc, tp, sp, hq, gk[2], src + 2 * psrc, k3)
    if stage_e != NULL:
        for c in range(P):
            stage_e[2 * P + c] = Ys[2 * c + 1]
    for c in range(n):
        Ys[c] = Eh[c] * Y[c] + h * Eh2[c] * k3[c]
    deriv(Ys, P, om[3], c0, nsrc, tp, sp, hq, gk[3], src + 3 * psrc, k4)
    if stage_e != NULL:
        for c in range(P):
            stage_e[3 * P + c] = Ys[2 * c + 1]
    for c in range(n):
        Y[c] = Eh[c] * Y[c] + (h / 6.0) * (Eh[c] * k1[c] + 2.0 * Eh2[c] * (k2[c] + k3[c]) + k4[c])


cdef inline double next_uniform(uint64_t* st) noexcept nogil:
    # splitmix64, uniform on (0, 1)
    cdef uint64_t z
    st[0] = st[0] + <uint64_t>0x9E3779B97F4A7C15ULL
    z = st[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    z = z ^ (z >> 31)
    return ((z >> 11) + 0.5) * (1.0 / 9007199254740992.0)


cdef void project(cplx* blk, int P, int mm, const int* offs, int q, double[:, ::1] CGR) noexcept nogil:
    cdef int p
    cdef double w
    for p in range(P):
        w = CGR[mm + offs[p] + MOFF, q + 1]
        blk[2 * p] = w * blk[2 * p + 1]
        blk[2 * p + 1] = 0.0


def run_chunk(double[::1] prm, int64_t[::1] iprm, cplx[:, :, :, ::1] EXP, double[::1] C0,
              double[:, ::1] HQ, double[:, ::1] CGR, double[:, ::1] geo, double[::1] texit,
              signed char[::1] active, int64_t[::1] aid, int64_t[::1] mc,
              cplx[:, ::1] A0, cplx[:, :, ::1] A1, cplx[:, :, ::1] A2,
              cplx[:, :, :, ::1] B1, cplx[:, :, :, ::1] B2, signed char[:, ::1] bact,
              signed char[::1] slive, int64_t[::1] sstart, double[::1] sD, cplx[::1] sr0,
              cplx[:, :, :, ::1] O1, cplx[:, :, :, ::1] O2, double[:, ::1] ow,
              int64_t[:, ::1] omc, double[:, ::1] othr, uint64_t[::1] rng,
              int64_t[::1] istate, cplx[::1] vstate, double[:, ::1] arrivals,
              double[:, ::1] uniforms, Py_ssize_t n_steps,
              double[:, ::1] acc, double[:, ::1] accc, int64_t[::1] nbin,
              double[::1] tot, double[::1] totc, double[:, ::1] trace, int64_t[:, ::1] events):
    cdef double dt = prm[P_DT]
    cdef double h = dt
    cdef double kap = prm[P_KAPPA]
    cdef double v0 = prm[P_V0]
    cdef double gm = prm[P_GMAX]
    cdef bint absorb = prm[P_ABS] != 0.0
    cdef bint betav = prm[P_BETAV] != 0.0 and v0 > 0
    cdef int64_t rec_every = iprm[Q_REC]
    cdef int64_t samp_every = iprm[Q_SAMP]
    cdef int64_t nb = iprm[Q_NB]
    cdef int S = <int>iprm[Q_S]
    cdef int64_t start_step = iprm[Q_START]
    cdef int M = <int>iprm[Q_MAXAT]
    cdef Py_ssize_t K = arrivals.shape[0]
    cdef Py_ssize_t ncap_ev = events.shape[0]
    cdef Py_ssize_t ntr = trace.shape[0]

    cdef cnp.ndarray idx_arr = np.zeros(M, dtype=np.int64)
    cdef int64_t[::1] idx = idx_arr
    cdef double[:, ::1] gk = np.zeros((M, 4))
    cdef cplx[:, ::1] om = np.zeros((M, 4), dtype=np.complex128)
    cdef cplx[:, :, ::1] ya = np.zeros((M, 4, 2), dtype=np.complex128)   # base a stages
    cdef cplx[:, ::1] k1a = np.zeros((M, 2), dtype=np.complex128)
    cdef cplx[:, ::1] k2a = np.zeros((M, 2), dtype=np.complex128)
    cdef cplx[:, ::1] k3a = np.zeros((M, 2), dtype=np.complex128)
    cdef cplx[:, ::1] kk = np.zeros((M, 2), dtype=np.complex128)
    cdef double[::1] alpha = np.zeros(M)
    cdef double[::1] vals = np.zeros(NACC)

    cdef int off1[2]
    cdef int off2[3]
    off1[0] = -1; off1[1] = 1
    off2[0] = -2; off2[1] = 0; off2[2] = 2

    cdef cplx y1e[8]      # a' stage excited amplitudes (4 stages x 2 pairs)
    cdef cplx yb1e[8]
    cdef double oc01[2]
    cdef double oc02[3]
    cdef double ohq2[4]
    cdef int64_t om_
    cdef cplx srca[4]     # a stage excited amplitude
    cdef cplx Eh2[6]
    cdef cplx Eh[6]
    cdef cplx Fh2[6]
    cdef cplx Fh[6]
    cdef cplx Gh2[6]
    cdef cplx Gh[6]
    cdef cplx Hh2[6]
    cdef cplx Hh[6]
    cdef cplx Ph2[6]
    cdef cplx Ph[6]
    cdef cplx Qh2[6]
    cdef cplx Qh[6]
    cdef double c01[2]
    cdef double c02[3]
    cdef double hq1[2]
    cdef double hq2[4]
    cdef cplx omk[4]
    cdef double gkk[4]
    cdef cplx Y[6]
    cdef cplx Z[6]

    cdef Py_ssize_t s, i, j, p, c, sl, kst, n, kb, kb2
    cdef int64_t step, mm
    cdef double t, t_end, n2, pj, u, ee, x, inv, r0s, r1s, r2s, rs
    cdef double salpha, Sb, Sab, Sz2, Sc2, So, bet, D, n1, o2
    cdef cplx v, pol, Sz, Sc, zz, cc, rnow, r0, hom, ccr
    cdef int q, ch, new_slot, ne, tp
    cdef bint started

    for s in range(n_steps):
        step = istate[I_STEP]
        t = step * dt

        for i in range(M):
            if active[i] != 0 and texit[i] <= t:
                for sl in range(S):
                    if slive[sl] != 0 and bact[i, sl] != 0:
                        sD[sl] += ow[i, sl]
                active[i] = 0
                for sl in range(S):
                    bact[i, sl] = 0
        while istate[I_ARR] < K and arrivals[istate[I_ARR], 0] <= t:
            j = istate[I_ARR]
            i = -1
            for p in range(M):
                if active[p] == 0:
                    i = p
                    break
            if i < 0:
                istate[I_STATUS] = ST_OVERFLOW
                return s
            geo[i, 0] = arrivals[j, 1]
            geo[i, 1] = arrivals[j, 2]
            geo[i, 2] = arrivals[j, 3]
            geo[i, 3] = arrivals[j, 4]
            geo[i, 4] = arrivals[j, 5]
            geo[i, 5] = arrivals[j, 0]
            texit[i] = arrivals[j, 7]
            mc[i] = <int64_t>arrivals[j, 6]
            A0[i, 0] = 1.0
            A0[i, 1] = 0.0
            for p in range(2):
                for c in range(2):
                    A1[i, p, c] = 0.0
            for p in range(3):
                for c in range(2):
                    A2[i, p, c] = 0.0
            for sl in range(S):
                bact[i, sl] = 0
                for p in range(2):
                    for c in range(2):
                        B1[i, sl, p, c] = 0.0
                for p in range(3):
                    for c in range(2):
                        B2[i, sl, p, c] = 0.0
            aid[i] = istate[I_NEXT_ID]
            istate[I_NEXT_ID] += 1
            active[i] = 1
            istate[I_ARR] += 1

        n = 0
        for i in range(M):
            if active[i] != 0:
                idx[n] = i
                n += 1

        if n > 0:
            for j in range(n):
                i = idx[j]
                gk[j, 0] = coupling(prm, geo, i, t)
                gk[j, 1] = coupling(prm, geo, i, t + 0.5 * h)
                gk[j, 2] = gk[j, 1]
                gk[j, 3] = coupling(prm, geo, i, t + h)
                ya[j, 0, 0] = A0[i, 0]
                ya[j, 0, 1] = A0[i, 1]

            # base zero-photon block: four stages, V field shared by all atoms
            for kst in range(4):
                v = v0
                if absorb:
                    pol = 0.0
                    for j in range(n):
                        i = idx[j]
                        pol = pol + gk[j, kst] * (C0[mc[i] + MOFF] * cj(ya[j, kst, 0]) * ya[j, kst, 1])
                    v = v0 - 1j / kap * pol
                for j in range(n):
                    i = idx[j]
                    om[j, kst] = gk[j, kst] * v
                    kk[j, 0] = -1j * cj(om[j, kst]) * C0[mc[i] + MOFF] * ya[j, kst, 1]
                    kk[j, 1] = -1j * om[j, kst] * C0[mc[i] + MOFF] * ya[j, kst, 0]
                    for c in range(2):
                        if kst == 0:
                            k1a[j, c] = kk[j, c]
                            ya[j, 1, c] = EXP[0, 0, mc[i] + MOFF, c] * (A0[i, c] + 0.5 * h * kk[j, c])
                        elif kst == 1:
                            k2a[j, c] = kk[j, c]
                            ya[j, 2, c] = EXP[0, 0, mc[i] + MOFF, c] * A0[i, c] + 0.5 * h * kk[j, c]
                        elif kst == 2:
                            k3a[j, c] = kk[j, c]
                            ya[j, 3, c] = EXP[1, 0, mc[i] + MOFF, c] * A0[i, c] + h * EXP[0, 0, mc[i] + MOFF, c] * kk[j, c]
            # ya keeps the pre-step stage values; combine into the new block below

            for j in range(n):
                i = idx[j]
                mm = mc[i]
                for kst in range(4):
                    omk[kst] = om[j, kst]
                    gkk[kst] = gk[j, kst]
                    srca[kst] = ya[j, kst, 1]
                for p in range(2):
                    c01[p] = C0[mm + off1[p] + MOFF]
                    for c in range(2):
                        Eh2[2 * p + c] = EXP[0, 1, mm + off1[p] + MOFF, c]
                        Eh[2 * p + c] = EXP[1, 1, mm + off1[p] + MOFF, c]
                        Gh2[2 * p + c] = EXP[0, 0, mm + off1[p] + MOFF, c]
                        Gh[2 * p + c] = EXP[1, 0, mm + off1[p] + MOFF, c]
                for p in range(3):
                    c02[p] = C0[mm + off2[p] + MOFF]
                    for c in range(2):
                        Fh2[2 * p + c] = EXP[0, 2, mm + off2[p] + MOFF, c]
                        Fh[2 * p + c] = EXP[1, 2, mm + off2[p] + MOFF, c]
                        Hh2[2 * p + c] = EXP[0, 1, mm + off2[p] + MOFF, c]
                        Hh[2 * p + c] = EXP[1, 1, mm + off2[p] + MOFF, c]
                hq1[0] = HQ[mm - 1 + MOFF, 1]
                hq1[1] = HQ[mm + 1 + MOFF, 0]
                hq2[0] = HQ[mm - 2 + MOFF, 1]
                hq2[1] = HQ[mm + MOFF, 0]
                hq2[2] = HQ[mm + MOFF, 1]
                hq2[3] = HQ[mm + 2 + MOFF, 0]

                for p in range(2):
                    for c in range(2):
                        Y[2 * p + c] = A1[i, p, c]
                lawson(Y, 2, Eh2, Eh, h, omk, c01, 2, SRC1_TP, SRC1_SP, hq1, gkk, srca, 1, y1e)
                for p in range(2):
                    for c in range(2):
                        A1[i, p, c] = Y[2 * p + c]
                for p in range(3):
                    for c in range(2):
                        Y[2 * p + c] = A2[i, p, c]
                lawson(Y, 3, Fh2, Fh, h, omk, c02, 4, SRC2_TP, SRC2_SP, hq2, gkk, y1e, 2, NULL)
                for p in range(3):
                    for c in range(2):
                        A2[i, p, c] = Y[2 * p + c]

                for sl in range(S):
                    if slive[sl] == 0 or bact[i, sl] == 0:
                        continue
                    for p in range(2):
                        for c in range(2):
                            Z[2 * p + c] = B1[i, sl, p, c]
                    lawson(Z, 2, Gh2, Gh, h, omk, c01, 0, SRC1_TP, SRC1_SP, hq1, gkk, srca, 1, yb1e)
                    for p in range(2):
                        for c in range(2):
                            B1[i, sl, p, c] = Z[2 * p + c]
                    for p in range(3):
                        for c in range(2):
                            Z[2 * p + c] = B2[i, sl, p, c]
                    lawson(Z, 3, Hh2, Hh, h, omk, c02, 4, SRC2_TP, SRC2_SP, hq2, gkk, yb1e, 2, NULL)
                    for p in range(3):
                        for c in range(2):
                            B2[i, sl, p, c] = Z[2 * p + c]

                    # own-record copy, centered on its own m
                    om_ = omc[i, sl]
                    for p in range(2):
                        oc01[p] = C0[om_ + off1[p] + MOFF]
                        for c in range(2):
                            Ph2[2 * p + c] = EXP[0, 0, om_ + off1[p] + MOFF, c]
                            Ph[2 * p + c] = EXP[1, 0, om_ + off1[p] + MOFF, c]
                            Z[2 * p + c] = O1[i, sl, p, c]
                    lawson(Z, 2, Ph2, Ph, h, omk, oc01, 0, SRC1_TP, SRC1_SP, hq1, gkk, srca, 1, yb1e)
                    for p in range(2):
                        for c in range(2):
                            O1[i, sl, p, c] = Z[2 * p + c]
                    for p in range(3):
                        oc02[p] = C0[om_ + off2[p] + MOFF]
                        for c in range(2):
                            Qh2[2 * p + c] = EXP[0, 1, om_ + off2[p] + MOFF, c]
                            Qh[2 * p + c] = EXP[1, 1, om_ + off2[p] + MOFF, c]
                            Z[2 * p + c] = O2[i, sl, p, c]
                    ohq2[0] = HQ[om_ - 2 + MOFF, 1]
                    ohq2[1] = HQ[om_ + MOFF, 0]
                    ohq2[2] = HQ[om_ + MOFF, 1]
                    ohq2[3] = HQ[om_ + 2 + MOFF, 0]
                    lawson(Z, 3, Qh2, Qh, h, omk, oc02, 4, SRC2_TP, SRC2_SP, ohq2, gkk, yb1e, 2, NULL)
                    for p in range(3):
                        for c in range(2):
                            O2[i, sl, p, c] = Z[2 * p + c]

                # finish the base block (fourth stage derivative)
                for c in range(2):
                    kk[j, c] = 0.0
                kk[j, 0] = -1j * cj(om[j, 3]) * C0[mm + MOFF] * ya[j, 3, 1]
                kk[j, 1] = -1j * om[j, 3] * C0[mm + MOFF] * ya[j, 3, 0]
                for c in range(2):
                    A0[i, c] = EXP[1, 0, mm + MOFF, c] * A0[i, c] + (h / 6.0) * (
                        EXP[1, 0, mm + MOFF, c] * k1a[j, c]
                        + 2.0 * EXP[0, 0, mm + MOFF, c] * (k2a[j, c] + k3a[j, c]) + kk[j, c])

        step += 1
        istate[I_STEP] = step
        t_end = step * dt

        for j in range(n):
            i = idx[j]
            n2 = abs2(A0[i, 0]) + abs2(A0[i, 1])
            pj = 1.0 - n2
            u = uniforms[s, i]
            if u < pj:
                mm = mc[i]
                ee = abs2(A0[i, 1])
                r0s = CGR[mm + MOFF, 0] * CGR[mm + MOFF, 0] * ee
                r1s = CGR[mm + MOFF, 1] * CGR[mm + MOFF, 1] * ee
                r2s = CGR[mm + MOFF, 2] * CGR[mm + MOFF, 2] * ee
                rs = r0s + r1s + r2s
                x = u / pj * rs
                if x < r0s:
                    ch = 0
                elif x < r0s + r1s:
                    ch = 1
                else:
                    ch = 2
                if (ch == 0 and r0s == 0.0) or (ch == 1 and r1s == 0.0) or (ch == 2 and r2s == 0.0):
                    ch = 0
                    x = r0s
                    if r1s > x:
                        ch = 1
                        x = r1s
                    if r2s > x:
                        ch = 2
                q = ch - 1
                for c in range(2):
                    Y[c] = A0[i, c]
                project(Y, 1, <int>mm, off2 + 1, q, CGR)
                for c in range(2):
                    A0[i, c] = Y[c]
                for p in range(2):
                    for c in range(2):
                        Y[2 * p + c] = A1[i, p, c]
                project(Y, 2, <int>mm, off1, q, CGR)
                for p in range(2):
                    for c in range(2):
                        A1[i, p, c] = Y[2 * p + c]
                for p in range(3):
                    for c in range(2):
                        Y[2 * p + c] = A2[i, p, c]
                project(Y, 3, <int>mm, off2, q, CGR)
                for p in range(3):
                    for c in range(2):
                        A2[i, p, c] = Y[2 * p + c]
                for sl in range(S):
                    for p in range(2):
                        for c in range(2):
                            Y[2 * p + c] = B1[i, sl, p, c]
                    project(Y, 2, <int>mm, off1, q, CGR)
                    for p in range(2):
                        for c in range(2):
                            B1[i, sl, p, c] = Y[2 * p + c]
                    for p in range(3):
                        for c in range(2):
                            Y[2 * p + c] = B2[i, sl, p, c]
                    project(Y, 3, <int>mm, off2, q, CGR)
                    for p in range(3):
                        for c in range(2):
                            B2[i, sl, p, c] = Y[2 * p + c]
                mc[i] = mm - q
                ne = <int>istate[I_NEV]
                if ne < ncap_ev:
                    events[ne, 0] = step
                    events[ne, 1] = 0 if q == 0 else (1 if q == 1 else 2)
                    events[ne, 2] = aid[i]
                    events[ne, 3] = mm - q
                istate[I_NEV] = ne + 1
                n2 = abs2(A0[i, 0]) + abs2(A0[i, 1])
            inv = 1.0 / sqrt(n2)
            for c in range(2):
                A0[i, c] = A0[i, c] * inv
            for p in range(2):
                for c in range(2):
                    A1[i, p, c] = A1[i, p, c] * inv
            for p in range(3):
                for c in range(2):
                    A2[i, p, c] = A2[i, p, c] * inv
            for sl in range(S):
                for p in range(2):
                    for c in range(2):
                        B1[i, sl, p, c] = B1[i, sl, p, c] * inv
                for p in range(3):
                    for c in range(2):
                        B2[i, sl, p, c] = B2[i, sl, p, c] * inv

            # own-record jumps: waiting-time method against a drawn threshold
            for sl in range(S):
                if slive[sl] == 0 or bact[i, sl] == 0:
                    continue
                n1 = 0.0
                for p in range(2):
                    for c in range(2):
                        n1 += abs2(O1[i, sl, p, c])
                if n1 >= othr[i, sl] * ow[i, sl]:
                    continue
                om_ = omc[i, sl]
                r0s = 0.0
                r1s = 0.0
                r2s = 0.0
                for p in range(2):
                    ee = abs2(O1[i, sl, p, 1])
                    r0s += CGR[om_ + off1[p] + MOFF, 0] * CGR[om_ + off1[p] + MOFF, 0] * ee
                    r1s += CGR[om_ + off1[p] + MOFF, 1] * CGR[om_ + off1[p] + MOFF, 1] * ee
                    r2s += CGR[om_ + off1[p] + MOFF, 2] * CGR[om_ + off1[p] + MOFF, 2] * ee
                rs = r0s + r1s + r2s
                if rs <= 0.0:
                    continue
                x = next_uniform(&rng[0]) * rs
                if x < r0s:
                    ch = 0
                elif x < r0s + r1s:
                    ch = 1
                else:
                    ch = 2
                if (ch == 0 and r0s == 0.0) or (ch == 1 and r1s == 0.0) or (ch == 2 and r2s == 0.0):
                    ch = 0
                    x = r0s
                    if r1s > x:
                        ch = 1
                        x = r1s
                    if r2s > x:
                        ch = 2
                q = ch - 1
                for p in range(2):
                    for c in range(2):
                        Y[2 * p + c] = O1[i, sl, p, c]
                project(Y, 2, <int>om_, off1, q, CGR)
                n1 = 0.0
                for p in range(2):
                    for c in range(2):
                        O1[i, sl, p, c] = Y[2 * p + c]
                        n1 += abs2(Y[2 * p + c])
                for p in range(3):
                    for c in range(2):
                        Y[2 * p + c] = O2[i, sl, p, c]
                project(Y, 3, <int>om_, off2, q, CGR)
                inv = sqrt(ow[i, sl] / n1)
                for p in range(3):
                    for c in range(2):
                        O2[i, sl, p, c] = Y[2 * p + c] * inv
                for p in range(2):
                    for c in range(2):
                        O1[i, sl, p, c] = O1[i, sl, p, c] * inv
                omc[i, sl] = om_ - q
                othr[i, sl] = next_uniform(&rng[0])

        if step % rec_every == 0:
            n = 0
            for i in range(M):
                if active[i] != 0:
                    idx[n] = i
                    n += 1
            v = v0
            pol = 0.0
            salpha = 0.0
            x = 0.0
            for j in range(n):
                i = idx[j]
                gk[j, 0] = coupling(prm, geo, i, t_end)
                pol = pol + gk[j, 0] * (C0[mc[i] + MOFF] * cj(A0[i, 0]) * A0[i, 1])
                alpha[i] = abs2(A1[i, 0, 0]) + abs2(A1[i, 0, 1]) + abs2(A1[i, 1, 0]) + abs2(A1[i, 1, 1])
                salpha += alpha[i]
                if gm > 0:
                    x += (gk[j, 0] / gm) * (gk[j, 0] / gm)
            if absorb and n > 0:
                v = v0 - 1j / kap * pol
            if betav:
                rnow = v / v0
            else:
                rnow = 1.0
            tp = <int>istate[I_TRACE]
            if tp < ntr:
                trace[tp, 0] = t_end
                trace[tp, 1] = salpha
                trace[tp, 2] = abs2(v)
                trace[tp, 3] = n
                trace[tp, 4] = x
                istate[I_TRACE] = tp + 1

            new_slot = -1
            if step >= start_step and step % samp_every == 0:
                new_slot = <int>istate[I_NEXT_SLOT]
            for kb in range(S + 1):
                if kb < S:
                    sl = kb
                    if slive[sl] == 0:
                        continue
                else:
                    if new_slot < 0:
                        break
                    sl = new_slot
                    if slive[sl] != 0:
                        istate[I_STATUS] = ST_RING
                        return s + 1
                    slive[sl] = 1
                    sstart[sl] = step
                    sD[sl] = 0.0
                    sr0[sl] = rnow
                    for j in range(n):
                        i = idx[j]
                        for p in range(2):
                            for c in range(2):
                                B1[i, sl, p, c] = A1[i, p, c]
                        for p in range(3):
                            for c in range(2):
                                B2[i, sl, p, c] = 2.0 * A2[i, p, c]
                                O2[i, sl, p, c] = 2.0 * A2[i, p, c]
                        for p in range(2):
                            for c in range(2):
                                O1[i, sl, p, c] = A1[i, p, c]
                        ow[i, sl] = alpha[i]
                        omc[i, sl] = mc[i]
                        othr[i, sl] = next_uniform(&rng[0])
                        bact[i, sl] = 1 if alpha[i] > 0.0 else 0
                    nadd1(tot, totc, 0, salpha)
                    nadd1(tot, totc, 1, abs2(rnow))
                    nadd1(tot, totc, 2, 1.0)
                    istate[I_NEXT_SLOT] = (sl + 1) % S
                kb2 = (step - sstart[sl]) // rec_every
                Sb = 0.0
                Sab = 0.0
                Sz2 = 0.0
                Sc2 = 0.0
                So = 0.0
                Sz = 0.0
                Sc = 0.0
                for j in range(n):
                    i = idx[j]
                    if bact[i, sl] == 0:
                        continue
                    bet = ow[i, sl]
                    zz = 0.0
                    n1 = 0.0
                    for p in range(2):
                        for c in range(2):
                            n1 += abs2(O1[i, sl, p, c])
                            zz = zz + cj(A1[i, p, c]) * B1[i, sl, p, c]
                    cc = cj(A0[i, 0]) * B2[i, sl, 1, 0] + cj(A0[i, 1]) * B2[i, sl, 1, 1]
                    o2 = 0.0
                    for p in range(3):
                        for c in range(2):
                            o2 += abs2(O2[i, sl, p, c])
                    if n1 > 0.0:
                        So += bet * o2 / n1
                    Sb += bet
                    Sab += alpha[i] * bet
                    Sz = Sz + zz
                    Sz2 += abs2(zz)
                    Sc = Sc + cc
                    Sc2 += abs2(cc)
                D = sD[sl]
                r0 = sr0[sl]
                hom = cj(rnow) * r0 * cj(Sz)
                ccr = cj(r0 * rnow) * Sc
                vals[0] = So
                vals[1] = abs2(Sz) - Sz2
                vals[2] = salpha * Sb - Sab
                vals[3] = abs2(Sc) - Sc2
                vals[4] = D * salpha
                vals[5] = abs2(rnow) * (Sb + D)
                vals[6] = abs2(r0) * salpha
                vals[7] = hom.real
                vals[8] = hom.imag
                vals[9] = abs2(r0 * rnow)
                vals[10] = ccr.real
                vals[11] = ccr.imag
                for c in range(NACC):
                    nadd(acc, accc, <int>c, kb2, vals[c])
                nbin[kb2] += 1
                if kb2 == nb - 1:
                    slive[sl] = 0
                    for i in range(M):
                        bact[i, sl] = 0
            vstate[0] = v
    return n_steps
