"""Pure-numpy trajectory kernel.

Mirrors ``_kernel.pyx`` operation for operation so that both backends give the
same trajectories (to rounding) for the same inputs. Vectorized over atoms and
conditional samples; the step loop stays in Python, so this backend is meant
for tests and machines without a C compiler.

Array layout (M atom slots, S sample slots):
    A0 (M,2)        zero-photon block, [g_m, e_m] at the center m
    A1 (M,2,2)      one-photon block, pairs at m-1, m+1
    A2 (M,3,2)      two-photon block, pairs at m-2, m, m+2
    B1 (M,S,2,2)    conditional zero-photon block per sample
    B2 (M,S,3,2)    conditional one-photon block per sample
"""

from __future__ import annotations

import numpy as np

from .kernel_layout import (
    ACC_AA, ACC_B4, ACC_BB, ACC_C_IM, ACC_C_RE, ACC_CC, ACC_CROSS, ACC_DALPHA,
    ACC_HOM_IM, ACC_HOM_RE, ACC_ONE, ACC_TWO, I_ARR, I_NEXT_ID, I_NEXT_SLOT,
    I_NEV, I_STATUS, I_STEP, I_TRACE, MOFF, NACC, P_ABS, P_BETAV, P_DT,
    P_GAMMA, P_GMAX, P_KAPPA, P_KWAVE, P_STANDING, P_V0, P_WAIST, Q_MAXAT,
    Q_NB, Q_REC, Q_S, Q_SAMP, Q_START, ST_OVERFLOW, ST_RING,
)

BACKEND = "numpy"

# source wiring: (target pair, source pair, q); ground m_t is fed from e_{m_t+q}
_SRC1 = ((0, 0, 1), (1, 0, -1))
_SRC2 = ((0, 0, 1), (1, 0, -1), (1, 1, 1), (2, 1, -1))
_OFF1 = np.array([-1, 1])
_OFF2 = np.array([-2, 0, 2])


def _nadd(acc, comp, k, vals):
    # Neumaier compensated add of vals into column k
    s = acc[:, k]
    t = s + vals
    big = np.abs(s) >= np.abs(vals)
    comp[:, k] += np.where(big, (s - t) + vals, (vals - t) + s)
    acc[:, k] = t


def _nadd1(arr, comp, j, x):
    s = arr[j]
    t = s + x
    if abs(s) >= abs(x):
        comp[j] += (s - t) + x
    else:
        comp[j] += (x - t) + s
    arr[j] = t


_MASK = (1 << 64) - 1


def next_uniform(rng):
    """splitmix64 step on a one-element uint64 array; uniform on (0, 1)."""
    x = (int(rng[0]) + 0x9E3779B97F4A7C15) & _MASK
    rng[0] = x
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return ((z >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def _coupling(prm, geo, idx, t):
    x = geo[idx, 0] + geo[idx, 3] * (t - geo[idx, 5])
    y = geo[idx, 1] + geo[idx, 4] * (t - geo[idx, 5])
    z = geo[idx, 2]
    w = prm[P_WAIST]
    g = prm[P_GMAX] * np.exp(-(y * y + z * z) / (w * w))
    if prm[P_STANDING] != 0.0:
        g = g * np.cos(prm[P_KWAVE] * x)
    return g


def _vfield(prm, g, a0, c0m):
    v0 = prm[P_V0]
    if prm[P_ABS] == 0.0 or g.size == 0:
        return complex(v0)
    pol = c0m * np.conj(a0[:, 0]) * a0[:, 1]
    return complex(v0 - 1j / prm[P_KAPPA] * np.sum(g * pol))


def _drive_deriv(Y, om, c0):
    # Y (..., P, 2); om broadcast (..., 1); c0 (..., P)
    d = np.empty_like(Y)
    d[..., 0] = -1j * np.conj(om) * c0 * Y[..., 1]
    d[..., 1] = -1j * om * c0 * Y[..., 0]
    return d


def _add_source(d, gk, hq, src_e, wiring):
    # d (..., P, 2); gk (...,); hq (..., len(wiring)); src_e (..., Psrc)
    for j, (tp, sp, _q) in enumerate(wiring):
        d[..., tp, 0] += -1j * gk * hq[..., j] * src_e[..., sp]


def _lawson(Y0, Eh2, Eh, h, deriv):
    """One Lawson (integrating-factor) RK4 step; returns new Y and stage values."""
    k1 = deriv(0, Y0)
    Y2 = Eh2 * (Y0 + 0.5 * h * k1)
    k2 = deriv(1, Y2)
    Y3 = Eh2 * Y0 + 0.5 * h * k2
    k3 = deriv(2, Y3)
    Y4 = Eh * Y0 + h * Eh2 * k3
    k4 = deriv(3, Y4)
    Yn = Eh * Y0 + (h / 6.0) * (Eh * k1 + 2.0 * Eh2 * (k2 + k3) + k4)
    return Yn, (Y0, Y2, Y3, Y4)


def run_chunk(prm, iprm, EXP, C0, HQ, CGR, geo, texit, active, aid, mc,
              A0, A1, A2, B1, B2, bact, slive, sstart, sD, sr0,
              O1, O2, ow, omc, othr, rng, istate, vstate, arrivals, uniforms, n_steps,
              acc, accc, nbin, tot, totc, trace, events):
    dt = prm[P_DT]
    h = dt
    kap = prm[P_KAPPA]
    rec_every = int(iprm[Q_REC])
    samp_every = int(iprm[Q_SAMP])
    nb = int(iprm[Q_NB])
    S = int(iprm[Q_S])
    start_step = int(iprm[Q_START])
    M = int(iprm[Q_MAXAT])
    v0 = prm[P_V0]
    K = arrivals.shape[0]
    ncap_ev = events.shape[0]
    ntr = trace.shape[0]

    for s in range(n_steps):
        step = int(istate[I_STEP])
        t = step * dt

        # departures
        for i in np.nonzero((active != 0) & (texit <= t))[0]:
            live = np.nonzero((slive != 0) & (bact[i] != 0))[0]
            for sl in live:
                sD[sl] += ow[i, sl]
            active[i] = 0
            bact[i, :] = 0
        # arrivals
        while istate[I_ARR] < K and arrivals[istate[I_ARR], 0] <= t:
            row = arrivals[istate[I_ARR]]
            free = np.nonzero(active[:M] == 0)[0]
            if free.size == 0:
                istate[I_STATUS] = ST_OVERFLOW
                return s
            i = int(free[0])
            geo[i, 0] = row[1]
            geo[i, 1] = row[2]
            geo[i, 2] = row[3]
            geo[i, 3] = row[4]
            geo[i, 4] = row[5]
            geo[i, 5] = row[0]
            texit[i] = row[7]
            mc[i] = int(row[6])
            A0[i] = (1.0, 0.0)
            A1[i] = 0.0
            A2[i] = 0.0
            B1[i] = 0.0
            B2[i] = 0.0
            bact[i, :] = 0
            aid[i] = istate[I_NEXT_ID]
            istate[I_NEXT_ID] += 1
            active[i] = 1
            istate[I_ARR] += 1

        idx = np.nonzero(active != 0)[0]
        n = idx.size
        if n:
            m = mc[idx]
            gks = [_coupling(prm, geo, idx, t), None, None, None]
            gks[1] = _coupling(prm, geo, idx, t + 0.5 * h)
            gks[2] = gks[1]
            gks[3] = _coupling(prm, geo, idx, t + h)
            c0a = C0[m + MOFF]
            om = [None] * 4

            # base zero-photon block, coupled to all atoms through the V field
            a0 = A0[idx][:, None, :]  # (n,1,2)
            Eh2 = EXP[0, 0][m + MOFF][:, None, :]
            Eh = EXP[1, 0][m + MOFF][:, None, :]

            def da0(k, Y):
                v = _vfield(prm, gks[k], Y[:, 0, :], c0a)
                om[k] = gks[k] * v
                return _drive_deriv(Y, om[k][:, None], c0a[:, None])

            a0n, ya = _lawson(a0, Eh2, Eh, h, da0)
            omk = om
            c01 = C0[m[:, None] + _OFF1 + MOFF]
            c02 = C0[m[:, None] + _OFF2 + MOFF]
            hq1 = np.stack([HQ[m - 1 + MOFF, 1], HQ[m + 1 + MOFF, 0]], axis=-1)
            hq2 = np.stack([HQ[m - 2 + MOFF, 1], HQ[m + MOFF, 0], HQ[m + MOFF, 1],
                            HQ[m + 2 + MOFF, 0]], axis=-1)

            # one-photon block fed by the zero-photon block
            a1 = A1[idx]
            E1h2 = EXP[0, 1][m[:, None] + _OFF1 + MOFF]
            E1h = EXP[1, 1][m[:, None] + _OFF1 + MOFF]

            def da1(k, Y):
                d = _drive_deriv(Y, omk[k][:, None], c01)
                _add_source(d, gks[k], hq1, ya[k][:, :, 1], _SRC1)
                return d

            a1n, y1 = _lawson(a1, E1h2, E1h, h, da1)

            a2 = A2[idx]
            E2h2 = EXP[0, 2][m[:, None] + _OFF2 + MOFF]
            E2h = EXP[1, 2][m[:, None] + _OFF2 + MOFF]

            def da2(k, Y):
                d = _drive_deriv(Y, omk[k][:, None], c02)
                _add_source(d, gks[k], hq2, y1[k][:, :, 1], _SRC2)
                return d

            a2n, _ = _lawson(a2, E2h2, E2h, h, da2)

            # conditional blocks of every live sample
            b_on = (bact[idx] != 0) & (slive[None, :] != 0)  # (n,S)
            if b_on.any():
                ai, si = np.nonzero(b_on)
                gi = [g[ai] for g in gks]
                omi = [o[ai] for o in omk]
                mi = m[ai]
                b1 = B1[idx[ai], si]
                Eb1h2 = EXP[0, 0][mi[:, None] + _OFF1 + MOFF]
                Eb1h = EXP[1, 0][mi[:, None] + _OFF1 + MOFF]
                c01i = c01[ai]

                def db1(k, Y):
                    return _drive_deriv(Y, omi[k][:, None], c01i)

                b1n, yb1 = _lawson(b1, Eb1h2, Eb1h, h, db1)
                b2 = B2[idx[ai], si]
                Eb2h2 = EXP[0, 1][mi[:, None] + _OFF2 + MOFF]
                Eb2h = EXP[1, 1][mi[:, None] + _OFF2 + MOFF]
                c02i = c02[ai]
                hq2i = hq2[ai]

                def db2(k, Y):
                    d = _drive_deriv(Y, omi[k][:, None], c02i)
                    _add_source(d, gi[k], hq2i, yb1[k][:, :, 1], _SRC2)
                    return d

                b2n, _ = _lawson(b2, Eb2h2, Eb2h, h, db2)
                B1[idx[ai], si] = b1n
                B2[idx[ai], si] = b2n

                # own-record copy, centered on its own m
                oi = omc[idx[ai], si]
                o1 = O1[idx[ai], si]
                Eo1h2 = EXP[0, 0][oi[:, None] + _OFF1 + MOFF]
                Eo1h = EXP[1, 0][oi[:, None] + _OFF1 + MOFF]
                oc01 = C0[oi[:, None] + _OFF1 + MOFF]

                def do1(k, Y):
                    return _drive_deriv(Y, omi[k][:, None], oc01)

                o1n, yo1 = _lawson(o1, Eo1h2, Eo1h, h, do1)
                o2 = O2[idx[ai], si]
                Eo2h2 = EXP[0, 1][oi[:, None] + _OFF2 + MOFF]
                Eo2h = EXP[1, 1][oi[:, None] + _OFF2 + MOFF]
                oc02 = C0[oi[:, None] + _OFF2 + MOFF]
                ohq2 = np.stack([HQ[oi - 2 + MOFF, 1], HQ[oi + MOFF, 0], HQ[oi + MOFF, 1],
                                 HQ[oi + 2 + MOFF, 0]], axis=-1)

                def do2(k, Y):
                    d = _drive_deriv(Y, omi[k][:, None], oc02)
                    _add_source(d, gi[k], ohq2, yo1[k][:, :, 1], _SRC2)
                    return d

                o2n, _ = _lawson(o2, Eo2h2, Eo2h, h, do2)
                O1[idx[ai], si] = o1n
                O2[idx[ai], si] = o2n

            A0[idx] = a0n[:, 0, :]
            A1[idx] = a1n
            A2[idx] = a2n

        step += 1
        istate[I_STEP] = step
        t_end = step * dt

        # spontaneous emission and renormalization
        for j in range(n):
            i = int(idx[j])
            g0, e0 = A0[i, 0], A0[i, 1]
            n2 = (g0 * np.conj(g0)).real + (e0 * np.conj(e0)).real
            p = 1.0 - n2
            u = uniforms[s, i]
            if u < p:
                mm = int(mc[i])
                ee = (e0 * np.conj(e0)).real
                r = CGR[mm + MOFF, :] ** 2 * ee
                rs = r[0] + r[1] + r[2]
                x = u / p * rs
                ch = 0 if x < r[0] else (1 if x < r[0] + r[1] else 2)
                if r[ch] == 0.0:
                    ch = int(np.argmax(r))
                q = ch - 1
                _jump(i, mm, q, A0, A1, A2, B1, B2, CGR)
                mc[i] = mm - q
                ne = int(istate[I_NEV])
                if ne < ncap_ev:
                    events[ne, 0] = step
                    events[ne, 1] = 0 if q == 0 else (1 if q == 1 else 2)
                    events[ne, 2] = aid[i]
                    events[ne, 3] = mm - q
                istate[I_NEV] = ne + 1
                g0, e0 = A0[i, 0], A0[i, 1]
                n2 = (g0 * np.conj(g0)).real + (e0 * np.conj(e0)).real
            inv = 1.0 / np.sqrt(n2)
            A0[i] *= inv
            A1[i] *= inv
            A2[i] *= inv
            B1[i] *= inv
            B2[i] *= inv
            for sl in range(S):
                if slive[sl] and bact[i, sl]:
                    _own_jump(i, sl, O1, O2, ow, omc, othr, rng, CGR)

        if step % rec_every == 0:
            idx = np.nonzero(active != 0)[0]
            gnow = _coupling(prm, geo, idx, t_end)
            m = mc[idx]
            vnow = _vfield(prm, gnow, A0[idx], C0[m + MOFF])
            rnow = vnow / v0 if (prm[P_BETAV] != 0.0 and v0 > 0) else 1.0 + 0j
            alpha = np.sum(np.abs(A1[idx]) ** 2, axis=(1, 2))
            salpha = float(np.sum(alpha))
            tp = int(istate[I_TRACE])
            if tp < ntr:
                trace[tp, 0] = t_end
                trace[tp, 1] = salpha
                trace[tp, 2] = abs(vnow) ** 2
                trace[tp, 3] = idx.size
                gm = prm[P_GMAX]
                trace[tp, 4] = float(np.sum((gnow / gm) ** 2)) if gm > 0 else 0.0
                istate[I_TRACE] = tp + 1

            # live samples first, then a new sample may start in a freed slot
            order = [sl for sl in range(S) if slive[sl]]
            new_slot = -1
            if step >= start_step and step % samp_every == 0:
                new_slot = int(istate[I_NEXT_SLOT])
            for sl in order + ([new_slot] if new_slot >= 0 else []):
                if sl == new_slot:
                    if slive[sl]:
                        istate[I_STATUS] = ST_RING
                        return s + 1
                    slive[sl] = 1
                    sstart[sl] = step
                    sD[sl] = 0.0
                    sr0[sl] = rnow
                    B1[idx, sl] = A1[idx]
                    B2[idx, sl] = 2.0 * A2[idx]
                    O1[idx, sl] = A1[idx]
                    O2[idx, sl] = 2.0 * A2[idx]
                    ow[idx, sl] = alpha
                    omc[idx, sl] = mc[idx]
                    for i in idx:
                        othr[i, sl] = next_uniform(rng)
                    bact[idx, sl] = (alpha > 0.0).astype(np.int8)
                    _nadd1(tot, totc, 0, salpha)
                    _nadd1(tot, totc, 1, abs(rnow) ** 2)
                    _nadd1(tot, totc, 2, 1.0)
                    istate[I_NEXT_SLOT] = (sl + 1) % S
                k = (step - int(sstart[sl])) // rec_every
                on = bact[idx, sl] != 0
                ii = idx[on]
                b1 = B1[ii, sl]
                beta = ow[ii, sl]
                z = np.sum(np.conj(A1[ii]) * b1, axis=(1, 2))
                c = np.conj(A0[ii, 0]) * B2[ii, sl, 1, 0] + np.conj(A0[ii, 1]) * B2[ii, sl, 1, 1]
                n1 = np.sum(np.abs(O1[ii, sl]) ** 2, axis=(1, 2))
                o2 = np.sum(np.abs(O2[ii, sl]) ** 2, axis=(1, 2))
                o = np.where(n1 > 0.0, beta * o2 / np.where(n1 > 0.0, n1, 1.0), 0.0)
                al = alpha[on]
                Sz = np.sum(z)
                Sc = np.sum(c)
                Sb = float(np.sum(beta))
                D = sD[sl]
                r0 = sr0[sl]
                hom = np.conj(rnow) * r0 * np.conj(Sz)
                cc = np.conj(r0 * rnow) * Sc
                vals = np.zeros(NACC)
                vals[ACC_ONE] = np.sum(o)
                vals[ACC_TWO] = abs(Sz) ** 2 - np.sum(np.abs(z) ** 2)
                vals[ACC_CROSS] = salpha * Sb - float(np.sum(al * beta))
                vals[ACC_CC] = abs(Sc) ** 2 - np.sum(np.abs(c) ** 2)
                vals[ACC_DALPHA] = D * salpha
                vals[ACC_BB] = abs(rnow) ** 2 * (Sb + D)
                vals[ACC_AA] = abs(r0) ** 2 * salpha
                vals[ACC_HOM_RE] = hom.real
                vals[ACC_HOM_IM] = hom.imag
                vals[ACC_B4] = abs(r0 * rnow) ** 2
                vals[ACC_C_RE] = cc.real
                vals[ACC_C_IM] = cc.imag
                _nadd(acc, accc, k, vals)
                nbin[k] += 1
                if k == nb - 1:
                    slive[sl] = 0
                    bact[:, sl] = 0
            vstate[0] = vnow
    return n_steps


def _jump(i, mm, q, A0, A1, A2, B1, B2, CGR):
    """Apply C_q = sum cg(m_e-q,q)|g_{m_e-q}><e_{m_e}| to every block of atom i."""
    def proj(blk, offs):
        # blk (..., P, 2), pair absolute m = mm + offs
        for p, off in enumerate(offs):
            me = mm + off
            w = CGR[me + MOFF, q + 1]
            blk[..., p, 0] = w * blk[..., p, 1]
            blk[..., p, 1] = 0.0

    a0 = A0[i][None, :]
    proj(a0, (0,))
    A0[i] = a0[0]
    proj(A1[i], (-1, 1))
    proj(A2[i], (-2, 0, 2))
    proj(B1[i], (-1, 1))
    proj(B2[i], (-2, 0, 2))


def _own_jump(i, sl, O1, O2, ow, omc, othr, rng, CGR):
    """Waiting-time jump of one own-record conditional copy."""
    o1 = O1[i, sl]
    n1 = float(np.sum(np.abs(o1) ** 2))
    if n1 >= othr[i, sl] * ow[i, sl]:
        return
    om = int(omc[i, sl])
    ee = np.abs(o1[:, 1]) ** 2
    r = np.zeros(3)
    for p, off in enumerate((-1, 1)):
        r += CGR[om + off + MOFF, :] ** 2 * ee[p]
    rs = r[0] + r[1] + r[2]
    if rs <= 0.0:
        return
    x = next_uniform(rng) * rs
    ch = 0 if x < r[0] else (1 if x < r[0] + r[1] else 2)
    if r[ch] == 0.0:
        ch = int(np.argmax(r))
    q = ch - 1
    for blk, offs in ((O1[i, sl], (-1, 1)), (O2[i, sl], (-2, 0, 2))):
        for p, off in enumerate(offs):
            blk[p, 0] = CGR[om + off + MOFF, q + 1] * blk[p, 1]
            blk[p, 1] = 0.0
    n1 = float(np.sum(np.abs(O1[i, sl]) ** 2))
    inv = np.sqrt(ow[i, sl] / n1)
    O1[i, sl] *= inv
    O2[i, sl] *= inv
    omc[i, sl] = om - q
    othr[i, sl] = next_uniform(rng)
