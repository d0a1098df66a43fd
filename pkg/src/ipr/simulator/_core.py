"""Compiled inner loop of the rigid-body solver.

Contacts come from sample points (hull vertices plus edge samples) of one
body tested against the face half-spaces of the other. Each contact carries
a stable key (bodies, sample index, side) so impulses can be warm started
from the previous step.
"""
import numpy as np
from numba import njit

STATIC_PLANE = -1
EFFECTOR = -2


@njit(cache=True)
def quat_to_mat(q):
    x, y, z, w = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - z * w)
    m[0, 2] = 2 * (x * z + y * w)
    m[1, 0] = 2 * (x * y + z * w)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - x * w)
    m[2, 0] = 2 * (x * z - y * w)
    m[2, 1] = 2 * (y * z + x * w)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def _key(a, b, sample, side):
    return ((np.int64(a) + 2) * 65536 + (np.int64(b) + 2)) * 16777216 + np.int64(sample) * 2 + side


@njit(cache=True, inline="always")
def _mv(m, x0, x1, x2):
    return (m[0, 0] * x0 + m[0, 1] * x1 + m[0, 2] * x2,
            m[1, 0] * x0 + m[1, 1] * x1 + m[1, 2] * x2,
            m[2, 0] * x0 + m[2, 1] * x1 + m[2, 2] * x2)


@njit(cache=True, inline="always")
def _mtv(m, x0, x1, x2):
    return (m[0, 0] * x0 + m[1, 0] * x1 + m[2, 0] * x2,
            m[0, 1] * x0 + m[1, 1] * x1 + m[2, 1] * x2,
            m[0, 2] * x0 + m[1, 2] * x1 + m[2, 2] * x2)


@njit(cache=True, inline="always")
def _cr(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def detect(pos, rots, samples, sstart, fnorm, foff, fstart, radius, static,
           planes_n, planes_o, eff_c, eff_r, eff_on, margin):
    nb = pos.shape[0]
    total_s = samples.shape[0]
    cap = (nb + planes_n.shape[0]) * total_s + nb + 8
    ca = np.empty(cap, np.int64)
    cb = np.empty(cap, np.int64)
    cn = np.empty((cap, 3))
    cp = np.empty((cap, 3))
    cpen = np.empty(cap)
    ckey = np.empty(cap, np.int64)
    nc = 0
    # world-space samples
    wsamp = np.empty((total_s, 3))
    for i in range(nb):
        r = rots[i]
        for s in range(sstart[i], sstart[i + 1]):
            x0, x1, x2 = _mv(r, samples[s, 0], samples[s, 1], samples[s, 2])
            wsamp[s, 0] = x0 + pos[i, 0]
            wsamp[s, 1] = x1 + pos[i, 1]
            wsamp[s, 2] = x2 + pos[i, 2]
    # body vs static planes
    for i in range(nb):
        if static[i]:
            continue
        for p in range(planes_n.shape[0]):
            n0, n1, n2 = planes_n[p, 0], planes_n[p, 1], planes_n[p, 2]
            if n0 * pos[i, 0] + n1 * pos[i, 1] + n2 * pos[i, 2] - planes_o[p] > radius[i] + margin:
                continue
            for s in range(sstart[i], sstart[i + 1]):
                d = n0 * wsamp[s, 0] + n1 * wsamp[s, 1] + n2 * wsamp[s, 2] - planes_o[p]
                if d < margin:
                    ca[nc] = i
                    cb[nc] = STATIC_PLANE
                    cn[nc, 0] = n0
                    cn[nc, 1] = n1
                    cn[nc, 2] = n2
                    cp[nc, 0] = wsamp[s, 0] - n0 * d
                    cp[nc, 1] = wsamp[s, 1] - n1 * d
                    cp[nc, 2] = wsamp[s, 2] - n2 * d
                    cpen[nc] = -d
                    ckey[nc] = _key(i, 60000 + p, s, 0)
                    nc += 1
    # body vs body, both directions
    for a in range(nb):
        for b in range(a + 1, nb):
            if static[a] and static[b]:
                continue
            dx0 = pos[a, 0] - pos[b, 0]
            dx1 = pos[a, 1] - pos[b, 1]
            dx2 = pos[a, 2] - pos[b, 2]
            if np.sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2) > radius[a] + radius[b] + margin:
                continue
            for side in range(2):
                if side == 0:
                    src, dst = a, b
                else:
                    src, dst = b, a
                r = rots[dst]
                for s in range(sstart[src], sstart[src + 1]):
                    x0, x1, x2 = _mtv(r, wsamp[s, 0] - pos[dst, 0], wsamp[s, 1] - pos[dst, 1],
                                      wsamp[s, 2] - pos[dst, 2])
                    best = -1e30
                    bf = -1
                    for f in range(fstart[dst], fstart[dst + 1]):
                        d = fnorm[f, 0] * x0 + fnorm[f, 1] * x1 + fnorm[f, 2] * x2 - foff[f]
                        if d > best:
                            best = d
                            bf = f
                            if d > margin:
                                break
                    if best < margin:
                        # normal points from the second body (cb) toward the first (ca)
                        nw0, nw1, nw2 = _mv(r, fnorm[bf, 0], fnorm[bf, 1], fnorm[bf, 2])
                        ca[nc] = src
                        cb[nc] = dst
                        cn[nc, 0] = nw0
                        cn[nc, 1] = nw1
                        cn[nc, 2] = nw2
                        cp[nc, 0] = wsamp[s, 0]
                        cp[nc, 1] = wsamp[s, 1]
                        cp[nc, 2] = wsamp[s, 2]
                        cpen[nc] = -best
                        ckey[nc] = _key(src, dst, s, side)
                        nc += 1
    # kinematic effector sphere vs bodies
    if eff_on:
        for i in range(nb):
            if static[i]:
                continue
            dx0 = eff_c[0] - pos[i, 0]
            dx1 = eff_c[1] - pos[i, 1]
            dx2 = eff_c[2] - pos[i, 2]
            if np.sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2) > radius[i] + eff_r + margin:
                continue
            x0, x1, x2 = _mtv(rots[i], dx0, dx1, dx2)
            best = -1e30
            bf = -1
            for f in range(fstart[i], fstart[i + 1]):
                d = fnorm[f, 0] * x0 + fnorm[f, 1] * x1 + fnorm[f, 2] * x2 - foff[f]
                if d > best:
                    best = d
                    bf = f
            if best < eff_r + margin:
                nw0, nw1, nw2 = _mv(rots[i], fnorm[bf, 0], fnorm[bf, 1], fnorm[bf, 2])
                ca[nc] = i
                cb[nc] = EFFECTOR
                cn[nc, 0] = -nw0
                cn[nc, 1] = -nw1
                cn[nc, 2] = -nw2
                cp[nc, 0] = eff_c[0] - nw0 * best
                cp[nc, 1] = eff_c[1] - nw1 * best
                cp[nc, 2] = eff_c[2] - nw2 * best
                cpen[nc] = eff_r - best
                ckey[nc] = _key(i, EFFECTOR, bf, 0)
                nc += 1
    return nc, ca[:nc], cb[:nc], cn[:nc], cp[:nc], cpen[:nc], ckey[:nc]


@njit(cache=True)
def step(pos, quat, vel, omega, inv_mass, inv_inertia_body, friction, static,
         samples, sstart, fnorm, foff, fstart, radius,
         planes_n, planes_o, eff_c, eff_v, eff_r, eff_on, eff_mu,
         gravity, dt, iterations, prev_keys, prev_imp,
         baumgarte, slop, lin_damp, ang_damp):
    nb = pos.shape[0]
    rots = np.empty((nb, 3, 3))
    inv_i = np.empty((nb, 3, 3))
    for i in range(nb):
        rots[i] = quat_to_mat(quat[i])
        inv_i[i] = rots[i] @ inv_inertia_body[i] @ rots[i].T
        if not static[i]:
            for k in range(3):
                vel[i, k] += gravity[k] * dt
                vel[i, k] *= 1.0 / (1.0 + dt * lin_damp)
                omega[i, k] *= 1.0 / (1.0 + dt * ang_damp)

    nc, ca, cb, cn, cp, cpen, ckey = detect(pos, rots, samples, sstart, fnorm, foff, fstart,
                                            radius, static, planes_n, planes_o,
                                            eff_c, eff_r, eff_on, 0.0)
    # per contact: lever arms, basis (n, t1, t2), effective masses, impulses
    ra = np.zeros((nc, 3))
    rb = np.zeros((nc, 3))
    basis = np.zeros((nc, 3, 3))
    keff = np.zeros((nc, 3))
    bias = np.zeros(nc)
    mu = np.zeros(nc)
    lam = np.zeros((nc, 3))

    order = np.argsort(prev_keys)
    sorted_keys = prev_keys[order]

    for c in range(nc):
        a = ca[c]
        b = cb[c]
        n0, n1, n2 = cn[c, 0], cn[c, 1], cn[c, 2]
        for k in range(3):
            ra[c, k] = cp[c, k] - pos[a, k]
        if abs(n0) < 0.57735:
            h0, h1, h2 = 1.0, 0.0, 0.0
        else:
            h0, h1, h2 = 0.0, 1.0, 0.0
        u0, u1, u2 = _cr(n0, n1, n2, h0, h1, h2)
        ln = np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
        u0, u1, u2 = u0 / ln, u1 / ln, u2 / ln
        w0, w1, w2 = _cr(n0, n1, n2, u0, u1, u2)
        basis[c, 0, 0], basis[c, 0, 1], basis[c, 0, 2] = n0, n1, n2
        basis[c, 1, 0], basis[c, 1, 1], basis[c, 1, 2] = u0, u1, u2
        basis[c, 2, 0], basis[c, 2, 1], basis[c, 2, 2] = w0, w1, w2
        ima = inv_mass[a]
        if b >= 0:
            for k in range(3):
                rb[c, k] = cp[c, k] - pos[b, k]
            imb = inv_mass[b]
            mu[c] = np.sqrt(friction[a] * friction[b])
        else:
            imb = 0.0
            if b == EFFECTOR:
                mu[c] = np.sqrt(friction[a] * eff_mu)
            else:
                mu[c] = friction[a]
        for k in range(3):
            d0, d1, d2 = basis[c, k, 0], basis[c, k, 1], basis[c, k, 2]
            r0, r1, r2 = _cr(ra[c, 0], ra[c, 1], ra[c, 2], d0, d1, d2)
            i0, i1, i2 = _mv(inv_i[a], r0, r1, r2)
            val = ima + r0 * i0 + r1 * i1 + r2 * i2
            if b >= 0:
                r0, r1, r2 = _cr(rb[c, 0], rb[c, 1], rb[c, 2], d0, d1, d2)
                i0, i1, i2 = _mv(inv_i[b], r0, r1, r2)
                val += imb + r0 * i0 + r1 * i1 + r2 * i2
            keff[c, k] = val
        bias[c] = min(baumgarte / dt * max(cpen[c] - slop, 0.0), 1.0)
        # warm start
        j = np.searchsorted(sorted_keys, ckey[c])
        if j < sorted_keys.shape[0] and sorted_keys[j] == ckey[c]:
            pi = prev_imp[order[j]]
            lam[c, 0] = pi[0]
            lam[c, 1] = pi[1] * u0 + pi[2] * u1 + pi[3] * u2
            lam[c, 2] = pi[1] * w0 + pi[2] * w1 + pi[3] * w2
            j0 = n0 * lam[c, 0] + u0 * lam[c, 1] + w0 * lam[c, 2]
            j1 = n1 * lam[c, 0] + u1 * lam[c, 1] + w1 * lam[c, 2]
            j2 = n2 * lam[c, 0] + u2 * lam[c, 1] + w2 * lam[c, 2]
            _apply(c, a, b, j0, j1, j2, ra, rb, vel, omega, inv_mass, inv_i)

    for _ in range(iterations):
        for c in range(nc):
            a = ca[c]
            b = cb[c]
            # friction first, bounded by the current normal impulse
            for k in (1, 2, 0):
                if keff[c, k] <= 0.0:
                    continue
                v0, v1, v2 = _rel_vel(c, a, b, ra, rb, vel, omega, eff_v)
                d0, d1, d2 = basis[c, k, 0], basis[c, k, 1], basis[c, k, 2]
                vn = v0 * d0 + v1 * d1 + v2 * d2
                old = lam[c, k]
                if k == 0:
                    new = max(old + (bias[c] - vn) / keff[c, 0], 0.0)
                else:
                    lim = mu[c] * lam[c, 0]
                    new = min(max(old - vn / keff[c, k], -lim), lim)
                dl = new - old
                lam[c, k] = new
                _apply(c, a, b, d0 * dl, d1 * dl, d2 * dl, ra, rb, vel, omega, inv_mass, inv_i)

    for i in range(nb):
        if static[i]:
            continue
        for k in range(3):
            pos[i, k] += vel[i, k] * dt
        wx, wy, wz = omega[i, 0], omega[i, 1], omega[i, 2]
        q = quat[i]
        # dq = 0.5 * (w, 0) * q in scalar-last layout
        dx = 0.5 * dt * (wx * q[3] + wy * q[2] - wz * q[1])
        dy = 0.5 * dt * (-wx * q[2] + wy * q[3] + wz * q[0])
        dz = 0.5 * dt * (wx * q[1] - wy * q[0] + wz * q[3])
        dw = 0.5 * dt * (-wx * q[0] - wy * q[1] - wz * q[2])
        q[0] += dx
        q[1] += dy
        q[2] += dz
        q[3] += dw
        qn = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        for k in range(4):
            q[k] /= qn

    imp_out = np.empty((nc, 4))
    for c in range(nc):
        imp_out[c, 0] = lam[c, 0]
        for k in range(3):
            imp_out[c, 1 + k] = basis[c, 1, k] * lam[c, 1] + basis[c, 2, k] * lam[c, 2]
    max_pen = 0.0
    for c in range(nc):
        if cb[c] != EFFECTOR and cpen[c] > max_pen:
            max_pen = cpen[c]
    return ckey, imp_out, max_pen


@njit(cache=True, inline="always")
def _rel_vel(c, a, b, ra, rb, vel, omega, eff_v):
    c0, c1, c2 = _cr(omega[a, 0], omega[a, 1], omega[a, 2], ra[c, 0], ra[c, 1], ra[c, 2])
    v0 = vel[a, 0] + c0
    v1 = vel[a, 1] + c1
    v2 = vel[a, 2] + c2
    if b >= 0:
        c0, c1, c2 = _cr(omega[b, 0], omega[b, 1], omega[b, 2], rb[c, 0], rb[c, 1], rb[c, 2])
        v0 -= vel[b, 0] + c0
        v1 -= vel[b, 1] + c1
        v2 -= vel[b, 2] + c2
    elif b == EFFECTOR:
        v0 -= eff_v[0]
        v1 -= eff_v[1]
        v2 -= eff_v[2]
    return v0, v1, v2


@njit(cache=True, inline="always")
def _apply(c, a, b, j0, j1, j2, ra, rb, vel, omega, inv_mass, inv_i):
    vel[a, 0] += j0 * inv_mass[a]
    vel[a, 1] += j1 * inv_mass[a]
    vel[a, 2] += j2 * inv_mass[a]
    t0, t1, t2 = _cr(ra[c, 0], ra[c, 1], ra[c, 2], j0, j1, j2)
    i0, i1, i2 = _mv(inv_i[a], t0, t1, t2)
    omega[a, 0] += i0
    omega[a, 1] += i1
    omega[a, 2] += i2
    if b >= 0:
        vel[b, 0] -= j0 * inv_mass[b]
        vel[b, 1] -= j1 * inv_mass[b]
        vel[b, 2] -= j2 * inv_mass[b]
        t0, t1, t2 = _cr(rb[c, 0], rb[c, 1], rb[c, 2], j0, j1, j2)
        i0, i1, i2 = _mv(inv_i[b], t0, t1, t2)
        omega[b, 0] -= i0
        omega[b, 1] -= i1
        omega[b, 2] -= i2


@njit(cache=True)
def max_penetration(pos, quat, samples, sstart, fnorm, foff, fstart, radius, static,
                    planes_n, planes_o):
    nb = pos.shape[0]
    rots = np.empty((nb, 3, 3))
    for i in range(nb):
        rots[i] = quat_to_mat(quat[i])
    nc, ca, cb, cn, cp, cpen, ckey = detect(pos, rots, samples, sstart, fnorm, foff, fstart,
                                            radius, static, planes_n, planes_o,
                                            np.zeros(3), 0.0, False, 0.0)
    m = 0.0
    for c in range(nc):
        if cpen[c] > m:
            m = cpen[c]
    return m
