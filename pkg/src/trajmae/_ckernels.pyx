# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contracts as ``_kernels_py``."""

import numpy as np

from libc.math cimport exp, sqrt, fabs, INFINITY


def attention_forward(const double[:, :, :, ::1] q, const double[:, :, :, ::1] k,
                      const double[:, :, :, ::1] v, const unsigned char[:, :, ::1] allowed):
    cdef Py_ssize_t G = q.shape[0], H = q.shape[1], Lq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t Lk = k.shape[2]
    cdef double scale = 1.0 / sqrt(<double>dh)
    out_arr = np.zeros((G, H, Lq, dh))
    probs_arr = np.zeros((G, H, Lq, Lk))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, :, ::1] probs = probs_arr
    cdef Py_ssize_t g, h, i, j, c
    cdef double s, mx, z, p
    cdef bint any_key
    for g in range(G):
        for h in range(H):
            for i in range(Lq):
                mx = -INFINITY
                any_key = False
                for j in range(Lk):
                    if allowed[g, i, j]:
                        s = 0.0
                        for c in range(dh):
                            s += q[g, h, i, c] * k[g, h, j, c]
                        s = s * scale
                        probs[g, h, i, j] = s
                        if not any_key or s > mx:
                            mx = s
                        any_key = True
                if not any_key:
                    continue
                z = 0.0
                for j in range(Lk):
                    if allowed[g, i, j]:
                        p = exp(probs[g, h, i, j] - mx)
                        probs[g, h, i, j] = p
                        z += p
                for j in range(Lk):
                    if allowed[g, i, j]:
                        p = probs[g, h, i, j] / z
                        probs[g, h, i, j] = p
                        for c in range(dh):
                            out[g, h, i, c] += p * v[g, h, j, c]
    return out_arr, probs_arr


def attention_backward(const double[:, :, :, ::1] dout, const double[:, :, :, ::1] q,
                       const double[:, :, :, ::1] k, const double[:, :, :, ::1] v,
                       const double[:, :, :, ::1] probs):
    cdef Py_ssize_t G = q.shape[0], H = q.shape[1], Lq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t Lk = k.shape[2]
    cdef double scale = 1.0 / sqrt(<double>dh)
    dq_arr = np.zeros((G, H, Lq, dh))
    dk_arr = np.zeros((G, H, Lk, dh))
    dv_arr = np.zeros((G, H, Lk, dh))
    cdef double[:, :, :, ::1] dq = dq_arr
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef double[:, :, :, ::1] dv = dv_arr
    dp_arr = np.zeros(Lk)
    cdef double[::1] dp = dp_arr
    cdef Py_ssize_t g, h, i, j, c
    cdef double acc, p, ds
    for g in range(G):
        for h in range(H):
            for i in range(Lq):
                acc = 0.0
                for j in range(Lk):
                    p = probs[g, h, i, j]
                    if p == 0.0:
                        dp[j] = 0.0
                        continue
                    ds = 0.0
                    for c in range(dh):
                        ds += dout[g, h, i, c] * v[g, h, j, c]
                        dv[g, h, j, c] += p * dout[g, h, i, c]
                    dp[j] = ds
                    acc += ds * p
                for j in range(Lk):
                    p = probs[g, h, i, j]
                    if p == 0.0:
                        continue
                    ds = p * (dp[j] - acc) * scale
                    for c in range(dh):
                        dq[g, h, i, c] += ds * k[g, h, j, c]
                        dk[g, h, j, c] += ds * q[g, h, i, c]
    return dq_arr, dk_arr, dv_arr


def layernorm_forward(const double[:, ::1] x, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], r, c
    xhat_arr = np.empty((n, d))
    rstd_arr = np.empty(n)
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mean, var, t, inv
    for r in range(n):
        mean = 0.0
        for c in range(d):
            mean += x[r, c]
        mean /= d
        var = 0.0
        for c in range(d):
            t = x[r, c] - mean
            var += t * t
        var /= d
        inv = 1.0 / sqrt(var + eps)
        rstd[r] = inv
        for c in range(d):
            xhat[r, c] = (x[r, c] - mean) * inv
    return xhat_arr, rstd_arr


def layernorm_backward(const double[:, ::1] dxhat, const double[:, ::1] xhat,
                       const double[::1] rstd):
    cdef Py_ssize_t n = xhat.shape[0], d = xhat.shape[1], r, c
    dx_arr = np.empty((n, d))
    cdef double[:, ::1] dx = dx_arr
    cdef double m1, m2
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            m1 += dxhat[r, c]
            m2 += dxhat[r, c] * xhat[r, c]
        m1 /= d
        m2 /= d
        for c in range(d):
            dx[r, c] = rstd[r] * (dxhat[r, c] - m1 - xhat[r, c] * m2)
    return dx_arr


cdef inline Py_ssize_t _locate(const double[::1] cum, Py_ssize_t n_pts, double s) nogil:
    cdef Py_ssize_t seg = 0
    while seg < n_pts - 2 and cum[seg + 1] <= s:
        seg += 1
    return seg


cdef inline void _place(const double[:, :, ::1] pts, const double[:, ::1] cum, Py_ssize_t n_pts,
                        long long lane, double s, double d, double* px, double* py,
                        double* hx, double* hy) nogil:
    cdef Py_ssize_t seg = _locate(cum[lane], n_pts, s)
    cdef double seg_len = cum[lane, seg + 1] - cum[lane, seg]
    cdef double tx = (pts[lane, seg + 1, 0] - pts[lane, seg, 0]) / seg_len
    cdef double ty = (pts[lane, seg + 1, 1] - pts[lane, seg, 1]) / seg_len
    cdef double u = s - cum[lane, seg]
    px[0] = pts[lane, seg, 0] + u * tx - d * ty
    py[0] = pts[lane, seg, 1] + u * ty + d * tx
    hx[0] = tx
    hy[0] = ty


def rollout(points, cum, lane, s_init, v_init, d_init, v_des, long n_steps, double dt, params):
    cdef const double[:, :, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] cm = np.ascontiguousarray(cum, dtype=np.float64)
    cdef const long long[::1] ln = np.ascontiguousarray(lane, dtype=np.int64)
    cdef double[::1] s = np.array(s_init, dtype=np.float64)
    cdef double[::1] v = np.array(v_init, dtype=np.float64)
    cdef double[::1] d = np.array(d_init, dtype=np.float64)
    cdef const double[::1] vd = np.ascontiguousarray(v_des, dtype=np.float64)
    cdef double[::1] prm = np.ascontiguousarray(params, dtype=np.float64)
    cdef double a_max = prm[0], b_comf = prm[1], headway = prm[2], s_min = prm[3]
    cdef double car_len = prm[4], k_spring = prm[5], k_rep = prm[6], rep_range = prm[7]
    cdef double corridor = prm[8], v_cap = prm[9], d_max = prm[10], v_max = prm[11]
    cdef Py_ssize_t m = ln.shape[0], n_pts = pts.shape[1]
    pos_arr = np.zeros((n_steps, m, 2))
    spd_arr = np.zeros((n_steps, m))
    cdef double[:, :, ::1] pos = pos_arr
    cdef double[:, ::1] spd = spd_arr
    cdef double[::1] px = np.zeros(m), py = np.zeros(m), hx = np.zeros(m), hy = np.zeros(m)
    cdef double[::1] acc = np.zeros(m), lat = np.zeros(m)
    cdef double sqrt_ab = sqrt(a_max * b_comf)
    cdef double max_step = v_max * dt
    cdef Py_ssize_t i, j, step
    cdef double gap, dv, near, side, rx, ry, lon, crs, g, dist, r, r2, free, dyn, s_star, qq
    cdef double push, vn, dn, ox, oy, ex, ey, nrm, f
    for i in range(m):
        _place(pts, cm, n_pts, ln[i], s[i], d[i], &px[i], &py[i], &hx[i], &hy[i])
        pos[0, i, 0] = px[i]
        pos[0, i, 1] = py[i]
        spd[0, i] = v[i]
    for step in range(1, n_steps):
        for i in range(m):
            gap = INFINITY
            dv = 0.0
            near = INFINITY
            side = 0.0
            for j in range(m):
                if j == i:
                    continue
                rx = px[j] - px[i]
                ry = py[j] - py[i]
                lon = rx * hx[i] + ry * hy[i]
                crs = hx[i] * ry - hy[i] * rx
                if lon > 0.0 and fabs(crs) < corridor:
                    g = lon - car_len
                    if g < gap:
                        gap = g
                        dv = v[i] - v[j] * (hx[j] * hx[i] + hy[j] * hy[i])
                dist = sqrt(rx * rx + ry * ry)
                if dist < near:
                    near = dist
                    side = crs
            r = v[i] / vd[i]
            r2 = r * r
            free = 1.0 - r2 * r2
            if gap < INFINITY:
                g = gap if gap > 0.1 else 0.1
                dyn = v[i] * headway + v[i] * dv / (2.0 * sqrt_ab)
                if dyn < 0.0:
                    dyn = 0.0
                s_star = s_min + dyn
                qq = s_star / g
                free -= qq * qq
            acc[i] = a_max * free
            push = 0.0
            if near < rep_range:
                push = k_rep * exp(-near / 2.0)
                if side > 0.0:
                    push = -push
            lat[i] = -k_spring * d[i] + push
        for i in range(m):
            vn = v[i] + acc[i] * dt
            if vn < 0.0:
                vn = 0.0
            if vn > v_cap:
                vn = v_cap
            v[i] = vn
            s[i] = s[i] + vn * dt
            dn = d[i] + lat[i] * dt
            if dn > d_max:
                dn = d_max
            if dn < -d_max:
                dn = -d_max
            d[i] = dn
        for i in range(m):
            ox = px[i]
            oy = py[i]
            _place(pts, cm, n_pts, ln[i], s[i], d[i], &px[i], &py[i], &hx[i], &hy[i])
            ex = px[i] - ox
            ey = py[i] - oy
            nrm = sqrt(ex * ex + ey * ey)
            if nrm > max_step:
                f = max_step * 0.999999 / nrm
                px[i] = ox + ex * f
                py[i] = oy + ey * f
            pos[step, i, 0] = px[i]
            pos[step, i, 1] = py[i]
            spd[step, i] = v[i]
    return pos_arr, spd_arr
