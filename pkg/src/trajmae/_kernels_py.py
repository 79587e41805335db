"""Reference (numpy / pure Python) implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function. They are used when the
compiled extension is missing or ``TRAJMAE_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def attention_forward(q, k, v, allowed):
    """Masked scaled dot-product attention.

    Args:
        q: (G, H, Lq, dh) queries.
        k: (G, H, Lk, dh) keys.
        v: (G, H, Lk, dh) values.
        allowed: (G, Lq, Lk) bool, True where query i may attend to key j.

    Returns:
        (out, probs) with out (G, H, Lq, dh) and probs (G, H, Lq, Lk). Query rows
        without any allowed key produce all-zero probabilities and outputs.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    mask = np.broadcast_to(allowed[:, None, :, :], scores.shape)
    scores = np.where(mask, scores, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(scores - row_max)
    z = e.sum(axis=-1, keepdims=True)
    probs = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    out = np.matmul(probs, v)
    return out, probs


def attention_backward(dout, q, k, v, probs):
    scale = 1.0 / math.sqrt(q.shape[-1])
    dv = np.matmul(np.swapaxes(probs, -1, -2), dout)
    dp = np.matmul(dout, np.swapaxes(v, -1, -2))
    ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(np.swapaxes(ds, -1, -2), q) * scale
    return dq, dk, dv


def layernorm_forward(x, eps):
    """Normalize rows of a 2-D array. Returns (xhat, rstd)."""
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0]


def layernorm_backward(dxhat, xhat, rstd):
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    return rstd[:, None] * (dxhat - m1 - xhat * m2)


def _locate(cum, n_pts, s):
    seg = 0
    while seg < n_pts - 2 and cum[seg + 1] <= s:
        seg += 1
    return seg


def rollout(points, cum, lane, s_init, v_init, d_init, v_des, n_steps, dt, params):
    """Integrate car-following plus lateral-repulsion dynamics.

    Args:
        points: (L, P, 2) lane-center polylines.
        cum: (L, P) cumulative arc length along each polyline.
        lane: (M,) lane index per agent.
        s_init, v_init, d_init, v_des: (M,) arc position, speed, lateral offset
            and desired speed.
        n_steps: number of recorded states (the initial one included).
        dt: step length in seconds.
        params: (a_max, b_comf, headway, s_min, car_len, k_spring, k_rep,
            rep_range, corridor, v_cap, d_max, v_max).

    Returns:
        (positions (n_steps, M, 2), speeds (n_steps, M)).
    """
    (a_max, b_comf, headway, s_min, car_len, k_spring, k_rep,
     rep_range, corridor, v_cap, d_max, v_max) = [float(p) for p in params]
    m = len(lane)
    n_pts = points.shape[1]
    pts = points.tolist()
    cm = cum.tolist()
    s = [float(x) for x in s_init]
    v = [float(x) for x in v_init]
    d = [float(x) for x in d_init]
    vd = [float(x) for x in v_des]
    ln = [int(x) for x in lane]
    pos = np.zeros((n_steps, m, 2))
    spd = np.zeros((n_steps, m))
    px = [0.0] * m
    py = [0.0] * m
    hx = [0.0] * m
    hy = [0.0] * m
    sqrt_ab = math.sqrt(a_max * b_comf)
    max_step = v_max * dt

    def place(i):
        c = cm[ln[i]]
        p = pts[ln[i]]
        seg = _locate(c, n_pts, s[i])
        seg_len = c[seg + 1] - c[seg]
        tx = (p[seg + 1][0] - p[seg][0]) / seg_len
        ty = (p[seg + 1][1] - p[seg][1]) / seg_len
        u = s[i] - c[seg]
        px[i] = p[seg][0] + u * tx - d[i] * ty
        py[i] = p[seg][1] + u * ty + d[i] * tx
        hx[i] = tx
        hy[i] = ty

    for i in range(m):
        place(i)
        pos[0, i, 0] = px[i]
        pos[0, i, 1] = py[i]
        spd[0, i] = v[i]

    acc = [0.0] * m
    lat = [0.0] * m
    for step in range(1, n_steps):
        for i in range(m):
            gap = math.inf
            dv = 0.0
            near = math.inf
            side = 0.0
            for j in range(m):
                if j == i:
                    continue
                rx = px[j] - px[i]
                ry = py[j] - py[i]
                lon = rx * hx[i] + ry * hy[i]
                crs = hx[i] * ry - hy[i] * rx
                if lon > 0.0 and abs(crs) < corridor:
                    g = lon - car_len
                    if g < gap:
                        gap = g
                        dv = v[i] - v[j] * (hx[j] * hx[i] + hy[j] * hy[i])
                dist = math.sqrt(rx * rx + ry * ry)
                if dist < near:
                    near = dist
                    side = crs
            r = v[i] / vd[i]
            r2 = r * r
            free = 1.0 - r2 * r2
            if gap < math.inf:
                g = gap if gap > 0.1 else 0.1
                dyn = v[i] * headway + v[i] * dv / (2.0 * sqrt_ab)
                if dyn < 0.0:
                    dyn = 0.0
                s_star = s_min + dyn
                q = s_star / g
                free -= q * q
            acc[i] = a_max * free
            push = 0.0
            if near < rep_range:
                push = k_rep * math.exp(-near / 2.0)
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
            place(i)
            ex = px[i] - ox
            ey = py[i] - oy
            n = math.sqrt(ex * ex + ey * ey)
            if n > max_step:
                f = max_step * 0.999999 / n
                px[i] = ox + ex * f
                py[i] = oy + ey * f
            pos[step, i, 0] = px[i]
            pos[step, i, 1] = py[i]
            spd[step, i] = v[i]
    return pos, spd
