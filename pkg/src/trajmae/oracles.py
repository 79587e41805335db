"""Independent reference implementations used by the verification suites.

Nothing here imports from :mod:`trajmae.metrics`; the metric oracles are
written as plain nested loops so they share no code with the vectorized
versions.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import backward, no_grad

# --------------------------------------------------------------------------- metrics


def _dist(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def _final_step(valid, agent):
    last = -1
    for t in range(len(valid)):
        if valid[t][agent]:
            last = t
    return last


def _collides(mode_pred, valid, radius, ego=None):
    steps = len(valid)
    agents = len(valid[0])
    for t in range(steps):
        for i in range(agents):
            for j in range(i + 1, agents):
                if ego is not None and ego not in (i, j):
                    continue
                if valid[t][i] and valid[t][j] and _dist(mode_pred[t][i], mode_pred[t][j]) < 2.0 * radius:
                    return True
    return False


def _joint_miss(pred, truth, valid, threshold, modes):
    agents = len(valid[0])
    for k in modes:
        ok = True
        for a in range(agents):
            t = _final_step(valid, a)
            if t >= 0 and _dist(pred[k][t][a], truth[t][a]) > threshold:
                ok = False
        if ok:
            return 0.0
    return 1.0


def oracle_scene_metrics(pred, truth, valid, ego, threshold=2.0, radius=0.5):
    """Brute-force metrics for one scene, or None when the ego has no valid future step."""
    pred = np.asarray(pred).tolist()
    truth = np.asarray(truth).tolist()
    valid = np.asarray(valid, dtype=bool).tolist()
    c = len(pred)
    steps = len(valid)
    agents = len(valid[0])
    t_ego = _final_step(valid, ego)
    if t_ego < 0:
        return None

    ades, fdes, jades, jfdes = [], [], [], []
    for k in range(c):
        total, n = 0.0, 0
        for t in range(steps):
            if valid[t][ego]:
                total += _dist(pred[k][t][ego], truth[t][ego])
                n += 1
        ades.append(total / n)
        fdes.append(_dist(pred[k][t_ego][ego], truth[t_ego][ego]))

        total, n = 0.0, 0
        for t in range(steps):
            for a in range(agents):
                if valid[t][a]:
                    total += _dist(pred[k][t][a], truth[t][a])
                    n += 1
        jades.append(total / n)

        total, n = 0.0, 0
        for a in range(agents):
            t = _final_step(valid, a)
            if t >= 0:
                total += _dist(pred[k][t][a], truth[t][a])
                n += 1
        jfdes.append(total / n)

    cross = [_collides(pred[k], valid, radius) for k in range(c)]
    egoc = [_collides(pred[k], valid, radius, ego) for k in range(c)]
    free = [k for k in range(c) if not cross[k]]
    return {
        "minADE": min(ades),
        "minFDE": min(fdes),
        "MR": 1.0 if min(fdes) > threshold else 0.0,
        "minJointADE": min(jades),
        "minJointFDE": min(jfdes),
        "minJointMR": _joint_miss(pred, truth, valid, threshold, range(c)),
        "crossCollisionRate": sum(cross) / c,
        "egoCollisionRate": sum(egoc) / c,
        "consistentMinJointMR": _joint_miss(pred, truth, valid, threshold, free) if free else 1.0,
    }


def oracle_evaluate(preds, truths, valids, egos, threshold=2.0, radius=0.5):
    rows = []
    for args in zip(preds, truths, valids, egos):
        row = oracle_scene_metrics(*args, threshold=threshold, radius=radius)
        if row is not None:
            rows.append(row)
    keys = rows[0].keys() if rows else ()
    return {k: sum(r[k] for r in rows) / len(rows) for k in keys}, len(rows)


# --------------------------------------------------------------------------- gradients


def relative_error(a, n, floor=1e-8):
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradcheck(loss_fn, store, h=1e-5, names=None, max_entries=None, rng=None):
    """Compare reverse-mode gradients with central differences.

    Args:
        loss_fn: ``() -> scalar Tensor`` reading parameters from ``store``.
        store: ParamStore whose values are perturbed in place (and restored).
        names: parameter names to check; default all.
        max_entries: when set, check at most this many entries per parameter,
            chosen by ``rng`` (a numpy Generator).

    Returns:
        (max relative error, name of the worst parameter, entries checked).
    """
    store.zero_grad()
    backward(loss_fn())
    analytic = store.grads()
    store.zero_grad()
    worst, worst_name, checked = 0.0, None, 0
    for name in names or list(store):
        p = store[name]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        g = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
            flat[i] = orig
            err = relative_error(float(g[i]), (up - down) / (2 * h))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return worst, worst_name, checked
