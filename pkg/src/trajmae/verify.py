"""Property suites behind ``trajmae verify`` and the acceptance tests.

Every suite returns a :class:`SuiteResult`. Each one draws all of its
randomness from a seed, so two runs produce identical reports.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import model as mdl
from . import tensor as tn
from .masking import MAP_STRATEGIES, PATCH_WIDTH, TRAJ_STRATEGIES, mask_count, plan_map_mask, plan_traj_mask, runs
from .oracles import gradcheck, oracle_scene_metrics
from .scene import DataConfig, make_scene, scene_seeds
from .tensor import RngStream, no_grad
from .training.losses import lattice_masked_huber, masked_huber_loss, wta_loss
from .training.schedule import build_schedule

RATIO_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
GRAD_TOL = 1e-5
METRIC_TOL = 1e-12

# test-only negative control: when set, the blindness suite reveals one masked slot to the encoder
FAULT_FLIP_MASK_BIT = "flip-mask-bit"


@dataclass
class SuiteResult:
    name: str
    cases: int
    violations: int
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {
            "suite": self.name,
            "passed": self.passed,
            "cases": self.cases,
            "violations": self.violations,
            "detail": self.detail,
        }


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _scenes(n, seed, agents=6, t_obs=10):
    cfg = DataConfig(agents=agents, t_obs=t_obs, t_fut=5, seed=seed)
    return [make_scene(s, cfg) for s in scene_seeds(cfg.split_seed("verify"), "verify", n)]


# --------------------------------------------------------------------------- masking


def _nearest_half(history, valid, ego):
    m, t = valid.shape
    pts = []
    for i in range(m):
        if i == ego:
            continue
        if valid[i, t - 1]:
            dx, dy = history[i, t - 1] - history[ego, t - 1]
            pts.append((math.sqrt(dx * dx + dy * dy), i))
        else:
            pts.append((math.inf, i))
    pts.sort()
    return {i for _, i in pts[: (m - 1 + 1) // 2]}


def _expected_count(n_valid, k):
    return 0 if n_valid <= 1 else min(k, n_valid - 1)


def traj_plan_violations(plan, valid, history, ego, k):
    """List of rule violations for one trajectory plan (empty when exact)."""
    out = []
    masked = plan.masked
    m = valid.shape[0]
    if (masked & ~valid).any():
        out.append("masked invalid slot")
    steps = [np.flatnonzero(valid[i]) for i in range(m)]

    def is_suffix(i):
        want = _expected_count(len(steps[i]), k)
        return set(np.flatnonzero(masked[i])) == set(steps[i][len(steps[i]) - want :]) if want else not masked[i].any()

    def is_prefix(i):
        want = _expected_count(len(steps[i]), k)
        return set(np.flatnonzero(masked[i])) == set(steps[i][:want])

    counts_ok = [masked[i].sum() == _expected_count(len(steps[i]), k) for i in range(m)]
    others = [i for i in range(m) if i != ego]
    if plan.strategy == "T":
        if not all(counts_ok):
            out.append("T: per-agent count")
    elif plan.strategy == "S":
        if not is_suffix(ego):
            out.append("S: ego not last-k")
        near = _nearest_half(history, valid, ego)
        for i in others:
            if i in near and not is_prefix(i):
                out.append(f"S: nearby agent {i} not first-k")
            if i not in near and masked[i].any():
                out.append(f"S: far agent {i} masked")
    else:
        if not is_suffix(ego):
            out.append("ST: ego not last-k")
        if not all(counts_ok[i] for i in others):
            out.append("ST: per-agent count")
        if sum(is_suffix(i) for i in others) < len(others) // 2:
            out.append("ST: fewer last-k agents than the floor half")
    return out


def map_plan_violations(plan, n_polylines, points, ratio, w=PATCH_WIDTH):
    out = []
    masked = plan.masked
    if plan.strategy == "Po":
        if masked.sum() != mask_count(ratio, n_polylines * points):
            out.append("Po: total count")
        return out
    q = mask_count(ratio, points)
    for i in range(n_polylines):
        row = masked[i]
        lengths = runs(row)
        if row.sum() != q:
            out.append(f"{plan.strategy}: polyline {i} count {row.sum()} != {q}")
        if plan.strategy == "B":
            if lengths != [q]:
                out.append(f"B: polyline {i} runs {lengths}")
        else:
            want = Counter({w: q // w})
            if q % w:
                want[q % w] += 1
            if Counter(lengths) != want:
                out.append(f"Pa: polyline {i} run histogram {dict(Counter(lengths))}")
    return out


@_timed
def masking_suite(n=50, seed=0, ratios=RATIO_GRID):
    """Exact count / placement / contiguity rules for every strategy x ratio x scene."""
    scenes = _scenes(n, seed)
    cases = violations = 0
    examples = []
    for strategy in TRAJ_STRATEGIES + MAP_STRATEGIES:
        for ratio in ratios:
            rng = RngStream(seed, f"verify/mask/{strategy}/{ratio}")
            for sc in scenes:
                cases += 1
                state = rng.get_state()
                if strategy in TRAJ_STRATEGIES:
                    valid = sc.history_valid

                    def make(stream):
                        return plan_traj_mask(strategy, ratio, valid, sc.ego_index, stream, history=sc.history)

                    plan = make(rng)
                    bad = traj_plan_violations(plan, valid, sc.history, sc.ego_index, mask_count(ratio, sc.t_obs))
                else:
                    n_poly = len(sc.map.polylines)
                    points = sc.map.polylines[0].points.shape[0]

                    def make(stream):
                        return plan_map_mask(strategy, ratio, n_poly, points, stream)

                    plan = make(rng)
                    bad = map_plan_violations(plan, n_poly, points, ratio)
                if not np.array_equal(make(RngStream.from_state(state)).masked, plan.masked):
                    bad.append("same stream state gave a different plan")
                if bad:
                    violations += 1
                    if len(examples) < 5:
                        examples.append({"strategy": strategy, "ratio": ratio, "problems": bad})
    return SuiteResult("masking", cases, violations, detail={"examples": examples})


# --------------------------------------------------------------------------- blindness


def _blind_model_cfg():
    return mdl.ModelConfig(d_model=16, enc_layers=2, dec_layers=1, heads=2, modes=2, t_fut=5)


@_timed
def blindness_suite(n=100, seed=0, fault=None):
    """Perturbing masked inputs by +/-1000 must leave every visible context entry unchanged."""
    cfg = _blind_model_cfg()
    store = mdl.init_params(cfg, seed, ("traj_enc", "map_enc"))
    scenes = _scenes(n, seed)
    rng = RngStream(seed, "verify/blindness")
    strategies = TRAJ_STRATEGIES + MAP_STRATEGIES
    worst = 0.0
    violations = 0
    for sc in scenes:
        batch = mdl.collate([sc], cfg)
        strategy = strategies[int(rng.integers(len(strategies)))]
        ratio = RATIO_GRID[int(rng.integers(len(RATIO_GRID)))]
        sign = 1000.0 if rng.random() < 0.5 else -1000.0
        if strategy in TRAJ_STRATEGIES:
            m = sc.num_agents
            masked = np.zeros_like(batch.hist_valid)
            masked[0, :m] = plan_traj_mask(
                strategy, ratio, sc.history_valid, sc.ego_index, rng, history=sc.history
            ).masked
            valid = batch.hist_valid
        else:
            n_poly = len(sc.map.polylines)
            masked = np.zeros(batch.map_pts.shape[:3], dtype=bool)
            masked[0, :n_poly] = plan_map_mask(strategy, ratio, n_poly, cfg.points, rng).masked
            valid = batch.map_slot_valid()
        seen = masked.copy()
        if fault == FAULT_FLIP_MASK_BIT:
            idx = tuple(np.argwhere(masked)[0])
            seen[idx] = False
        pert = mdl.Batch(*(np.copy(getattr(batch, f)) for f in batch.__dataclass_fields__))
        if strategy in TRAJ_STRATEGIES:
            pert.hist[masked] += sign
            enc = mdl.encode_trajectories
        else:
            pert.map_pts[masked] += sign
            enc = mdl.encode_map
        with no_grad():
            a = enc(store, batch, cfg, masked).data
            b = enc(store, pert, cfg, seen).data
        visible = valid & ~masked
        diff = float(np.abs(a[visible] - b[visible]).max()) if visible.any() else 0.0
        worst = max(worst, diff)
        violations += diff != 0.0
    return SuiteResult("blindness", len(scenes), violations, detail={"max_abs_diff": worst, "fault": fault})


# --------------------------------------------------------------------------- gradients


def tiny_case(seed, objective):
    """A randomly sized small model, batch and ``loss_fn`` for one objective.

    ``objective`` is ``traj`` or ``map`` (masked reconstruction) or ``fore``
    (winner-takes-all forecasting).
    """
    r = np.random.default_rng(seed)
    heads = int(r.choice([1, 2]))
    d = heads * int(r.choice([2, 3])) * (2 if heads == 1 else 1)
    cfg = mdl.ModelConfig(
        d_model=d, enc_layers=1, dec_layers=0, fore_layers=1, heads=heads,
        modes=int(r.integers(2, 4)), t_obs=int(r.integers(3, 5)), t_fut=int(r.integers(2, 4)),
        max_agents=int(r.integers(2, 4)), points=3, max_polylines=2, ffn_mult=2,
    )
    b, m, t, tf = 2, cfg.max_agents, cfg.t_obs, cfg.t_fut
    hv = r.random((b, m, t)) < 0.85
    hv[:, 0] = True
    fv = r.random((b, m, tf)) < 0.85
    fv[:, 0] = True
    batch = mdl.Batch(
        r.normal(0, 3, (b, m, t, 2)), hv, r.normal(0, 3, (b, m, tf, 2)), fv, np.zeros(b, np.int64),
        r.normal(0, 3, (b, 2, 3, 2)), r.integers(0, 3, (b, 2)), np.ones((b, 2), bool),
    )
    if objective == "fore":
        store = mdl.init_params(cfg, seed, ("traj_enc", "map_enc", "fore"))
        # spread the modes apart so the winner is stable under the perturbation
        store["fore.seeds"].data = r.normal(0, 1.0, store["fore.seeds"].shape)
        with no_grad():
            off, _ = mdl.predict(store, batch, cfg)
        target = off.data[:, 0] + r.normal(0, 0.2, off.data[:, 0].shape)
        fut_valid = batch.fut_valid.transpose(0, 2, 1)

        def loss_fn():
            return wta_loss(*mdl.predict(store, batch, cfg), target, fut_valid, batch.ego)[0]
    else:
        parts = ("traj_enc", "traj_dec") if objective == "traj" else ("map_enc", "map_dec")
        store = mdl.init_params(cfg, seed, parts)
        lattice = batch.hist_valid if objective == "traj" else batch.map_slot_valid()
        masked = (r.random(lattice.shape) < 0.5) & lattice
        masked.reshape(-1)[np.flatnonzero(lattice)[0]] = True

        def loss_fn():
            return masked_huber_loss(*mdl.reconstruct(store, batch, masked, cfg, objective))
    return cfg, store, loss_fn


GRAD_OBJECTIVES = ("traj", "map", "fore")


@_timed
def gradcheck_suite(n=20, seed=0, objectives=GRAD_OBJECTIVES, tol=GRAD_TOL, h=1e-5):
    """Reverse-mode vs central differences on ``n`` random tiny configurations."""
    rows = []
    violations = 0
    worst = 0.0
    for i in range(n):
        objective = objectives[i % len(objectives)]
        cfg, store, loss_fn = tiny_case(seed * 1000 + i, objective)
        err, where, checked = gradcheck(loss_fn, store, h=h)
        worst = max(worst, err)
        violations += err >= tol
        rows.append({"case": i, "objective": objective, "params": store.num_values(),
                     "max_rel_err": err, "worst_entry": where})
    return SuiteResult("gradcheck", n, violations, detail={"max_rel_err": worst, "tol": tol, "cases": rows})


# --------------------------------------------------------------------------- masked-only loss


@_timed
def masked_loss_suite(n=50, seed=0):
    """Visible-slot targets get zero gradient and visible predictions do not move the loss."""
    r = np.random.default_rng(seed)
    violations = 0
    for _ in range(n):
        shape = (int(r.integers(1, 4)), int(r.integers(2, 7)), int(r.integers(2, 11)), 2)
        masked = r.random(shape[:3]) < r.uniform(0.2, 0.8)
        masked.reshape(-1)[int(r.integers(masked.size))] = True
        pred = tn.Tensor(r.normal(0, 3, shape), requires_grad=True)
        target = tn.Tensor(r.normal(0, 3, shape), requires_grad=True)
        loss = lattice_masked_huber(pred, target, masked)
        tn.backward(loss)
        vis = ~masked
        bad = np.any(target.grad[vis] != 0.0) or np.any(pred.grad[vis] != 0.0)
        moved = pred.data.copy()
        moved[vis] += r.normal(0, 100, moved[vis].shape)
        with no_grad():
            again = lattice_masked_huber(tn.Tensor(moved), tn.Tensor(target.data), masked)
        bad = bad or float(again.data) != float(loss.data)
        violations += bool(bad)
    return SuiteResult("masked-loss", n, violations)


# --------------------------------------------------------------------------- schedule


REFERENCE_TABLE = ((60000, 30000, 30000), (0, 90000, 30000), (0, 0, 120000))


@_timed
def quota_suite(n=500, seed=0):
    """The published continual table plus sum-over-stages = N for random (n, N, M_carry)."""
    violations = 0
    plan = build_schedule("continual-pretrain", ("a", "b", "c"), 120000, 30000)
    table = tuple(tuple(v) for v in plan.table().values())
    reference_ok = table == REFERENCE_TABLE
    violations += not reference_ok
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(1, 7))
        carry = int(rng.integers(0, 2000))
        big_n = int(rng.integers((k - 1) * carry + 1, (k - 1) * carry + 5000))
        plan = build_schedule("continual-pretrain", tuple(f"s{j}" for j in range(k)), big_n, carry)
        tot = plan.strategy_totals()
        if any(v != big_n for v in tot.values()):
            violations += 1
    return SuiteResult("quota", n + 1, violations, detail={"reference_table": [list(r) for r in table],
                                                          "reference_ok": reference_ok})


# --------------------------------------------------------------------------- metrics


def metric_hand_cases():
    """Hand-computed cases as (name, pred, truth, valid, ego, expected dict)."""
    out = []
    truth = np.stack([np.array([[t, 0.0]]) for t in range(3)]).astype(float)  # (3, 1, 2)
    valid = np.ones((3, 1), bool)
    pred = np.stack([truth + [1.0, 0.0], truth + [0.0, 2.5]])
    out.append(("two-mode ego", pred, truth, valid, 0, {"minADE": 1.0, "minFDE": 1.0, "MR": 0.0}))
    pred = np.stack([truth + [3.0, 4.0], truth + [3.0, 4.0]])
    out.append(("constant offset miss", pred, truth, valid, 0, {"minFDE": 5.0, "MR": 1.0}))

    truth = np.zeros((2, 2, 2))
    truth[:, 1] = [10.0, 0.0]
    valid = np.ones((2, 2), bool)
    m1 = truth.copy()
    m1[:, 1] += [0.0, 3.0]
    m2 = truth + [1.0, 0.0]
    out.append(("joint mode choice", np.stack([m1, m2]), truth, valid, 0,
                {"minJointADE": 1.0, "minJointMR": 0.0}))

    truth = np.zeros((2, 3, 2))
    truth[:, 0] = [0.0, 0.0]
    truth[:, 1] = [10.0, 0.0]
    truth[:, 2] = [10.0, 5.0]
    valid = np.ones((2, 3), bool)
    bump = truth.copy()
    bump[1, 2] = [10.0, 0.5]
    out.append(("half-collision", np.stack([truth, bump]), truth, valid, 0,
                {"crossCollisionRate": 0.5, "egoCollisionRate": 0.0}))
    return out


def random_metric_instance(rng):
    c = int(rng.integers(1, 4))
    t = int(rng.integers(1, 6))
    m = int(rng.integers(1, 5))
    truth = rng.uniform(-2, 2, (t, m, 2))
    pred = truth[None] + rng.normal(0, rng.choice([0.3, 1.5, 3.0]), (c, t, m, 2))
    valid = rng.random((t, m)) < 0.8
    ego = int(rng.integers(m))
    return pred, truth, valid, ego


@_timed
def metric_oracle_suite(n=200, seed=0, tol=METRIC_TOL):
    """Vectorized metrics vs brute-force loops, plus the hand-computed cases."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    done = 0
    while done < n:
        pred, truth, valid, ego = random_metric_instance(rng)
        want = oracle_scene_metrics(pred, truth, valid, ego)
        got = metrics.scene_metrics(pred, truth, valid, ego)
        if want is None:
            violations += got["minADE"] is not None
            continue
        done += 1
        err = max(abs(got[k] - want[k]) for k in metrics.REPORT_KEYS)
        worst = max(worst, err)
        violations += err > tol
    hand_bad = []
    for name, pred, truth, valid, ego, expected in metric_hand_cases():
        got = metrics.scene_metrics(pred, truth, valid, ego)
        if any(got[k] != v for k, v in expected.items()):
            hand_bad.append(name)
    violations += len(hand_bad)
    return SuiteResult("metric-oracle", n + len(metric_hand_cases()), violations,
                       detail={"max_abs_err": worst, "hand_failures": hand_bad})


SUITES = {
    "masking": masking_suite,
    "blindness": blindness_suite,
    "masked-loss": masked_loss_suite,
    "quota": quota_suite,
    "metric-oracle": metric_oracle_suite,
    "gradcheck": gradcheck_suite,
}


def run_all(seed=0, fault=None, quick=False, only=None):
    """Run every suite; ``quick`` shrinks case counts for smoke runs."""
    results = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        kwargs = {"seed": seed}
        if name == "blindness":
            kwargs["fault"] = fault
        if quick:
            kwargs["n"] = {"gradcheck": 3, "masking": 5, "blindness": 10}.get(name, 20)
        results.append(fn(**kwargs))
    return results
