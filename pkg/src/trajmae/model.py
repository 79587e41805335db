"""Axis-factorized transformer encoders, reconstruction decoders and the forecast head.

Lattices are laid out as (batch, rows, columns, features). For trajectories
rows are agents and columns are timesteps; for maps rows are polylines and
columns are key points. "Time" attention runs along columns within a row,
"social" attention runs along rows within a column.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .scene import TYPE_TAGS
from .tensor import ParamStore, RngStream, Tensor


@dataclass
class ModelConfig:
    d_model: int = 32
    enc_layers: int = 2
    dec_layers: int = 1
    fore_layers: int = 2
    heads: int = 4
    modes: int = 6
    t_obs: int = 10
    t_fut: int = 15
    max_agents: int = 6
    points: int = 10
    max_polylines: int = 16
    traj_attrs: int = 3
    map_attrs: int = 2 + len(TYPE_TAGS)
    ffn_mult: int = 4
    coord_scale: float = 10.0

    def validate(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.dec_layers >= self.enc_layers:
            raise ValueError(
                f"reconstruction decoder ({self.dec_layers} layers) must be shallower than the encoder ({self.enc_layers})"
            )
        for name in ("modes", "t_obs", "t_fut", "max_agents", "points", "max_polylines"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        return self

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --------------------------------------------------------------------------- initialization


class _Init:
    def __init__(self, store, rng):
        self.store = store
        self.rng = rng

    def weight(self, name, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        self.store.add(name, self.rng.uniform(-bound, bound, (fan_in, fan_out)))

    def bias(self, name, n):
        self.store.add(name, np.zeros(n))

    def ones(self, name, n):
        self.store.add(name, np.ones(n))

    def small_normal(self, name, shape):
        self.store.add(name, self.rng.normal(0.0, 0.02, shape))

    def affine(self, prefix, fan_in, fan_out, bias=True):
        self.weight(f"{prefix}.w", fan_in, fan_out)
        if bias:
            self.bias(f"{prefix}.b", fan_out)

    def norm(self, prefix, d):
        self.ones(f"{prefix}.g", d)
        self.bias(f"{prefix}.b", d)

    def rffn(self, prefix, d_in, d):
        self.affine(f"{prefix}.fc1", d_in, d)
        self.affine(f"{prefix}.fc2", d, d)

    def attn(self, prefix, d):
        self.affine(f"{prefix}.q", d, d)
        # key bias is omitted: softmax is invariant to it, so its gradient is identically zero
        self.affine(f"{prefix}.k", d, d, bias=False)
        self.affine(f"{prefix}.v", d, d)
        self.affine(f"{prefix}.o", d, d)

    def ffn(self, prefix, d, mult):
        self.affine(f"{prefix}.fc1", d, mult * d)
        self.affine(f"{prefix}.fc2", mult * d, d)

    def mab(self, prefix, d, mult):
        self.norm(f"{prefix}.ln1", d)
        self.attn(f"{prefix}.attn", d)
        self.norm(f"{prefix}.ln2", d)
        self.ffn(f"{prefix}.ffn", d, mult)

    def mabd(self, prefix, d, mult):
        self.norm(f"{prefix}.lnq", d)
        self.norm(f"{prefix}.lnkv", d)
        self.attn(f"{prefix}.attn", d)
        self.norm(f"{prefix}.ln2", d)
        self.ffn(f"{prefix}.ffn", d, mult)


def _encoder_params(ini, prefix, attrs, cfg, layers):
    d = cfg.d_model
    ini.rffn(f"{prefix}.embed", attrs, d)
    for i in range(layers):
        ini.mab(f"{prefix}.layer{i}.time", d, cfg.ffn_mult)
        ini.mab(f"{prefix}.layer{i}.social", d, cfg.ffn_mult)


def init_params(cfg, seed, parts=("traj_enc", "traj_dec", "map_enc", "map_dec", "fore")):
    """Create every parameter of the model, deterministically from ``seed``.

    Each part draws from its own substream, so the values of one part never
    depend on which other parts are present.
    """
    store = ParamStore()
    d = cfg.d_model
    for part in ("traj_enc", "traj_dec", "map_enc", "map_dec", "fore"):
        if part not in parts:
            continue
        ini = _Init(store, RngStream(seed, f"init/{part}"))
        if part == "traj_enc":
            _encoder_params(ini, "traj_enc", cfg.traj_attrs, cfg, cfg.enc_layers)
        elif part == "map_enc":
            _encoder_params(ini, "map_enc", cfg.map_attrs, cfg, cfg.enc_layers)
        elif part == "traj_dec":
            ini.small_normal("traj_dec.mask_token", (d,))
            ini.small_normal("traj_dec.pos_time", (cfg.t_obs, d))
            for i in range(cfg.dec_layers):
                ini.mab(f"traj_dec.layer{i}.time", d, cfg.ffn_mult)
                ini.mab(f"traj_dec.layer{i}.social", d, cfg.ffn_mult)
            ini.norm("traj_dec.head_ln", d)
            ini.affine("traj_dec.head", d, 2)
        elif part == "map_dec":
            ini.small_normal("map_dec.mask_token", (d,))
            ini.small_normal("map_dec.pos_polyline", (cfg.max_polylines, d))
            ini.small_normal("map_dec.pos_point", (cfg.points, d))
            for i in range(cfg.dec_layers):
                ini.mab(f"map_dec.layer{i}.time", d, cfg.ffn_mult)
                ini.mab(f"map_dec.layer{i}.social", d, cfg.ffn_mult)
            ini.norm("map_dec.head_ln", d)
            ini.affine("map_dec.head", d, 2)
        else:
            ini.small_normal("fore.seeds", (cfg.modes, cfg.t_fut, d))
            ini.rffn("fore.rffn", 2 * d, d)
            for i in range(cfg.fore_layers):
                ini.mabd(f"fore.layer{i}.cross", d, cfg.ffn_mult)
                ini.mab(f"fore.layer{i}.social", d, cfg.ffn_mult)
            ini.norm("fore.head_ln", d)
            ini.affine("fore.head", d, 2)
            ini.weight("fore.logit.w", d, 1)
    return store


# --------------------------------------------------------------------------- building blocks


def _affine(p, prefix, x):
    b = p[f"{prefix}.b"] if f"{prefix}.b" in p else None
    return tn.linear(x, p[f"{prefix}.w"], b)


def _norm(p, prefix, x):
    return tn.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def rffn(p, prefix, x):
    return _affine(p, f"{prefix}.fc2", tn.relu(_affine(p, f"{prefix}.fc1", x)))


def _split_heads(x, heads):
    g, length, d = x.shape
    return x.reshape(g, length, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    g, h, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(g, length, h * dh)


def multihead(p, prefix, q_in, kv_in, allowed, heads, kv_expand=None):
    """``kv_expand`` maps projected keys/values onto the query grouping when ``kv_in`` is shared."""
    q = _split_heads(_affine(p, f"{prefix}.q", q_in), heads)
    k = _affine(p, f"{prefix}.k", kv_in)
    v = _affine(p, f"{prefix}.v", kv_in)
    if kv_expand is not None:
        k, v = kv_expand(k), kv_expand(v)
    k = _split_heads(k, heads)
    v = _split_heads(v, heads)
    out = _merge_heads(tn.attention(q, k, v, allowed))
    return _affine(p, f"{prefix}.o", out)


def mab(p, prefix, x, visible, heads):
    """Pre-norm self-attention block over axis 1 of ``x`` (G, L, d).

    Only visible slots act as queries or keys; updates at hidden slots are
    gated off so they keep their incoming value.
    """
    allowed = visible[:, :, None] & visible[:, None, :]
    gate = visible[:, :, None].astype(np.float64)
    h = _norm(p, f"{prefix}.ln1", x)
    x = x + multihead(p, f"{prefix}.attn", h, h, allowed, heads) * gate
    h = _norm(p, f"{prefix}.ln2", x)
    x = x + rffn(p, f"{prefix}.ffn", h) * gate
    return x


def mabd(p, prefix, x, query_visible, ctx, ctx_visible, heads, kv_expand=None):
    """Pre-norm cross-attention block: ``x`` (G, Lq, d) attends to ``ctx`` (G, Lk, d).

    With ``kv_expand``, ``ctx`` may have fewer groups; the expansion is applied
    after the key/value projections.
    """
    allowed = query_visible[:, :, None] & ctx_visible[:, None, :]
    gate = query_visible[:, :, None].astype(np.float64)
    hq = _norm(p, f"{prefix}.lnq", x)
    hk = _norm(p, f"{prefix}.lnkv", ctx)
    x = x + multihead(p, f"{prefix}.attn", hq, hk, allowed, heads, kv_expand) * gate
    h = _norm(p, f"{prefix}.ln2", x)
    x = x + rffn(p, f"{prefix}.ffn", h) * gate
    return x


def axis_layer(p, prefix, x, visible, heads):
    """Time-axis MAB then social-axis MAB on a (B, R, C, d) lattice."""
    b, r, c, d = x.shape
    x = mab(p, f"{prefix}.time", x.reshape(b * r, c, d), visible.reshape(b * r, c), heads)
    x = x.reshape(b, r, c, d).transpose(0, 2, 1, 3)
    vis_t = np.ascontiguousarray(visible.transpose(0, 2, 1)).reshape(b * c, r)
    x = mab(p, f"{prefix}.social", x.reshape(b * c, r, d), vis_t, heads)
    return x.reshape(b, c, r, d).transpose(0, 2, 1, 3)


# --------------------------------------------------------------------------- inputs


def traj_attributes(positions, valid, cfg):
    """(B, M, t, 2) positions + validity -> (B, M, t, 3) attribute lattice."""
    attrs = np.concatenate(
        [positions / cfg.coord_scale, valid[..., None].astype(np.float64)], axis=-1
    )
    attrs[~valid] = 0.0
    return attrs


def map_attributes(points, type_ids, poly_valid, cfg):
    """(B, L, P, 2) key points + (B, L) type ids -> (B, L, P, 2 + n_types)."""
    b, n, p, _ = points.shape
    onehot = np.zeros((b, n, len(TYPE_TAGS)))
    np.put_along_axis(onehot, type_ids[..., None].clip(0), 1.0, axis=-1)
    attrs = np.concatenate(
        [points / cfg.coord_scale, np.broadcast_to(onehot[:, :, None, :], (b, n, p, len(TYPE_TAGS)))], axis=-1
    )
    attrs[~poly_valid] = 0.0
    return attrs


# --------------------------------------------------------------------------- model operations


def embed(p, prefix, attrs, excluded, cfg):
    """Shared rFFN per slot plus a sinusoidal code on the column (time) index.

    Excluded (masked or invalid) slots come out as exact zeros.
    """
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim != 4 or attrs.shape[:3] != excluded.shape:
        raise tn.ShapeError(f"embed: attributes {attrs.shape} vs exclusion flags {excluded.shape}")
    x = Tensor(np.where(excluded[..., None], 0.0, attrs))
    h = rffn(p, f"{prefix}.embed", x)
    pe = tn.sinusoidal_encoding(attrs.shape[2], cfg.d_model)
    keep = (~excluded)[..., None].astype(np.float64)
    return (h + pe[None, None]) * keep


def encode(p, prefix, tokens, excluded, n_layers, heads):
    """Stack of axis-factorized layers; excluded slots never act as query or key."""
    visible = ~np.asarray(excluded, dtype=bool)
    x = tokens
    for i in range(n_layers):
        x = axis_layer(p, f"{prefix}.layer{i}", x, visible, heads)
    return x


def decode_reconstruction(p, prefix, context, masked, invalid, cfg, kind="traj"):
    """Rebuild the lattice with mask tokens and predict coordinates at masked slots.

    Args:
        context: encoder output (B, R, C, d).
        masked: (B, R, C) slots hidden from the encoder.
        invalid: (B, R, C) padding / not-observed slots.
        kind: ``traj`` (time positional table) or ``map`` (polyline x point tables).

    Returns:
        Tensor (n_masked, 2) in meters, in ``np.argwhere(masked)`` order.
    """
    masked = np.asarray(masked, dtype=bool)
    if context.shape[:3] != masked.shape or masked.shape != invalid.shape:
        raise tn.ShapeError(f"decode: context {context.shape} vs plan {masked.shape}")
    b, r, c, d = context.shape
    tokens = tn.where(masked[..., None], p[f"{prefix}.mask_token"], context)
    if kind == "traj":
        pos = p[f"{prefix}.pos_time"]
        if pos.shape[0] < c:
            raise tn.ShapeError(f"decode: {c} timesteps but positional table has {pos.shape[0]}")
        tokens = tokens + pos[:c].reshape(1, 1, c, d)
    else:
        tokens = tokens + p[f"{prefix}.pos_polyline"][:r].reshape(1, r, 1, d)
        tokens = tokens + p[f"{prefix}.pos_point"][:c].reshape(1, 1, c, d)
    x = encode(p, prefix, tokens, invalid & ~masked, cfg.dec_layers, cfg.heads)
    idx = np.nonzero(masked)
    picked = x[idx]
    out = _affine(p, f"{prefix}.head", _norm(p, f"{prefix}.head_ln", picked))
    return out * cfg.coord_scale


def forecast(p, traj_ctx, traj_valid, map_ctx, map_valid, cfg):
    """Multi-modal future offsets from trajectory and map contexts.

    Args:
        traj_ctx: (B, M, t_obs, d) trajectory encoder output.
        traj_valid: (B, M, t_obs) observed validity.
        map_ctx: (B, L, P, d) map encoder output.
        map_valid: (B, L, P) valid map slots.

    Returns:
        (offsets, logits): Tensor (B, c, T_fut, M, 2) in meters relative to each
        agent's last observed position, and Tensor (B, c) mode logits.
    """
    b, m, t, d = traj_ctx.shape
    c, tf = cfg.modes, cfg.t_fut
    mv = np.asarray(map_valid, dtype=np.float64)
    counts = np.maximum(mv.sum(axis=(1, 2)), 1.0)
    pooled = (map_ctx * mv[..., None]).sum(axis=(1, 2)) * (1.0 / counts)[:, None]
    seeds = tn.broadcast_to(p["fore.seeds"].reshape(1, c, tf, d), (b, c, tf, d))
    mp = tn.broadcast_to(pooled.reshape(b, 1, 1, d), (b, c, tf, d))
    q = rffn(p, "fore.rffn", tn.concat([seeds, mp], axis=-1))
    x = tn.broadcast_to(q.reshape(b, c, 1, tf, d), (b, c, m, tf, d))

    present = np.asarray(traj_valid, dtype=bool).any(axis=2)  # (B, M)
    q_vis = np.broadcast_to(present[:, None, :, None], (b, c, m, tf)).reshape(b * c * m, tf)
    k_vis = np.broadcast_to(np.asarray(traj_valid, bool)[:, None], (b, c, m, t)).reshape(b * c * m, t)
    ctx = traj_ctx.reshape(b * m, t, d)

    def expand(z):
        return tn.broadcast_to(z.reshape(b, 1, m, t, d), (b, c, m, t, d)).reshape(b * c * m, t, d)

    s_vis = np.ascontiguousarray(
        np.broadcast_to(present[:, None, None, :], (b, c, tf, m))
    ).reshape(b * c * tf, m)
    for i in range(cfg.fore_layers):
        x = mabd(p, f"fore.layer{i}.cross", x.reshape(b * c * m, tf, d), q_vis, ctx, k_vis, cfg.heads, expand)
        x = x.reshape(b, c, m, tf, d).transpose(0, 1, 3, 2, 4)
        x = mab(p, f"fore.layer{i}.social", x.reshape(b * c * tf, m, d), s_vis, cfg.heads)
        x = x.reshape(b, c, tf, m, d).transpose(0, 1, 3, 2, 4)
    h = _norm(p, "fore.head_ln", x)
    offsets = _affine(p, "fore.head", h) * cfg.coord_scale  # (B, c, M, tf, 2)
    offsets = offsets.transpose(0, 1, 3, 2, 4)
    pres = present.astype(np.float64)
    n_present = np.maximum(pres.sum(axis=1), 1.0) * tf
    weights = (pres[:, None, :, None, None] / n_present[:, None, None, None, None])
    scene_vec = (h * weights).sum(axis=(2, 3))  # (B, c, d)
    logits = tn.linear(scene_vec, p["fore.logit.w"]).reshape(b, c)
    return offsets, logits


# --------------------------------------------------------------------------- batches


@dataclass
class Batch:
    hist: np.ndarray  # (B, M, t_obs, 2)
    hist_valid: np.ndarray  # (B, M, t_obs)
    fut: np.ndarray  # (B, M, T_fut, 2)
    fut_valid: np.ndarray  # (B, M, T_fut)
    ego: np.ndarray  # (B,)
    map_pts: np.ndarray  # (B, L, P, 2)
    map_type: np.ndarray  # (B, L)
    map_valid: np.ndarray  # (B, L)

    def __len__(self):
        return self.hist.shape[0]

    def take(self, idx):
        idx = np.asarray(idx)
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @property
    def last_obs(self):
        return self.hist[:, :, -1, :]

    def map_slot_valid(self):
        p = self.map_pts.shape[2]
        return np.broadcast_to(self.map_valid[:, :, None], self.map_valid.shape + (p,)).copy()


def collate(scenes, cfg):
    """Stack scenes into padded arrays sized by ``cfg``."""
    n = len(scenes)
    m, t, tf, lp, pp = cfg.max_agents, cfg.t_obs, cfg.t_fut, cfg.max_polylines, cfg.points
    hist = np.zeros((n, m, t, 2))
    hv = np.zeros((n, m, t), dtype=bool)
    fut = np.zeros((n, m, tf, 2))
    fv = np.zeros((n, m, tf), dtype=bool)
    ego = np.zeros(n, dtype=np.int64)
    mp = np.zeros((n, lp, pp, 2))
    mt = np.zeros((n, lp), dtype=np.int64)
    mvalid = np.zeros((n, lp), dtype=bool)
    for i, sc in enumerate(scenes):
        if sc.num_agents > m or sc.t_obs != t or sc.t_fut < tf:
            raise tn.ShapeError(
                f"scene {i}: {sc.num_agents} agents, t_obs {sc.t_obs}, t_fut {sc.t_fut} do not fit config"
            )
        k = sc.num_agents
        hist[i, :k] = sc.history
        hv[i, :k] = sc.history_valid
        fut[i, :k] = sc.future[:, :tf]
        fv[i, :k] = sc.future_valid[:, :tf]
        ego[i] = sc.ego_index
        polys = sc.map.polylines
        if len(polys) > lp:
            raise tn.ShapeError(f"scene {i}: {len(polys)} polylines exceed max_polylines {lp}")
        for j, pl in enumerate(polys):
            if pl.points.shape[0] != pp:
                raise tn.ShapeError(f"scene {i}: polyline with {pl.points.shape[0]} points, expected {pp}")
            mp[i, j] = pl.points
            mt[i, j] = TYPE_TAGS.index(pl.type_tag)
            mvalid[i, j] = True
    return Batch(hist, hv, fut, fv, ego, mp, mt, mvalid)


def encode_trajectories(p, batch, cfg, masked=None):
    """Embed + encode the observed history; ``masked`` slots are hidden."""
    excluded = ~batch.hist_valid if masked is None else (~batch.hist_valid | masked)
    attrs = traj_attributes(batch.hist, batch.hist_valid, cfg)
    tokens = embed(p, "traj_enc", attrs, excluded, cfg)
    return encode(p, "traj_enc", tokens, excluded, cfg.enc_layers, cfg.heads)


def encode_map(p, batch, cfg, masked=None):
    slot_valid = batch.map_slot_valid()
    excluded = ~slot_valid if masked is None else (~slot_valid | masked)
    attrs = map_attributes(batch.map_pts, batch.map_type, batch.map_valid, cfg)
    tokens = embed(p, "map_enc", attrs, excluded, cfg)
    return encode(p, "map_enc", tokens, excluded, cfg.enc_layers, cfg.heads)


def reconstruct(p, batch, masked, cfg, target="traj"):
    """Masked reconstruction forward pass. Returns (predictions, targets)."""
    if target == "traj":
        ctx = encode_trajectories(p, batch, cfg, masked)
        pred = decode_reconstruction(p, "traj_dec", ctx, masked, ~batch.hist_valid, cfg, "traj")
        tgt = batch.hist[masked]
    else:
        ctx = encode_map(p, batch, cfg, masked)
        pred = decode_reconstruction(p, "map_dec", ctx, masked, ~batch.map_slot_valid(), cfg, "map")
        tgt = batch.map_pts[masked]
    return pred, tgt


def predict(p, batch, cfg):
    """Unmasked forward pass. Returns (offsets Tensor (B,c,T,M,2), logits Tensor (B,c))."""
    tctx = encode_trajectories(p, batch, cfg)
    mctx = encode_map(p, batch, cfg)
    return forecast(p, tctx, batch.hist_valid, mctx, batch.map_slot_valid(), cfg)


def absolute_forecast(offsets, batch):
    """Offsets (B, c, T, M, 2) -> absolute ego-frame positions."""
    return offsets + batch.last_obs[:, None, None, :, :]
