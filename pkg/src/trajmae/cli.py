"""Command-line entry point: ``trajmae {synth,pretrain,finetune,eval,ablate,verify}``."""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import metrics
from . import model as mdl
from . import verify as vfy
from .masking import MAP_STRATEGIES, TRAJ_STRATEGIES, DegenerateMaskError, plan_to_json
from .masking import MapMaskPlan, TrajMaskPlan
from .scene import LAYOUTS, DataConfig, dataset_stats, generate_dataset, read_shard, write_shard
from .training.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .training.finetune import FinetuneConfig, evaluate_store, predict_positions, run_finetune
from .training.pretrain import (
    MAP_ORDER,
    TRAJ_ORDER,
    NumericalAbort,
    PretrainConfig,
    checkpoint_of,
    held_out_errors,
    run_pretrain,
)
from .training.schedule import MODES, ScheduleError

log = logging.getLogger("trajmae")

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
SPLITS = ("train", "val", "test")
ABLATION_AXES = ("ratio", "strategy", "order", "schedule-mode")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- configuration


def _model_defaults():
    d = asdict(mdl.ModelConfig())
    # sized from the data section
    for k in ("t_obs", "t_fut", "max_agents", "points"):
        d[k] = None
    return d


DEFAULTS = {
    "data": {
        "train": 2000,
        "val": 200,
        "test": 200,
        "seed": 0,
        "split_seeds": {},
        "agents": 6,
        "t_obs": 10,
        "t_fut": 15,
        "dt": 0.1,
        "points": 10,
        "layouts": list(LAYOUTS),
        "late_prob": 0.2,
        "v_max": 15.0,
        "shard_dir": None,
    },
    "model": _model_defaults(),
    "masking": {"ratios": {}, "default_ratio": 0.6, "block_cap": 0.5},
    "pretrain": {
        "target": "traj",
        "mode": "continual-pretrain",
        "order": None,
        "N": 2000,
        "M_carry": 500,
        "batch_size": 16,
        "lr": 1e-3,
        "delta": 1.0,
    },
    "finetune": {
        "lr0": 1e-3,
        "period": 300,
        "factor": 2.0,
        "horizon": 1500,
        "total_steps": 3000,
        "batch_size": 16,
        "steps_per_eval": 500,
        "cls_weight": 0.1,
        "delta": 1.0,
        "traj_ckpt": None,
        "map_ckpt": None,
    },
    "eval": {
        "threshold": metrics.MISS_THRESHOLD,
        "radius": metrics.COLLISION_RADIUS,
        "split": "test",
        "checkpoint": None,
        "forecasts": None,
        "per_scene": False,
    },
    "seeds": [0],
    "output_dir": "runs/default",
}

# free-form maps: keys are checked by _check_semantics instead
_OPEN_MAPS = {"data.split_seeds", "masking.ratios"}


def _type_ok(default, value):
    if default is None:
        return value is None or isinstance(value, (str, int, float, list))
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, type(default))


def merge_config(defaults, user, path=""):
    """Overlay ``user`` on ``defaults``; unknown keys and type mismatches raise ConfigError."""
    if not isinstance(user, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key '{where}'")
        dv = defaults[key]
        if isinstance(dv, dict) and where not in _OPEN_MAPS:
            out[key] = merge_config(dv, value, where)
        elif not _type_ok(dv, value):
            raise ConfigError(f"config key '{where}': expected {type(dv).__name__}, got {json.dumps(value)}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_semantics(cfg):
    for k in cfg["masking"]["ratios"]:
        if k not in TRAJ_STRATEGIES + MAP_STRATEGIES:
            raise ConfigError(f"unknown config key 'masking.ratios.{k}'")
    for k in cfg["data"]["split_seeds"]:
        if k not in SPLITS:
            raise ConfigError(f"unknown config key 'data.split_seeds.{k}'")
    for k, v in list(cfg["masking"]["ratios"].items()) + [("default_ratio", cfg["masking"]["default_ratio"])]:
        if not 0.1 <= v <= 0.9:
            raise ConfigError(f"config key 'masking.ratios.{k}': ratio {v} outside [0.1, 0.9]")
    if cfg["pretrain"]["target"] not in ("traj", "map"):
        raise ConfigError(f"config key 'pretrain.target': expected traj or map, got {cfg['pretrain']['target']!r}")
    if cfg["pretrain"]["mode"] not in MODES:
        raise ConfigError(f"config key 'pretrain.mode': expected one of {MODES}")
    if cfg["eval"]["split"] not in SPLITS:
        raise ConfigError(f"config key 'eval.split': expected one of {SPLITS}")
    for sec, key in (("pretrain", "batch_size"), ("finetune", "batch_size")):
        if cfg[sec][key] < 1:
            raise ConfigError(f"config key '{sec}.{key}': batch size must be at least 1")
    if not cfg["seeds"] or not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg["seeds"]):
        raise ConfigError("config key 'seeds': expected a non-empty list of integers")
    for lay in cfg["data"]["layouts"]:
        if lay not in LAYOUTS:
            raise ConfigError(f"config key 'data.layouts': unknown layout {lay!r}")
    order = cfg["pretrain"]["order"]
    allowed = TRAJ_STRATEGIES if cfg["pretrain"]["target"] == "traj" else MAP_STRATEGIES
    if order is None:
        cfg["pretrain"]["order"] = list(TRAJ_ORDER if cfg["pretrain"]["target"] == "traj" else MAP_ORDER)
    elif not isinstance(order, list) or not order or any(s not in allowed for s in order):
        raise ConfigError(f"config key 'pretrain.order': expected a list drawn from {allowed}, got {order}")
    data, model = cfg["data"], cfg["model"]
    for mk, dk in (("t_obs", "t_obs"), ("t_fut", "t_fut"), ("max_agents", "agents"), ("points", "points")):
        if model[mk] is None:
            model[mk] = data[dk]
        elif model[mk] != data[dk]:
            raise ConfigError(f"config key 'model.{mk}': {model[mk]} disagrees with data.{dk}={data[dk]}")
    try:
        model_config(cfg).validate()
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config section 'model': {err}") from None
    return cfg


def load_config(path=None, overrides=None):
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    cfg = merge_config(DEFAULTS, user)
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".")
        cfg[sec][key] = value
    return _check_semantics(cfg)


def model_config(cfg):
    return mdl.ModelConfig(**cfg["model"])


def data_config(cfg):
    d = {k: v for k, v in cfg["data"].items() if k != "shard_dir"}
    d["layouts"] = tuple(d["layouts"])
    return DataConfig(**d)


def strategy_ratio(cfg, strategy):
    m = cfg["masking"]
    if strategy in m["ratios"]:
        return float(m["ratios"][strategy])
    r = float(m["default_ratio"])
    return min(r, float(m["block_cap"])) if strategy == "B" else r


def pretrain_config(cfg, seed, order=None, mode=None, ratios=None):
    p = cfg["pretrain"]
    order = tuple(order or p["order"])
    return PretrainConfig(
        mode=mode or p["mode"],
        order=order,
        N=p["N"],
        M_carry=p["M_carry"],
        ratios=ratios or {s: strategy_ratio(cfg, s) for s in order},
        default_ratio=cfg["masking"]["default_ratio"],
        batch_size=p["batch_size"],
        lr=p["lr"],
        delta=p["delta"],
        seed=seed,
    )


def finetune_config(cfg, seed):
    f = cfg["finetune"]
    keep = {fl.name for fl in fields(FinetuneConfig)}
    return FinetuneConfig(**{k: v for k, v in f.items() if k in keep}, seed=seed)


# --------------------------------------------------------------------------- file helpers


def _out_dir(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _shard_dir(cfg):
    d = cfg["data"]["shard_dir"]
    return Path(d) if d else Path(cfg["output_dir"]) / "data"


def load_split(cfg, split):
    path = _shard_dir(cfg) / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"shard not found: {path} (run `trajmae synth` first or set data.shard_dir)")
    shard = read_shard(path, split)
    if not shard.scenes:
        raise ConfigError(f"shard {path} is empty")
    return shard


def load_batch(cfg, split):
    return mdl.collate(load_split(cfg, split).scenes, model_config(cfg))


def _seed(cfg, args):
    return args.seed if getattr(args, "seed", None) is not None else cfg["seeds"][0]


# --------------------------------------------------------------------------- commands


def cmd_synth(cfg, args):
    out = _out_dir(cfg)
    shards = generate_dataset(data_config(cfg))
    sdir = _shard_dir(cfg)
    sdir.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_shard(sdir / f"{split}.jsonl", shards[split])
    _dump_json(sdir / "stats.json", dataset_stats(shards))
    log.info("wrote %s", ", ".join(f"{s}={len(shards[s])}" for s in SPLITS))
    del out
    return EXIT_OK


def _mask_writer(path, target, pcfg):
    fh = open(path, "w", encoding="utf-8")
    cls = TrajMaskPlan if target == "traj" else MapMaskPlan

    def on_masks(step, strategy, masked):
        for i, plan in enumerate(masked):
            rec = json.loads(plan_to_json(cls(plan, strategy, pcfg.ratio(strategy))))
            fh.write(json.dumps({"step": step, "item": i, **rec}, separators=(",", ":")) + "\n")

    return fh, on_masks


def cmd_pretrain(cfg, args):
    out = _out_dir(cfg)
    seed = _seed(cfg, args)
    pcfg = pretrain_config(cfg, seed)
    mcfg = model_config(cfg)
    data = load_batch(cfg, "train")
    fh, on_masks = (None, None)
    if args.dump_masks:
        fh, on_masks = _mask_writer(out / "masks.jsonl", cfg["pretrain"]["target"], pcfg)
    try:
        res = run_pretrain(pcfg, mcfg, data, out_dir=str(out), on_masks=on_masks)
    finally:
        if fh is not None:
            fh.close()
    _write_csv(out / "curve.csv", ["step", "stage", "strategy", "loss"],
               [(s, st + 1, strat, loss) for s, st, strat, loss in res.records])
    sched = res.plan.to_dict()
    sched["ratios"] = {s: pcfg.ratio(s) for s in pcfg.order}
    sched["target"] = cfg["pretrain"]["target"]
    sched["total_steps"] = res.plan.total_steps()
    sched["strategy_totals"] = res.plan.strategy_totals()
    _dump_json(out / "schedule.json", sched)
    log.info("pre-training finished: %d steps, %d checkpoints", res.state.global_step, len(res.checkpoints))
    return EXIT_OK


def _load_encoders(cfg, mcfg, traj_path, map_path):
    expected = asdict(mcfg)
    traj = load_checkpoint(traj_path, expected) if traj_path else None
    mp = load_checkpoint(map_path, expected) if map_path else None
    return traj, mp


def _report_row(step, report):
    return [step] + [report.values[k] for k in metrics.REPORT_KEYS]


def cmd_finetune(cfg, args):
    out = _out_dir(cfg)
    seed = _seed(cfg, args)
    mcfg = model_config(cfg)
    fcfg = finetune_config(cfg, seed)
    traj_path = args.traj_ckpt or cfg["finetune"]["traj_ckpt"]
    map_path = args.map_ckpt or cfg["finetune"]["map_ckpt"]
    traj, mp = _load_encoders(cfg, mcfg, traj_path, map_path)
    train, val = load_batch(cfg, "train"), load_batch(cfg, "val")
    ev = cfg["eval"]

    def eval_fn(store):
        return evaluate_store(store, val, mcfg, ev["threshold"], ev["radius"])[0]

    res = run_finetune(fcfg, mcfg, train, traj_ckpt=traj, map_ckpt=mp, eval_fn=eval_fn)
    save_checkpoint(out / "final.tmae", res.checkpoint(mcfg, fcfg))
    _write_csv(out / "train_curve.csv", ["step", "lr", "loss"], res.curve)
    _write_csv(out / "val_curve.csv", ["step", *metrics.REPORT_KEYS],
               [_report_row(step, rep) for step, rep in res.reports])
    final = res.reports[-1][1] if res.reports else eval_fn(res.store)
    _dump_json(out / "metrics.json", final.to_dict())
    return EXIT_OK


def read_forecasts(path, scenes):
    preds = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                preds.append(np.asarray(json.loads(line)["pred"], dtype=np.float64))
    if len(preds) != len(scenes):
        raise ConfigError(f"{path}: {len(preds)} forecasts for {len(scenes)} scenes")
    for i, (p, sc) in enumerate(zip(preds, scenes)):
        want = (sc.t_fut, sc.num_agents, 2)
        if p.ndim != 4 or p.shape[1:] != want:
            raise ConfigError(f"{path}: scene {i} forecast shape {p.shape}, expected (c, {want[0]}, {want[1]}, 2)")
    return preds


def cmd_eval(cfg, args):
    out = _out_dir(cfg)
    ev = cfg["eval"]
    split = ev["split"]
    scenes = load_split(cfg, split).scenes
    forecasts = args.forecasts or ev["forecasts"]
    ckpt_path = args.checkpoint or ev["checkpoint"]
    if bool(forecasts) == bool(ckpt_path):
        raise ConfigError("eval needs exactly one of --checkpoint or --forecasts")
    if forecasts:
        preds = read_forecasts(forecasts, scenes)
    else:
        mcfg = model_config(cfg)
        ckpt = load_checkpoint(ckpt_path, asdict(mcfg))
        missing = [p for p in ("traj_enc.", "map_enc.", "fore.") if not ckpt.store.names(p)]
        if missing:
            raise CheckpointError(f"{ckpt_path}: not a fine-tuned model (missing {missing})")
        batch = mdl.collate(scenes, mcfg)
        full, _ = predict_positions(ckpt.store, batch, mcfg)
        preds = [full[i, :, :, : sc.num_agents] for i, sc in enumerate(scenes)]
    truths = [sc.future.transpose(1, 0, 2) for sc in scenes]
    valids = [sc.future_valid.T for sc in scenes]
    report, rows = metrics.evaluate(preds, truths, valids, [sc.ego_index for sc in scenes],
                                    ev["threshold"], ev["radius"])
    _dump_json(out / f"{split}_metrics.json", report.to_dict())
    if ev["per_scene"] or args.per_scene:
        with open(out / f"{split}_per_scene.jsonl", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    print(report.to_json())
    return EXIT_OK


# --------------------------------------------------------------------------- ablation


def ablation_cells(cfg, axis):
    """Cell specs for one ablation axis, in output order."""
    target = cfg["pretrain"]["target"]
    strategies = TRAJ_STRATEGIES if target == "traj" else MAP_STRATEGIES
    order = tuple(cfg["pretrain"]["order"])
    cells = []
    for seed in cfg["seeds"]:
        if axis == "ratio":
            for r in vfy.RATIO_GRID:
                for s in strategies:
                    cells.append({"value": r, "order": (s,), "mode": "sequential", "ratios": {s: r}, "seed": seed})
        elif axis == "strategy":
            for s in strategies:
                cells.append({"value": s, "order": (s,), "mode": "sequential", "ratios": None, "seed": seed})
        elif axis == "order":
            for perm in itertools.permutations(order):
                cells.append({"value": ">".join(perm), "order": perm, "mode": cfg["pretrain"]["mode"],
                              "ratios": None, "seed": seed})
        elif axis == "schedule-mode":
            for mode in MODES:
                cells.append({"value": mode, "order": order, "mode": mode, "ratios": None, "seed": seed})
        else:
            raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    return cells


ABLATION_HEADER = ("axis", "value", "order", "mode", "ratios", "seed", "final_val_loss", *metrics.REPORT_KEYS)


def run_ablation_cell(cfg, axis, cell):
    """One isolated pre-train + fine-tune pipeline; returns its grid row."""
    mcfg = model_config(cfg)
    pcfg = pretrain_config(cfg, cell["seed"], cell["order"], cell["mode"], cell["ratios"])
    train, val = load_batch(cfg, "train"), load_batch(cfg, "val")
    res = run_pretrain(pcfg, mcfg, train)
    target = cfg["pretrain"]["target"]
    losses = [
        held_out_errors(res.store, val, mcfg, s, pcfg.ratio(s), cell["seed"], target, delta=pcfg.delta)[0]
        for s in pcfg.order
    ]
    ckpt = checkpoint_of(res, mcfg, pcfg)
    fcfg = finetune_config(cfg, cell["seed"])
    fcfg.steps_per_eval = 0
    kw = {"traj_ckpt": ckpt} if target == "traj" else {"map_ckpt": ckpt}
    ft = run_finetune(fcfg, mcfg, train, **kw)
    report = evaluate_store(ft.store, val, mcfg, cfg["eval"]["threshold"], cfg["eval"]["radius"])[0]
    ratios = ";".join(f"{s}={pcfg.ratio(s)}" for s in pcfg.order)
    return [axis, cell["value"], ">".join(pcfg.order), pcfg.mode, ratios, cell["seed"],
            float(np.mean(losses))] + [report.values[k] for k in metrics.REPORT_KEYS]


def pool_width():
    raw = os.environ.get("TRAJMAE_THREADS", "1")
    try:
        width = int(raw)
    except ValueError:
        raise ConfigError(f"TRAJMAE_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(width, os.cpu_count() or 1))


def cmd_ablate(cfg, args):
    out = _out_dir(cfg)
    cells = ablation_cells(cfg, args.axis)
    width = pool_width()
    if width == 1:
        rows = [run_ablation_cell(cfg, args.axis, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=width) as pool:
            rows = list(pool.map(run_ablation_cell, [cfg] * len(cells), [args.axis] * len(cells), cells))
    _write_csv(out / "grid.csv", ABLATION_HEADER, rows)
    log.info("ablation %s: %d cells", args.axis, len(rows))
    return EXIT_OK


# --------------------------------------------------------------------------- verify


def cmd_verify(cfg, args):
    only = args.suites.split(",") if args.suites else None
    if only:
        unknown = [s for s in only if s not in vfy.SUITES]
        if unknown:
            raise ConfigError(f"unknown suite(s) {unknown}; expected some of {list(vfy.SUITES)}")
    results = vfy.run_all(seed=_seed(cfg, args), fault=args.inject_fault, quick=args.quick, only=only)
    report = {"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.cases} cases, {r.violations} violations", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


# --------------------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="trajmae", description="Masked-autoencoder pre-training lab for trajectory forecasting.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--output-dir", help="override output_dir from the config")
        sp.add_argument("--seed", type=int, help="run seed (default: first entry of `seeds`)")

    sp = sub.add_parser("synth", help="generate train/val/test scene shards")
    common(sp)

    sp = sub.add_parser("pretrain", help="masked reconstruction pre-training")
    common(sp)
    sp.add_argument("--target", choices=("traj", "map"), help="trajectory or map pre-training")
    sp.add_argument("--mode", choices=MODES, help="stage schedule")
    sp.add_argument("--order", help="comma-separated strategy order, e.g. S,T,ST")
    sp.add_argument("--ratio", type=float, help="masking ratio for every strategy (block capped by masking.block_cap)")
    sp.add_argument("--dump-masks", action="store_true", help="write every batch mask plan to masks.jsonl")

    sp = sub.add_parser("finetune", help="fine-tune the forecaster, optionally from pre-trained encoders")
    common(sp)
    sp.add_argument("--traj-ckpt", help="pre-trained trajectory checkpoint")
    sp.add_argument("--map-ckpt", help="pre-trained map checkpoint")

    sp = sub.add_parser("eval", help="score a fine-tuned model or a forecast file on the test split")
    common(sp)
    sp.add_argument("--checkpoint", help="fine-tuned model (final.tmae)")
    sp.add_argument("--forecasts", help="JSONL file, one {\"pred\": c x T x M x 2} line per scene")
    sp.add_argument("--per-scene", action="store_true", help="also write the per-scene breakdown")

    sp = sub.add_parser("ablate", help="run an ablation grid at the configured budgets")
    common(sp)
    sp.add_argument("--axis", required=True, help=f"one of {', '.join(ABLATION_AXES)}")

    sp = sub.add_parser("verify", help="run the property suites")
    common(sp, config_required=False)
    sp.add_argument("--quick", action="store_true", help="smaller case counts")
    sp.add_argument("--suites", help=f"comma-separated subset of {', '.join(vfy.SUITES)}")
    sp.add_argument("--output", help="write the JSON report here instead of stdout")
    sp.add_argument("--inject-fault", choices=(vfy.FAULT_FLIP_MASK_BIT,), help=argparse.SUPPRESS)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
}


def _overrides(args):
    o = {}
    if getattr(args, "output_dir", None):
        o["output_dir"] = args.output_dir
    if args.command == "pretrain":
        if args.target:
            o["pretrain.target"] = args.target
            if not args.order:
                o["pretrain.order"] = None
        if args.mode:
            o["pretrain.mode"] = args.mode
        if args.order:
            o["pretrain.order"] = [s.strip() for s in args.order.split(",") if s.strip()]
        if args.ratio is not None:
            o["masking.default_ratio"] = args.ratio
    return o


def resolve(args):
    o = _overrides(args)
    out_dir = o.pop("output_dir", None)
    cfg = load_config(args.config, o)
    if out_dir:
        if args.command != "synth" and cfg["data"]["shard_dir"] is None:
            # shards stay where the configured run put them
            cfg["data"]["shard_dir"] = str(Path(cfg["output_dir"]) / "data")
        cfg["output_dir"] = out_dir
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "ablate" and args.axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {args.axis!r}; expected one of {ABLATION_AXES}")
        if args.command != "verify" or args.config:
            _dump_json(_out_dir(cfg) / "config.resolved.json", cfg)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScheduleError, DegenerateMaskError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
