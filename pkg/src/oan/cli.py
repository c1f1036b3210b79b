"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, sweep, gradcheck. Training
options resolve in three layers: built-in defaults, then a JSON config file
(--config), then explicit command-line flags. Every command prints its
fully resolved configuration before doing anything, so a logged invocation
can always be replayed.

Set OAN_LOG=error|info|debug to control diagnostic logging (stderr).
Machine-readable results are written as JSON (plus CSV for the sweep grid);
stdout carries the same numbers in human-readable form.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .dataset import generate_synthetic, load_dataset, save_dataset
from .diffcore import Tensor, grad_check
from .errors import OanError
from .losses import (
    LossWeights,
    batch_categories,
    classification_loss,
    inter_class_loss,
    self_distill_hcr,
    semantic_loss,
    teacher_student_hcr,
    total_loss,
)
from .model import PARAM_NAMES, OanModel, init_model
from .trainer import (
    TrainConfig,
    evaluate_split,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

# the six ablation rows: which extra objective terms are active
ABLATION_ROWS = (
    ("base", False, False, False),
    ("+self", False, False, True),
    ("+ind", True, False, False),
    ("+ind+teacher", True, True, False),
    ("+ind+self", True, False, True),
    ("+ind+teacher+self", True, True, True),
)

SWEEP_LAMBDA2 = (1e-4, 1e-3, 1e-2, 1e-1)
SWEEP_LAMBDA3 = (1e-2, 1e-1, 1.0)


def _setup_logging() -> None:
    raw = os.environ.get("OAN_LOG", "error").lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        raise SystemExit(f"OAN_LOG must be one of {sorted(_LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _print_resolved(config: dict) -> None:
    print("resolved config: " + json.dumps(config, sort_keys=True))


def _parse_weights(text: str) -> dict:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"--weights needs three comma-separated numbers, got {text!r}"
        )
    try:
        l1, l2, l3 = (float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return {"lambda1": l1, "lambda2": l2, "lambda3": l3}


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not seeds:
        raise argparse.ArgumentTypeError("--seeds needs at least one integer")
    return seeds


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    """Flags that override TrainConfig fields. Defaults are None so only
    explicitly passed flags take precedence over the config file."""
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--weights", type=_parse_weights, default=None,
                   metavar="L1,L2,L3", help="semantic, independence, consistency weights")
    p.add_argument("--independence", action=argparse.BooleanOptionalAction, default=None,
                   help="inter-class independence term on/off")
    p.add_argument("--self-consistency", action=argparse.BooleanOptionalAction, default=None,
                   help="head-to-head consistency term on/off")
    p.add_argument("--teacher-consistency", action=argparse.BooleanOptionalAction, default=None,
                   help="teacher-to-student consistency term on/off")
    p.add_argument("--literal-coefficients", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--num-semantic", type=int, default=None)
    p.add_argument("--teacher-epochs", type=int, default=None)
    p.add_argument("--num-unseen", type=int, default=None)
    p.add_argument("--eval-ks", type=_parse_ks, default=None, metavar="K1,K2,...")


_FLAG_TO_FIELD = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "weights": "loss_weights",
    "independence": "enable_independence",
    "self_consistency": "enable_self_hcr",
    "teacher_consistency": "enable_teacher_hcr",
    "literal_coefficients": "literal_coefficients",
    "beta": "beta",
    "eta": "eta",
    "momentum": "momentum",
    "tau": "tau",
    "hidden": "hidden",
    "embed_dim": "embed_dim",
    "num_semantic": "num_semantic",
    "teacher_epochs": "teacher_epochs",
    "num_unseen": "num_unseen",
    "eval_ks": "eval_ks",
    "seed": "seed",
}


def _resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """defaults < config file < command line."""
    merged: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        TrainConfig.from_dict(loaded)  # reject unknown/invalid keys with file intact
        merged.update(loaded)
    for flag, field in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field] = value
    return TrainConfig.from_dict(merged)


def _load_or_generate(data_path) -> object:
    if data_path:
        return load_dataset(data_path)
    return generate_synthetic()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    resolved = {
        "classes": args.classes,
        "per_class": args.per_class,
        "dim": args.dim,
        "shift": args.shift,
        "noise": args.noise,
        "seed": args.seed,
        "out": str(args.out),
    }
    _print_resolved(resolved)
    ds = generate_synthetic(
        num_classes=args.classes,
        per_class_per_modality=args.per_class,
        d_in=args.dim,
        modality_shift=args.shift,
        noise_std=args.noise,
        seed=args.seed,
    )
    path = _out_dir(args) / "dataset.oands"
    save_dataset(ds, path)
    print(f"{len(ds)} instances, {ds.num_classes} classes, {ds.d_in} features -> {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    _print_resolved(cfg.to_dict())
    ds = _load_or_generate(args.data)
    result = run_training(cfg, ds)
    out = _out_dir(args)

    ckpt = out / "checkpoint.oanck"
    save_checkpoint(ckpt, cfg, result.state, result.split)

    log_path = out / "metrics.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in result.state.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    report = {
        "config": cfg.to_dict(),
        "seen": [int(c) for c in result.split.seen],
        "unseen": [int(c) for c in result.split.unseen],
        "real": json.loads(result.report_real.to_json()),
        "binary": json.loads(result.report_binary.to_json()),
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")

    print(f"checkpoint -> {ckpt}")
    print(f"epoch log  -> {log_path}")
    print(
        "zero-shot map_all: real {:.4f}, binary {:.4f} ({} unseen classes)".format(
            result.report_real.map_all,
            result.report_binary.map_all,
            len(result.split.unseen),
        )
    )
    return 0


def cmd_eval(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    cfg = loaded.config
    _print_resolved(cfg.to_dict())
    ds = _load_or_generate(args.data)
    classes = loaded.split.seen if args.on == "seen" else loaded.split.unseen
    real, binary = evaluate_split(loaded.model, ds, classes, ks=cfg.eval_ks)
    doc = {
        "checkpoint": str(args.checkpoint),
        "classes": [int(c) for c in classes],
        "on": args.on,
        "real": json.loads(real.to_json()),
        "binary": json.loads(binary.to_json()),
    }
    out = _out_dir(args)
    with open(out / "eval.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        "map_all on {} {} classes: real {:.4f}, binary {:.4f}".format(
            len(classes), args.on, real.map_all, binary.map_all
        )
    )
    return 0


def _first_k(report) -> float:
    k = min(report.prec_at)
    return report.prec_at[k]


def cmd_ablate(args) -> int:
    base_cfg = _resolve_train_config(args)
    _print_resolved(
        {"seeds": list(args.seeds), "out": str(args.out), "config": base_cfg.to_dict()}
    )
    ds = _load_or_generate(args.data)
    rows = []
    for name, ind, teacher, self_c in ABLATION_ROWS:
        maps, precs = [], []
        for seed in args.seeds:
            overrides = dict(base_cfg.to_dict())
            overrides.update(
                seed=seed,
                enable_independence=ind,
                enable_teacher_hcr=teacher,
                enable_self_hcr=self_c,
            )
            res = run_training(TrainConfig.from_dict(overrides), ds)
            maps.append(res.report_real.map_all)
            precs.append(_first_k(res.report_real))
        rows.append(
            {
                "name": name,
                "independence": ind,
                "teacher_consistency": teacher,
                "self_consistency": self_c,
                "map_mean": float(np.mean(maps)),
                "map_std": float(np.std(maps)),
                "prec_mean": float(np.mean(precs)),
                "prec_std": float(np.std(precs)),
                "map_per_seed": [float(v) for v in maps],
            }
        )

    doc = {"seeds": list(args.seeds), "rows": rows}
    out = _out_dir(args)
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")

    header = f"{'row':<18} {'ind':<4} {'tch':<4} {'self':<5} {'map_all':<16} {'prec':<16}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(
            "{:<18} {:<4} {:<4} {:<5} {:=7.4f} +- {:<6.4f} {:=7.4f} +- {:<6.4f}".format(
                r["name"],
                "on" if r["independence"] else "off",
                "on" if r["teacher_consistency"] else "off",
                "on" if r["self_consistency"] else "off",
                r["map_mean"],
                r["map_std"],
                r["prec_mean"],
                r["prec_std"],
            )
        )
    return 0


def cmd_sweep(args) -> int:
    base_cfg = _resolve_train_config(args)
    _print_resolved(
        {"seeds": list(args.seeds), "out": str(args.out), "config": base_cfg.to_dict()}
    )
    ds = _load_or_generate(args.data)
    cells = []
    for lam2 in SWEEP_LAMBDA2:
        for lam3 in SWEEP_LAMBDA3:
            maps, precs = [], []
            for seed in args.seeds:
                overrides = dict(base_cfg.to_dict())
                lw = dict(overrides["loss_weights"])
                lw.update(lambda2=lam2, lambda3=lam3)
                overrides.update(seed=seed, loss_weights=lw)
                res = run_training(TrainConfig.from_dict(overrides), ds)
                maps.append(res.report_real.map_all)
                precs.append(_first_k(res.report_real))
            cells.append(
                {
                    "lambda2": lam2,
                    "lambda3": lam3,
                    "map_all": float(np.mean(maps)),
                    "prec": float(np.mean(precs)),
                }
            )

    out = _out_dir(args)
    doc = {"seeds": list(args.seeds), "cells": cells}
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("lambda2,lambda3,map_all,prec\n")
        for c in cells:
            fh.write(f"{c['lambda2']},{c['lambda3']},{c['map_all']},{c['prec']}\n")

    print(f"{len(cells)} cells -> {csv_path}")
    for c in cells:
        print(
            "lambda2={:<8g} lambda3={:<6g} map_all={:.4f} prec={:.4f}".format(
                c["lambda2"], c["lambda3"], c["map_all"], c["prec"]
            )
        )
    return 0


def _gradcheck_suite(seed: int, instances: int, tolerance: float, step: float):
    """Finite-difference checks for every objective term plus the combined
    objective through the whole network.

    Consistency losses hold their target side fixed by construction, so the
    target tensors are computed once outside the checked function; the
    finite-difference probe then sees the same function the tape
    differentiates.
    """
    root = np.random.default_rng(seed)
    checks = []
    for i in range(instances):
        rng = np.random.default_rng(root.integers(0, 2**63 - 1))
        n, d, classes, sem = 6, 5, 3, 4
        labels = rng.integers(0, classes, size=n).astype(np.intp)
        cfg = TrainConfig(
            d_in=d, hidden=24, embed_dim=d, num_semantic=sem, beta=3.0, seed=1
        )
        kernel = cfg.kernel()
        ind_cfg = cfg.independence_config()

        # hidden width keeps every relu row alive for random Gaussian inputs;
        # a fully dead row would zero the embedding and normalization needs
        # nonzero rows
        hidden = 24

        c_in = Tensor(rng.normal(size=(n, classes)), requires_grad=True)
        checks.append(
            (f"classification[{i}]",
             lambda t, y=labels: classification_loss(t, y), [c_in])
        )

        g_in = Tensor(rng.normal(size=(n, sem)), requires_grad=True)
        dist = rng.dirichlet(np.ones(sem), size=n)
        checks.append(
            (f"semantic[{i}]", lambda t, e=dist: semantic_loss(t, e), [g_in])
        )

        v_in = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        keys = rng.normal(size=(classes, d))
        keys /= np.sqrt((keys**2).sum(axis=1, keepdims=True))
        distinct, cat_index = batch_categories(labels)
        checks.append(
            (f"independence[{i}]",
             lambda t, ci=cat_index, kk=keys[distinct], cc=ind_cfg: inter_class_loss(
                 t, ci, kk, cc
             ),
             [v_in])
        )

        c_target = rng.normal(size=(n, classes))
        pred_g = Tensor(rng.normal(size=(n, sem)), requires_grad=True)
        checks.append(
            (f"self_consistency[{i}]",
             lambda t, tc=c_target, k=kernel: self_distill_hcr(Tensor(tc), t, k),
             [pred_g])
        )

        t_target = rng.normal(size=(n, sem))
        pred_c = Tensor(rng.normal(size=(n, classes)), requires_grad=True)
        checks.append(
            (f"teacher_consistency[{i}]",
             lambda t, tt=t_target, k=kernel: teacher_student_hcr(t, Tensor(tt), k),
             [pred_c])
        )

        # combined objective through embed + both heads; consistency targets
        # frozen at their base-point values
        model = init_model(d, hidden, d, sem, classes, int(rng.integers(0, 2**31)))
        x = rng.normal(size=(n, d))
        mods = rng.integers(0, 2, size=n).astype(np.intp)
        teacher_dist = rng.dirichlet(np.ones(sem), size=n)
        teacher_logits = rng.normal(size=(n, sem))
        t_unit = teacher_logits / np.sqrt(
            (teacher_logits**2).sum(axis=1, keepdims=True)
        )
        base_emb = model.embed(x, mods)
        _, base_c = model.heads(base_emb)
        c_frozen = base_c.data / np.sqrt(
            (base_c.data**2).sum(axis=1, keepdims=True)
        )
        weights = LossWeights()

        def objective(*params, x=x, m=mods, y=labels, td=teacher_dist,
                      kk=keys, ci=cat_index, di=distinct, cfz=c_frozen,
                      tu=t_unit, icfg=ind_cfg, kern=kernel, w=weights):
            net = OanModel(dict(zip(PARAM_NAMES, params)))
            emb = net.embed(x, m)
            values = dc.l2_normalize_rows(emb)
            g, c = net.heads(emb)
            cls = classification_loss(c, y)
            se = semantic_loss(g, td)
            ind = inter_class_loss(values, ci, kk[di], icfg)
            c_n = dc.l2_normalize_rows(c)
            g_n = dc.l2_normalize_rows(g)
            hcr = dc.add(
                self_distill_hcr(Tensor(cfz), g_n, kern),
                teacher_student_hcr(c_n, Tensor(tu), kern),
            )
            return total_loss(cls, se, ind, hcr, w)

        checks.append(
            (f"total[{i}]", objective, [model.parameters()[n_] for n_ in PARAM_NAMES])
        )

    results = []
    for name, fn, inputs in checks:
        report = grad_check(fn, inputs, step=step, tolerance=tolerance)
        results.append((name, report))
    return results


def cmd_gradcheck(args) -> int:
    resolved = {
        "seed": args.seed,
        "instances": args.instances,
        "tolerance": args.tolerance,
        "step": args.step,
    }
    _print_resolved(resolved)
    results = _gradcheck_suite(args.seed, args.instances, args.tolerance, args.step)
    failures = 0
    for name, report in results:
        print(f"{name:<24} {report}")
        if not report.passed:
            failures += 1
    total = len(results)
    print(f"{total - failures}/{total} checks passed")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oan",
        description="Cross-modal embedding training and retrieval evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset file")
    g.add_argument("--classes", type=int, default=15)
    g.add_argument("--per-class", type=int, default=10,
                   help="instances per class per modality")
    g.add_argument("--dim", type=int, default=4)
    g.add_argument("--shift", type=float, default=0.5)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", default=".", help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write checkpoint + metric logs")
    t.add_argument("--data", default=None, help="dataset file (default: built-in synthetic)")
    t.add_argument("--config", default=None, help="JSON file with config fields")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=".", help="output directory")
    _add_train_overrides(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on its class split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None, help="dataset file (default: built-in synthetic)")
    e.add_argument("--on", choices=("unseen", "seen"), default="unseen")
    e.add_argument("--out", default=".", help="output directory")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run the six objective-term combinations")
    a.add_argument("--data", default=None)
    a.add_argument("--config", default=None)
    a.add_argument("--seeds", type=_parse_seeds, default=(1, 2, 3, 4, 5))
    a.add_argument("--out", default=".")
    _add_train_overrides(a)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="grid over the independence/consistency weights")
    s.add_argument("--data", default=None)
    s.add_argument("--config", default=None)
    s.add_argument("--seeds", type=_parse_seeds, default=(1, 2, 3, 4, 5))
    s.add_argument("--out", default=".")
    _add_train_overrides(s)
    s.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=3)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OanError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        target = getattr(exc, "filename", None)
        where = f" ({target})" if target else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
