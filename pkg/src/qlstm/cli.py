"""Command-line entry point: train, quantize, gradcheck, sweep.

Configuration comes from an INI-style file (sections train/quant/gumbel/
data) overridable by flags; flags win. Every run writes a config.resolved
capturing the effective settings, and re-running from it reproduces the
results bit-exactly in single-worker mode.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .backprop import finite_diff_check
from .data import SynthConfig, Vocab, dataset_from_conll, synth_task
from .lstm import GateMode, GateSpec
from .model import SequenceTagger
from .quantize import RoundClipScheme
from .train import (
    TrainConfig,
    TrainingAbort,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    train,
)

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

_DATA_DEFAULTS = {
    "synthetic": False,
    "data": None,
    "dev": None,
    "test": None,
    "token_col": 0,
    "tag_col": -1,
    "min_count": 1,
    "task": "ner",
    "data_seed": 1234,
    "n_train": 2000,
    "n_dev": 400,
    "n_test": 400,
    "trigger_distance": 1,
}


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def read_config_file(path) -> tuple[dict, dict]:
    """Parse an INI config into (train overrides, data overrides)."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    train_over: dict = {}
    data_over: dict = {}
    for section in parser.sections():
        for key, value in parser[section].items():
            if section == "quant" and key in ("r", "c"):
                train_over[key] = float(value)
            elif section == "gumbel" and key == "epsilon":
                train_over["epsilon"] = float(value)
            elif section == "train":
                if key not in _TRAIN_KEYS:
                    raise ValueError(f"unknown [train] key {key!r} in {path}")
                default = getattr(TrainConfig, key)
                train_over[key] = _coerce(value, default)
            elif section == "data":
                if key not in _DATA_DEFAULTS:
                    raise ValueError(f"unknown [data] key {key!r} in {path}")
                like = _DATA_DEFAULTS[key]
                train_val = _coerce(value, like if like is not None else "")
                data_over[key] = train_val
            elif section == "sweep":
                continue  # handled by the sweep command
            else:
                raise ValueError(f"unknown config section [{section}] in {path}")
    return train_over, data_over


def write_resolved(path, cfg: TrainConfig, data_cfg: dict):
    parser = configparser.ConfigParser()
    cfg_d = asdict(cfg)
    parser["train"] = {k: str(v) for k, v in cfg_d.items()
                       if k not in ("r", "c", "epsilon")}
    parser["quant"] = {"r": str(cfg.r), "c": str(cfg.c)}
    parser["gumbel"] = {"epsilon": str(cfg.epsilon)}
    parser["data"] = {k: str(v) for k, v in data_cfg.items() if v is not None}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def resolve(args) -> tuple[TrainConfig, dict]:
    train_over: dict = {}
    data_cfg = dict(_DATA_DEFAULTS)
    if getattr(args, "config", None):
        file_train, file_data = read_config_file(args.config)
        train_over.update(file_train)
        data_cfg.update(file_data)
    for key in _TRAIN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            train_over[key] = val
    for key in _DATA_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and not (key == "synthetic" and val is False):
            data_cfg[key] = val
    return TrainConfig(**train_over), data_cfg


def build_dataset(data_cfg: dict):
    if data_cfg["synthetic"]:
        cfg = SynthConfig(n_train=data_cfg["n_train"], n_dev=data_cfg["n_dev"],
                          n_test=data_cfg["n_test"],
                          trigger_distance=data_cfg["trigger_distance"])
        return synth_task(data_cfg["data_seed"], cfg)
    if not data_cfg["data"]:
        raise ValueError("either --synthetic or --data is required")
    return dataset_from_conll(
        data_cfg["data"], data_cfg["dev"], data_cfg["test"],
        token_col=data_cfg["token_col"], tag_col=data_cfg["tag_col"],
        min_count=data_cfg["min_count"], task=data_cfg["task"])


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--settings", help='experiment settings string, e.g. "BI,BF,NEW"')
    p.add_argument("--r", type=float, help="quantizer step size")
    p.add_argument("--c", type=float, help="quantizer clip bound")
    p.add_argument("--epsilon", type=float, help="Gumbel temperature")
    p.add_argument("--ste", choices=["full", "quantized"],
                   help="backward rule through Round & Clip gates")
    p.add_argument("--head", choices=["crf", "softmax"])
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--peepholes", choices=["diag", "none"])
    p.add_argument("--allow-output-gate", dest="allow_output_gate",
                   action="store_const", const=True, default=None)


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--synthetic", action="store_const", const=True, default=None,
                   help="use the built-in delayed-trigger task")
    p.add_argument("--data", help="CoNLL train file")
    p.add_argument("--dev", help="CoNLL dev file")
    p.add_argument("--test", help="CoNLL test file")
    p.add_argument("--token-col", dest="token_col", type=int)
    p.add_argument("--tag-col", dest="tag_col", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--task", choices=["ner", "chunking", "pos"])
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-dev", dest="n_dev", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--trigger-distance", dest="trigger_distance", type=int)


def _checkpoint_meta(cfg: TrainConfig, dataset) -> dict:
    return {
        "settings": cfg.settings, "r": cfg.r, "c": cfg.c,
        "epsilon": cfg.epsilon, "task": dataset.task,
        "token_itos": dataset.token_vocab.itos,
        "tag_itos": dataset.tag_vocab.itos,
    }


def run_train(cfg: TrainConfig, data_cfg: dict, out_dir) -> dict:
    """One training run; writes report.jsonl, best.ckpt, summary.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(data_cfg)
    write_resolved(out / "config.resolved", cfg, data_cfg)
    report, model = train(cfg, dataset)
    report.write_jsonl(out / "report.jsonl")
    checkpoint_save(model, out / "best.ckpt", meta=_checkpoint_meta(cfg, dataset))
    test = report.test or {}
    row = {
        "settings": cfg.settings, "r": cfg.r, "c": cfg.c,
        "epoch": report.best_epoch, "prec": test.get("prec"),
        "rec": test.get("rec"), "f1": test.get("f1"),
    }
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"best_epoch": report.best_epoch, "test": report.test,
                   "residual": report.residual}, fh, indent=2)
    return row


def cmd_train(args) -> int:
    cfg, data_cfg = resolve(args)
    row = run_train(cfg, data_cfg, args.out)
    print(json.dumps(row))
    return 0


def cmd_quantize(args) -> int:
    model, meta = checkpoint_load(args.checkpoint)
    cfg, data_cfg = resolve(args)
    dataset = build_dataset(data_cfg)
    if meta.get("tag_itos") and meta["tag_itos"] != dataset.tag_vocab.itos:
        raise ValueError("checkpoint tag vocabulary does not match the data; "
                         "pass the same data flags used for training")
    if meta.get("token_itos"):
        dataset.token_vocab = Vocab(meta["token_itos"])

    if args.r is not None and args.c is not None:
        scheme = RoundClipScheme(r=args.r, c=args.c)
        spec = GateSpec(round_clip=scheme)
        model.gate_mode = GateMode(input_gate=spec, forget_gate=spec)
    model.quantize_weights = bool(args.weights)
    metrics = evaluate(model, dataset.split(args.split), dataset.tag_vocab,
                       dataset.task)
    print(json.dumps({"split": args.split, "weights": bool(args.weights),
                      "r": args.r, "c": args.c, **metrics}))
    if args.out:
        if args.weights:
            # persist the binary-quantized weights themselves
            eff = model._effective_lstm("eval")
            model.lstm = eff
        checkpoint_save(model, args.out, meta=meta)
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    model = SequenceTagger.build(vocab=args.vocab, emb_dim=args.emb_dim,
                                 hidden=args.hidden, n_tags=args.tags,
                                 seed=args.seed)
    batch = []
    for _ in range(args.sentences):
        tau = int(rng.integers(2, args.tau + 1))
        tokens = rng.integers(0, args.vocab, size=tau).tolist()
        tags = rng.integers(0, args.tags, size=tau).tolist()
        batch.append((tokens, tags))
    err = finite_diff_check(model, batch, eps=args.eps)
    ok = err < args.tol
    print(f"max relative error {err:.3e} ({'PASS' if ok else 'FAIL'}, "
          f"tolerance {args.tol:g})")
    return 0 if ok else 1


def _parse_scheme(s: str) -> tuple[float, float]:
    r, c = s.split("/")
    return float(r), float(c)


def read_grid(path):
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if "sweep" not in parser:
        raise ValueError(f"{path}: grid file needs a [sweep] section")
    sw = parser["sweep"]
    settings = [s.strip() for s in sw.get("settings", "").split("|")]
    schemes = [_parse_scheme(s.strip())
               for s in sw.get("schemes", "0.5/1.0").split(",") if s.strip()]
    repeats = sw.getint("repeats", 1)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base_seed = sw.getint("seed", 0)
    train_over, data_over = read_config_file(path)
    return settings, schemes, repeats, base_seed, train_over, data_over


def _sweep_worker(payload):
    cfg_d, data_cfg, run_dir = payload
    try:
        row = run_train(TrainConfig(**cfg_d), data_cfg, run_dir)
        return run_dir, row, None
    except Exception:  # recorded as FAILED in the table, sweep continues
        return run_dir, None, traceback.format_exc()


def _emit_tables(out: Path, rows: list[dict]):
    cols = ["No.", "Settings", "r/c", "Epoch", "Prec", "Rec", "F1"]
    with open(out / "table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "table.md", "w", encoding="utf-8") as fh:
        fh.write("| " + " | ".join(cols) + " |\n")
        fh.write("|" + "|".join(["---"] * len(cols)) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(str(row[c]) for c in cols) + " |\n")


def cmd_sweep(args) -> int:
    settings_list, schemes, repeats, base_seed, train_over, data_over = \
        read_grid(args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_cfg = dict(_DATA_DEFAULTS)
    data_cfg.update(data_over)

    cells = []
    for row_id, (settings, (r, c)) in enumerate(
            (s, sch) for s in settings_list for sch in schemes):
        for rep in range(repeats):
            cfg_d = dict(train_over)
            cfg_d.update(settings=settings, r=r, c=c, seed=base_seed + rep)
            run_dir = out / f"run_{row_id:02d}_{rep}"
            cells.append((row_id, settings, (r, c),
                          (cfg_d, data_cfg, str(run_dir))))

    results: dict[str, tuple[dict | None, str | None]] = {}

    def record(run_dir, row, err):
        results[run_dir] = (row, err)
        flush()

    def flush():
        table_rows = []
        no = 0
        seen = []
        for row_id, settings, (r, c), (cfg_d, _, run_dir) in cells:
            if row_id in seen:
                continue
            seen.append(row_id)
            reps = [res for rid, _, _, (_, _, rd) in cells if rid == row_id
                    for res in [results.get(rd)] if res is not None]
            done = [row for row, err in reps if row is not None]
            failed = [err for row, err in reps if err is not None]
            no += 1
            label = settings if settings else "baseline"
            if done:
                def avg(key):
                    vals = [d[key] for d in done if d[key] is not None]
                    return round(float(np.mean(vals)), 4) if vals else "-"
                table_rows.append({
                    "No.": no, "Settings": label, "r/c": f"{r}/{c}",
                    "Epoch": avg("epoch"), "Prec": avg("prec"),
                    "Rec": avg("rec"), "F1": avg("f1")})
            elif failed and len(failed) == len(reps) and reps:
                table_rows.append({"No.": no, "Settings": label,
                                   "r/c": f"{r}/{c}", "Epoch": "FAILED",
                                   "Prec": "FAILED", "Rec": "FAILED",
                                   "F1": "FAILED"})
            else:
                table_rows.append({"No.": no, "Settings": label,
                                   "r/c": f"{r}/{c}", "Epoch": "-",
                                   "Prec": "-", "Rec": "-", "F1": "-"})
        _emit_tables(out, table_rows)

    pending = []
    for _, _, _, payload in cells:
        run_dir = payload[2]
        summary = Path(run_dir) / "summary.csv"
        if args.resume and summary.exists():
            with open(summary, encoding="utf-8") as fh:
                row = next(csv.DictReader(fh))
            for key in ("epoch",):
                row[key] = int(float(row[key]))
            for key in ("r", "c", "prec", "rec", "f1"):
                row[key] = float(row[key]) if row[key] not in ("", "None") else None
            record(run_dir, row, None)
        else:
            pending.append(payload)

    workers = args.parallel or int(os.environ.get("QLSTM_THREADS", "1"))
    if workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for run_dir, row, err in pool.map(_sweep_worker, pending):
                record(run_dir, row, err)
    else:
        for payload in pending:
            run_dir, row, err = _sweep_worker(payload)
            record(run_dir, row, err)
    flush()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlstm",
        description="Quantization-aware Bi-LSTM sequence labeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and save artifacts")
    _add_train_flags(p_train)
    _add_data_flags(p_train)
    p_train.add_argument("--out", default="out", help="artifact directory")
    p_train.set_defaults(func=cmd_train)

    p_q = sub.add_parser("quantize",
                         help="post-hoc quantization and evaluation of a checkpoint")
    p_q.add_argument("--checkpoint", required=True)
    p_q.add_argument("--r", type=float)
    p_q.add_argument("--c", type=float)
    p_q.add_argument("--weights", action="store_true",
                     help="also binary-quantize all U/V/W matrices")
    p_q.add_argument("--split", default="test")
    p_q.add_argument("--out", help="write the transformed checkpoint here")
    p_q.add_argument("--config")
    _add_data_flags(p_q)
    p_q.set_defaults(func=cmd_quantize)

    p_g = sub.add_parser("gradcheck",
                         help="finite-difference check of the analytic gradients")
    p_g.add_argument("--seed", type=int, default=0)
    p_g.add_argument("--vocab", type=int, default=5)
    p_g.add_argument("--emb-dim", dest="emb_dim", type=int, default=3)
    p_g.add_argument("--hidden", type=int, default=4)
    p_g.add_argument("--tags", type=int, default=3)
    p_g.add_argument("--tau", type=int, default=6)
    p_g.add_argument("--sentences", type=int, default=2)
    p_g.add_argument("--eps", type=float, default=1e-4)
    p_g.add_argument("--tol", type=float, default=1e-4)
    p_g.set_defaults(func=cmd_gradcheck)

    p_s = sub.add_parser("sweep", help="run a settings grid and emit tables")
    p_s.add_argument("--grid", required=True, help="INI grid file")
    p_s.add_argument("--out", default="sweep")
    p_s.add_argument("--resume", action="store_true")
    p_s.add_argument("--parallel", type=int)
    p_s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingAbort, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
