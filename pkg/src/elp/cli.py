"""Command-line entry point: ``elp <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines;
command-line flags win over the file. Failures print one line of the form
``error: [phase] Type: message`` and exit with status 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dataio import GeneratorConfig, generate_synthetic, load_sessions, read_kv, write_kv, write_sessions
from .domain import UserType, mae, mse
from .easeformer import MODES, EaseformerConfig, EaseformerForecaster
from .easeformer.inputs import session_starts
from .exceptions import ELPError, InvalidParam, ParseError
from .filter import DbscanParams, filter_records
from .pipeline import ElpConfig, L_TOKENS, TARGETS, phase_message, prepare, run_experiment_grid, thread_budget

log = logging.getLogger("elp")


# configuration


def _keys(prefix, cls):
    return [f"{prefix}.{f.name}" for f in fields(cls)]


GENERATOR_KEYS = _keys("generator", GeneratorConfig)
DBSCAN_KEYS = _keys("dbscan", DbscanParams)
MODEL_KEYS = _keys("model", EaseformerConfig)
SPLIT_KEYS = ["split.fractions"]
RUN_KEYS = ["run.seeds", "run.target", "run.mode", "run.modes", "run.l_tokens", "run.filter"]

COMMAND_KEYS = {
    "generate": GENERATOR_KEYS,
    "filter": DBSCAN_KEYS,
    "train": MODEL_KEYS + SPLIT_KEYS + ["run.target", "run.mode", "run.filter"] + DBSCAN_KEYS,
    "predict": SPLIT_KEYS + ["run.filter"] + DBSCAN_KEYS,
    "evaluate": [],
    "experiment": MODEL_KEYS + SPLIT_KEYS + DBSCAN_KEYS + RUN_KEYS,
}


def _section(values, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in values.items() if k.startswith(prefix + ".")}


def _load_config(path, command):
    if path is None:
        return {}
    values = read_kv(path)
    allowed = set(COMMAND_KEYS[command])
    for key in values:
        if key not in allowed:
            raise InvalidParam(f"{path}: key {key!r} is not used by '{command}'")
    return values


def parse_seeds(text):
    """``"0..9"`` (inclusive range), ``"1,4,7"`` or a single integer."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InvalidParam(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise InvalidParam(f"no seeds in {text!r}")
    return seeds


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InvalidParam(f"expected comma-separated integers, got {text!r}") from None


def _on_off(text):
    return str(text).lower() in ("on", "true", "1", "yes")


def _model_config(values, args, mode=None):
    cfg = EaseformerConfig.desk(**EaseformerConfig.coerce(_section(values, "model")))
    if mode is not None:
        cfg = EaseformerConfig.for_mode(mode, **cfg.to_dict())
    changes = {}
    if getattr(args, "l_token", None) is not None:
        changes["label_len"] = args.l_token
    if getattr(args, "eit", None) is not None:
        changes["eit_enabled"] = args.eit == "on"
    if getattr(args, "zero_init", None) is not None:
        changes["zero_init_decoder"] = args.zero_init == "on"
    if getattr(args, "d_model", None) is not None:
        changes["d_model"] = args.d_model
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes)


def _elp_config(values, model=None):
    dbscan = DbscanParams(**{k: _num(v) for k, v in _section(values, "dbscan").items()})
    fractions = (0.5, 0.25, 0.25)
    if "split.fractions" in values:
        fractions = tuple(float(x) for x in values["split.fractions"].split(","))
    return ElpConfig(model or EaseformerConfig.desk(), dbscan, fractions)


def _num(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _filter_flag(args, values):
    if args.filter is not None:
        return args.filter == "on"
    return _on_off(values.get("run.filter", "off"))


def _split_by_role(records):
    return (
        [r for r in records if r.role is UserType.PROVIDER],
        [r for r in records if r.role is UserType.CONSUMER],
    )


# subcommands


def cmd_generate(args, values):
    cfg = GeneratorConfig.from_dict(_section(values, "generator"))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    records = generate_synthetic(cfg)
    write_sessions(records, args.out)
    rows = sum(len(r) for r in records)
    print(f"wrote {rows} rows ({cfg.sharing_points} sharing, {cfg.idle_points} idle) to {args.out}")


def cmd_filter(args, values):
    records = load_sessions(args.data)
    params = DbscanParams(**{k: _num(v) for k, v in _section(values, "dbscan").items()})
    kept, report = filter_records(records, params)
    write_sessions(kept, args.out)
    lines = report.summary_lines()
    if args.report:
        Path(args.report).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_train(args, values):
    target = args.target or values.get("run.target", "provider")
    if target not in TARGETS:
        raise InvalidParam(f"unknown target {target!r}")
    mode = args.mode or values.get("run.mode")
    cfg = _model_config(values, args, mode)
    elp_cfg = _elp_config(values, cfg)
    data = prepare(*_split_by_role(load_sessions(args.data)), elp_cfg, _filter_flag(args, values))
    est = EaseformerForecaster.from_config(cfg).fit(data.frame("train", target), eval_set=data.frame("val", target))
    est.save(args.out)
    sidecar = f"{args.out}.cfg"
    extra = read_kv(sidecar)
    extra["run.target"] = target
    write_kv(sidecar, extra)
    print(f"best_epoch={est.best_epoch_} val_mse={est.best_val_mse_:.6g}")
    print(f"saved {args.out}.npz and {sidecar}")


def cmd_predict(args, values):
    est = EaseformerForecaster.load(args.model)
    target = read_kv(f"{args.model}.cfg").get("run.target", "provider")
    data = prepare(*_split_by_role(load_sessions(args.data)), _elp_config(values, est.config), _filter_flag(args, values))
    frame = data.frame(args.split, target)
    cfg = est.config
    starts = session_starts(frame, cfg)
    pred, truth = est.predict_windows(frame, starts)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session", "minute_index", "truth", "prediction"])
        for i, s in enumerate(starts):
            minutes = frame.time[s + cfg.seq_len : s + cfg.seq_len + cfg.pred_len]
            for m, t, p in zip(minutes, truth[i], pred[i]):
                w.writerow([i, int(m), f"{t:.10g}", f"{p:.10g}"])
    print(f"wrote {len(starts)} session forecasts of {cfg.pred_len} minutes to {args.out}")


def _read_column(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ParseError(f"{path}: no column {column!r}", row=1)
        values = []
        for rowno, row in enumerate(reader, 2):
            try:
                values.append(float(row[column]))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: {column} is not a number", row=rowno) from None
    return np.array(values)


def cmd_evaluate(args, values):
    pred = _read_column(args.pred, args.column)
    if args.truth:
        truth = _read_column(args.truth, args.column)
    else:
        truth = _read_column(args.pred, "truth")
    scores = {"n": len(pred), "mse": mse(pred, truth), "mae": mae(pred, truth)}
    lines = [f"{k}={v:.10g}" if isinstance(v, float) else f"{k}={v}" for k, v in scores.items()]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_experiment(args, values):
    seeds = parse_seeds(args.seeds or values.get("run.seeds", "0"))
    modes = (args.modes or values.get("run.modes", ",".join(MODES))).split(",")
    if args.l_token is not None:
        l_tokens = [args.l_token]
    else:
        l_tokens = _int_list(args.l_tokens or values.get("run.l_tokens", ",".join(map(str, L_TOKENS))))
    targets = (args.targets or values.get("run.target", ",".join(TARGETS))).split(",")
    cfg = _model_config(values, args)
    elp_l_token = 30 if 30 in l_tokens else l_tokens[0]
    report = run_experiment_grid(
        load_sessions(args.data),
        seeds=seeds,
        config=_elp_config(values, cfg),
        modes=modes,
        l_tokens=l_tokens,
        targets=targets,
        elp_l_token=elp_l_token,
        workers=thread_budget(),
        apply_filter=_filter_flag(args, values),
    )
    out = Path(args.out)
    stem = out.with_suffix("")
    out.write_text(report.to_csv(), encoding="utf-8")
    Path(f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    Path(f"{stem}_runs.csv").write_text(report.runs_csv(), encoding="utf-8")
    Path(f"{stem}_series.csv").write_text(report.series_csv(), encoding="utf-8")
    print(report.to_text(), end="")
    print(f"wrote {out}, {stem}.txt, {stem}_runs.csv, {stem}_series.csv")


COMMANDS = {
    "generate": (cmd_generate, "synthesize a session log"),
    "filter": (cmd_filter, "remove abnormal sharing sessions"),
    "train": (cmd_train, "train one forecaster and save it"),
    "predict": (cmd_predict, "forecast whole sessions with a saved forecaster"),
    "evaluate": (cmd_evaluate, "score a prediction CSV"),
    "experiment": (cmd_experiment, "run the model comparison grid"),
}


def _epilog(command):
    keys = COMMAND_KEYS[command]
    if not keys:
        return "config keys: none"
    return "config keys:\n" + "\n".join(f"  {k}" for k in keys)


def build_parser():
    parser = argparse.ArgumentParser(prog="elp", description="Energy-loss prediction for wireless energy sharing.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name):
        p = sub.add_parser(
            name,
            help=COMMANDS[name][1],
            description=COMMANDS[name][1],
            epilog=_epilog(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="key = value file")
        return p

    def model_flags(p):
        p.add_argument("--l-token", type=int, help="start-token length (model.label_len)")
        p.add_argument("--eit", choices=("on", "off"), help="distance preference channel (model.eit_enabled)")
        p.add_argument("--zero-init", choices=("on", "off"), help="zero the decoder prior (model.zero_init_decoder)")
        p.add_argument("--d-model", type=int, help="model width (model.d_model)")
        p.add_argument("--epochs", type=int, help="training epochs (model.epochs)")

    def filter_flag(p):
        p.add_argument("--filter", choices=("on", "off"), help="remove outlier sessions first (default off)")

    p = add("generate")
    p.add_argument("--out", required=True, help="output session CSV")
    p.add_argument("--seed", type=int, help="generator seed (generator.seed)")

    p = add("filter")
    p.add_argument("--data", required=True, help="input session CSV")
    p.add_argument("--out", required=True, help="filtered session CSV")
    p.add_argument("--report", help="also write the filter summary here")

    p = add("train")
    p.add_argument("--data", required=True, help="session CSV")
    p.add_argument("--out", required=True, help="checkpoint prefix (writes PREFIX.npz and PREFIX.cfg)")
    p.add_argument("--target", choices=tuple(TARGETS), help="provider loss or consumer gain (run.target)")
    p.add_argument("--mode", choices=tuple(MODES), help="preset flags for a compared variant (run.mode)")
    p.add_argument("--seed", type=int, help="model seed (model.seed)")
    model_flags(p)
    filter_flag(p)

    p = add("predict")
    p.add_argument("--data", required=True, help="session CSV")
    p.add_argument("--model", required=True, help="checkpoint prefix from 'train'")
    p.add_argument("--out", required=True, help="prediction CSV (session, minute_index, truth, prediction)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test", help="which split to forecast")
    filter_flag(p)

    p = add("evaluate")
    p.add_argument("--pred", required=True, help="prediction CSV")
    p.add_argument("--truth", help="truth CSV; compared on the same column (default: PRED's truth column)")
    p.add_argument("--column", default="prediction", help="value column (default: prediction)")
    p.add_argument("--out", help="also write the scores here")

    p = add("experiment")
    p.add_argument("--data", required=True, help="session CSV")
    p.add_argument("--out", required=True, help="report CSV; sibling .txt, _runs.csv and _series.csv are written too")
    p.add_argument("--seeds", help="e.g. 0..9 or 0,3,5 (run.seeds)")
    p.add_argument("--seed", type=int, help="single seed, same as --seeds N")
    p.add_argument("--modes", help=f"comma list from {','.join(MODES)} (run.modes)")
    p.add_argument("--l-tokens", help="comma list of start-token lengths (run.l_tokens)")
    p.add_argument("--targets", help="comma list from provider,consumer (run.target)")
    model_flags(p)
    filter_flag(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "experiment" and args.seed is not None and args.seeds is None:
        args.seeds = str(args.seed)
    handler = COMMANDS[args.command][0]
    try:
        values = _load_config(args.config, args.command)
        handler(args, values)
    except ELPError as exc:
        if getattr(exc, "phase", None) is None and not hasattr(exc, "cause"):
            exc.phase = args.command
        print(f"error: {phase_message(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: [config] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: [io] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
