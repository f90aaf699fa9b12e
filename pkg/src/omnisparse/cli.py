"""Command-line entry point: ``omnisparse <command> ...``.

Exit codes: 0 success, 1 usage, 2 data/parse, 3 numeric divergence,
4 infeasible size constraint.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as run_config
from .checkpoint import load_checkpoint, save_checkpoint
from .data import gen_synthetic, load_csv, save_csv
from .errors import OmniSparseError, ParseError
from .model import SupernetModel
from .search import Candidate, ParetoFront, evolutionary_search, select_for_constraint
from .sparsity import SparsityConfig, model_size_bytes
from .trainer import cumulative_cost, evaluate, train

log = logging.getLogger("omnisparse")

FRONT_HEADER = ["config", "size_bytes", "val_loss"]
METRICS_HEADER = [
    "step", "cap", "configs", "losses", "loss",
    "batch_equivalents", "cumulative_batch_equivalents", "wall_clock_s",
]
PLOT_HEADER = ["size_bytes", "val_loss", "config"]


class UsageError(OmniSparseError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _real(x: float) -> str:
    return f"{x:.16e}"


def datasets_for(cfg: run_config.RunConfig):
    """(train, validation) from CSV paths or the configured synthetic task."""
    if cfg.train_data:
        train_set = load_csv(cfg.train_data, cfg.num_classes, "train")
        if not cfg.val_data:
            raise UsageError("val_data is required when train_data is given")
        val_set = load_csv(cfg.val_data, cfg.num_classes, "validation")
    else:
        train_set, val_set = gen_synthetic(
            cfg.data_seed, cfg.n, cfg.in_dim, cfg.num_classes, cfg.teacher_width, cfg.label_noise
        )
    for ds in (train_set, val_set):
        if ds.dim != cfg.in_dim:
            raise ParseError(f"data has {ds.dim} features, config says in_dim={cfg.in_dim}")
    return train_set, val_set


def _config_of(model) -> run_config.RunConfig:
    echo = model.meta.get("config")
    if not echo:
        raise UsageError("checkpoint carries no run configuration")
    return run_config.RunConfig.from_dict(echo)


def write_metrics(history, path):
    total = 0.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in history:
            total += m.batch_equivalents
            w.writerow([
                m.step, _real(m.cap),
                "|".join(str(SparsityConfig(c)) for c in m.configs),
                ";".join(_real(v) for v in m.losses),
                _real(m.loss), _real(m.batch_equivalents), _real(total), f"{m.wall_clock:.6f}",
            ])


def write_front(front: ParetoFront, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONT_HEADER)
        for c in front.sorted():
            w.writerow([str(c.config), c.size_bytes, _real(c.val_loss)])


def read_front(path) -> ParetoFront:
    front = ParetoFront()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FRONT_HEADER:
            raise ParseError(f"front header must be {','.join(FRONT_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError("expected 3 fields", line=lineno)
            try:
                cand = Candidate(SparsityConfig.parse(row[0]), float(row[2]), int(row[1]))
            except (ValueError, ParseError):
                raise ParseError("bad front row", line=lineno) from None
            front.members.append(cand)
            front.log[cand.config] = cand
    return front


def cmd_gen_data(args):
    train_set, val_set = gen_synthetic(
        args.seed, args.n, args.d, args.classes, args.teacher_width, args.label_noise
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train_set, out / "train.csv")
    save_csv(val_set, out / "val.csv")
    print(f"wrote {len(train_set)} train / {len(val_set)} validation rows to {out}")


def cmd_train(args):
    cfg = run_config.load(args.config)
    if args.mode:
        cfg.mode = args.mode
    if args.sparsity is not None:
        cfg.sparsity = args.sparsity
    if args.steps is not None:
        cfg.total_steps = args.steps
    cfg.validate()
    train_set, val_set = datasets_for(cfg)
    tcfg = cfg.train_config()
    teacher = None
    if tcfg.mode == "single_kd":
        if args.teacher:
            teacher = load_checkpoint(args.teacher)
        else:
            log.info("no --teacher given; training a dense teacher first")
            teacher = SupernetModel.init(cfg.architecture(), seed=cfg.seed, lr=cfg.lr)
            train(teacher, train_set, cfg.train_config(mode="single_nokd", sparsity=0.0))
    if args.resume:
        model = load_checkpoint(args.resume)
    else:
        model = SupernetModel.init(cfg.architecture(), seed=cfg.seed, lr=cfg.lr)
    history = train(model, train_set, tcfg, space=cfg.space(), teacher=teacher)
    save_checkpoint(model, args.out, config=cfg.to_dict())
    metrics = args.metrics or f"{args.out}.metrics.csv"
    write_metrics(history, metrics)
    if history:
        print(f"step {model.step}: loss {history[-1].loss:.6f}, "
              f"{cumulative_cost(history):.2f} batch-equivalents")
    dense = (0.0,) * cfg.num_layers
    print(f"dense val_loss {evaluate(model, dense, val_set):.6f}")


def cmd_search(args):
    model = load_checkpoint(args.ckpt)
    cfg = _config_of(model)
    val_set = load_csv(args.data, cfg.num_classes, "validation") if args.data else datasets_for(cfg)[1]
    seed = cfg.seed if args.seed is None else args.seed
    budget = cfg.budget if args.budget is None else args.budget
    params = cfg.search_params(seed=seed, exhaustive_init=args.exhaustive_init)
    front = evolutionary_search(model, cfg.space(), val_set, budget, params)
    write_front(front, args.out)
    print(f"{len(front.log)} configs evaluated, {len(front)} on the front -> {args.out}")
    for tau in args.tau or ():
        _print_choice(select_for_constraint(front, tau), tau)


def _print_choice(c: Candidate, tau):
    print(f"tau={tau}: config={c.config} size_bytes={c.size_bytes} val_loss={_real(c.val_loss)}")


def cmd_select(args):
    front = read_front(args.front)
    for tau in args.tau:
        _print_choice(select_for_constraint(front, tau), tau)


def cmd_extract(args):
    model = load_checkpoint(args.ckpt)
    config = SparsityConfig.parse(args.config)
    weights = model.effective_weights(config.ratios)
    for p in model.params:
        p.data[...] = weights[p.name]
    save_checkpoint(model, args.out, config=model.meta.get("config"), extracted=str(config))
    size = model_size_bytes(config, model.arch.sizes())
    print(f"extracted {config} ({size} bytes) -> {args.out}")


def cmd_eval(args):
    model = load_checkpoint(args.ckpt)
    if args.config:
        config = SparsityConfig.parse(args.config)
    elif model.meta.get("extracted_config"):
        config = SparsityConfig.parse(model.meta["extracted_config"])
    else:
        config = SparsityConfig.uniform(0.0, model.arch.num_layers)
    if args.data:
        val_set = load_csv(args.data, model.arch.num_classes, "validation")
    else:
        val_set = datasets_for(_config_of(model))[1]
    loss = evaluate(model, config.ratios, val_set)
    size = model_size_bytes(config, model.arch.sizes())
    print(f"val_loss={_real(loss)} size_bytes={size}")


def cmd_export_plot(args):
    front = read_front(args.front)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for c in front.sorted():
            w.writerow([c.size_bytes, _real(c.val_loss), str(c.config)])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="omnisparse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic train/val CSV pair")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=6000)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--teacher-width", type=int, default=32)
    g.add_argument("--label-noise", type=float, default=0.05)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a supernet or a baseline")
    t.add_argument("--config", required=True)
    t.add_argument("--mode", choices=["supernet", "single-nokd", "single-kd", "dsnn"])
    t.add_argument("--sparsity", type=float, help="uniform sparsity for single modes")
    t.add_argument("--steps", type=int, help="override total_steps")
    t.add_argument("--teacher", help="dense teacher checkpoint for single-kd")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("search", help="evolutionary Pareto search on a trained supernet")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--budget", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--data", help="validation CSV (default: the checkpoint's configured data)")
    s.add_argument("--exhaustive-init", action="store_true")
    s.add_argument("--tau", type=int, action="append", help="size budget in bytes (repeatable)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_search)

    sel = sub.add_parser("select", help="pick the best front member under size budgets")
    sel.add_argument("--front", required=True)
    sel.add_argument("--tau", type=int, action="append", required=True)
    sel.set_defaults(func=cmd_select)

    x = sub.add_parser("extract", help="materialize a masked sub-network checkpoint")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--config", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_extract)

    e = sub.add_parser("eval", help="validation loss and size of a sub-network")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config")
    e.add_argument("--data")
    e.set_defaults(func=cmd_eval)

    ep = sub.add_parser("export-plot", help="loss-vs-size points sorted by size")
    ep.add_argument("--front", required=True)
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except OmniSparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
