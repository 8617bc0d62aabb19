"""Command-line entry point: ``latentdrive <command> [flags]``.

Exit codes: 0 on success, 1 on invalid input or usage, 2 on runtime failure.
``--seed`` falls back to the ``T2D_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .errors import LatentDriveError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _seed(args, default=0) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("T2D_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"T2D_SEED must be an integer, got {env!r}") from None
    return default


def _read_yaml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a mapping")
    return doc


# commands ----------------------------------------------------------------------
def cmd_gen_routes(args) -> int:
    from .scenarios import BenchmarkConfig, build_benchmark, write_benchmark

    doc = _read_yaml(args.config)
    if isinstance(doc.get("benchmark"), dict):
        doc = doc["benchmark"]
    cfg = BenchmarkConfig.from_dict(doc)
    seed = _seed(args, default=None)
    if seed is not None:
        cfg.seed = seed
    bench = build_benchmark(cfg)
    written = write_benchmark(bench, args.out)
    print(f"wrote {len(bench.train)} training and {len(bench.eval)} evaluation routes ({len(written)} files) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import TrainConfig
    from .plotting import plot_trainlog
    from .trainer import Trainer

    cfg = TrainConfig.load(args.config)
    seed = _seed(args, default=None)
    if seed is not None:
        cfg.seed = seed
    if args.resume is not None and not os.path.exists(args.resume):
        raise ValidationError(f"checkpoint {args.resume} does not exist")
    trainer = Trainer(cfg, args.out)

    def progress(t):
        if args.verbose:
            print(f"env-steps {t.env_steps} wm-updates {t.wm_updates} planner-updates {t.planner_updates}")

    log_path = trainer.run(args.resume, progress)
    plot_trainlog(log_path, os.path.join(args.out, "trainlog.png"))
    print(f"trained to {trainer.env_steps} env steps; log in {log_path}")
    return EXIT_OK


def _controller(args):
    from .policies import POLICIES
    from .trainer import AgentController, ScriptedController, load_agent

    if args.policy:
        if args.policy == "random":
            return ScriptedController(POLICIES["random"](_seed(args))), None
        return ScriptedController(POLICIES[args.policy]()), None
    wm, planner, _ = load_agent(args.ckpt)
    return AgentController(wm, planner, "greedy"), wm.cfg.bev


def check_route_kinds(routes):
    """Every route's scenarios must all be of its declared kind."""
    for r in routes:
        for s in r.scenarios:
            if r.kind is None or s.kind != r.kind:
                declared = None if r.kind is None else r.kind.value
                raise ValidationError(
                    f"route {r.route.id}: declared kind {declared} but carries a {s.kind.value} scenario"
                )


def cmd_eval(args) -> int:
    from .metrics import write_logs
    from .scenarios import load_benchmark
    from .trainer import evaluate

    if (args.ckpt is None) == (args.policy is None):
        raise ValidationError("give exactly one of --ckpt or --policy")
    try:
        bench = load_benchmark(args.benchmark)
    except OSError as exc:
        raise ValidationError(f"cannot read benchmark {args.benchmark}: {exc}") from exc
    routes = bench.routes(args.split)
    if args.kinds:
        routes = [r for r in routes if (r.kind.value if r.kind else "plain") in args.kinds]
    check_route_kinds(routes)
    controller, bev = _controller(args)
    logs = evaluate(controller, routes, _seed(args), bev)
    for log, r in zip(logs, routes):
        if log.kind != (r.kind.value if r.kind else None):
            raise ValidationError(f"log kind {log.kind} does not match route {r.route.id}")
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_logs(args.out, logs)
    print(f"evaluated {len(logs)} routes; logs in {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import PenaltyTable, by_kind_csv, read_logs, summary_csv
    from .plotting import report_figures

    logs = read_logs(args.logs)
    table = PenaltyTable.load(args.penalties) if args.penalties else PenaltyTable()
    os.makedirs(args.out, exist_ok=True)
    summary = summary_csv(logs, table)
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write(summary)
    with open(os.path.join(args.out, "by-kind.csv"), "w") as fh:
        fh.write(by_kind_csv(logs, table))
    figures = report_figures(logs, args.out, table) if logs else []
    sys.stdout.write(summary)
    if figures:
        print("figures: " + ", ".join(os.path.basename(f) for f in figures))
    return EXIT_OK


def cmd_dream(args) -> int:
    from .bev import dump_frames
    from .scenarios import load_route
    from .trainer import dream, load_agent

    if args.frames < 1:
        raise ValidationError("--frames must be >= 1")
    try:
        entry = load_route(args.route)
    except OSError as exc:
        raise ValidationError(f"cannot read route {args.route}: {exc}") from exc
    wm, planner, _ = load_agent(args.ckpt)
    _, imagined = dream(wm, planner, entry, args.frames, args.context, _seed(args))
    written = dump_frames(imagined, args.out, prefix="dream")
    print(f"wrote {len(written)} channel images for {len(imagined)} imagined frames to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import torch

    from .nn.gradcheck import format_report, run_suite

    torch.set_num_threads(1)
    results = run_suite(_seed(args))
    print(format_report(results))
    ok = all(r.passed for r in results)
    print("all gradients within tolerance" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentdrive", description="World-model driving agent toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $T2D_SEED or 0)")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-routes", cmd_gen_routes, "Generate a training/evaluation benchmark.")
    sp.add_argument("--config", help="YAML benchmark config (hyphenated keys)")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("train", cmd_train, "Train the world model and planner.")
    sp.add_argument("--config", required=True, help="YAML training config")
    sp.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--verbose", action="store_true", help="print progress after every iteration")

    sp = add("eval", cmd_eval, "Evaluate a checkpoint (or scripted policy) route by route.")
    sp.add_argument("--ckpt", help="checkpoint file")
    sp.add_argument("--policy", choices=["do-nothing", "random", "lane-keeping"], help="scripted policy instead")
    sp.add_argument("--benchmark", required=True, help="benchmark directory or benchmark.json")
    sp.add_argument("--split", choices=["eval", "train"], default="eval")
    sp.add_argument("--kinds", nargs="*", help="restrict to these scenario kinds ('plain' for none)")
    sp.add_argument("--out", required=True, help="episode log file (one JSON object per line)")

    sp = add("metrics", cmd_metrics, "Summarise episode logs into scores, tables and figures.")
    sp.add_argument("--logs", required=True, help="episode log file")
    sp.add_argument("--penalties", help="YAML/JSON map of infraction kind to penalty factor")
    sp.add_argument("--out", required=True, help="report directory")

    sp = add("dream", cmd_dream, "Roll the world model forward from real context frames.")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--route", required=True, help="route file")
    sp.add_argument("--frames", type=int, required=True, help="imagined frames to decode")
    sp.add_argument("--context", type=int, default=5, help="real frames filtered before imagining")
    sp.add_argument("--out", required=True, help="directory for PGM channel dumps")

    add("gradcheck", cmd_gradcheck, "Finite-difference check of every primitive and loss.")
    return p


def main(argv=None) -> int:
    try:
        sys.stdout.reconfigure(line_buffering=True)
    except AttributeError:
        pass
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LatentDriveError, OSError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
