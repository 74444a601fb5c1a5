"""Command-line interface.

Machine-readable output (JSON or CSV) goes to stdout or files; diagnostics
go to stderr. Exit codes: 0 success, 1 usage error, 2 infeasible problem or
insufficient data.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .kinematics import load_arm
from .learning import (
    Criterion,
    LearnOptions,
    learn,
    learn_report,
    load_dataset,
    save_dataset,
    synth_answers,
)
from .manifold import TaskTarget, TaskType, UnreachableTargetError, EmptyManifoldError
from .metrics import parse_metric_spec, save_metric
from .projection import (
    InfeasibleProjectionError,
    MultistartOptions,
    project_multistart,
    project_sweep,
    sublevel_components,
    sweep_cost_profile,
)
from .queries import (
    Battery,
    BatterySpec,
    InsufficientDiversityError,
    SamplingBudgetError,
    generate_battery,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliUsageError(message)


class CliUsageError(Exception):
    pass


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


def _parse_start(text: str, dof: int) -> np.ndarray:
    try:
        values = [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise CliUsageError(f"malformed start vector {text!r}: {exc}") from None
    if len(values) != dof:
        raise CliUsageError(f"start vector needs {dof} angles, got {len(values)}")
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise CliUsageError(f"start vector {text!r} has non-finite entries")
    return arr


def _parse_target(text: str) -> TaskTarget:
    if text.startswith("height:"):
        return TaskTarget.height(float(text[len("height:"):]))
    try:
        values = [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise CliUsageError(f"malformed target {text!r}: {exc}") from None
    if len(values) == 2:
        return TaskTarget.point2(*values)
    if len(values) == 3:
        return TaskTarget.point3(*values)
    raise CliUsageError(f"target must be x,y or x,y,z or height:z, got {text!r}")


def _load_metric_arg(spec: str, arm):
    try:
        return parse_metric_spec(spec, arm.dof, joint_names=list(arm.joint_names))
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None


def build_parser() -> _Parser:
    parser = _Parser(prog="cspace", description=__doc__)
    parser.add_argument(
        "--config", default=None,
        help="key = value file supplying defaults for any long option",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="metric-weighted projection onto a task constraint")
    p.add_argument("--arm", required=True, help="arm .cfg path or builtin name")
    p.add_argument("--metric", default="euclidean")
    p.add_argument("--start", required=True, help="comma-separated joint angles")
    p.add_argument("--target", required=True, help="x,y | x,y,z | height:z")
    p.add_argument("--solver", choices=("sweep", "multistart"), default="sweep")
    p.add_argument("--n", type=int, default=3600)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="cost profile along the constraint manifold")
    p.add_argument("--arm", required=True)
    p.add_argument("--metric", default="euclidean")
    p.add_argument("--start", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, default=3600)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", default=None, help="sublevel JSON sidecar path")

    p = sub.add_parser("gen", help="generate a preference query battery")
    p.add_argument("--arm", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--contractions", type=int, default=18)
    p.add_argument("--expansions", type=int, default=18)
    p.add_argument("--m", type=int, default=4)

    p = sub.add_parser("synth", help="synthesize answers from a ground-truth metric")
    p.add_argument("--battery", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--k", type=int, default=None, help="respondents per query (sampled)")
    p.add_argument("--criterion", default="naturalness",
                   choices=[c.value for c in Criterion])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("learn", help="fit a metric to a preference dataset")
    p.add_argument("--battery", required=True)
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--criterion", default=None, choices=[c.value for c in Criterion])
    p.add_argument("--task-type", default=None, choices=[t.value for t in TaskType])
    p.add_argument("--parameterization", default="full", choices=("full", "diagonal"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="learned metric text file")
    p.add_argument("--report", default=None, help="report JSON path")

    p = sub.add_parser("serve", help="run the preference-collection service")
    p.add_argument("--battery", required=True)
    p.add_argument("--log-path", required=True)
    p.add_argument("--static-dir", default=None)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _cmd_project(args) -> int:
    arm = load_arm(args.arm)
    start = _parse_start(args.start, arm.dof)
    target = _parse_target(args.target)
    metric = _load_metric_arg(args.metric, arm)
    if args.solver == "sweep":
        if not hasattr(arm, "link_lengths"):
            raise CliUsageError("the sweep solver requires a planar arm; use --solver multistart")
        result = project_sweep(arm, start, target, metric, n=args.n)
    else:
        result = project_multistart(
            arm, start, target, metric,
            MultistartOptions(restarts=args.restarts, seed=args.seed),
        )
    if args.format == "csv":
        header = ",".join([f"q{i + 1}" for i in range(arm.dof)] + ["cost", "residual"])
        row = ",".join(
            [repr(float(v)) for v in result.q_star]
            + [repr(result.cost), repr(result.residual)]
        )
        payload = f"{header}\n{row}\n"
    else:
        payload = canonical_json(result.to_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    sys.stdout.write(payload)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    arm = load_arm(args.arm)
    start = _parse_start(args.start, arm.dof)
    target = _parse_target(args.target)
    metric = _load_metric_arg(args.metric, arm)
    rows = sweep_cost_profile(arm, start, target, metric, n=args.n)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("phi,branch,cost\n")
        for phi, branch, cost in rows:
            fh.write(f"{phi!r},{branch.value},{cost!r}\n")
    report = sublevel_components(arm, start, target, metric, delta=args.delta, n=args.n)
    report_path = args.report or args.out + ".sublevel.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(report.to_dict()))
    sys.stdout.write(canonical_json({
        "csv": args.out,
        "report": report_path,
        "component_count": report.component_count,
    }))
    return EXIT_OK


def _cmd_gen(args) -> int:
    arm = load_arm(args.arm)
    spec = BatterySpec(n_contraction=args.contractions, n_expansion=args.expansions, m=args.m)
    battery = generate_battery(arm, spec, seed=args.seed)
    battery.save(args.out)
    counts = {t.value: sum(1 for q in battery.queries if q.task_type is t) for t in TaskType}
    sys.stdout.write(canonical_json({"battery": args.out, "queries": len(battery), **counts}))
    return EXIT_OK


def _cmd_synth(args) -> int:
    battery = Battery.load(args.battery)
    metric = _load_metric_arg(args.metric, battery.arm)
    dataset = synth_answers(
        metric,
        battery.queries,
        criterion=Criterion(args.criterion),
        mode=args.mode,
        k=args.k,
        seed=args.seed,
    )
    save_dataset(args.out, [dist for _, dist in dataset.pairs])
    sys.stdout.write(canonical_json({"dataset": args.out, "lines": len(dataset)}))
    return EXIT_OK


def _cmd_learn(args) -> int:
    battery = Battery.load(args.battery)
    criterion = Criterion(args.criterion) if args.criterion else None
    task_type = TaskType(args.task_type) if args.task_type else None
    dataset = load_dataset(args.data, battery, criterion=criterion, task_type=task_type)
    if not len(dataset):
        print("dataset is empty for the requested split", file=sys.stderr)
        return EXIT_INFEASIBLE
    opts = LearnOptions(parameterization=args.parameterization, seed=args.seed)
    result = learn(dataset, opts)
    report = learn_report(dataset, result)
    if args.out:
        save_metric(result.metric, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(report))
    sys.stdout.write(canonical_json(report))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig(
        battery_path=args.battery,
        log_path=args.log_path,
        static_dir=args.static_dir,
    ))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "project": _cmd_project,
    "sweep": _cmd_sweep,
    "gen": _cmd_gen,
    "synth": _cmd_synth,
    "learn": _cmd_learn,
    "serve": _cmd_serve,
}


def _apply_config_defaults(parser: _Parser, argv) -> list[str]:
    """Pull ``--config FILE`` out of argv and turn its lines into defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    try:
        path = argv[at + 1]
    except IndexError:
        raise CliUsageError("--config needs a file path") from None
    del argv[at : at + 2]
    defaults = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliUsageError(f"config line {line!r} is not key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            defaults[key.replace("-", "_")] = value
    for action_group in parser._subparsers._group_actions:  # noqa: SLF001
        for sub in action_group.choices.values():
            known = {a.dest: a for a in sub._actions}  # noqa: SLF001
            for key, value in defaults.items():
                action = known.get(key)
                if action is None:
                    continue
                converted = action.type(value) if action.type else value
                sub.set_defaults(**{key: converted})
                action.required = False
    return argv


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnreachableTargetError, EmptyManifoldError, InfeasibleProjectionError,
            InsufficientDiversityError, SamplingBudgetError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
