"""Command-line interface.

Settings are resolved in three layers: built-in defaults, then a
``key = value`` config file given with ``--config``, then explicit flags.
Keys in the file use either flag spelling (``action-space``) or field
spelling (``action_space``) and may also set any :class:`AgentConfig` field.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys

import numpy as np

from . import dp_oracle as dp
from . import gridworld
from .agents import (
    AGENTS,
    AgentConfig,
    ExplorationSchedule,
    _as_tasks,
    _episode_success,
    _ood_for,
    _run,
    eval_init,
    make_agent,
    ood_tasks,
)
from .errors import PreconditionError, TapgridError, UsageError
from .gridworld import TaskSpec
from .metrics import bound_check
from .mpc_search import BEST_FIRST, RANDOM, exact_model, tree_search
from .proxy_planner import build_proxy
from .replay import PRESETS
from .svgplot import log_to_svg
from .target_generator import source_state

ACTION_SPACES = {"tof": "tof", "abs": "abs", "taf": "taf"}
DEFAULTS = {
    "env": "rds", "size": (8, 8), "difficulty": 0.4, "seed": 0, "action_space": "abs", "action_noise": 0.0,
    "agent": "q", "relabel": "epg", "steps": 20_000, "out": None,
    "heuristic": BEST_FIRST, "budget": 0, "eps_v": 1e-4, "eps_gamma": 1e-4, "trials": 50,
    "adversarial": False, "seeds": 20, "agents": "q", "relabels": "epg", "input": None, "dump_proxy": None,
}
GAMMA = {"bound-check": 0.9}  # 0.99 elsewhere
AGENT_FIELDS = {f.name for f in dataclasses.fields(AgentConfig)} - {"exploration", "seed", "steps", "relabel", "gamma"}
EXPLORATION_KEYS = {"eps_start": "start", "eps_end": "end", "eps_anneal_steps": "anneal_steps"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key = value settings file; flags override it")
    p.add_argument("--env", choices=("rds", "ssm"), default=S)
    p.add_argument("--size", nargs=2, type=int, metavar=("W", "H"), default=S)
    p.add_argument("--difficulty", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--action-space", dest="action_space", choices=tuple(ACTION_SPACES), default=S)
    p.add_argument("--action-noise", dest="action_noise", type=float, default=S)
    p.add_argument("--out", default=S, help="output path (stdout when omitted)")


def _agent_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--agent", choices=AGENTS, default=S)
    p.add_argument("--relabel", choices=("e", "eg", "ep", "epg"), default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--gamma", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="tapgrid", description="Gridworld planning experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="emit an environment instance as JSON")
    _common(p)
    p = sub.add_parser("solve", help="emit the oracle pairwise CSV")
    _common(p)
    p.add_argument("--gamma", type=float, default=S)
    p = sub.add_parser("train", help="train an agent and emit its log CSV")
    _common(p)
    _agent_flags(p)
    p = sub.add_parser("eval", help="train, then evaluate on training and fresh instances")
    _common(p)
    _agent_flags(p)
    p.add_argument("--heuristic", choices=(BEST_FIRST, RANDOM), default=S)
    p.add_argument("--budget", type=int, default=S, help="tree-search model calls per step (0 disables)")
    p.add_argument("--dump-proxy", dest="dump_proxy", default=S, help="write a proxy problem as JSON")
    p = sub.add_parser("bound-check", help="empirical check of the composite-plan value bound")
    _common(p)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--eps-v", dest="eps_v", type=float, default=S)
    p.add_argument("--eps-gamma", dest="eps_gamma", type=float, default=S)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--adversarial", action="store_true", default=S)
    p = sub.add_parser("sweep", help="train over a seed x agent x relabel grid")
    _common(p)
    _agent_flags(p)
    p.add_argument("--seeds", type=int, default=S, help="number of seeds, 0..N-1")
    p.add_argument("--agents", default=S, help="comma-separated agent names")
    p.add_argument("--relabels", default=S, help="comma-separated relabel presets")
    p = sub.add_parser("plot", help="render a log CSV as SVG line charts")
    p.add_argument("--config", default=S)
    p.add_argument("--in", dest="input", default=S, required=True)
    p.add_argument("--out", default=S)
    return parser


# ---------------------------------------------------------------------------
# settings


def _parse_value(raw: str):
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    parts = raw.split()
    if len(parts) > 1:
        return tuple(_parse_value(x) for x in parts)
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config(path: str) -> dict:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS and key != "gamma" and key not in AGENT_FIELDS and key not in EXPLORATION_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _parse_value(value)
    return out


def resolve(ns: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    flags = vars(ns).copy()
    if "config" in flags:
        opts.update(read_config(flags.pop("config")))
    opts.update(flags)
    return opts


def task_spec(opts: dict) -> TaskSpec:
    size = opts["size"]
    if not isinstance(size, (tuple, list)) or len(size) != 2:
        raise UsageError("size needs two integers W H")
    try:
        return TaskSpec(opts["env"], int(size[0]), int(size[1]), float(opts["difficulty"]), int(opts["seed"]),
                        opts["action_space"], float(opts["action_noise"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def agent_config(opts: dict, seed: int | None = None, relabel: str | None = None) -> AgentConfig:
    kw = {k: opts[k] for k in AGENT_FIELDS if k in opts}
    steps = int(opts["steps"])
    sched = {"start": 1.0, "end": 0.05, "anneal_steps": max(1, steps // 2)}
    sched.update({v: opts[k] for k, v in EXPLORATION_KEYS.items() if k in opts})
    try:
        return AgentConfig(seed=int(opts["seed"] if seed is None else seed), steps=steps,
                           relabel=relabel or opts["relabel"], gamma=float(opts.get("gamma", 0.99)),
                           exploration=ExplorationSchedule(**sched), **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(opts) -> int:
    spec = task_spec(opts)
    _emit(gridworld.dumps(spec, gridworld.generate_task(spec)) + "\n", opts["out"])
    return 0


def cmd_solve(opts) -> int:
    spec = task_spec(opts)
    mdp = gridworld.compile_mdp(gridworld.generate_task(spec))
    policy = dp.goal_conditioned_policy(mdp)
    _emit(dp.oracle_csv(mdp, policy, float(opts.get("gamma", 0.99))), opts["out"])
    return 0


def _train(opts, seed=None, relabel=None):
    spec = task_spec(opts)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    config = agent_config(opts, seed, relabel)
    tasks = _as_tasks(spec, config)
    agent = make_agent(opts["agent"], tasks, config)
    ood = _ood_for(tasks, config)
    log = _run(agent, tasks, config, ood)
    return spec, config, tasks, agent, log


def cmd_train(opts) -> int:
    _, _, _, _, log = _train(opts)
    _emit(log.to_csv(), opts["out"])
    return 0


def cmd_eval(opts) -> int:
    budget = int(opts["budget"])
    if budget and not (opts["agent"] == "q" or opts["agent"].startswith("dyna")):
        raise UsageError("--budget applies to the q, dyna and dyna-plus agents")
    if opts["dump_proxy"] and not opts["agent"].startswith("skipper"):
        raise UsageError("--dump-proxy needs a skipper agent")
    spec, config, tasks, agent, _ = _train(opts)
    rng = np.random.default_rng([config.seed, 3])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["split", "difficulty", "instance", "planner", "success_rate"])
    runs = [("greedy", None)] + ([("mpc", budget)] if budget else [])
    for i, ctx in enumerate(tasks):
        for label, b in runs:
            if b is None:
                make_policy = (lambda i: lambda: agent.eval_policy(i))(i)  # skipper policies hold plan state
            else:
                q = agent.tables[i].q
                model = exact_model(ctx.mdp)
                heuristic = opts["heuristic"]

                def policy(s, r, q=q, model=model, heuristic=heuristic, b=b, n_a=ctx.mdp.n_actions):
                    return tree_search(s, range(n_a), model, lambda x: q[x], config.gamma, b, heuristic, r).action
                make_policy = (lambda p: lambda: p)(policy)
            wins = [_episode_success(ctx.mdp, make_policy(), eval_init(ctx.mdp), config.max_episode_steps, rng)
                    for _ in range(config.eval_episodes)]
            writer.writerow(["train", f"{ctx.spec.difficulty:g}", i, label, f"{np.mean(wins):.6g}"])
    for diff, ctxs in ood_tasks(spec, max(1, config.ood_tasks)).items():
        for j, ctx in enumerate(ctxs):
            policy = (lambda c: lambda s, r: agent.zero_shot_action(c, s, r))(ctx)
            wins = [_episode_success(ctx.mdp, policy, eval_init(ctx.mdp), config.max_episode_steps, rng) for _ in range(config.eval_episodes)]
            writer.writerow(["ood", f"{diff:g}", j, "zero-shot", f"{np.mean(wins):.6g}"])
    _emit(buf.getvalue(), opts["out"])
    if opts["dump_proxy"]:
        ctx = tasks[0]
        s = int(np.flatnonzero(eval_init(ctx.mdp))[0])
        proxy = build_proxy(ctx, s, agent.generator, agent.planners[0], rng, agent.replay,
                            k=config.n_medoids, n_gen=config.n_candidates, threshold=config.edge_threshold,
                            gamma=config.gamma, target_of=agent.lookup[0],
                            source_of=lambda e: source_state(ctx.mdp, e), gate=agent._gate(0))
        with open(opts["dump_proxy"], "w") as fh:
            fh.write(proxy.to_json() + "\n")
    return 0


def cmd_bound_check(opts) -> int:
    gamma = float(opts.get("gamma", GAMMA["bound-check"]))
    try:
        trials = bound_check(int(opts["trials"]), gamma, float(opts["eps_v"]), float(opts["eps_gamma"]),
                             seed=int(opts["seed"]), adversarial=bool(opts["adversarial"]))
    except PreconditionError as exc:
        raise UsageError(f"precondition violated: {exc}") from exc
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "exact", "estimated", "error", "bound", "ratio", "ok"])
    for i, t in enumerate(trials):
        writer.writerow([i, f"{t.exact:.12g}", f"{t.estimated:.12g}", f"{t.error:.6g}", f"{t.bound:.6g}",
                         f"{t.ratio:.6g}", int(t.ok)])
    ok = all(t.ok for t in trials)
    worst = max(t.ratio for t in trials)
    summary = (f"{'PASS' if ok else 'FAIL'}: {sum(t.ok for t in trials)}/{len(trials)} trials within the bound "
               f"(gamma={gamma:g}, eps_v={float(opts['eps_v']):g}, eps_gamma={float(opts['eps_gamma']):g}, "
               f"max error/bound={worst:.4g})\n")
    if opts["out"]:
        _emit(buf.getvalue(), opts["out"])
    sys.stdout.write(summary)
    return 0 if ok else 2


def cmd_sweep(opts) -> int:
    agents = [a.strip() for a in str(opts["agents"]).split(",") if a.strip()]
    relabels = [r.strip() for r in str(opts["relabels"]).split(",") if r.strip()]
    for a in agents:
        if a not in AGENTS:
            raise UsageError(f"unknown agent {a!r}")
    for r in relabels:
        if r not in PRESETS:
            raise UsageError(f"unknown relabel preset {r!r}")
    out_dir = opts["out"] or "sweep_out"
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["agent", "relabel", "seed", "final_train_success", "log"])
    for agent in agents:
        # the relabel grid only matters for agents that sample relabeled pairs
        grid = relabels if agent != "q" else relabels[:1]
        for relabel in grid:
            for seed in range(int(opts["seeds"])):
                run_opts = dict(opts, agent=agent)
                _, _, _, _, log = _train(run_opts, seed=seed, relabel=relabel)
                name = f"{agent}_{relabel}_seed{seed}.csv"
                _emit(log.to_csv(), os.path.join(out_dir, name))
                writer.writerow([agent, relabel, seed, f"{log.rows[-1]['train_success']:.6g}", name])
    _emit(buf.getvalue(), os.path.join(out_dir, "summary.csv"))
    return 0


def cmd_plot(opts) -> int:
    try:
        with open(opts["input"]) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {opts['input']}: {exc}") from exc
    _emit(log_to_svg(text), opts["out"])
    return 0


COMMANDS = {
    "gen": cmd_gen, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval,
    "bound-check": cmd_bound_check, "sweep": cmd_sweep, "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(argv)
        opts = resolve(ns)
        command = opts.pop("command")
        return COMMANDS[command](opts)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except (TapgridError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
