"""Command line entry points: train, eval, report, teacher-check."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .envs import make_task
from .harness import (ALGORITHMS, auc_success, bootstrap_ci, evaluate,
                      evaluate_teacher, read_metrics, run_training,
                      sr_at_tstar)
from .policy import load_checkpoint
from .teachers import PRESETS, make_teacher


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlajs",
                                description="Guided on-policy training toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run training from a config file")
    tr.add_argument("--config", required=True, help="INI config path")
    tr.add_argument("--seed", type=int, default=None,
                    help="train this single seed instead of the config's list")
    tr.add_argument("--algo", choices=ALGORITHMS, default=None)
    tr.add_argument("--task", default=None, help="task name override")
    tr.add_argument("--out", default=None, help="output directory override")

    ev = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", required=True)
    ev.add_argument("--episodes", type=int, default=50)
    ev.add_argument("--seed", type=int, default=97531)

    rp = sub.add_parser("report", help="aggregate run directories into a table")
    rp.add_argument("--runs", nargs="+", required=True,
                    help="run directories, or parents containing them")
    rp.add_argument("--tstar", type=int, default=None,
                    help="override the per-run reporting budget")
    rp.add_argument("--out", default=None, help="CSV output path (default stdout)")

    tc = sub.add_parser("teacher-check",
                        help="standalone success rate of a teacher preset")
    tc.add_argument("--teacher", required=True, choices=sorted(PRESETS))
    tc.add_argument("--task", required=True)
    tc.add_argument("--episodes", type=int, default=100)
    tc.add_argument("--seed", type=int, default=0)
    return p


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.task is not None:
        cfg = replace(cfg, task=make_task(args.task))
    if args.algo is not None:
        cfg = replace(cfg, algo=args.algo)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = run_training(cfg)
    print(f"trained {cfg.task.name} / {cfg.algo} seeds {list(cfg.seeds)} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    task = make_task(args.task)
    sr = evaluate(params, task, args.episodes, args.seed)
    print(f"{task.name}: success rate {sr:.3f} over {args.episodes} episodes")
    return 0


def _find_run_dirs(roots: list[str]) -> list[Path]:
    found = []
    for root in roots:
        root = Path(root)
        if (root / "metrics.jsonl").is_file():
            found.append(root)
        elif root.is_dir():
            found.extend(sorted(d for d in root.iterdir()
                                if (d / "metrics.jsonl").is_file()))
        else:
            print(f"warning: {root} is not a run directory", file=sys.stderr)
    return found


def _run_facts(run_dir: Path) -> dict:
    with open(run_dir / "summary.csv", newline="", encoding="utf-8") as f:
        row = next(csv.DictReader(f))
    budget, t_star = None, None
    cfg_path = run_dir / "config.ini"
    if cfg_path.is_file():
        import configparser
        cp = configparser.ConfigParser()
        cp.read(cfg_path)
        budget = cp.getint("run", "total_budget", fallback=None)
        t_star = cp.getint("run", "t_star", fallback=None)
    return {"task": row["task"], "algo": row["algorithm"],
            "seed": int(row["seed"]), "budget": budget, "t_star": t_star,
            "records": read_metrics(run_dir / "metrics.jsonl")}


def _cmd_report(args) -> int:
    run_dirs = _find_run_dirs(args.runs)
    if not run_dirs:
        print("error: no run directories found", file=sys.stderr)
        return 1
    groups: dict[tuple[str, str], dict[str, list[float]]] = {}
    for rd in run_dirs:
        facts = _run_facts(rd)
        recs = facts["records"]
        t_star = args.tstar if args.tstar is not None else facts["t_star"]
        budget = facts["budget"] or recs[-1].env_steps
        sr = sr_at_tstar(recs, min(t_star or budget, budget))
        auc = auc_success(recs, budget)
        g = groups.setdefault((facts["task"], facts["algo"]),
                              {"sr": [], "auc": []})
        g["sr"].append(sr)
        g["auc"].append(auc)
        curve = [{"env_steps": r.env_steps, "eval_success": r.eval_success}
                 for r in recs if r.eval_success is not None]
        with open(rd / "curve.jsonl", "w", encoding="utf-8") as f:
            for pt in curve:
                f.write(json.dumps(pt, sort_keys=True) + "\n")

    rows = []
    for (task, algo), g in sorted(groups.items()):
        sr_lo, sr_hi = bootstrap_ci(g["sr"])
        auc_lo, auc_hi = bootstrap_ci(g["auc"])
        rows.append([task, algo, len(g["sr"]),
                     _f(_mean(g["sr"])), _f(sr_lo), _f(sr_hi),
                     _f(_mean(g["auc"])), _f(auc_lo), _f(auc_hi)])
    # Macro average across tasks, one row per algorithm.
    algos = sorted({algo for _, algo in groups})
    for algo in algos:
        task_sr = [_mean(g["sr"]) for (_, a), g in sorted(groups.items()) if a == algo]
        task_auc = [_mean(g["auc"]) for (_, a), g in sorted(groups.items()) if a == algo]
        sr_lo, sr_hi = bootstrap_ci(task_sr)
        auc_lo, auc_hi = bootstrap_ci(task_auc)
        rows.append(["ALL", algo, len(task_sr),
                     _f(_mean(task_sr)), _f(sr_lo), _f(sr_hi),
                     _f(_mean(task_auc)), _f(auc_lo), _f(auc_hi)])

    header = ["task", "algorithm", "n", "sr_tstar", "sr_lo", "sr_hi",
              "auc", "auc_lo", "auc_hi"]
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def _mean(xs) -> float:
    return sum(xs) / len(xs)


def _f(x: float) -> str:
    return f"{x:.2f}"


def _cmd_teacher_check(args) -> int:
    task = make_task(args.task)
    teacher = make_teacher(PRESETS[args.teacher], task, seed=args.seed)
    sr = evaluate_teacher(teacher, task, args.episodes, args.seed)
    print(f"{args.teacher} on {task.name}: success rate {sr:.3f} "
          f"over {args.episodes} episodes")
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "report": _cmd_report,
             "teacher-check": _cmd_teacher_check}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
