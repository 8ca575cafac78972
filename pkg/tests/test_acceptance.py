"""End-to-end claim checks, one verdict line per criterion.

These tests train real (desk-scale) runs with the shipped per-task defaults,
so this module is much slower than the unit suite; the unit suite itself is
the first criterion and is timed in a subprocess. Each test records exactly
one PASS/FAIL line through the `criterion` fixture, echoed in the terminal
summary. Everything here runs with in-process teachers only.
"""

import dataclasses
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vlajs import policy as pol
from vlajs.config import default_config
from vlajs.envs import make_task
from vlajs.harness import (auc_success, evaluate_teacher, read_metrics,
                           run_single, steps_to_success)
from vlajs.teachers import PRESETS, TeacherSpec, make_teacher

ROOT = Path(__file__).resolve().parents[1]
SEEDS = (0, 1, 2, 3, 4)
SUCCESS_BAR = 0.8          # eval success defining "solved" for jump-start
LATCH_DEADLINE = 0.7       # fraction of budget the guidance latch must beat
HOLD_TOLERANCE = 0.05      # allowed eval drop between latch and end of run


def _train(out_dir, task, algo, seed, teacher=None):
    cfg = default_config(task, algo=algo, out_dir=str(out_dir))
    if teacher is not None:
        cfg = dataclasses.replace(cfg, teacher=teacher)
    run_dir = run_single(cfg, seed)
    return read_metrics(run_dir / "metrics.jsonl")


def _eval_curve(records):
    return [(r.env_steps, r.eval_success) for r in records
            if r.eval_success is not None]


@pytest.fixture(scope="session")
def pick_budget():
    return default_config("pick_lift-sparse").total_budget


@pytest.fixture(scope="session")
def jumpstart_runs(tmp_path_factory):
    """5 guided + 5 plain runs on pick_lift-sparse with the best teacher."""
    out = tmp_path_factory.mktemp("jumpstart")
    runs = {}
    for algo in ("vlajs", "ppo"):
        runs[algo] = [
            _train(out, "pick_lift-sparse", algo, seed,
                   teacher=PRESETS["teacher-best"])
            for seed in SEEDS
        ]
    return runs


@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory):
    """Directional vs MSE aux on pick_lift-sparse, teacher 5x over-scaled."""
    out = tmp_path_factory.mktemp("ablation")
    teacher = TeacherSpec(scale_factor=5.0)
    runs = {}
    for algo in ("vlajs", "vlajs-rpd"):
        runs[algo] = [
            _train(out, "pick_lift-sparse", algo, seed, teacher=teacher)
            for seed in SEEDS
        ]
    return runs


def test_unit_property_suite_is_green_and_fast(criterion):
    t0 = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", str(ROOT / "tests"),
         "--ignore", str(ROOT / "tests" / "test_acceptance.py"),
         "-p", "no:cacheprovider"],
        cwd=ROOT, capture_output=True, text=True)
    elapsed = time.monotonic() - t0
    ok = proc.returncode == 0 and elapsed < 120.0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    criterion("unit/property suite", ok,
              f"{tail!r} in {elapsed:.1f}s (limit 120s)")


def test_zero_guidance_reduces_to_plain_ppo(criterion, tmp_path):
    """Guided preset with a zero budget must be bit-identical to plain PPO."""
    outputs = {}
    for algo in ("vlajs", "ppo"):
        cfg = default_config("pick_lift-sparse", algo=algo,
                             out_dir=str(tmp_path / algo))
        steps_per_iter = cfg.n_envs * cfg.task.horizon
        cfg = dataclasses.replace(
            cfg,
            total_budget=10 * steps_per_iter,
            eval_every=steps_per_iter,
            guidance=dataclasses.replace(
                cfg.guidance, n_max=0, n_min=0, lambda_max=0.0),
        )
        run_dir = run_single(cfg, 0)
        recs = read_metrics(run_dir / "metrics.jsonl")
        outputs[algo] = (
            (run_dir / "checkpoint.bin").read_bytes(),
            [(r.iteration, r.loss, r.mean_reward, r.eval_success)
             for r in recs],
        )
    same_ckpt = outputs["vlajs"][0] == outputs["ppo"][0]
    same_metrics = outputs["vlajs"][1] == outputs["ppo"][1]
    criterion("reduction to plain PPO", same_ckpt and same_metrics,
              f"10 iterations, same seed: checkpoint bytes equal={same_ckpt}, "
              f"per-iteration metrics equal={same_metrics}")


def test_guided_runs_reach_success_faster_than_ppo(criterion, jumpstart_runs,
                                                   pick_budget):
    vlajs_sts = [steps_to_success(r, SUCCESS_BAR)
                 for r in jumpstart_runs["vlajs"]]
    ppo_sts = [steps_to_success(r, SUCCESS_BAR) for r in jumpstart_runs["ppo"]]
    ppo_unsolved = sum(1 for s in ppo_sts if s is None)
    if ppo_unsolved >= 3:
        reached = sum(1 for s in vlajs_sts if s is not None)
        ok = reached >= 4
        detail = (f"plain PPO solved {5 - ppo_unsolved}/5 seeds, so the bar "
                  f"is 4/5 guided seeds reaching {SUCCESS_BAR} within "
                  f"{pick_budget} steps: got {reached}/5 "
                  f"(steps: {vlajs_sts})")
    else:
        med_v = statistics.median(
            [s if s is not None else float("inf") for s in vlajs_sts])
        med_p = statistics.median(
            [s if s is not None else float("inf") for s in ppo_sts])
        ok = med_v < float("inf") and med_v <= 0.5 * med_p
        detail = (f"median steps to {SUCCESS_BAR}: guided {med_v} vs "
                  f"plain {med_p} (need <= 0.5x)")
    criterion("jump-start sample efficiency", ok, detail)


def test_guidance_turns_off_and_success_holds(criterion, jumpstart_runs,
                                              ablation_runs, pick_budget):
    deadline = LATCH_DEADLINE * pick_budget
    problems = []
    successful = 0
    labelled = [(f"seed {s}", r)
                for s, r in zip(SEEDS, jumpstart_runs["vlajs"])]
    labelled += [(f"misscaled-teacher seed {s}", r)
                 for s, r in zip(SEEDS, ablation_runs["vlajs"])]
    for label, recs in labelled:
        if steps_to_success(recs, SUCCESS_BAR) is None:
            continue  # only successful runs are held to the latch contract
        successful += 1
        latch = next((r.env_steps for r in recs if r.vla_disabled), None)
        if latch is None:
            problems.append(f"{label}: never latched")
            continue
        if latch > deadline:
            problems.append(f"{label}: latched at {latch} > {deadline:.0f}")
            continue
        curve = _eval_curve(recs)
        at_latch = next((s for t, s in curve if t >= latch), curve[-1][1])
        final = curve[-1][1]
        if final < at_latch - HOLD_TOLERANCE:
            problems.append(
                f"{label}: final {final:.2f} < latch-time {at_latch:.2f} "
                f"- {HOLD_TOLERANCE}")
    ok = successful > 0 and not problems
    detail = (f"{successful} successful guided runs, all latched before "
              f"{LATCH_DEADLINE:.0%} of budget and held within "
              f"{HOLD_TOLERANCE} of latch-time success"
              if ok else "; ".join(problems) or "no successful runs")
    criterion("guidance transience", ok, detail)


def test_persistent_guidance_beats_ppo_on_long_horizon(criterion,
                                                       tmp_path_factory):
    out = tmp_path_factory.mktemp("long_horizon")
    budget = default_config("reach-dense-long").total_budget
    wins = 0
    pairs = []
    for seed in SEEDS:
        guided = _train(out, "reach-dense-long", "sparse-rpd", seed,
                        teacher=PRESETS["oracle"])
        plain = _train(out, "reach-dense-long", "ppo", seed)
        a_g = auc_success(guided, budget)
        a_p = auc_success(plain, budget)
        pairs.append((round(a_g, 3), round(a_p, 3)))
        wins += a_g > a_p
    criterion("long-horizon advantage", wins >= 4,
              f"guided AUC beats plain in {wins}/5 seeds "
              f"(guided, plain): {pairs}")


def test_directional_loss_beats_mse_under_misscaled_teacher(
        criterion, ablation_runs):
    wins = 0
    pairs = []
    for directional, mse in zip(ablation_runs["vlajs"],
                                ablation_runs["vlajs-rpd"]):
        f_d = _eval_curve(directional)[-1][1]
        f_m = _eval_curve(mse)[-1][1]
        pairs.append((f_d, f_m))
        wins += f_d >= f_m
    criterion("directional vs action-matching aux", wins >= 4,
              f"with a 5x mis-scaled teacher, directional final success >= "
              f"MSE final success in {wins}/5 seeds: {pairs}")


def test_teacher_presets_land_in_calibration_bands(criterion):
    task = make_task("pick_lift-sparse")
    bands = {"teacher-weak": (0.05, 0.20), "teacher-best": (0.30, 0.50)}
    means = {}
    for preset, (lo, hi) in bands.items():
        rates = [
            evaluate_teacher(make_teacher(PRESETS[preset], task, seed=1000 + s),
                             task, 100, seed=2000 + s)
            for s in range(5)
        ]
        means[preset] = float(np.mean(rates))
    ok = all(lo <= means[p] <= hi for p, (lo, hi) in bands.items())
    criterion("teacher calibration gate", ok,
              f"standalone success means over 5x100 episodes: "
              f"weak {means['teacher-weak']:.3f} (band 0.05-0.20), "
              f"best {means['teacher-best']:.3f} (band 0.30-0.50)")
