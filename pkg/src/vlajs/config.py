"""Experiment configuration: flat INI files and shipped per-task defaults.

A config file has five sections (task, ppo, guidance, teacher, run); every
key is optional except [task] name. Unknown sections or keys are rejected.
Numeric task keys are *resolved* values applied after the task name (with its
-dense/-sparse/-long suffixes) is parsed, so an echoed config reloads to the
exact same experiment. Guidance mode and the aux-loss kind are never config
keys; the algorithm preset owns them.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import replace

from .envs import TaskSpec, make_task
from .guidance import GuidanceConfig
from .harness import ALGORITHMS, ExperimentConfig
from .ppo import PPOConfig
from .teachers import PRESETS, TeacherSpec

# Calibrated defaults per task name (see the decisions notebook for how the
# budgets, thresholds, and the pick-task PPO block were picked). Each entry
# may carry `run` (ExperimentConfig fields), `ppo`, and `guidance` overrides;
# anything absent falls back to the dataclass defaults.
#
# The pick tasks need a different optimizer regime than the reach/push ones:
# grasping pays a single sparse bonus on a gripper *transition*, so credit
# must stay local (lam_gae 0.8), action noise must be small enough to hover
# inside the grasp radius (init_log_std -1.2), and the entropy bonus must not
# keep the gripper stochastic after the skill appears (entropy_coef 5e-4),
# otherwise rollout returns never reflect eval skill and the reward-trend
# schedule sees a flat line.
_PICK_PPO = dict(init_log_std=-1.2, epochs=6, lr=5e-4, lam_gae=0.8,
                 entropy_coef=0.0005)
TASK_DEFAULTS: dict[str, dict] = {
    "reach-dense": dict(
        run=dict(total_budget=160_000, eval_every=16_000, t_star=64_000),
        guidance=dict(n_max=2, deactivation_threshold=20.0)),
    "reach-sparse": dict(
        run=dict(total_budget=320_000, eval_every=16_000, t_star=160_000),
        guidance=dict(n_max=2, deactivation_threshold=2.0)),
    # Fewer envs for the 10x-horizon task: one rollout is already 8000 steps,
    # and the budget buys more policy updates that way (120 instead of 60 at
    # 16 envs), which both algorithms need more than they need batch width.
    # Guided steps stay at the 20% budget cap, but split into single-step
    # windows: a query every ~5 steps is always fresh, and an undivided
    # target keeps the matched action at the scale a solved policy actually
    # moves, so matching never drags a consolidated policy below speed.
    # gamma 0.8 keeps finishing attractive on the stretched horizon: at 0.99
    # a policy hovering at the goal boundary banks ~0.87 a step for up to a
    # thousand steps, which out-values the success bonus that ends the
    # episode, and both algorithms plateau at incidental success rates.
    "reach-dense-long": dict(
        run=dict(n_envs=8, total_budget=960_000, eval_every=48_000,
                 t_star=480_000, eval_episodes=20),
        ppo=dict(gamma=0.8),
        guidance=dict(n_max=200, d_steps=1, lambda_max=0.2,
                      deactivation_threshold=40.0)),
    "push-dense": dict(
        run=dict(total_budget=480_000, eval_every=32_000, t_star=240_000),
        guidance=dict(n_max=2, deactivation_threshold=20.0)),
    "push-sparse": dict(
        run=dict(total_budget=640_000, eval_every=32_000, t_star=320_000),
        guidance=dict(n_max=2, deactivation_threshold=2.0)),
    "pick_lift-dense": dict(
        run=dict(total_budget=480_000, eval_every=32_000, t_star=240_000),
        ppo=dict(_PICK_PPO),
        guidance=dict(n_max=10, d_steps=2, lambda_max=2.0,
                      deactivation_threshold=20.0)),
    # The sparse pick budget buys latch headroom, not skill: all five default
    # seeds reach eval 1.0 within 0.9M steps, but the slowest seed's reward
    # ramp stays jagged enough that the deactivation latch only fires at
    # 950.4k steps, and a transient-guidance run should spend a comfortable
    # tail of its budget with guidance off.
    "pick_lift-sparse": dict(
        run=dict(n_envs=24, total_budget=1_392_000, eval_every=16_000,
                 t_star=960_000),
        ppo=dict(_PICK_PPO),
        guidance=dict(n_max=10, d_steps=2, lambda_max=2.0,
                      deactivation_threshold=1.0)),
    "pick_place-sparse": dict(
        run=dict(total_budget=960_000, eval_every=32_000, t_star=640_000),
        ppo=dict(_PICK_PPO),
        guidance=dict(n_max=10, d_steps=2, lambda_max=2.0,
                      deactivation_threshold=1.0)),
}

_TASK_KEYS = {"name": str, "horizon": int, "action_cap_pos": float,
              "action_cap_rot": float, "success_radius": float}
_PPO_KEYS = {f.name: f.type for f in dataclasses.fields(PPOConfig)}
_GUIDANCE_KEYS = {"n_max": int, "n_min": int, "d_steps": int, "kappa": float,
                  "lambda_max": float, "eps_norm": float,
                  "min_teacher_norm": float, "history_len": int,
                  "monotonic_window": int, "deactivation_threshold": float,
                  "delta_r_cap": float}
_TEACHER_KEYS = {"preset": str, "kind": str, "noise_angle_deg": float,
                 "scale_factor": float, "drop_prob": float, "seed": int,
                 "endpoint": str, "timeout_ms": float}
_RUN_KEYS = {"algo": str, "n_envs": int, "total_budget": int,
             "eval_every": int, "eval_episodes": int, "seeds": str,
             "t_star": int, "out_dir": str}

_SECTIONS = {"task": _TASK_KEYS, "ppo": _PPO_KEYS, "guidance": _GUIDANCE_KEYS,
             "teacher": _TEACHER_KEYS, "run": _RUN_KEYS}

_COERCE = {int: int, float: float, str: str, "int": int, "float": float,
           "str": str}


def default_config(task_name: str, algo: str = "vlajs", **run_overrides
                   ) -> ExperimentConfig:
    """Shipped defaults for a task, ready to run."""
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    d = TASK_DEFAULTS.get(task_name, {})
    guidance = GuidanceConfig(**d.get("guidance", {}))
    ppo = PPOConfig(**d.get("ppo", {}))
    task = make_task(task_name)
    return ExperimentConfig(task=task, algo=algo, guidance=guidance, ppo=ppo,
                            **{**d.get("run", {}), **run_overrides})


def _parse_section(parser, section: str) -> dict:
    if not parser.has_section(section):
        return {}
    keys = _SECTIONS[section]
    out = {}
    for key, raw in parser.items(section):
        if key not in keys:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        out[key] = _COERCE[keys[key]](raw)
    return out


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as f:
        parser.read_file(f)
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")

    task_kv = _parse_section(parser, "task")
    if "name" not in task_kv:
        raise ValueError("config must set [task] name")
    name = task_kv.pop("name")
    base = default_config(name)
    task = replace(base.task, **task_kv) if task_kv else base.task

    ppo = replace(base.ppo, **_parse_section(parser, "ppo"))
    guidance = replace(base.guidance, **_parse_section(parser, "guidance"))

    t_kv = _parse_section(parser, "teacher")
    preset = t_kv.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown teacher preset {preset!r}")
        teacher = replace(PRESETS[preset], **t_kv) if t_kv else PRESETS[preset]
    elif t_kv:
        if "endpoint" in t_kv:
            host, _, port = t_kv["endpoint"].rpartition(":")
            t_kv["endpoint"] = (host, int(port))
        teacher = TeacherSpec(**t_kv)
    else:
        teacher = base.teacher

    run_kv = _parse_section(parser, "run")
    if "seeds" in run_kv:
        run_kv["seeds"] = tuple(int(s) for s in run_kv["seeds"].split(",") if s.strip())
    return replace(base, task=task, ppo=ppo, guidance=guidance,
                   teacher=teacher, **run_kv)


def dump_config(cfg: ExperimentConfig, seed: int | None = None) -> str:
    """Echo a config as INI text; load_config(dump_config(cfg)) round-trips.
    Only values diverging from the task-name defaults are written, except the
    run section which is always explicit."""
    base = default_config(cfg.task.name)
    parser = configparser.ConfigParser()

    parser["task"] = {"name": cfg.task.name}
    for key in ("horizon", "action_cap_pos", "action_cap_rot", "success_radius"):
        if getattr(cfg.task, key) != getattr(base.task, key):
            parser["task"][key] = repr(getattr(cfg.task, key))

    parser["ppo"] = {}
    for f in dataclasses.fields(PPOConfig):
        if getattr(cfg.ppo, f.name) != getattr(base.ppo, f.name):
            parser["ppo"][f.name] = repr(getattr(cfg.ppo, f.name))

    parser["guidance"] = {}
    for key in _GUIDANCE_KEYS:
        if getattr(cfg.guidance, key) != getattr(base.guidance, key):
            parser["guidance"][key] = repr(getattr(cfg.guidance, key))

    parser["teacher"] = {}
    preset = next((n for n, s in PRESETS.items() if s == cfg.teacher), None)
    if preset is not None:
        parser["teacher"]["preset"] = preset
    else:
        t = cfg.teacher
        parser["teacher"].update({
            "kind": t.kind, "noise_angle_deg": repr(t.noise_angle_deg),
            "scale_factor": repr(t.scale_factor), "drop_prob": repr(t.drop_prob),
            "seed": repr(t.seed), "timeout_ms": repr(t.timeout_ms)})
        if t.endpoint is not None:
            parser["teacher"]["endpoint"] = f"{t.endpoint[0]}:{t.endpoint[1]}"

    parser["run"] = {
        "algo": cfg.algo, "n_envs": repr(cfg.n_envs),
        "total_budget": repr(cfg.total_budget),
        "eval_every": repr(cfg.eval_every),
        "eval_episodes": repr(cfg.eval_episodes),
        "seeds": ",".join(str(s) for s in ((seed,) if seed is not None else cfg.seeds)),
        "t_star": repr(cfg.t_star), "out_dir": str(cfg.out_dir),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
