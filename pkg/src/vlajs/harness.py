"""End-to-end training orchestration, evaluation, and metrics.

One training run is: schedule update -> rollout collection -> guidance-target
construction -> PPO update -> reward-history push and deactivation check,
iterated until the env-step budget is spent, with periodic deterministic
(mean-action) evaluation on a held-out seed set. Runs write metrics.jsonl,
summary.csv, checkpoint.bin, a config echo, and a status file into their run
directory. metrics.jsonl is byte-reproducible for identical configs/seeds;
wall-clock timing goes only to the status file.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import policy as pol
from .envs import OBS_DIM, TaskSpec, VecEnv, action_to_delta, reset, step
from .guidance import (GuidanceConfig, ScheduleState, build_guidance_targets,
                       place_queries, push_reward, update_schedule,
                       validate_budget)
from .ppo import NonFiniteLossError, PPOConfig, RolloutBatch, ppo_update
from .teachers import PRESETS, TeacherSpec, make_teacher

ALGORITHMS = ("ppo", "sparse-rpd", "vlajs-rpd", "vlajs")

# (guidance mode, aux loss) per algorithm preset; everything else is shared.
_ALGO_TABLE = {
    "ppo": ("transient", "none"),
    "sparse-rpd": ("persistent", "mse"),
    "vlajs-rpd": ("transient", "mse"),
    "vlajs": ("transient", "directional"),
}

EVAL_SEED = 97531  # shared held-out evaluation namespace, all runs


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    algo: str = "vlajs"
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    n_envs: int = 16
    total_budget: int = 480_000     # env steps
    eval_every: int = 16_000        # env steps
    eval_episodes: int = 50
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    t_star: int = 320_000           # report-time interaction budget
    out_dir: str = "runs"

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.total_budget <= 0:
            raise ValueError("total_budget must be positive")
        if self.eval_episodes < 20:
            raise ValueError("eval_episodes must be >= 20")
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")

    def resolved_guidance(self) -> tuple[GuidanceConfig, str]:
        """Apply the algorithm preset: presets may differ only in guidance
        mode, aux-loss kind, and (for ppo) a zeroed schedule."""
        mode, aux = _ALGO_TABLE[self.algo]
        g = replace(self.guidance, mode=mode)
        if self.algo == "ppo":
            g = replace(g, n_max=0, n_min=0, lambda_max=0.0)
        validate_budget(g, self.task.horizon)
        return g, aux


@dataclass
class MetricsRecord:
    iteration: int
    env_steps: int
    mean_reward: float
    n_calls: int
    lam: float
    vla_disabled: bool
    eval_success: float | None = None
    loss: float | None = None
    clip_loss: float | None = None
    value_loss: float | None = None
    entropy: float | None = None
    aux_loss: float | None = None
    wall_time_s: float | None = None  # in-memory only; not serialized

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("wall_time_s")  # keeps metrics.jsonl byte-reproducible
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "MetricsRecord":
        return MetricsRecord(**json.loads(line))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return [MetricsRecord.from_json(line) for line in f if line.strip()]


def collect_rollout(vec: VecEnv, obs: np.ndarray, params: pol.PolicyParams,
                    rng: np.random.Generator, horizon: int
                    ) -> tuple[dict, np.ndarray]:
    """Run n_envs for exactly `horizon` steps with stochastic actions.
    Returns the filled arrays and the observation after the last step."""
    n = vec.n_envs
    spec = vec.spec
    out = {
        "obs": np.empty((n, horizon, obs.shape[1])),
        "actions": np.empty((n, horizon, 7)),
        "rewards": np.empty((n, horizon)),
        "dones": np.empty((n, horizon)),
        "log_probs": np.empty((n, horizon)),
        "values": np.empty((n, horizon)),
        "successes": np.empty((n, horizon)),
    }
    for t in range(horizon):
        mean, log_std, value, _ = pol.forward(params, obs)
        actions = pol.sample_action(mean, log_std, rng)
        lp = pol.log_prob(mean, log_std, actions)
        deltas = [action_to_delta(actions[i], spec) for i in range(n)]
        out["obs"][:, t] = obs
        out["actions"][:, t] = actions
        out["log_probs"][:, t] = lp
        out["values"][:, t] = value
        obs, rewards, dones, succ = vec.step(deltas)
        out["rewards"][:, t] = rewards
        out["dones"][:, t] = dones
        out["successes"][:, t] = succ
    return out, obs


def run_training(cfg: ExperimentConfig) -> Path:
    """Train every seed in cfg.seeds; returns the parent output directory."""
    out = Path(cfg.out_dir)
    for seed in cfg.seeds:
        run_single(cfg, seed)
    return out


def run_dir_for(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / f"{cfg.task.name}__{cfg.algo}__seed{seed}"


def run_single(cfg: ExperimentConfig, seed: int) -> Path:
    """One seeded training run; writes all artifacts to its run directory."""
    gcfg, aux_kind = cfg.resolved_guidance()
    task = cfg.task
    steps_per_iter = cfg.n_envs * task.horizon
    iterations = cfg.total_budget // steps_per_iter
    if iterations < 1:
        raise ValueError("total_budget below one rollout worth of steps")
    eval_period = max(1, cfg.eval_every // steps_per_iter)

    run_dir = run_dir_for(cfg, seed)
    run_dir.mkdir(parents=True, exist_ok=True)

    # Independent streams: the teacher stream is consumed per query only, so
    # unguided presets stay bit-identical to guided ones with a zero budget.
    rng_init = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_sample = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    rng_shuffle = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    params = pol.init_policy(rng_init, cfg.ppo.init_log_std)
    opt = pol.OptimizerState(lr=cfg.ppo.lr)
    sched = ScheduleState.initial(gcfg)
    teacher = make_teacher(cfg.teacher, task, seed=seed) if cfg.algo != "ppo" else None
    vec = VecEnv(task, cfg.n_envs, seed=seed)
    obs = vec.reset_all()

    t0 = time.monotonic()
    records: list[MetricsRecord] = []
    status = {"status": "ok", "reason": ""}
    with open(run_dir / "metrics.jsonl", "w", encoding="utf-8") as mf:
        for it in range(1, iterations + 1):
            sched = update_schedule(sched, gcfg)
            roll, obs = collect_rollout(vec, obs, params, rng_sample, task.horizon)
            targets = np.zeros((cfg.n_envs, task.horizon, 7))
            valid = np.zeros((cfg.n_envs, task.horizon), dtype=bool)
            if teacher is not None and sched.n_calls > 0:
                queries = place_queries(task.horizon, sched.n_calls, gcfg.d_steps)
                targets, valid = build_guidance_targets(
                    roll["obs"], teacher, queries, gcfg.d_steps)
            _, _, boot_value, _ = pol.forward(params, obs)
            batch = RolloutBatch(
                obs=roll["obs"], actions=roll["actions"],
                rewards=roll["rewards"], dones=roll["dones"],
                log_probs=roll["log_probs"], values=roll["values"],
                bootstrap_values=boot_value, targets=targets, valid=valid)
            lam = sched.lam
            try:
                params, opt, diag = ppo_update(
                    params, opt, batch, cfg.ppo, lam, aux_kind, rng_shuffle)
            except NonFiniteLossError as e:
                status = {"status": "aborted", "reason": str(e)}
                break
            mean_reward = float(roll["rewards"].sum()) / cfg.n_envs
            n_calls_used = sched.n_calls if teacher is not None else 0
            if cfg.algo != "ppo":
                sched = push_reward(sched, mean_reward, gcfg)

            rec = MetricsRecord(
                iteration=it, env_steps=it * steps_per_iter,
                mean_reward=mean_reward, n_calls=n_calls_used,
                lam=lam, vla_disabled=sched.vla_disabled,
                loss=diag["loss"], clip_loss=diag["clip_loss"],
                value_loss=diag["value_loss"], entropy=diag["entropy"],
                aux_loss=diag["aux_loss"],
                wall_time_s=time.monotonic() - t0)
            if it % eval_period == 0 or it == iterations:
                rec.eval_success = evaluate(params, task, cfg.eval_episodes,
                                            EVAL_SEED)
            records.append(rec)
            mf.write(rec.to_json() + "\n")

    pol.save_checkpoint(run_dir / "checkpoint.bin", params)
    status["wall_time_s"] = time.monotonic() - t0
    status["seed"] = seed
    (run_dir / "status").write_text(json.dumps(status) + "\n", encoding="utf-8")
    _write_summary(run_dir, cfg, seed, records)
    _write_config_echo(run_dir, cfg, seed)
    return run_dir


def _write_summary(run_dir: Path, cfg: ExperimentConfig, seed: int,
                   records: list[MetricsRecord]) -> None:
    evals = [r for r in records if r.eval_success is not None]
    final = evals[-1].eval_success if evals else None
    try:
        sr = sr_at_tstar(records, min(cfg.t_star, cfg.total_budget))
    except ValueError:
        sr = None
    try:
        auc = auc_success(records, cfg.total_budget)
    except ValueError:
        auc = None
    latch = next((r.env_steps for r in records if r.vla_disabled), None)
    with open(run_dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["task", "algorithm", "seed", "env_steps",
                    "final_eval_success", "sr_tstar", "auc", "latch_env_steps"])
        w.writerow([cfg.task.name, cfg.algo, seed,
                    records[-1].env_steps if records else 0,
                    _fmt(final), _fmt(sr), _fmt(auc),
                    latch if latch is not None else ""])


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def _write_config_echo(run_dir: Path, cfg: ExperimentConfig, seed: int) -> None:
    from .config import dump_config  # local import: config depends on harness
    (run_dir / "config.ini").write_text(dump_config(cfg, seed), encoding="utf-8")


def evaluate(params: pol.PolicyParams, task: TaskSpec, n_episodes: int,
             seed: int) -> float:
    """Deterministic mean-action success rate over a fixed held-out seed set.

    Episode seeds derive from (seed, episode-index) in a namespace disjoint
    from training env seeds; all episodes run in vectorized lockstep.
    """
    states = []
    obs = np.empty((n_episodes, OBS_DIM))
    for j in range(n_episodes):
        ep_seed = int(np.random.SeedSequence([seed, 0xE7A1, j]).generate_state(1)[0])
        s, o = reset(task, ep_seed)
        states.append(s)
        obs[j] = o
    done = np.zeros(n_episodes, dtype=bool)
    succeeded = np.zeros(n_episodes, dtype=bool)
    for _ in range(task.horizon):
        active = ~done
        if not active.any():
            break
        mean, _, _, _ = pol.forward(params, obs[active])
        idxs = np.nonzero(active)[0]
        for row, j in enumerate(idxs):
            delta = action_to_delta(mean[row], task)
            states[j], o, _, d, sc = step(states[j], delta, task)
            obs[j] = o
            if d:
                done[j] = True
                succeeded[j] = succeeded[j] or sc
    return float(succeeded.sum()) / n_episodes


def evaluate_teacher(teacher, task: TaskSpec, n_episodes: int, seed: int) -> float:
    """Standalone success of a teacher executed directly (calibration only;
    during training teacher actions never touch the environment)."""
    successes = 0
    for j in range(n_episodes):
        ep_seed = int(np.random.SeedSequence([seed, 0x7E57, j]).generate_state(1)[0])
        state, obs = reset(task, ep_seed)
        for _ in range(task.horizon):
            state, obs, _, done, succ = step(state, teacher(obs), task)
            if done:
                successes += int(succ)
                break
    return successes / n_episodes


# --- metrics over record streams ------------------------------------------

def _eval_points(records: list[MetricsRecord]) -> list[tuple[int, float]]:
    return [(r.env_steps, r.eval_success) for r in records
            if r.eval_success is not None]


def sr_at_tstar(records: list[MetricsRecord], t_star: int) -> float:
    """Success rate (percent) at the last evaluation checkpoint <= t_star."""
    pts = _eval_points(records)
    if not pts:
        raise ValueError("no evaluation checkpoints in record stream")
    covered = [v for s, v in pts if s <= t_star]
    if not covered:
        raise ValueError(f"t_star {t_star} precedes the first evaluation")
    return 100.0 * covered[-1]


def auc_success(records: list[MetricsRecord], budget: int) -> float:
    """Trapezoidal area under the eval-success curve over [0, budget],
    normalized to [0, 100]. The curve is 0 before the first checkpoint."""
    pts = _eval_points(records)
    if not pts or budget <= 0:
        raise ValueError("need evaluation checkpoints and a positive budget")
    if pts[-1][0] < budget:
        raise ValueError("records do not cover the budget")
    area = 0.0
    for (s0, v0), (s1, v1) in zip(pts, pts[1:]):
        if s0 >= budget:
            break
        if s1 > budget:  # truncate the last segment at the budget
            v1 = v0 + (v1 - v0) * (budget - s0) / (s1 - s0)
            s1 = budget
        area += 0.5 * (v0 + v1) * (s1 - s0)
    return 100.0 * area / budget


def steps_to_success(records: list[MetricsRecord], threshold: float) -> int | None:
    """Env steps at the first eval checkpoint with success >= threshold."""
    for s, v in _eval_points(records):
        if v >= threshold:
            return s
    return None


def bootstrap_ci(values, n_resamples: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Seeded percentile bootstrap CI for the mean. Degenerate inputs
    (fewer than two values) collapse to a zero-width interval."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("bootstrap over an empty sample")
    if vals.size < 2:
        return float(vals[0]), float(vals[0])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    idx = rng.integers(0, vals.size, size=(n_resamples, vals.size))
    means = vals[idx].mean(axis=1)
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [alpha, 100.0 - alpha])
    return float(lo), float(hi)
