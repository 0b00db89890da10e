"""Experiment runner: seeded training runs, sweeps, convergence metrics,
robustness evaluation, and CSV/JSON result emission.

File schemas (all floats emitted with repr so rows round-trip exactly):

* ``runs.csv``: one row per (seed, sweep value) with columns run_id,
  algorithm, env_variant, sweep_param, sweep_value, seed, episodes,
  final_objective, fembb_rate_bps, eurllc_feasible_count, episodes_to_95
  (int, ``not_converged``, or empty for untrained runs), wall_clock_s,
  config_hash. wall_clock_s is the only non-reproducible column.
* ``rewards.csv``: run_id, episode, reward (per-episode total reward).
* ``summary.csv``: per (algorithm, env_variant, sweep_param, sweep_value)
  seed aggregates: mean and standard error of the mean.
* ``manifest.json``: the fully resolved experiment spec and config hash.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agents import Algorithm, DqnTrainer, ExplorationSchedule, TrainerConfig
from .baselines import (SearchLimits, make_sbn_scenario, make_sc_scenario,
                        optimal_allocation)
from .config import ConfigError, ScenarioConfig
from .env import (Allocation, JnsaEnv, ScalarizedObjective, apply_mobility,
                  attach_serving, objective_breakdown, perturb_csi)
from .nets import save_checkpoint
from .scenario import NetworkState, UserClass, generate_scenario

ALGORITHMS = ("dqn", "double_dqn", "duel_dqn", "optimal")
ENV_VARIANTS = ("mbn", "sbn", "sc", "sc_noqos")
SWEEP_WHITELIST = ("n_fembb", "n_eurllc", "n_tbs", "aerial_fraction",
                   "hotspot_fraction", "subchannels_per_band",
                   "minislots_per_subchannel")

RUNS_COLUMNS = ("run_id", "algorithm", "env_variant", "sweep_param",
                "sweep_value", "seed", "episodes", "final_objective",
                "fembb_rate_bps", "eurllc_feasible_count", "episodes_to_95",
                "wall_clock_s", "config_hash")
SUMMARY_COLUMNS = ("algorithm", "env_variant", "sweep_param", "sweep_value",
                   "n_runs", "final_objective_mean", "final_objective_sem",
                   "fembb_rate_bps_mean", "fembb_rate_bps_sem",
                   "eurllc_feasible_count_mean", "eurllc_feasible_count_sem",
                   "episodes_to_95_mean")


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig
    algorithm: str = "duel_dqn"
    env_variant: str = "mbn"
    episodes: int = 2000
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    sweep_param: str | None = None
    sweep_values: tuple | None = None
    eval_episodes: int = 3
    train_every: int = 1
    epsilon_decay_fraction: float = 0.6
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    oracle_limits: SearchLimits = field(default_factory=SearchLimits)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, "
                              f"got {self.algorithm!r}")
        if self.env_variant not in ENV_VARIANTS:
            raise ConfigError(f"env_variant must be one of {ENV_VARIANTS}, "
                              f"got {self.env_variant!r}")
        if self.episodes <= 0:
            raise ConfigError("episodes must be > 0")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if (self.sweep_param is None) != (self.sweep_values is None):
            raise ConfigError("sweep_param and sweep_values go together")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEP_WHITELIST:
                raise ConfigError(f"sweep_param must be one of {SWEEP_WHITELIST}, "
                                  f"got {self.sweep_param!r}")
            if not self.sweep_values:
                raise ConfigError("sweep_values must be non-empty")
        if self.eval_episodes <= 0:
            raise ConfigError("eval_episodes must be > 0")
        if self.train_every <= 0:
            raise ConfigError("train_every must be > 0")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "algorithm": self.algorithm,
            "env_variant": self.env_variant,
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "sweep_param": self.sweep_param,
            "sweep_values": None if self.sweep_values is None
            else list(self.sweep_values),
            "eval_episodes": self.eval_episodes,
            "train_every": self.train_every,
            "epsilon_decay_fraction": self.epsilon_decay_fraction,
            "trainer": dataclasses.asdict(self.trainer),
        }


@dataclass
class RunRecord:
    run_id: str
    algorithm: str
    env_variant: str
    sweep_param: str
    sweep_value: float | str
    seed: int
    episodes: int
    rewards: list[float]
    final_objective: float
    fembb_rate_bps: float
    eurllc_feasible_count: float
    episodes_to_95: int | None
    wall_clock_s: float
    config_hash: str
    final_allocation: Allocation | None = None


def config_hash(spec: ExperimentSpec) -> str:
    payload = {"spec": spec.to_dict(), "version": __version__}
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def derived_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (SeedSequence mixing)."""
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1)[0])


def build_variant_state(base: NetworkState, variant: str) -> NetworkState:
    if variant == "mbn":
        return base.copy()
    if variant == "sbn":
        return make_sbn_scenario(base)
    if variant == "sc":
        return make_sc_scenario(base, qos_enforced=True)
    if variant == "sc_noqos":
        return make_sc_scenario(base, qos_enforced=False)
    raise ConfigError(f"env_variant must be one of {ENV_VARIANTS}, got {variant!r}")


# ---------------------------------------------------------------------------
# Training and evaluation

def train_policies(env: JnsaEnv, algorithm: Algorithm, episodes: int,
                   trainer_cfg: TrainerConfig, seed: int,
                   train_every: int = 1,
                   epsilon_decay_fraction: float = 0.6
                   ) -> tuple[DqnTrainer | None, DqnTrainer | None, list[float]]:
    """Drive one shared policy per user class through `episodes` episodes.

    Transitions chain within a class: an agent's next observation is the
    next same-class agent's, and the class's last agent in the episode is
    terminal for bootstrapping.
    """
    trainers: dict[UserClass, DqnTrainer | None] = {}
    for cls, n_agents, obs_dim, n_actions in (
            (UserClass.FEMBB, len(env.fembb_ids), env.fembb_obs_dim,
             env.fembb_action_count),
            (UserClass.EURLLC, len(env.eurllc_ids), env.eurllc_obs_dim,
             env.eurllc_action_count)):
        if n_agents == 0:
            trainers[cls] = None
            continue
        decay = max(1, int(episodes * n_agents * epsilon_decay_fraction))
        schedule = ExplorationSchedule(decay_steps=decay)
        cfg = dataclasses.replace(
            trainer_cfg, seed=derived_seed(seed, 1 if cls is UserClass.FEMBB else 2))
        trainers[cls] = DqnTrainer(algorithm, obs_dim, n_actions, cfg,
                                   schedule)

    pushes = {UserClass.FEMBB: 0, UserClass.EURLLC: 0}
    episode_rewards: list[float] = []
    for _ in range(episodes):
        env.reset()
        pending: dict[UserClass, tuple | None] = {UserClass.FEMBB: None,
                                                  UserClass.EURLLC: None}
        total = 0.0
        while not env.done:
            user = env.current_agent
            cls = env.user_class(user)
            trainer = trainers[cls]
            obs = env.observe(user)
            if pending[cls] is not None:
                p_obs, p_act, p_rew = pending[cls]
                trainer.push(p_obs, p_act, p_rew, obs, False)
                pushes[cls] += 1
                if (pushes[cls] % train_every == 0
                        and len(trainer.buffer) >= trainer.cfg.batch_size):
                    trainer.train_step()
            action = trainer.select_action(obs)
            _, reward, _ = env.step(action)
            total += reward
            pending[cls] = (obs, action, reward)
        for cls, trainer in trainers.items():
            if trainer is not None and pending[cls] is not None:
                p_obs, p_act, p_rew = pending[cls]
                trainer.push(p_obs, p_act, p_rew, np.zeros_like(p_obs), True)
                pushes[cls] += 1
                if (pushes[cls] % train_every == 0
                        and len(trainer.buffer) >= trainer.cfg.batch_size):
                    trainer.train_step()
        episode_rewards.append(total)
    return trainers[UserClass.FEMBB], trainers[UserClass.EURLLC], episode_rewards


def greedy_rollout(env: JnsaEnv, fembb_model, eurllc_model):
    """Play one episode greedily; returns (allocation, objective breakdown)."""
    env.reset()
    while not env.done:
        user = env.current_agent
        model = (fembb_model if env.user_class(user) is UserClass.FEMBB
                 else eurllc_model)
        obs = env.observe(user)
        env.step(int(np.argmax(model.forward(obs))))
    br = objective_breakdown(env.state, env.allocation, env.objective_cfg)
    return env.allocation.copy(), br


def evaluate_policies(state: NetworkState, objective_cfg: ScalarizedObjective,
                      fembb_model, eurllc_model, eval_seed: int,
                      eval_episodes: int, conflict_penalty: float = 1.0):
    """Greedy evaluation over fresh fading episodes; returns per-episode
    breakdowns and the last allocation."""
    env = JnsaEnv(state.copy(), objective_cfg,
                  conflict_penalty=conflict_penalty, seed=eval_seed)
    results, alloc = [], None
    for _ in range(eval_episodes):
        alloc, br = greedy_rollout(env, fembb_model, eurllc_model)
        results.append(br)
    return results, alloc


def evaluate_oracle(state: NetworkState, objective_cfg: ScalarizedObjective,
                    eval_seed: int, eval_episodes: int,
                    limits: SearchLimits = SearchLimits()):
    """Exact solve on the same eval fading states the policies see."""
    env = JnsaEnv(state.copy(), objective_cfg, seed=eval_seed)
    results, alloc = [], None
    for _ in range(eval_episodes):
        env.reset()
        alloc, _ = optimal_allocation(env.state, objective_cfg, limits)
        results.append(objective_breakdown(env.state, alloc, objective_cfg))
    return results, alloc


# ---------------------------------------------------------------------------
# Convergence metric

def convergence_metric(rewards, window: int = 50,
                       final_window: int = 100) -> int | None:
    """1-based start episode of the first `window`-episode moving average
    reaching 95% of the final-`final_window` mean (from below in magnitude),
    or None when never reached."""
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) < window:
        raise ValueError(f"series of {len(rewards)} episodes is shorter than "
                         f"the {window}-episode window")
    final_mean = float(rewards[-min(final_window, len(rewards)):].mean())
    threshold = final_mean - 0.05 * abs(final_mean)
    kernel = np.ones(window) / window
    moving = np.convolve(rewards, kernel, mode="valid")
    hits = np.nonzero(moving >= threshold)[0]
    return int(hits[0]) + 1 if len(hits) else None


# ---------------------------------------------------------------------------
# Robustness sweeps

def robustness_sweep(state: NetworkState, objective_cfg: ScalarizedObjective,
                     perturbation: str, values, *,
                     allocation: Allocation | None = None,
                     fembb_model=None, eurllc_model=None,
                     noise_seeds: int = 24, noise_seed_base: int = 7000,
                     mobility_speed_mps: float = 2.0,
                     csi_mode: str = "verbatim",
                     conflict_penalty: float = 1.0) -> list[dict]:
    """FeMBB total rate under CSI noise or mobility, one row per value.

    A frozen `allocation` is re-evaluated as-is on the perturbed state; a
    policy (both models) re-decides greedily on the perturbed observations.
    CSI rows average over `noise_seeds` draws; mobility is deterministic.
    """
    frozen = allocation is not None
    if frozen == (fembb_model is not None or eurllc_model is not None):
        raise ValueError("pass exactly one of allocation or policy models")
    if perturbation not in ("csi", "mobility"):
        raise ValueError(f"perturbation must be csi or mobility, got {perturbation!r}")

    if perturbation == "mobility" and frozen:
        base = state.copy()
        attach_serving(base, allocation, default_bs=0)
    else:
        base = state

    def rate_on(perturbed: NetworkState) -> float:
        if frozen:
            return objective_breakdown(perturbed, allocation,
                                       objective_cfg).fembb_total_rate_bps
        env = JnsaEnv(perturbed, objective_cfg,
                      conflict_penalty=conflict_penalty, seed=0,
                      refresh_fading_on_reset=False)
        _, br = greedy_rollout(env, fembb_model, eurllc_model)
        return br.fembb_total_rate_bps

    rows = []
    for value in values:
        if perturbation == "csi":
            samples = [rate_on(perturb_csi(base, value,
                                           seed=noise_seed_base + rep,
                                           mode=csi_mode))
                       for rep in range(noise_seeds)]
        else:
            moved = base
            if not frozen:
                # the policy moves away from its own stage-1 assignment
                env = JnsaEnv(base.copy(), objective_cfg,
                              conflict_penalty=conflict_penalty, seed=0,
                              refresh_fading_on_reset=False)
                own_alloc, _ = greedy_rollout(env, fembb_model, eurllc_model)
                moved = base.copy()
                attach_serving(moved, own_alloc, default_bs=0)
            samples = [rate_on(apply_mobility(moved, value,
                                              mobility_speed_mps))]
        arr = np.asarray(samples)
        sem = (float(arr.std(ddof=1) / math.sqrt(len(arr)))
               if len(arr) > 1 else 0.0)
        rows.append({"perturbation": perturbation, "value": float(value),
                     "fembb_rate_bps_mean": float(arr.mean()),
                     "fembb_rate_bps_sem": sem, "n": len(arr)})
    return rows


# ---------------------------------------------------------------------------
# The experiment driver

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _run_single(spec: ExperimentSpec, cfg: ScenarioConfig, run_id: str,
                sweep_param: str, sweep_value, seed: int,
                chash: str, checkpoint_dir: Path | None) -> RunRecord:
    t0 = time.perf_counter()
    scen_seed = derived_seed(cfg.seed, seed, 0)
    eval_seed = derived_seed(cfg.seed, seed, 1)
    env_seed = derived_seed(cfg.seed, seed, 2)
    base = generate_scenario(cfg, seed=scen_seed)
    state = build_variant_state(base, spec.env_variant)
    objective_cfg = ScalarizedObjective.for_state(
        state, weight_rate=cfg.weight_rate,
        violation_penalty=cfg.violation_penalty)

    rewards: list[float] = []
    if spec.algorithm == "optimal":
        results, alloc = evaluate_oracle(state, objective_cfg, eval_seed,
                                         spec.eval_episodes,
                                         spec.oracle_limits)
    else:
        env = JnsaEnv(state.copy(), objective_cfg,
                      conflict_penalty=cfg.conflict_penalty, seed=env_seed)
        trainer_f, trainer_u, rewards = train_policies(
            env, Algorithm.parse(spec.algorithm), spec.episodes, spec.trainer,
            seed=seed, train_every=spec.train_every,
            epsilon_decay_fraction=spec.epsilon_decay_fraction)
        results, alloc = evaluate_policies(
            state, objective_cfg,
            trainer_f.online if trainer_f else None,
            trainer_u.online if trainer_u else None,
            eval_seed, spec.eval_episodes,
            conflict_penalty=cfg.conflict_penalty)
        if checkpoint_dir is not None:
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            echo = {"run_id": run_id, "algorithm": spec.algorithm,
                    "config_hash": chash}
            if trainer_f is not None:
                save_checkpoint(trainer_f.online,
                                checkpoint_dir / f"{run_id}_fembb.json", echo)
            if trainer_u is not None:
                save_checkpoint(trainer_u.online,
                                checkpoint_dir / f"{run_id}_eurllc.json", echo)

    episodes_to_95 = None
    if len(rewards) >= 50:
        episodes_to_95 = convergence_metric(rewards)
    return RunRecord(
        run_id=run_id,
        algorithm=spec.algorithm,
        env_variant=spec.env_variant,
        sweep_param=sweep_param,
        sweep_value=sweep_value,
        seed=seed,
        episodes=spec.episodes,
        rewards=rewards,
        final_objective=float(np.mean([r.value for r in results])),
        fembb_rate_bps=float(np.mean([r.fembb_total_rate_bps for r in results])),
        eurllc_feasible_count=float(np.mean([r.eurllc_feasible_count
                                             for r in results])),
        episodes_to_95=episodes_to_95,
        wall_clock_s=time.perf_counter() - t0,
        config_hash=chash,
        final_allocation=alloc,
    )


def run_experiment(spec: ExperimentSpec,
                   out_dir: str | Path | None = None) -> list[RunRecord]:
    """One RunRecord per (seed, sweep value); rows stream to runs.csv as
    they are produced when out_dir is given."""
    spec.validate()
    chash = config_hash(spec)
    cells = [("", "")]
    if spec.sweep_param is not None:
        cells = [(spec.sweep_param, v) for v in spec.sweep_values]

    out_path = Path(out_dir) if out_dir is not None else None
    runs_file = rewards_file = None
    runs_writer = rewards_writer = None
    checkpoint_dir = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        checkpoint_dir = out_path / "checkpoints"
        manifest = {"spec": spec.to_dict(), "version": __version__,
                    "config_hash": chash}
        (out_path / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))
        runs_file = open(out_path / "runs.csv", "w", newline="")
        runs_writer = csv.writer(runs_file)
        runs_writer.writerow(RUNS_COLUMNS)
        rewards_file = open(out_path / "rewards.csv", "w", newline="")
        rewards_writer = csv.writer(rewards_file)
        rewards_writer.writerow(("run_id", "episode", "reward"))

    records: list[RunRecord] = []
    try:
        index = 0
        for sweep_param, sweep_value in cells:
            cfg = spec.scenario
            if sweep_param:
                field_type = type(getattr(cfg, sweep_param))
                cfg = cfg.replace(**{sweep_param: field_type(sweep_value)})
            for seed in spec.seeds:
                run_id = f"run{index:04d}"
                index += 1
                record = _run_single(spec, cfg, run_id, sweep_param,
                                     sweep_value, seed, chash, checkpoint_dir)
                records.append(record)
                if runs_writer is not None:
                    runs_writer.writerow(_record_row(record))
                    runs_file.flush()
                    for episode, reward in enumerate(record.rewards, start=1):
                        rewards_writer.writerow(
                            (record.run_id, episode, repr(float(reward))))
                    rewards_file.flush()
    finally:
        if runs_file is not None:
            runs_file.close()
        if rewards_file is not None:
            rewards_file.close()

    if out_path is not None:
        write_summary(records, out_path / "summary.csv")
    return records


def _record_row(r: RunRecord) -> list[str]:
    if len(r.rewards) < 50:
        to95 = None  # series too short for the metric
    elif r.episodes_to_95 is None:
        to95 = "not_converged"
    else:
        to95 = r.episodes_to_95
    return [_fmt(v) for v in (
        r.run_id, r.algorithm, r.env_variant, r.sweep_param, r.sweep_value,
        r.seed, r.episodes, r.final_objective, r.fembb_rate_bps,
        r.eurllc_feasible_count, to95, r.wall_clock_s, r.config_hash)]


def _mean_sem(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    sem = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), sem


def summarize(records: list[RunRecord]) -> list[dict]:
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(
            (r.algorithm, r.env_variant, r.sweep_param, r.sweep_value),
            []).append(r)
    rows = []
    for key in groups:
        runs = groups[key]
        obj_m, obj_s = _mean_sem([r.final_objective for r in runs])
        rate_m, rate_s = _mean_sem([r.fembb_rate_bps for r in runs])
        cnt_m, cnt_s = _mean_sem([r.eurllc_feasible_count for r in runs])
        conv = [r.episodes_to_95 for r in runs if r.episodes_to_95 is not None]
        rows.append({
            "algorithm": key[0], "env_variant": key[1],
            "sweep_param": key[2], "sweep_value": key[3],
            "n_runs": len(runs),
            "final_objective_mean": obj_m, "final_objective_sem": obj_s,
            "fembb_rate_bps_mean": rate_m, "fembb_rate_bps_sem": rate_s,
            "eurllc_feasible_count_mean": cnt_m,
            "eurllc_feasible_count_sem": cnt_s,
            "episodes_to_95_mean": (float(np.mean(conv)) if conv else None),
        })
    return rows


def write_summary(records: list[RunRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in summarize(records):
            writer.writerow([_fmt(row[col]) for col in SUMMARY_COLUMNS])


def read_runs_csv(path: str | Path) -> list[dict]:
    """Parse runs.csv back into typed dicts (inverse of the emitter)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            parsed["seed"] = int(row["seed"])
            parsed["episodes"] = int(row["episodes"])
            for col in ("final_objective", "fembb_rate_bps",
                        "eurllc_feasible_count", "wall_clock_s"):
                parsed[col] = float(row[col])
            to95 = row["episodes_to_95"]
            parsed["episodes_to_95"] = (int(to95) if to95.isdigit() else
                                        (None if to95 == "" else to95))
            out.append(parsed)
    return out
