"""Experiment orchestration: flat-file configs, seeded runs, CSV metrics,
sweeps over methods x seeds, and Table-style aggregation.

Config files are flat `key = value` lines with `#` comments. Every run is a
pure function of its resolved config: the master seed is split into
independent streams for the environment, action sampling, network
initialization, and curiosity-bank initialization, so runs never share
random state and parallel execution order cannot change any run's output.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from . import coma, curiosity, nav_env
from .nav_env import ConfigurationError

logger = logging.getLogger(__name__)

RESULTS_ENV_VAR = "CURIOSITY_MARL_RESULTS"
CSV_HEADER = (
    "run_id,method,scenario,n_agents,seed,episode,"
    "normalized_reward,extrinsic_return,mean_intrinsic,curiosity_loss"
)
ALLOWED_N_AGENTS = (2, 4)
AUTO_EPISODE_BUDGET = {2: 30_000, 4: 50_000}


@dataclass(frozen=True)
class RunConfig:
    """Every knob of one training run. total_episodes = 0 means the
    agent-count default (30k for 2 agents, 50k for 4)."""

    scenario: str = "same_landmark"
    n_agents: int = 2
    reward_mode: str = "sparse"
    method: str = "mcm"
    seed: int = 0
    total_episodes: int = 0
    eval_interval: int = 100
    lambda_: float = 0.05
    clip_max: float = 1.0
    half_extent: float = 1.0
    step_size: float = 0.1
    episode_length: int = 50
    success_radius: float = 0.1
    collision_radius: float = 0.05
    c_collide: float = 1.0
    c_success: float = 5.0
    start_jitter: float = 0.05
    gamma: float = 0.95
    td_lambda: float = 0.8
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    curiosity_lr: float = 1e-3
    episodes_per_update: int = 8
    entropy_coeff: float = 0.01
    critic_epochs: int = 4
    epsilon_start: float = 0.1
    epsilon_end: float = 0.02
    hidden_dims: tuple[int, ...] = (64, 64)
    leaky_slope: float = 0.01

    @property
    def resolved_total_episodes(self) -> int:
        if self.total_episodes > 0:
            return self.total_episodes
        return AUTO_EPISODE_BUDGET.get(self.n_agents, 30_000)

    def validate(self) -> None:
        if self.n_agents not in ALLOWED_N_AGENTS:
            raise ConfigurationError(
                f"n_agents: must be one of {ALLOWED_N_AGENTS}, got {self.n_agents}"
            )
        try:
            curiosity.CuriosityKind(self.method)
        except ValueError:
            raise ConfigurationError(
                f"method: unknown method {self.method!r}; choose from "
                f"{[k.value for k in curiosity.CuriosityKind]}"
            ) from None
        if self.seed < 0:
            raise ConfigurationError("seed: must be >= 0")
        if self.total_episodes < 0:
            raise ConfigurationError("total_episodes: must be >= 0 (0 = default budget)")
        if self.eval_interval < 1:
            raise ConfigurationError("eval_interval: must be >= 1")
        if self.lambda_ < 0.0:
            raise ConfigurationError("lambda: must be >= 0")
        if self.clip_max <= 0.0:
            raise ConfigurationError("clip_max: must be > 0")
        if self.curiosity_lr <= 0.0:
            raise ConfigurationError("curiosity_lr: must be > 0")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("hidden_dims: must be positive integers")
        try:
            self.world_config().validate()
            self.train_config().validate()
        except ConfigurationError:
            raise
        except ValueError as e:
            raise ConfigurationError(str(e)) from None

    def world_config(self) -> nav_env.WorldConfig:
        return nav_env.WorldConfig(
            n_agents=self.n_agents,
            scenario=self.scenario,
            reward_mode=self.reward_mode,
            half_extent=self.half_extent,
            step_size=self.step_size,
            episode_length=self.episode_length,
            success_radius=self.success_radius,
            collision_radius=self.collision_radius,
            c_collide=self.c_collide,
            c_success=self.c_success,
            start_jitter=self.start_jitter,
        )

    def train_config(self) -> coma.TrainConfig:
        return coma.TrainConfig(
            gamma=self.gamma,
            td_lambda=self.td_lambda,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            episodes_per_update=self.episodes_per_update,
            entropy_coeff=self.entropy_coeff,
            critic_epochs=self.critic_epochs,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            total_episodes=self.resolved_total_episodes,
            intrinsic_lambda=self.lambda_,
            intrinsic_clip=self.clip_max,
        )


# The config-file key for lambda_ drops the trailing underscore (the bare
# name is a Python keyword).
_ATTR_TO_KEY = {"lambda_": "lambda"}
_KEY_TO_ATTR = {v: k for k, v in _ATTR_TO_KEY.items()}


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_str(raw: str) -> str:
    return raw.strip()


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


# Field annotations are strings (postponed evaluation); map them to parsers.
_CONVERTERS = {
    "int": _parse_int,
    "float": _parse_float,
    "str": _parse_str,
    "tuple[int, ...]": _parse_int_tuple,
}


def _field_converters() -> dict[str, tuple[str, object]]:
    """Map config-file key -> (dataclass attribute, converter)."""
    out = {}
    for f in fields(RunConfig):
        key = _ATTR_TO_KEY.get(f.name, f.name)
        annotation = f.type if isinstance(f.type, str) else f.type.__name__
        out[key] = (f.name, _CONVERTERS[annotation])
    return out


def parse_pairs(text: str) -> dict[str, str]:
    """Flat `key = value` lines; `#` starts a comment; blank lines ignored."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, raw = stripped.split("=", 1)
        pairs[key.strip()] = raw.strip()
    return pairs


def parse_config(text: str = "", overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a validated RunConfig from file text plus override pairs
    (overrides win, mirroring CLI-flag precedence). Unknown keys are
    rejected by name."""
    converters = _field_converters()
    merged = parse_pairs(text)
    merged.update(overrides or {})
    attrs = {}
    for key, raw in merged.items():
        if key not in converters:
            raise ConfigurationError(f"unknown config key: {key}")
        attr, conv = converters[key]
        try:
            attrs[attr] = conv(raw)
        except (ValueError, TypeError):
            raise ConfigurationError(f"{key}: malformed value {raw!r}") from None
    cfg = replace(RunConfig(), **attrs)
    cfg.validate()
    return cfg


def render_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig in the same flat format parse_config reads."""
    lines = []
    for f in fields(RunConfig):
        key = _ATTR_TO_KEY.get(f.name, f.name)
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: int
    extrinsic_return: float
    normalized_reward: float
    success_any: bool
    mean_intrinsic: float
    curiosity_loss: float


@dataclass
class RunResult:
    config: RunConfig
    normalized: np.ndarray  # (total_episodes,)
    extrinsic: np.ndarray
    mean_intrinsic: np.ndarray
    curiosity_loss: np.ndarray
    success_any: np.ndarray  # bool
    final_score: float

    def episode_metrics(self) -> list[EpisodeMetrics]:
        return [
            EpisodeMetrics(
                episode=i,
                extrinsic_return=float(self.extrinsic[i]),
                normalized_reward=float(self.normalized[i]),
                success_any=bool(self.success_any[i]),
                mean_intrinsic=float(self.mean_intrinsic[i]),
                curiosity_loss=float(self.curiosity_loss[i]),
            )
            for i in range(len(self.normalized))
        ]


def resolve_results_dir(explicit: str | None = None) -> str:
    return explicit or os.environ.get(RESULTS_ENV_VAR) or "results"


def run_id(cfg: RunConfig) -> str:
    return f"{cfg.method}_{cfg.scenario}_{cfg.n_agents}ag_s{cfg.seed}"


def final_score_of(normalized: np.ndarray) -> float:
    tail = max(1, len(normalized) // 10)
    return float(np.mean(normalized[-tail:]))


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def run_experiment(cfg: RunConfig, results_dir: str | None = None) -> RunResult:
    """Train one configuration end to end; write one CSV of per-interval
    means plus a sidecar echoing the fully resolved config."""
    cfg.validate()
    cfg = replace(cfg, total_episodes=cfg.resolved_total_episodes)
    out_dir = resolve_results_dir(results_dir)
    os.makedirs(out_dir, exist_ok=True)
    rid = run_id(cfg)
    with open(os.path.join(out_dir, rid + ".config"), "w") as f:
        f.write(render_config(cfg))

    env_ss, action_ss, net_ss, bank_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    env_rng = np.random.default_rng(env_ss)
    action_rng = np.random.default_rng(action_ss)
    net_rng = np.random.default_rng(net_ss)
    bank_rng = np.random.default_rng(bank_ss)

    world = cfg.world_config()
    train_cfg = cfg.train_config()
    env = nav_env.NavEnv(world)
    policies = coma.make_policy_set(
        cfg.n_agents, world.obs_dim, net_rng, cfg.hidden_dims, cfg.leaky_slope, cfg.actor_lr
    )
    critic = coma.make_critic(
        cfg.n_agents, world.obs_dim, net_rng, cfg.hidden_dims, cfg.leaky_slope, cfg.critic_lr
    )
    bank = curiosity.make_bank(
        cfg.method, cfg.n_agents, world.obs_dim, bank_rng,
        cfg.hidden_dims, cfg.leaky_slope, cfg.curiosity_lr,
    )

    total = cfg.total_episodes
    normalized = np.zeros(total)
    extrinsic = np.zeros(total)
    mean_intrinsic = np.zeros(total)
    curiosity_loss = np.zeros(total)
    success_any = np.zeros(total, dtype=bool)

    logger.info("run %s: starting %d episodes", rid, total)
    csv_path = os.path.join(out_dir, rid + ".csv")
    done = 0
    next_mark = cfg.eval_interval
    with open(csv_path, "w") as csv_file:
        csv_file.write(CSV_HEADER + "\n")

        def emit_row(end: int, start: int) -> None:
            sl = slice(start, end)
            row = ",".join(
                [
                    rid,
                    cfg.method,
                    cfg.scenario,
                    str(cfg.n_agents),
                    str(cfg.seed),
                    str(end),
                    _g17(normalized[sl].mean()),
                    _g17(extrinsic[sl].mean()),
                    _g17(mean_intrinsic[sl].mean()),
                    _g17(curiosity_loss[sl].mean()),
                ]
            )
            csv_file.write(row + "\n")

        while done < total:
            n_eps = min(train_cfg.episodes_per_update, total - done)
            round_cfg = (
                train_cfg
                if n_eps == train_cfg.episodes_per_update
                else replace(train_cfg, episodes_per_update=n_eps)
            )
            try:
                stats = coma.train_round(
                    policies, critic, env, bank, round_cfg, done, env_rng, action_rng
                )
            except FloatingPointError as e:
                raise RuntimeError(
                    f"run {rid}: numeric failure near episode {done}: {e}"
                ) from e
            round_loss = (
                float(np.mean(stats.curiosity_losses)) if stats.curiosity_losses else 0.0
            )
            ep_len = world.episode_length
            for k in range(n_eps):
                extrinsic[done + k] = stats.extrinsic_returns[k]
                normalized[done + k] = stats.success_steps[k] / ep_len
                mean_intrinsic[done + k] = stats.mean_intrinsic[k]
                curiosity_loss[done + k] = round_loss
                success_any[done + k] = stats.success_any[k]
            done += n_eps
            while next_mark <= done:
                emit_row(next_mark, next_mark - cfg.eval_interval)
                next_mark += cfg.eval_interval
            if done % 5000 < train_cfg.episodes_per_update and done >= 5000:
                logger.info(
                    "run %s: %d/%d episodes, recent normalized %.3f",
                    rid, done, total, float(np.mean(normalized[max(0, done - 500):done])),
                )
        if next_mark - cfg.eval_interval < total:
            emit_row(total, next_mark - cfg.eval_interval)

    score = final_score_of(normalized)
    logger.info("run %s: finished, final score %.4f", rid, score)
    return RunResult(
        cfg, normalized, extrinsic, mean_intrinsic, curiosity_loss, success_any, score
    )


@dataclass(frozen=True)
class RunSummary:
    """Slim stand-in for RunResult when reloading finished runs from disk."""

    config: RunConfig
    final_score: float


@dataclass(frozen=True)
class AggregateRow:
    method: str
    scenario: str
    n_agents: int
    n_seeds: int
    mean: float
    std: float


def aggregate(results) -> list[AggregateRow]:
    """Group final scores by (method, scenario, n_agents); sample std
    (ddof=1), 0.0 for singleton groups."""
    groups: dict[tuple[str, str, int], list[float]] = {}
    for r in results:
        key = (r.config.method, r.config.scenario, r.config.n_agents)
        groups.setdefault(key, []).append(r.final_score)
    rows = []
    for (method, scenario, n_agents), scores in sorted(groups.items()):
        arr = np.asarray(scores)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        rows.append(
            AggregateRow(method, scenario, n_agents, len(arr), float(arr.mean()), std)
        )
    return rows


def format_aggregate(rows: list[AggregateRow]) -> str:
    header = f"{'method':<12} {'scenario':<20} {'agents':>6} {'seeds':>5}  final score"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.method:<12} {r.scenario:<20} {r.n_agents:>6} {r.n_seeds:>5}  "
            f"{r.mean:.4f} ± {r.std:.4f}"
        )
    return "\n".join(lines)


def aggregate_csv(rows: list[AggregateRow]) -> str:
    out = ["method,scenario,n_agents,n_seeds,mean,std"]
    for r in rows:
        out.append(
            f"{r.method},{r.scenario},{r.n_agents},{r.n_seeds},{_g17(r.mean)},{_g17(r.std)}"
        )
    return "\n".join(out) + "\n"


def parse_csv_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unrecognized results CSV header")
    cols = CSV_HEADER.split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise ValueError(f"bad results row: {ln!r}")
        row = dict(zip(cols, parts))
        for k in ("n_agents", "seed", "episode"):
            row[k] = int(row[k])
        for k in ("normalized_reward", "extrinsic_return", "mean_intrinsic", "curiosity_loss"):
            row[k] = float(row[k])
        rows.append(row)
    return rows


def load_run(results_dir: str, rid: str) -> RunSummary:
    """Rebuild a finished run's final score from its CSV, weighting each
    interval row by its overlap with the last 10% of episodes."""
    with open(os.path.join(results_dir, rid + ".config")) as f:
        cfg = parse_config(f.read())
    with open(os.path.join(results_dir, rid + ".csv")) as f:
        rows = parse_csv_rows(f.read())
    if not rows:
        raise ValueError(f"run {rid}: no metric rows")
    total = cfg.resolved_total_episodes
    threshold = 0.9 * total
    weighted = 0.0
    weight = 0.0
    prev = 0
    for row in rows:
        end = row["episode"]
        overlap = min(end, total) - max(prev, threshold)
        if overlap > 0:
            weighted += overlap * row["normalized_reward"]
            weight += overlap
        prev = end
    if weight == 0.0:
        # degenerate budgets: fall back to the last row
        return RunSummary(cfg, rows[-1]["normalized_reward"])
    return RunSummary(cfg, weighted / weight)


def load_results(results_dir: str) -> list[RunSummary]:
    rids = sorted(
        name[: -len(".config")]
        for name in os.listdir(results_dir)
        if name.endswith(".config")
    )
    out = []
    for rid in rids:
        if os.path.exists(os.path.join(results_dir, rid + ".csv")):
            out.append(load_run(results_dir, rid))
        else:
            logger.warning("run %s: config sidecar without CSV, skipping", rid)
    return out


@dataclass(frozen=True)
class SweepCell:
    method: str
    seed: int
    run_id: str
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def parse_sweep(text: str) -> tuple[list[str], list[int], dict[str, str]]:
    """Sweep file = base run config plus `methods` and `seeds` list keys."""
    pairs = parse_pairs(text)
    try:
        methods_raw = pairs.pop("methods")
        seeds_raw = pairs.pop("seeds")
    except KeyError as e:
        raise ConfigurationError(f"sweep file must define {e.args[0]}") from None
    methods = [m.strip() for m in methods_raw.split(",") if m.strip()]
    try:
        seeds = [int(s) for s in seeds_raw.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"seeds: malformed value {seeds_raw!r}") from None
    if not methods or not seeds:
        raise ConfigurationError("methods and seeds must be non-empty")
    return methods, seeds, pairs


def _sweep_worker(args: tuple[RunConfig, str]) -> tuple[str, str | None]:
    cfg, results_dir = args
    try:
        run_experiment(cfg, results_dir)
        return run_id(cfg), None
    except Exception as e:  # report the failing cell, keep the sweep going
        return run_id(cfg), f"{type(e).__name__}: {e}"


def sweep(
    methods: list[str],
    seeds: list[int],
    base_pairs: dict[str, str],
    results_dir: str | None = None,
    workers: int = 1,
) -> list[SweepCell]:
    """Run the methods x seeds cross-product; every cell gets its own files.
    Returns one cell record per combination, failures included."""
    out_dir = resolve_results_dir(results_dir)
    cfgs = []
    for method in methods:
        for seed in seeds:
            overrides = dict(base_pairs)
            overrides["method"] = method
            overrides["seed"] = str(seed)
            cfgs.append(parse_config("", overrides))
    jobs = [(cfg, out_dir) for cfg in cfgs]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            outcomes = pool.map(_sweep_worker, jobs)
    else:
        outcomes = [_sweep_worker(job) for job in jobs]
    cells = []
    for cfg, (rid, error) in zip(cfgs, outcomes):
        if error is not None:
            logger.error("sweep cell %s failed: %s", rid, error)
        cells.append(SweepCell(cfg.method, cfg.seed, rid, error))
    return cells
