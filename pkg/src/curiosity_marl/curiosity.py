"""Forward-model curiosity: module banks, training losses, intrinsic rewards.

Eight method variants are supported. The icm_* kinds use one-headed forward
models; the mcm family uses a two-headed model whose first head predicts the
owning agent's next observation from (o^n, u^n) and whose second head predicts
the full next joint observation, with the other agents' observations and
actions concatenated after the shared trunk (second head only). Joint vectors
always concatenate agents in ascending index order: all observations first,
then all one-hot actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import neural_core as nc
from .nav_env import N_ACTIONS


class CuriosityKind(str, Enum):
    NONE = "none"
    ICM_INDIV = "icm_indiv"
    ICM_JOINT = "icm_joint"
    ICM_MIN = "icm_min"
    MCM = "mcm"
    MCM_INDIV = "mcm_indiv"
    MCM_JOINT = "mcm_joint"
    MCM_SEP = "mcm_sep"


TWO_HEADED_KINDS = (CuriosityKind.MCM, CuriosityKind.MCM_INDIV, CuriosityKind.MCM_JOINT)
PER_AGENT_ONE_HEADED_KINDS = (CuriosityKind.ICM_INDIV, CuriosityKind.ICM_MIN)


@dataclass(frozen=True)
class Transition:
    joint_obs: np.ndarray  # (N, obs_dim)
    joint_action: tuple[int, ...]
    extrinsic_reward: float
    next_joint_obs: np.ndarray  # (N, obs_dim)
    done: bool


@dataclass
class CuriosityBank:
    kind: CuriosityKind
    n_agents: int
    obs_dim: int
    modules: list[nc.Network]
    opts: list[nc.AdamState]


def one_hot_action(action: int) -> np.ndarray:
    v = np.zeros(N_ACTIONS)
    v[action] = 1.0
    return v


def _indiv_spec(obs_dim: int, hidden_dims, leaky_slope) -> nc.NetworkSpec:
    return nc.NetworkSpec(
        input_dim=obs_dim + N_ACTIONS,
        output_dims=(obs_dim,),
        hidden_dims=tuple(hidden_dims),
        leaky_slope=leaky_slope,
    )


def _joint_spec(n_agents: int, obs_dim: int, hidden_dims, leaky_slope) -> nc.NetworkSpec:
    return nc.NetworkSpec(
        input_dim=n_agents * (obs_dim + N_ACTIONS),
        output_dims=(n_agents * obs_dim,),
        hidden_dims=tuple(hidden_dims),
        leaky_slope=leaky_slope,
    )


def _two_headed_spec(n_agents: int, obs_dim: int, hidden_dims, leaky_slope) -> nc.NetworkSpec:
    return nc.NetworkSpec(
        input_dim=obs_dim + N_ACTIONS,
        output_dims=(obs_dim, n_agents * obs_dim),
        hidden_dims=tuple(hidden_dims),
        leaky_slope=leaky_slope,
        head_extra_input_dims=(0, (n_agents - 1) * (obs_dim + N_ACTIONS)),
    )


def make_bank(
    kind: CuriosityKind | str,
    n_agents: int,
    obs_dim: int,
    rng: np.random.Generator,
    hidden_dims=(64, 64),
    leaky_slope: float = 0.01,
    lr: float = 1e-3,
) -> CuriosityBank:
    """Build the module roster for a method: N two-headed modules for the mcm
    family, N one-headed for icm_indiv/icm_min, 1 for icm_joint, N individual
    plus 1 joint for mcm_sep, none for the plain baseline."""
    kind = CuriosityKind(kind)
    specs: list[nc.NetworkSpec] = []
    if kind in TWO_HEADED_KINDS:
        specs = [_two_headed_spec(n_agents, obs_dim, hidden_dims, leaky_slope)] * n_agents
    elif kind in PER_AGENT_ONE_HEADED_KINDS:
        specs = [_indiv_spec(obs_dim, hidden_dims, leaky_slope)] * n_agents
    elif kind is CuriosityKind.ICM_JOINT:
        specs = [_joint_spec(n_agents, obs_dim, hidden_dims, leaky_slope)]
    elif kind is CuriosityKind.MCM_SEP:
        specs = [_indiv_spec(obs_dim, hidden_dims, leaky_slope)] * n_agents
        specs.append(_joint_spec(n_agents, obs_dim, hidden_dims, leaky_slope))
    modules = [nc.init_network(spec, rng) for spec in specs]
    opts = [nc.init_adam(m, lr=lr) for m in modules]
    return CuriosityBank(kind, n_agents, obs_dim, modules, opts)


def indiv_input(t: Transition, n: int) -> np.ndarray:
    return np.concatenate([t.joint_obs[n], one_hot_action(t.joint_action[n])])


def joint_input(t: Transition) -> np.ndarray:
    actions = np.concatenate([one_hot_action(a) for a in t.joint_action])
    return np.concatenate([t.joint_obs.ravel(), actions])


def others_input(t: Transition, n: int) -> np.ndarray:
    """Joint observation and action with agent n's slots masked out."""
    mask = [m for m in range(t.joint_obs.shape[0]) if m != n]
    obs = t.joint_obs[mask].ravel()
    actions = np.concatenate([one_hot_action(t.joint_action[m]) for m in mask])
    return np.concatenate([obs, actions])


def mcm_forward(
    module: nc.Network,
    o_n: np.ndarray,
    u_n: np.ndarray,
    o_others: np.ndarray,
    u_others: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-headed prediction: (agent's next observation, next joint observation).

    Only the second head sees the other agents' observations and actions.
    o_others/u_others concatenate the remaining agents in ascending order;
    u_n and u_others are one-hot.
    """
    trunk_in = np.concatenate([np.asarray(o_n, float), np.asarray(u_n, float)])
    extra = np.concatenate([np.asarray(o_others, float), np.asarray(u_others, float)])
    outputs, _ = nc.forward(module, trunk_in, [None, extra])
    return outputs[0], outputs[1]


def _module_batches(bank: CuriosityBank, batch: list[Transition]):
    """Per-module (inputs, extras, targets) matrices for a training batch.

    Targets are a list per head. Individual module n predicts agent n's next
    observation; joint modules predict the concatenated next joint
    observation; two-headed modules predict both.
    """
    kind = bank.kind
    n_agents = bank.n_agents
    jobs = []
    if kind in TWO_HEADED_KINDS:
        for n in range(n_agents):
            x = np.stack([indiv_input(t, n) for t in batch])
            extra = np.stack([others_input(t, n) for t in batch])
            own = np.stack([t.next_joint_obs[n] for t in batch])
            joint = np.stack([t.next_joint_obs.ravel() for t in batch])
            jobs.append((x, [None, extra], [own, joint]))
    elif kind in PER_AGENT_ONE_HEADED_KINDS:
        for n in range(n_agents):
            x = np.stack([indiv_input(t, n) for t in batch])
            own = np.stack([t.next_joint_obs[n] for t in batch])
            jobs.append((x, None, [own]))
    elif kind is CuriosityKind.ICM_JOINT:
        x = np.stack([joint_input(t) for t in batch])
        joint = np.stack([t.next_joint_obs.ravel() for t in batch])
        jobs.append((x, None, [joint]))
    elif kind is CuriosityKind.MCM_SEP:
        for n in range(n_agents):
            x = np.stack([indiv_input(t, n) for t in batch])
            own = np.stack([t.next_joint_obs[n] for t in batch])
            jobs.append((x, None, [own]))
        x = np.stack([joint_input(t) for t in batch])
        joint = np.stack([t.next_joint_obs.ravel() for t in batch])
        jobs.append((x, None, [joint]))
    return jobs


def curiosity_update(bank: CuriosityBank, batch: list[Transition]) -> list[float]:
    """One Adam step per module on the batch-mean forward loss.

    One-headed modules minimize ||prediction - target||^2; two-headed modules
    minimize half the sum of the squared individual and joint errors. Returns
    the pre-update mean loss of every module.
    """
    if not batch:
        raise ValueError("curiosity_update requires a non-empty batch")
    two_headed = bank.kind in TWO_HEADED_KINDS
    b = len(batch)
    losses = []
    for module, opt, (x, extras, targets) in zip(
        bank.modules, bank.opts, _module_batches(bank, batch)
    ):
        outputs, cache = nc.forward(module, x, extras)
        out_grads = []
        loss = 0.0
        for out, target in zip(outputs, targets):
            diff = out - target
            loss += float(np.sum(diff * diff))
            # d(mean loss)/d(out); the 1/2 in the two-headed loss cancels
            # the 2 from the squared norm.
            out_grads.append((diff / b) if two_headed else (2.0 * diff / b))
        loss = (0.5 * loss / b) if two_headed else (loss / b)
        grads = nc.backward(module, cache, out_grads)
        nc.adam_step(opt, module, grads)
        losses.append(loss)
    return losses


def _sq_err(pred: np.ndarray, target: np.ndarray) -> float:
    diff = pred - target
    return float(diff @ diff)


def intrinsic_rewards(bank: CuriosityBank, t: Transition) -> np.ndarray:
    """Per-agent intrinsic rewards for one transition, using the bank's
    current (pre-update) parameters. Always non-negative."""
    kind = bank.kind
    n_agents = bank.n_agents
    if kind is CuriosityKind.NONE:
        return np.zeros(n_agents)

    if kind in TWO_HEADED_KINDS:
        rewards = np.empty(n_agents)
        joint_target = t.next_joint_obs.ravel()
        for n in range(n_agents):
            pred_own, pred_joint = mcm_forward(
                bank.modules[n],
                t.joint_obs[n],
                one_hot_action(t.joint_action[n]),
                *_others_split(t, n),
            )
            own_err = _sq_err(pred_own, t.next_joint_obs[n])
            joint_err = _sq_err(pred_joint, joint_target)
            if kind is CuriosityKind.MCM:
                rewards[n] = own_err + joint_err
            elif kind is CuriosityKind.MCM_INDIV:
                rewards[n] = own_err
            else:
                rewards[n] = joint_err
        return rewards

    if kind is CuriosityKind.ICM_INDIV:
        return np.array(
            [
                _sq_err(
                    nc.forward(bank.modules[n], indiv_input(t, n))[0][0],
                    t.next_joint_obs[n],
                )
                for n in range(n_agents)
            ]
        )

    if kind is CuriosityKind.ICM_JOINT:
        pred = nc.forward(bank.modules[0], joint_input(t))[0][0]
        shared = _sq_err(pred, t.next_joint_obs.ravel())
        return np.full(n_agents, shared)

    if kind is CuriosityKind.ICM_MIN:
        # Every agent m's model is scored on agent n's own transition; agent n
        # receives the smallest of those errors.
        rewards = np.empty(n_agents)
        for n in range(n_agents):
            x = indiv_input(t, n)
            target = t.next_joint_obs[n]
            errors = [
                _sq_err(nc.forward(module, x)[0][0], target)
                for module in bank.modules
            ]
            rewards[n] = min(errors)
        return rewards

    if kind is CuriosityKind.MCM_SEP:
        joint_pred = nc.forward(bank.modules[n_agents], joint_input(t))[0][0]
        joint_err = _sq_err(joint_pred, t.next_joint_obs.ravel())
        rewards = np.empty(n_agents)
        for n in range(n_agents):
            pred = nc.forward(bank.modules[n], indiv_input(t, n))[0][0]
            rewards[n] = _sq_err(pred, t.next_joint_obs[n]) + joint_err
        return rewards

    raise AssertionError(f"unhandled kind {kind}")


def _others_split(t: Transition, n: int) -> tuple[np.ndarray, np.ndarray]:
    mask = [m for m in range(t.joint_obs.shape[0]) if m != n]
    obs = t.joint_obs[mask].ravel()
    actions = np.concatenate([one_hot_action(t.joint_action[m]) for m in mask])
    return obs, actions


def mix_rewards(
    e: float, i: np.ndarray, lam: float, clip_max: float
) -> np.ndarray:
    """Per-agent mixed reward e + lam * min(i, clip_max)."""
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    if clip_max <= 0.0:
        raise ValueError("clip_max must be > 0")
    return e + lam * np.minimum(np.asarray(i, dtype=float), clip_max)


def save_bank(path, bank: CuriosityBank) -> None:
    """Checkpoint every module plus the kind tag in one npz file."""
    arrays: dict[str, np.ndarray] = {
        "format_version": np.array(nc.CHECKPOINT_VERSION),
        "kind": np.array(bank.kind.value),
        "n_agents": np.array(bank.n_agents),
        "obs_dim": np.array(bank.obs_dim),
        "n_modules": np.array(len(bank.modules)),
    }
    for i, module in enumerate(bank.modules):
        arrays.update(nc.network_to_arrays(module, prefix=f"module{i}_"))
    np.savez(path, **arrays)


def load_bank(path, lr: float = 1e-3) -> CuriosityBank:
    with np.load(path) as data:
        if int(data["format_version"]) != nc.CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        arrays = {k: data[k] for k in data.files}
    kind = CuriosityKind(str(arrays["kind"]))
    modules = [
        nc.network_from_arrays(arrays, prefix=f"module{i}_")
        for i in range(int(arrays["n_modules"]))
    ]
    opts = [nc.init_adam(m, lr=lr) for m in modules]
    return CuriosityBank(
        kind, int(arrays["n_agents"]), int(arrays["obs_dim"]), modules, opts
    )
