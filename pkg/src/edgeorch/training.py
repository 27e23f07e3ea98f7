"""Training loop: clipped-surrogate policy optimization with self-imitation.

Rollouts are collected under a frozen behavior ("old") actor; every
`determining_sample_freq`-th episode acts greedily, the rest sample from the
masked distribution. Once the buffer holds `batch_size` transitions the
update runs: trajectories are screened into a high-return buffer, advantages
come from generalized advantage estimation against one-step TD targets,
and `k_epochs` shuffled mini-batch sweeps combine the PPO-clip losses with
rectified self-imitation losses before the old actor is synchronized.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamStore, Tensor
from .env import EnvState, OrchestrationEnv, RewardConfig, action_mask
from .errors import DeadlockError, TrainingDivergedError
from .model import DeploymentPlan
from .nnet import ArchSpec, init_policy_params, policy_distribution, state_value


@dataclass
class Transition:
    state: EnvState
    action: int
    reward: float
    next_state: EnvState | None
    log_prob_old: float
    done: bool

    def __post_init__(self):
        if not math.isfinite(self.log_prob_old):
            raise ValueError("log_prob_old must be finite")


class ReplayBuffer:
    """On-policy buffer; episodes stay contiguous and are cleared per update."""

    def __init__(self):
        self._episodes: list[list[Transition]] = []

    def store_episode(self, transitions: list[Transition]) -> None:
        if transitions:
            self._episodes.append(list(transitions))

    @property
    def count(self) -> int:
        return sum(len(ep) for ep in self._episodes)

    def trajectories(self) -> list[list[Transition]]:
        return self._episodes

    def flat(self) -> list[Transition]:
        return [t for ep in self._episodes for t in ep]

    def clear(self) -> None:
        self._episodes = []


@dataclass
class SilSample:
    state: EnvState
    action: int
    return_: float
    next_state: EnvState | None


class HighReturnBuffer:
    """Keeps positive-return transitions of trajectories that beat the record.

    A trajectory is admitted when its summed discounted returns exceed
    `xi * max_total_return` (compared against the pre-update maximum, which
    then ratchets up). Only transitions with G_t > 0 are stored.
    """

    def __init__(self):
        self.items: list[SilSample] = []
        self.max_total_return: float = 0.0
        self.max_history: list[float] = []

    def consider(self, trajectory: list[Transition], gamma: float, xi: float) -> bool:
        returns = discounted_returns([t.reward for t in trajectory], gamma)
        total = float(sum(returns))
        admitted = total > xi * self.max_total_return
        if admitted:
            self.max_total_return = max(total, self.max_total_return)
            for t, g in zip(trajectory, returns):
                if g > 0:
                    self.items.append(SilSample(t.state, t.action, float(g), t.next_state))
        self.max_history.append(self.max_total_return)
        return admitted

    def sample(self, rng: np.random.Generator, k: int) -> list[SilSample]:
        if not self.items:
            return []
        idx = rng.integers(0, len(self.items), size=min(k, len(self.items)))
        return [self.items[i] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


def discounted_returns(rewards: list[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass
class Hyperparams:
    lr_actor: float = 5e-5
    lr_critic: float = 1e-5
    gamma: float = 0.9
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_weight: float = 0.05
    sil_weight: float = 0.2
    high_return_ratio: float = 0.8
    batch_size: int = 512
    mini_batch_size: int = 64
    k_epochs: int = 8
    determining_sample_freq: int = 10

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.sil_weight < 0:
            raise ValueError("sil_weight must be non-negative")
        if self.mini_batch_size > self.batch_size:
            raise ValueError("mini_batch_size exceeds batch_size")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def collect_rollout(
    env: OrchestrationEnv,
    behavior: ParamStore,
    arch: ArchSpec,
    episode_index: int,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> list[Transition]:
    """One episode under the behavior actor; greedy on schedule, else sampled.

    A deadlock truncates the episode: the last stored transition absorbs the
    penalty reward and is marked terminal.
    """
    state = env.reset()
    greedy = episode_index % hp.determining_sample_freq == 0
    transitions: list[Transition] = []
    done = False
    while not done:
        try:
            mask = action_mask(state)
        except DeadlockError:
            if transitions:
                last = transitions[-1]
                transitions[-1] = Transition(
                    last.state, last.action, last.reward - env.reward_cfg.t_penalty,
                    None, last.log_prob_old, True,
                )
            env.last_episode_total = env.reward_cfg.t_penalty * len(env.scenario.requests)
            break
        probs, logp = policy_distribution(state, behavior, arch)
        if greedy:
            action = int(np.argmax(probs.data))
        else:
            action = int(rng.choice(len(probs.data), p=probs.data))
        next_state, reward, done = env.step(action)
        transitions.append(
            Transition(state, action, float(reward), next_state, float(logp.data[action]), done)
        )
        state = next_state
    return transitions


def compute_gae(
    trajectory: list[Transition],
    value_fn,
    gamma: float,
    gae_lambda: float,
) -> tuple[np.ndarray, np.ndarray]:
    """(advantages, TD targets) for one episode-complete trajectory.

    target_t = r_t + gamma * V(s_{t+1}) with terminal V := 0;
    delta_t = target_t - V(s_t); adv_t = sum_i (gamma * lambda)^i delta_{t+i}.
    """
    n = len(trajectory)
    values = np.array([value_fn(t.state) for t in trajectory])
    next_values = np.zeros(n)
    for i, t in enumerate(trajectory):
        if not t.done and t.next_state is not None:
            next_values[i] = value_fn(t.next_state)
    rewards = np.array([t.reward for t in trajectory])
    targets = rewards + gamma * next_values
    deltas = targets - values
    advantages = np.zeros(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc = deltas[i] + gamma * gae_lambda * acc
        advantages[i] = acc
    return advantages, targets


def ppo_losses(
    minibatch: list[tuple[Transition, float, float]],
    params_new: ParamStore,
    arch: ArchSpec,
    hp: Hyperparams,
) -> tuple[Tensor, Tensor]:
    """(A_loss, C_loss) over (transition, advantage, target) samples.

    ratio = exp(log pi_new - log pi_old); the surrogate takes the pessimistic
    min of the raw and clipped ratio times the advantage, entropy is added
    with weight eta, and the critic fits the frozen TD targets with an MSE.
    """
    a_terms: list[Tensor] = []
    c_terms: list[Tensor] = []
    for transition, advantage, target in minibatch:
        probs, logp = policy_distribution(transition.state, params_new, arch)
        lp_action = ad.pick(logp, transition.action)
        ratio = ad.exp(lp_action - transition.log_prob_old)
        clipped = ad.clamp(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps)
        surrogate = ad.minimum(ad.mul(ratio, advantage), ad.mul(clipped, advantage))
        entropy = -ad.tsum(ad.mul(probs, logp))
        a_terms.append(-surrogate - ad.mul(entropy, hp.entropy_weight))
        v = state_value(transition.state, params_new, arch)
        err = v - target
        c_terms.append(ad.mul(ad.tsum(ad.mul(err, err)), 0.5))
    scale = 1.0 / len(minibatch)
    a_loss = _mean(a_terms, scale)
    c_loss = _mean(c_terms, scale)
    return a_loss, c_loss


def _mean(terms: list[Tensor], scale: float) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return ad.mul(acc, scale)


def build_high_return_buffer(
    buf: ReplayBuffer, hp: Hyperparams, hr_buf: HighReturnBuffer | None = None
) -> HighReturnBuffer:
    """Screen every buffered trajectory into the (persistent) high-return buffer."""
    hr_buf = hr_buf if hr_buf is not None else HighReturnBuffer()
    for trajectory in buf.trajectories():
        hr_buf.consider(trajectory, hp.gamma, hp.high_return_ratio)
    return hr_buf


def sil_losses(
    hr_minibatch: list[SilSample], params_new: ParamStore, arch: ArchSpec
) -> tuple[Tensor, Tensor]:
    """Rectified self-imitation losses; zeros when the minibatch is empty.

    A_sil weights -log pi(a|s) by the detached positive value gap (G - V)+;
    C_sil regresses the critic against the same rectified gap.
    """
    if not hr_minibatch:
        return Tensor(0.0), Tensor(0.0)
    a_terms: list[Tensor] = []
    c_terms: list[Tensor] = []
    for sample in hr_minibatch:
        _, logp = policy_distribution(sample.state, params_new, arch)
        lp_action = ad.pick(logp, sample.action)
        v = state_value(sample.state, params_new, arch)
        gap = ad.rectifier(ad.mul(v - sample.return_, -1.0))  # (G - V)+
        weight = float(gap.item())
        a_terms.append(ad.mul(lp_action, -weight))
        c_terms.append(ad.mul(ad.tsum(ad.mul(gap, gap)), 0.5))
    scale = 1.0 / len(hr_minibatch)
    return _mean(a_terms, scale), _mean(c_terms, scale)


@dataclass
class TrainResult:
    params: ParamStore
    arch: ArchSpec
    log_rows: list[dict]
    best_total: float | None
    episodes: int


def greedy_rollout(
    env: OrchestrationEnv, params: ParamStore, arch: ArchSpec
) -> tuple[DeploymentPlan, float]:
    """Deterministic argmax rollout; returns the final plan and its objective."""
    state = env.reset()
    done = False
    while not done:
        action_mask(state)
        probs, _ = policy_distribution(state, params, arch)
        state, _, done = env.step(int(np.argmax(probs.data)))
    return env.plan.copy(), float(env.last_episode_total)


def train(
    scenario,
    hp: Hyperparams,
    seed: int,
    episodes: int,
    reward: RewardConfig | None = None,
    arch: ArchSpec | None = None,
    rho_target: float = 0.8,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run the full training loop on one scenario.

    The log records one row per episode: objective value of the episode's
    final plan, episode return, and the latest update's loss values. Raises
    TrainingDivergedError with a diagnostic snapshot if any loss goes
    non-finite.
    """
    arch = arch or ArchSpec(n_servers=scenario.n_servers, n_services=scenario.n_services)
    env = OrchestrationEnv(scenario, reward=reward, rho_target=rho_target)
    seeds = np.random.SeedSequence(seed).spawn(3)
    params_new = init_policy_params(arch, seed=seeds[0])
    params_old = params_new.clone()
    rollout_rng = np.random.default_rng(seeds[1])
    update_rng = np.random.default_rng(seeds[2])

    actor_opt = Adam(
        [(n, t) for n, t in params_new.items() if n.startswith("actor.")], lr=hp.lr_actor
    )
    critic_opt = Adam(
        [(n, t) for n, t in params_new.items() if n.startswith("critic.")], lr=hp.lr_critic
    )

    buf = ReplayBuffer()
    hr_buf = HighReturnBuffer()
    log_rows: list[dict] = []
    last_losses = {"A_loss": 0.0, "C_loss": 0.0, "A_sil": 0.0, "C_sil": 0.0}
    best_total: float | None = None
    t_start = time.perf_counter()

    for episode in range(episodes):
        transitions = collect_rollout(env, params_old, arch, episode, hp, rollout_rng)
        buf.store_episode(transitions)
        total = env.last_episode_total
        if total is not None:
            best_total = total if best_total is None else min(best_total, total)
        if buf.count >= hp.batch_size:
            last_losses = _update(
                buf, hr_buf, params_new, params_old, actor_opt, critic_opt,
                arch, hp, update_rng, episode,
            )
        log_rows.append(
            {
                "episode": episode,
                "total_delay": total,
                "episode_return": sum(t.reward for t in transitions),
                "A_loss": last_losses["A_loss"],
                "C_loss": last_losses["C_loss"],
                "A_sil": last_losses["A_sil"],
                "C_sil": last_losses["C_sil"],
                "wallclock_ms": (time.perf_counter() - t_start) * 1000.0,
            }
        )

    if log_path is not None:
        write_training_log(log_rows, log_path)
    return TrainResult(
        params=params_new, arch=arch, log_rows=log_rows, best_total=best_total,
        episodes=episodes,
    )


def _update(
    buf: ReplayBuffer,
    hr_buf: HighReturnBuffer,
    params_new: ParamStore,
    params_old: ParamStore,
    actor_opt: Adam,
    critic_opt: Adam,
    arch: ArchSpec,
    hp: Hyperparams,
    rng: np.random.Generator,
    episode: int,
) -> dict:
    build_high_return_buffer(buf, hp, hr_buf)

    value_cache: dict[int, float] = {}

    def value_fn(state: EnvState) -> float:
        key = id(state)
        if key not in value_cache:
            value_cache[key] = state_value(state, params_new, arch).item()
        return value_cache[key]

    flat: list[Transition] = []
    advantages: list[float] = []
    targets: list[float] = []
    for trajectory in buf.trajectories():
        adv, tgt = compute_gae(trajectory, value_fn, hp.gamma, hp.gae_lambda)
        flat.extend(trajectory)
        advantages.extend(adv.tolist())
        targets.extend(tgt.tolist())
    adv_arr = np.array(advantages)
    adv_arr = (adv_arr - adv_arr.mean()) / (adv_arr.std() + 1e-8)

    losses = {"A_loss": 0.0, "C_loss": 0.0, "A_sil": 0.0, "C_sil": 0.0}
    steps = 0
    for _ in range(hp.k_epochs):
        order = rng.permutation(len(flat))
        for start in range(0, len(order), hp.mini_batch_size):
            idx = order[start : start + hp.mini_batch_size]
            if len(idx) == 0:
                continue
            minibatch = [(flat[i], float(adv_arr[i]), targets[i]) for i in idx]
            a_loss, c_loss = ppo_losses(minibatch, params_new, arch, hp)
            sil_batch = hr_buf.sample(rng, hp.mini_batch_size)
            a_sil, c_sil = sil_losses(sil_batch, params_new, arch)
            a_total = a_loss + ad.mul(a_sil, hp.sil_weight)
            c_total = c_loss + ad.mul(c_sil, hp.sil_weight)
            snapshot = {
                "episode": episode, "A_loss": a_loss.item(), "C_loss": c_loss.item(),
                "A_sil": a_sil.item(), "C_sil": c_sil.item(),
            }
            if not all(math.isfinite(v) for k, v in snapshot.items() if k != "episode"):
                raise TrainingDivergedError("non-finite loss", snapshot)
            params_new.zero_grad()
            a_total.backward()
            c_total.backward()
            actor_opt.step()
            critic_opt.step()
            losses = {k: losses[k] + snapshot[k] for k in losses}
            steps += 1
    params_old.load_state_dict(params_new.state_dict())
    buf.clear()
    return {k: v / max(1, steps) for k, v in losses.items()}


LOG_FIELDS = [
    "episode", "total_delay", "episode_return",
    "A_loss", "C_loss", "A_sil", "C_sil", "wallclock_ms",
]


def write_training_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in LOG_FIELDS})
            fh.flush()
