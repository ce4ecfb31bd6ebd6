"""Learning curriculum: supervised pre-training, policy-improvement RL on
the guessing action space, the alternating schedule, and the two ablation
trainers (RL without alternation; word-level REINFORCE on the decoder).

The RL epochs never hand decoder tensors to their optimizer and never put
decoding on the loss graph, so decoder parameters stay bit-identical
through any number of RL steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .agent import (
    AgentConfig,
    DialogState,
    decode_question,
    distance_graph,
    encode_round,
    guess,
    init_state,
    policy_topk,
    rank_percentile,
    score_question,
)
from .checkpoint import save_checkpoint
from .params import OptimConfig, ParamStore, make_optimizer
from .rng import Rng
from .world import Corpus, GameEnv, ImagePool, World, sample_game


class TrainError(ValueError):
    """Invalid training configuration or data."""


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 0.9
    optimizer: str = "adam"
    learning_rate: float = 0.003
    rl_learning_rate: float | None = None
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 30
    episodes: int = 100
    rollouts: int = 1
    schedule: str = "alt"
    seed: int = 0
    rl_pool_size: int = 100
    execute_improved: bool = True
    eval_games: int = 500
    sl_target_perplexity: float | None = None
    sl_target_pmr: float | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise TrainError(f"discount {self.gamma} must lie strictly inside (0,1)")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise TrainError("alpha and beta must be non-negative and not both zero")
        if self.rollouts < 1:
            raise TrainError("at least one rollout per candidate")
        if self.schedule not in ("alt", "rl-only"):
            raise TrainError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")

    @property
    def rl_lr(self) -> float:
        return self.learning_rate if self.rl_learning_rate is None else self.rl_learning_rate


@dataclass
class TrajectoryStep:
    state: np.ndarray
    question: list[str]
    answer: list[str]
    candidates: list[int]
    action: int
    reward: float


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)
    episode_return: float = 0.0


def discounted_return(rewards: list[float], gamma: float) -> float:
    """Sum of gamma^t * r_t with rounds indexed from t=1."""
    if not rewards:
        raise TrainError("discounted_return needs at least one reward")
    return float(sum(gamma ** (t + 1) * r for t, r in enumerate(rewards)))


# ---------------------------------------------------------------------------
# Supervised epoch
# ---------------------------------------------------------------------------

def sl_epoch(
    params: ParamStore,
    cfg: AgentConfig,
    corpus: Corpus,
    world: World,
    tc: TrainConfig,
    opt,
    rng: Rng,
    pool: ImagePool,
) -> dict[str, float]:
    """One pass of teacher-forced replay; one optimizer step per dialog.

    Loss per dialog: alpha * sum_t(-log p(q_t | s_{t-1}))
                   + beta  * sum_t MSE(target feature, s_t), t = 0..n.
    Round guesses come from the current guesser and feed the encoder.
    """
    if not corpus.dialogs:
        raise TrainError("cannot train on an empty corpus")
    spec = world.spec
    order = list(range(len(corpus.dialogs)))
    rng.shuffle(order)
    tot_nlp = 0.0
    tot_tokens = 0
    tot_mse = 0.0
    n_mse = 0
    tot_joint = 0.0
    for di in order:
        dialog = corpus.dialogs[di]
        target = world.image(dialog.image_id)
        z_tgt = T.Tensor(target.feature)
        state = init_state(dialog.caption, params, cfg, spec)
        nlp_terms = []
        mse_terms = [T.mse(z_tgt, state.h)]
        for q_tokens, a_tokens in dialog.rounds:
            nlp_terms.append(T.neg(score_question(state, q_tokens, params, cfg, spec)))
            tot_tokens += len(q_tokens)
            guessed = guess(state, pool, params, cfg)
            state = encode_round(state, q_tokens, a_tokens, world.image(guessed), params, cfg, spec)
            mse_terms.append(T.mse(z_tgt, state.h))
        nlp_sum = T.add_scalars(nlp_terms)
        mse_sum = T.add_scalars(mse_terms)
        loss = T.add(T.scale(nlp_sum, tc.alpha), T.scale(mse_sum, tc.beta))
        params.zero_grads()
        T.backward(loss)
        opt.step()
        tot_nlp += nlp_sum.item()
        tot_mse += mse_sum.item()
        n_mse += len(mse_terms)
        tot_joint += loss.item()
    return {
        "neg_logp": tot_nlp / max(tot_tokens, 1),
        "mse": tot_mse / n_mse,
        "joint_loss": tot_joint / len(order),
    }


# ---------------------------------------------------------------------------
# Policy improvement on the guessing action space
# ---------------------------------------------------------------------------

def estimate_q(
    state: DialogState,
    q_tokens: list[str],
    a_tokens: list[str],
    candidate_id: int,
    params: ParamStore,
    cfg: AgentConfig,
    env: GameEnv,
    gamma: float,
    rollouts: int = 1,
) -> float:
    """Value of forcing this round's guess to ``candidate_id``.

    Encodes the pending QA with the forced candidate, then plays the game
    out under the current policy (greedy questions, argmin guesses),
    summing gamma^t-discounted percentile rewards from this round to the
    last; averaged over rollouts.
    """
    t_now = state.round + 1
    totals = []
    with T.no_grad():
        for r in range(rollouts):
            renv = env.clone_for_rollout(t_now, candidate_id, r)
            s = encode_round(state, q_tokens, a_tokens, env.world.image(candidate_id), params, cfg, env.world.spec)
            total = gamma**t_now * rank_percentile(s, env.pool, env.target_id, params, cfg)
            for t2 in range(t_now + 1, env.n_rounds + 1):
                q, _ = decode_question(s, params, cfg, env.world.spec, "greedy")
                a = renv.answer(q)
                guessed = guess(s, env.pool, params, cfg)
                s = encode_round(s, q, a, env.world.image(guessed), params, cfg, env.world.spec)
                total += gamma**t2 * rank_percentile(s, env.pool, env.target_id, params, cfg)
            totals.append(total)
    return float(sum(totals) / len(totals))


def select_improved_action(
    state: DialogState,
    q_tokens: list[str],
    a_tokens: list[str],
    candidate_ids: list[int],
    params: ParamStore,
    cfg: AgentConfig,
    env: GameEnv,
    gamma: float,
    rollouts: int = 1,
) -> int:
    """Argmax of estimate_q over the candidates; ties go to the lowest id."""
    if not candidate_ids:
        raise TrainError("no candidates to improve over")
    best_id = None
    best_q = -np.inf
    for cid in sorted(candidate_ids):
        qv = estimate_q(state, q_tokens, a_tokens, cid, params, cfg, env, gamma, rollouts)
        if qv > best_q:
            best_q = qv
            best_id = cid
    return best_id


def rl_episode(
    params: ParamStore,
    cfg: AgentConfig,
    env: GameEnv,
    tc: TrainConfig,
    rng: Rng,
) -> tuple[Trajectory, T.Tensor]:
    """One game under the improvement scheme.

    Per round: sample a question, get the oracle answer, take the top-K
    policy from the pre-round state, pick the lookahead-best candidate,
    add -log pi(best) to the loss, then execute that candidate as the
    round's guess. Decoding stays off the loss graph, so only encoder
    and guesser parameters receive gradient.
    """
    spec = env.world.spec
    state = init_state(env.caption, params, cfg, spec)
    steps: list[TrajectoryStep] = []
    loss_terms: list[T.Tensor] = []
    rewards: list[float] = []
    for _ in range(env.n_rounds):
        q_tokens, _ = decode_question(state, params, cfg, spec, "sample", rng)
        a_tokens = env.answer(q_tokens)
        cand_ids, _ = policy_topk(state, env.pool, params, cfg)
        i_star = select_improved_action(
            state, q_tokens, a_tokens, cand_ids, params, cfg, env, tc.gamma, tc.rollouts
        )
        d_terms = [
            distance_graph(state, env.pool, env.pool.index_of(cid), params, cfg)
            for cid in cand_ids
        ]
        pi = T.softmax(T.neg(T.stack_scalars(d_terms)))
        loss_terms.append(T.cross_entropy(pi, cand_ids.index(i_star)))
        executed = i_star if tc.execute_improved else guess(state, env.pool, params, cfg)
        snapshot = state.s.copy()
        state = encode_round(state, q_tokens, a_tokens, env.world.image(executed), params, cfg, spec)
        reward = rank_percentile(state, env.pool, env.target_id, params, cfg)
        rewards.append(reward)
        steps.append(
            TrajectoryStep(
                state=snapshot,
                question=q_tokens,
                answer=a_tokens,
                candidates=cand_ids,
                action=executed,
                reward=reward,
            )
        )
    loss = T.add_scalars(loss_terms)
    return Trajectory(steps=steps, episode_return=discounted_return(rewards, tc.gamma)), loss


def rl_epoch(
    params: ParamStore,
    cfg: AgentConfig,
    world: World,
    tc: TrainConfig,
    opt,
    rng: Rng,
) -> dict[str, float]:
    returns = []
    finals = []
    losses = []
    pool_size = min(tc.rl_pool_size, len(world.train_ids))
    for _ in range(tc.episodes):
        env = sample_game(world, world.train_ids, pool_size, cfg.rounds, rng)
        traj, loss = rl_episode(params, cfg, env, tc, rng)
        params.zero_grads()
        T.backward(loss)
        opt.step()
        returns.append(traj.episode_return)
        finals.append(traj.steps[-1].reward)
        losses.append(loss.item())
    if not losses:
        return {"mean_return": 0.0, "final_pmr": 0.0, "joint_loss": 0.0}
    return {
        "mean_return": float(np.mean(returns)),
        "final_pmr": float(np.mean(finals)),
        "joint_loss": float(np.mean(losses)),
    }


# ---------------------------------------------------------------------------
# Word-level REINFORCE ablation
# ---------------------------------------------------------------------------

def word_rl_epoch(
    params: ParamStore,
    cfg: AgentConfig,
    world: World,
    tc: TrainConfig,
    opt,
    rng: Rng,
) -> dict[str, float]:
    """REINFORCE on decoder tokens with percentile-improvement rewards.

    Round reward is r_t - r_{t-1} (r_0 from the caption-only state); the
    loss weights each sampled question's log probability by the negated
    discounted return-to-go. Updates encoder and decoder parameters.
    """
    spec = world.spec
    returns = []
    finals = []
    losses = []
    pool_size = min(tc.rl_pool_size, len(world.train_ids))
    for _ in range(tc.episodes):
        env = sample_game(world, world.train_ids, pool_size, cfg.rounds, rng)
        state = init_state(env.caption, params, cfg, spec)
        r_prev = rank_percentile(state, env.pool, env.target_id, params, cfg)
        decision_states: list[DialogState] = []
        questions: list[list[str]] = []
        deltas: list[float] = []
        final_r = 0.0
        for _ in range(env.n_rounds):
            decision_states.append(state)
            q_tokens, _ = decode_question(state, params, cfg, spec, "sample", rng)
            questions.append(q_tokens)
            a_tokens = env.answer(q_tokens)
            guessed = guess(state, env.pool, params, cfg)
            state = encode_round(state, q_tokens, a_tokens, env.world.image(guessed), params, cfg, spec)
            r = rank_percentile(state, env.pool, env.target_id, params, cfg)
            deltas.append(r - r_prev)
            r_prev = r
            final_r = r
        n = len(deltas)
        rtg = [
            sum(tc.gamma ** (t2 + 1) * deltas[t2] for t2 in range(t, n))
            for t in range(n)
        ]
        loss_terms = [
            T.scale(score_question(decision_states[t], questions[t], params, cfg, spec), -rtg[t])
            for t in range(n)
        ]
        loss = T.add_scalars(loss_terms)
        params.zero_grads()
        T.backward(loss)
        opt.step()
        returns.append(discounted_return(deltas, tc.gamma))
        finals.append(final_r)
        losses.append(loss.item())
    if not losses:
        return {"mean_return": 0.0, "final_pmr": 0.0, "joint_loss": 0.0}
    return {
        "mean_return": float(np.mean(returns)),
        "final_pmr": float(np.mean(finals)),
        "joint_loss": float(np.mean(losses)),
    }


# ---------------------------------------------------------------------------
# Run loops: metrics log, checkpoints, schedules
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("epoch", "phase", "joint_loss", "neg_logp", "mse", "mean_return", "final_pmr", "perplexity")


class MetricsLog:
    """CSV metrics with a config-echo comment header; deterministic bytes."""

    def __init__(self, path: str | Path | None, config_echo: dict):
        self.path = Path(path) if path is not None else None
        self.rows: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            header = "# config: " + json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
            self.path.write_text(header + "\n" + ",".join(METRIC_COLUMNS) + "\n")

    @staticmethod
    def _fmt(v) -> str:
        if v is None or v == "":
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def row(self, **kw) -> dict:
        record = {c: kw.get(c) for c in METRIC_COLUMNS}
        self.rows.append(record)
        if self.path is not None:
            line = ",".join(self._fmt(record[c]) for c in METRIC_COLUMNS)
            with self.path.open("a") as fh:
                fh.write(line + "\n")
        return record


def phase_schedule(variant: str, epochs: int) -> list[str]:
    """Fine-tune phases per epoch; alternation starts with RL."""
    if variant == "alt":
        return ["rl" if e % 2 == 1 else "sl" for e in range(1, epochs + 1)]
    if variant == "na":
        return ["rl"] * epochs
    if variant == "word":
        return ["word"] * epochs
    raise TrainError(f"unknown fine-tune variant {variant!r}")


def _checkpoint(out_dir, run_id, epoch, params, world, config_echo, extra=None, optimizer_state=None):
    if out_dir is None:
        return None
    path = Path(out_dir) / f"{run_id}-epoch{epoch:03d}.json"
    save_checkpoint(path, params, world.spec.vocab, config_echo, extra=extra, optimizer_state=optimizer_state)
    return path


def pretrain(
    params: ParamStore,
    cfg: AgentConfig,
    corpora: dict[str, Corpus],
    world: World,
    tc: TrainConfig,
    out_dir: str | Path | None = None,
    run_id: str = "pretrain",
    resume_state: dict | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Supervised pre-training loop with per-epoch checkpoints and metrics.

    Writes the epoch-0 checkpoint before any update. Stops early once both
    validation-perplexity and held-out PMR targets (when configured) are
    met. ``resume_state`` (the ``extra`` + optimizer payload of a
    checkpoint) continues a run bit-exactly.
    """
    from .evaluation import perplexity, pmr_curve

    config_echo = _echo(cfg, tc)
    pool = ImagePool(world, world.train_ids)
    opt = make_optimizer(
        tc.optimizer,
        params.items(),
        OptimConfig(tc.learning_rate, tc.momentum, tc.clip_norm),
        store=params,
    )
    rng = Rng(tc.seed).spawn(1)
    start_epoch = 0
    if resume_state is not None:
        start_epoch = resume_state["extra"]["epoch"]
        rng = Rng.from_state(resume_state["extra"]["rng"])
        if resume_state.get("optimizer"):
            opt.load_state(resume_state["optimizer"])
    log = MetricsLog(Path(out_dir) / f"{run_id}-metrics.csv" if out_dir else None, config_echo)
    if start_epoch == 0:
        _checkpoint(
            out_dir, run_id, 0, params, world, config_echo,
            extra={"epoch": 0, "rng": rng.state()}, optimizer_state=opt.state(),
        )
    history = []
    for epoch in range(start_epoch + 1, tc.epochs + 1):
        metrics = sl_epoch(params, cfg, corpora["train"], world, tc, opt, rng, pool)
        ppl = perplexity(params, cfg, world, corpora["validation"])
        pmr, _ = pmr_curve(params, cfg, world, tc.eval_games, min(len(world.game_ids), 500), seed=tc.seed + 7)
        row = log.row(
            epoch=epoch,
            phase="sl",
            joint_loss=metrics["joint_loss"],
            neg_logp=metrics["neg_logp"],
            mse=metrics["mse"],
            final_pmr=pmr[-1],
            perplexity=ppl,
        )
        history.append(row)
        _checkpoint(
            out_dir, run_id, epoch, params, world, config_echo,
            extra={"epoch": epoch, "rng": rng.state()}, optimizer_state=opt.state(),
        )
        hit_ppl = tc.sl_target_perplexity is None or ppl <= tc.sl_target_perplexity
        hit_pmr = tc.sl_target_pmr is None or pmr[-1] >= tc.sl_target_pmr
        if (tc.sl_target_perplexity is not None or tc.sl_target_pmr is not None) and hit_ppl and hit_pmr:
            break
    return params, history


def finetune_run(
    params: ParamStore,
    cfg: AgentConfig,
    corpora: dict[str, Corpus],
    world: World,
    tc: TrainConfig,
    variant: str,
    out_dir: str | Path | None = None,
    run_id: str | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Fine-tuning dispatcher for the three variants (alt / na / word).

    One persistent optimizer per objective: the RL optimizer only ever
    sees encoder+guesser tensors, the word-RL optimizer encoder+decoder,
    and the SL optimizer everything.
    """
    from .evaluation import perplexity

    run_id = run_id or f"finetune-{variant}"
    config_echo = dict(_echo(cfg, tc), variant=variant)
    phases = phase_schedule(variant, tc.epochs)
    train_pool = ImagePool(world, world.train_ids)
    rng = Rng(tc.seed).spawn(2)

    optimizers = {}

    def opt_for(phase: str):
        if phase not in optimizers:
            if phase == "rl":
                tensors = params.partition_items("encoder", "guesser")
                lr = tc.rl_lr
            elif phase == "word":
                tensors = params.partition_items("encoder", "decoder")
                lr = tc.rl_lr
            else:
                tensors = params.items()
                lr = tc.learning_rate
            optimizers[phase] = make_optimizer(
                tc.optimizer, tensors, OptimConfig(lr, tc.momentum, tc.clip_norm), store=params
            )
        return optimizers[phase]

    log = MetricsLog(Path(out_dir) / f"{run_id}-metrics.csv" if out_dir else None, config_echo)
    _checkpoint(out_dir, run_id, 0, params, world, config_echo, extra={"epoch": 0})
    history = []
    for epoch, phase in enumerate(phases, start=1):
        if phase == "rl":
            metrics = rl_epoch(params, cfg, world, tc, opt_for("rl"), rng)
        elif phase == "word":
            metrics = word_rl_epoch(params, cfg, world, tc, opt_for("word"), rng)
        else:
            metrics = sl_epoch(params, cfg, corpora["train"], world, tc, opt_for("sl"), rng, train_pool)
        ppl = perplexity(params, cfg, world, corpora["validation"])
        row = log.row(epoch=epoch, phase=phase, perplexity=ppl, **metrics)
        history.append(row)
        _checkpoint(out_dir, run_id, epoch, params, world, config_echo, extra={"epoch": epoch})
    return params, history


def alternate_train(
    params: ParamStore,
    cfg: AgentConfig,
    corpora: dict[str, Corpus],
    world: World,
    tc: TrainConfig,
    out_dir: str | Path | None = None,
    run_id: str = "alternate",
) -> tuple[ParamStore, list[dict]]:
    """Epoch-parity curriculum: odd epochs RL, even epochs SL (or RL-only
    when the schedule says so)."""
    variant = "alt" if tc.schedule == "alt" else "na"
    return finetune_run(params, cfg, corpora, world, tc, variant, out_dir, run_id)


def _echo(cfg: AgentConfig, tc: TrainConfig) -> dict:
    return {"agent": vars(cfg).copy(), "train": vars(tc).copy()}
