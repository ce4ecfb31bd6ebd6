"""Evaluation surface: self-play games, percentile-rank curves, perplexity,
win rate, and paired side-by-side reports for checkpoint comparisons.

Every model in one report sees the identical sequence of (pool, target,
caption) setups and the same oracle streams, so metric differences are
attributable to parameters alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .agent import (
    AgentConfig,
    decode_question,
    encode_round,
    guess,
    init_state,
    rank_percentile,
    score_question,
)
from .params import ParamStore
from .rng import Rng
from .world import Corpus, GameEnv, ImagePool, World


class EvalError(ValueError):
    """Invalid evaluation request."""


@dataclass
class EvalConfig:
    n_games: int = 500
    pool_size: int = 500
    win_games: int = 500
    win_pool_size: int = 20
    seed: int = 0


@dataclass
class RoundRecord:
    question: list[str]
    answer: list[str]
    guess_id: int
    percentile: float


@dataclass
class GameRecord:
    target_id: int
    pool_ids: list[int]
    caption: list[str]
    rounds: list[RoundRecord]
    final_guess_id: int
    win: bool
    tag: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "tag": self.tag,
                "target_id": self.target_id,
                "pool_ids": self.pool_ids,
                "caption": self.caption,
                "rounds": [
                    {"q": r.question, "a": r.answer, "guess": r.guess_id, "r": r.percentile}
                    for r in self.rounds
                ],
                "final_guess_id": self.final_guess_id,
                "win": self.win,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass
class EvalReport:
    tag: str
    pmr_per_round: list[float]
    pmr_stderr: list[float]
    perplexity: float
    win_rate: float
    n_games: int
    seed: int
    config_echo: dict = field(default_factory=dict)


def play_game(
    params: ParamStore,
    cfg: AgentConfig,
    env: GameEnv,
    mode: str = "greedy",
    rng: Rng | None = None,
) -> GameRecord:
    """One full episode; the final guess uses the fully updated state."""
    spec = env.world.spec
    state = init_state(env.caption, params, cfg, spec)
    rounds: list[RoundRecord] = []
    with T.no_grad():
        for _ in range(env.n_rounds):
            q_tokens, _ = decode_question(state, params, cfg, spec, mode, rng)
            a_tokens = env.answer(q_tokens)
            guessed = guess(state, env.pool, params, cfg)
            state = encode_round(state, q_tokens, a_tokens, env.world.image(guessed), params, cfg, spec)
            r = rank_percentile(state, env.pool, env.target_id, params, cfg)
            rounds.append(RoundRecord(q_tokens, a_tokens, guessed, r))
        final = guess(state, env.pool, params, cfg)
    return GameRecord(
        target_id=env.target_id,
        pool_ids=[int(i) for i in env.pool.ids],
        caption=list(env.caption),
        rounds=rounds,
        final_guess_id=final,
        win=final == env.target_id,
    )


@dataclass
class GameSetup:
    pool_ids: list[int]
    target_id: int

    def env(self, world: World, n_rounds: int, rng: Rng) -> GameEnv:
        pool = ImagePool(world, self.pool_ids)
        return GameEnv(world, pool, self.target_id, n_rounds, rng)


def sample_game_setups(world: World, n_games: int, pool_size: int, seed: int) -> list[GameSetup]:
    """Shared (pool, target) draws so several models can be evaluated paired."""
    if n_games < 1:
        raise EvalError("need at least one game")
    ids = world.game_ids
    if pool_size > len(ids):
        raise EvalError(f"pool size {pool_size} exceeds {len(ids)} held-out images")
    setups = []
    for g in range(n_games):
        rng = Rng(seed).spawn(g)
        picked = rng.choice(len(ids), size=pool_size)
        pool_ids = [ids[int(i)] for i in picked]
        target = pool_ids[rng.integers(0, pool_size)]
        setups.append(GameSetup(pool_ids=pool_ids, target_id=target))
    return setups


def play_setups(
    params: ParamStore,
    cfg: AgentConfig,
    world: World,
    setups: list[GameSetup],
    seed: int,
    tag: str = "",
) -> list[GameRecord]:
    records = []
    for g, setup in enumerate(setups):
        env = setup.env(world, cfg.rounds, Rng(seed).spawn(g, 1))
        rec = play_game(params, cfg, env)
        rec.tag = tag
        records.append(rec)
    return records


def pmr_from_records(records: list[GameRecord]) -> tuple[list[float], list[float]]:
    """Per-round mean percentile with standard error across games."""
    n_rounds = len(records[0].rounds)
    means, stderrs = [], []
    for t in range(n_rounds):
        vals = np.array([rec.rounds[t].percentile for rec in records])
        means.append(float(vals.mean()))
        stderrs.append(float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0)
    return means, stderrs


def pmr_curve(
    params: ParamStore,
    cfg: AgentConfig,
    world: World,
    n_games: int,
    pool_size: int,
    seed: int,
) -> tuple[list[float], list[float]]:
    setups = sample_game_setups(world, n_games, pool_size, seed)
    records = play_setups(params, cfg, world, setups, seed)
    return pmr_from_records(records)


def perplexity(params: ParamStore, cfg: AgentConfig, world: World, corpus: Corpus) -> float:
    """exp(mean per-token negative log likelihood) over reference questions,
    teacher-forced; replay guesses come from the current guesser over the
    train database, mirroring supervised training."""
    if not corpus.dialogs:
        raise EvalError("perplexity over an empty corpus")
    spec = world.spec
    pool = ImagePool(world, world.train_ids)
    total_nlp = 0.0
    total_tokens = 0
    with T.no_grad():
        for dialog in corpus.dialogs:
            state = init_state(dialog.caption, params, cfg, spec)
            for q_tokens, a_tokens in dialog.rounds:
                total_nlp -= score_question(state, q_tokens, params, cfg, spec).item()
                total_tokens += len(q_tokens)
                guessed = guess(state, pool, params, cfg)
                state = encode_round(state, q_tokens, a_tokens, world.image(guessed), params, cfg, spec)
    return float(np.exp(total_nlp / total_tokens))


def win_rate(
    params: ParamStore,
    cfg: AgentConfig,
    world: World,
    pool_size: int = 20,
    n_games: int = 500,
    seed: int = 0,
) -> float:
    setups = sample_game_setups(world, n_games, pool_size, seed)
    records = play_setups(params, cfg, world, setups, seed)
    return float(np.mean([rec.win for rec in records]))


# ---------------------------------------------------------------------------
# Paired side-by-side report
# ---------------------------------------------------------------------------

def ablation_report(
    checkpoints: list[tuple[str, ParamStore, AgentConfig]],
    world: World,
    corpus: Corpus,
    eval_cfg: EvalConfig,
    out_dir: str | Path | None = None,
) -> tuple[list[EvalReport], list[GameRecord]]:
    """Evaluate every checkpoint on identical games; optionally write
    report.csv, curves.csv, and games.jsonl."""
    if not checkpoints:
        raise EvalError("no checkpoints to report on")
    for tag, params, cfg in checkpoints:
        if cfg.state_dim != world.spec.feature_dim:
            raise EvalError(f"checkpoint {tag!r} dims do not match this world")
    pool_size = min(eval_cfg.pool_size, len(world.game_ids))
    setups = sample_game_setups(world, eval_cfg.n_games, pool_size, eval_cfg.seed)
    win_setups = sample_game_setups(
        world, eval_cfg.win_games, eval_cfg.win_pool_size, eval_cfg.seed + 1
    )
    reports = []
    all_records: list[GameRecord] = []
    for tag, params, cfg in checkpoints:
        records = play_setups(params, cfg, world, setups, eval_cfg.seed, tag=tag)
        all_records.extend(records)
        means, stderrs = pmr_from_records(records)
        win_records = play_setups(params, cfg, world, win_setups, eval_cfg.seed + 1, tag=tag)
        reports.append(
            EvalReport(
                tag=tag,
                pmr_per_round=means,
                pmr_stderr=stderrs,
                perplexity=perplexity(params, cfg, world, corpus),
                win_rate=float(np.mean([r.win for r in win_records])),
                n_games=eval_cfg.n_games,
                seed=eval_cfg.seed,
                config_echo=vars(eval_cfg).copy(),
            )
        )
    if out_dir is not None:
        write_report_files(Path(out_dir), reports, all_records, eval_cfg)
    return reports, all_records


def trend_flags(reports: list[EvalReport]) -> dict[str, bool]:
    """Directional comparisons between the standard four variants.

    Expects tags sl / rl_alt / rl_na / rl_word; missing tags simply drop
    their comparisons.
    """
    by_tag = {r.tag: r for r in reports}
    flags = {}
    sl = by_tag.get("sl")
    alt = by_tag.get("rl_alt")
    na = by_tag.get("rl_na")
    word = by_tag.get("rl_word")
    if sl is not None:
        for name, rep in (("rl_alt", alt), ("rl_na", na), ("rl_word", word)):
            if rep is not None:
                flags[f"pmr_{name}_ge_sl"] = rep.pmr_per_round[-1] >= sl.pmr_per_round[-1]
    if na is not None and alt is not None:
        flags["ppl_na_gt_alt"] = na.perplexity > alt.perplexity
    if word is not None and alt is not None:
        flags["ppl_word_gt_alt"] = word.perplexity > alt.perplexity
    return flags


def _fmt(v: float) -> str:
    return repr(float(v))


def write_report_files(
    out_dir: Path,
    reports: list[EvalReport],
    records: list[GameRecord],
    eval_cfg: EvalConfig,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = "# config: " + json.dumps(vars(eval_cfg), sort_keys=True, separators=(",", ":"))

    lines = [echo, "tag,final_pmr,perplexity,win_rate,n_games,seed"]
    for r in reports:
        lines.append(
            f"{r.tag},{_fmt(r.pmr_per_round[-1])},{_fmt(r.perplexity)},{_fmt(r.win_rate)},{r.n_games},{r.seed}"
        )
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")

    lines = [echo, "round,tag,pmr,stderr"]
    for r in reports:
        for t, (m, s) in enumerate(zip(r.pmr_per_round, r.pmr_stderr), start=1):
            lines.append(f"{t},{r.tag},{_fmt(m)},{_fmt(s)}")
    (out_dir / "curves.csv").write_text("\n".join(lines) + "\n")

    with (out_dir / "games.jsonl").open("w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def render_curves_svg(reports: list[EvalReport], path: str | Path) -> None:
    """Minimal line chart of the per-round percentile means."""
    width, height, margin = 480.0, 320.0, 48.0
    n_rounds = max(len(r.pmr_per_round) for r in reports)
    palette = ["#2c6fd6", "#d8343b", "#2f9e44", "#8648bd", "#e8702a", "#444444"]

    def sx(t: float) -> float:
        return margin + (t - 1) / max(n_rounds - 1, 1) * (width - 2 * margin)

    def sy(v: float) -> float:
        return height - margin - v * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:g} {height:g}">',
        f'<rect width="{width:g}" height="{height:g}" fill="#ffffff"/>',
        f'<line x1="{margin:g}" y1="{sy(0):g}" x2="{width - margin:g}" y2="{sy(0):g}" stroke="#999"/>',
        f'<line x1="{margin:g}" y1="{sy(0):g}" x2="{margin:g}" y2="{sy(1):g}" stroke="#999"/>',
        f'<text x="{margin:g}" y="{height - 10:g}" font-size="11">round 1..{n_rounds}</text>',
        '<text x="6" y="16" font-size="11">mean percentile rank</text>',
    ]
    for i, r in enumerate(reports):
        color = palette[i % len(palette)]
        pts = " ".join(
            f"{sx(t + 1):.2f},{sy(v):.2f}" for t, v in enumerate(r.pmr_per_round)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for t, v in enumerate(r.pmr_per_round):
            parts.append(
                f'<circle cx="{sx(t + 1):.2f}" cy="{sy(v):.2f}" r="3" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{width - margin + 4:g}" y="{sy(r.pmr_per_round[-1]):.2f}" font-size="10" fill="{color}">{r.tag}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("".join(parts))
