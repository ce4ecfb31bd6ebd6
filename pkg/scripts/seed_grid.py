"""Multi-seed fine-tune grid: per seed, pretrain once, fine-tune the three
variants from the same checkpoint, evaluate all four models paired, and
summarize the cross-seed comparisons the paper's table makes.

Usage: python scripts/seed_grid.py [--seeds 11 12 13 14 15] [--out runs/grid]
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from glyphguess.agent import AgentConfig, build_params
from glyphguess.evaluation import EvalConfig, ablation_report, trend_flags
from glyphguess.rng import Rng
from glyphguess.training import TrainConfig, finetune_run, pretrain
from glyphguess.world import WorldConfig, build_corpus, generate_world


def run_seed(world, corpora, cfg, seed: int, ft_epochs: int, episodes: int) -> dict:
    t0 = time.time()
    tc_sl = TrainConfig(seed=seed, epochs=30, sl_target_perplexity=3.0, sl_target_pmr=0.85)
    params = build_params(cfg, world.spec, Rng(seed))
    params, sl_hist = pretrain(params, cfg, corpora, world, tc_sl)
    sl_params = params.clone()

    tc_ft = TrainConfig(seed=seed, epochs=ft_epochs, episodes=episodes)
    tuned = {}
    for variant in ("alt", "na", "word"):
        p = sl_params.clone()
        p, _ = finetune_run(p, cfg, corpora, world, tc_ft, variant)
        tuned[variant] = p

    entries = [("sl", sl_params, cfg)] + [
        (f"rl_{v}", tuned[v], cfg) for v in ("alt", "na", "word")
    ]
    ec = EvalConfig(n_games=500, pool_size=500, win_games=300, win_pool_size=20, seed=seed)
    reports, _ = ablation_report(entries, world, corpora["test"], ec)
    by_tag = {r.tag: r for r in reports}
    return {
        "seed": seed,
        "sl_epochs": len(sl_hist),
        "seconds": round(time.time() - t0, 1),
        "flags": trend_flags(reports),
        "models": {
            tag: {
                "pmr5": r.pmr_per_round[-1],
                "pmr_curve": r.pmr_per_round,
                "perplexity": r.perplexity,
                "win_rate": r.win_rate,
            }
            for tag, r in by_tag.items()
        },
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[11, 12, 13, 14, 15])
    parser.add_argument("--out", default="runs/grid")
    parser.add_argument("--ft-epochs", type=int, default=20)
    parser.add_argument("--episodes", type=int, default=64)
    parser.add_argument("--world-seed", type=int, default=1234)
    parser.add_argument("--n-dialogs", type=int, default=1200)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(WorldConfig(), seed=args.world_seed)
    corpora = build_corpus(world, args.n_dialogs, 5, (0.8, 0.1, 0.1), seed=args.world_seed)
    cfg = AgentConfig()

    results = []
    for seed in args.seeds:
        result = run_seed(world, corpora, cfg, seed, args.ft_epochs, args.episodes)
        results.append(result)
        print(json.dumps(result, indent=2))
        (out / "grid.json").write_text(json.dumps(results, indent=2))

    n = len(results)
    gain = sum(
        1
        for r in results
        if r["models"]["rl_alt"]["pmr5"] >= r["models"]["sl"]["pmr5"] + 0.01
    )
    ppl_na = sum(
        1
        for r in results
        if r["models"]["rl_na"]["perplexity"] >= 1.5 * r["models"]["rl_alt"]["perplexity"]
        and r["models"]["rl_alt"]["perplexity"] <= 1.3 * r["models"]["sl"]["perplexity"]
    )
    ppl_word = sum(
        1
        for r in results
        if r["models"]["rl_word"]["perplexity"] > r["models"]["rl_alt"]["perplexity"]
    )
    print(f"retrieval gain (alt >= sl+0.01): {gain}/{n}")
    print(f"alternation protects language:  {ppl_na}/{n}")
    print(f"word-level RL degrades language: {ppl_word}/{n}")


if __name__ == "__main__":
    main()
