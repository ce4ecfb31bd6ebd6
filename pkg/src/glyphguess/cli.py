"""Single entry point for the full pipeline.

Subcommands: datagen | pretrain | finetune | eval | play | serve | plot.
Every command resolves one config (file + flag overrides), echoes it into
everything it writes, and is reproducible from (config, seed) alone.

Exit codes: 0 success, 2 config error, 3 data/checkpoint error,
4 environment error.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

from .agent import AgentConfig, AgentError, build_params
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import EvalConfig, EvalError, ablation_report, render_curves_svg
from .rng import Rng
from .training import TrainConfig, TrainError, finetune_run, pretrain
from .world import (
    World,
    WorldConfig,
    WorldError,
    build_corpus,
    generate_world,
    load_corpus,
    load_world,
    save_world,
)

CONFIG_ENV_VAR = "GLYPHGUESS_CONFIG"


class ConfigError(Exception):
    exit_code = 2


class DataError(Exception):
    exit_code = 3


class EnvError(Exception):
    exit_code = 4


_SECTIONS = {
    "world": WorldConfig,
    "agent": AgentConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

_DEFAULT_TOP = {
    "seed": 1234,
    "corpus": {"n_dialogs": 2000, "rounds": 5, "fractions": [0.8, 0.1, 0.1]},
    "serve": {"host": "127.0.0.1", "port": 8008, "show_guess": False},
}


def default_config() -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in _DEFAULT_TOP.items()}
    for name, cls in _SECTIONS.items():
        out[name] = {f.name: f.default for f in dc_fields(cls) if f.name != "schema"}
    return out


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    """Resolved config: defaults <- file <- flags. Unknown keys are errors."""
    config = default_config()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unparseable config {p}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        for key, value in user.items():
            if key not in config:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(config[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                for sub, sv in value.items():
                    if sub not in config[key]:
                        raise ConfigError(f"unknown config key {key}.{sub}")
                    config[key][sub] = sv
            else:
                config[key] = value
    if seed_override is not None:
        config["seed"] = seed_override
    for name in _SECTIONS:
        _build_section(config, name)
    return config


def _build_section(config: dict, name: str):
    cls = _SECTIONS[name]
    try:
        return cls(**config[name])
    except (TypeError, ValueError, AgentError, TrainError, WorldError) as exc:
        raise ConfigError(f"invalid [{name}] config: {exc}") from exc


def _echo(config: dict) -> dict:
    return json.loads(json.dumps(config, sort_keys=True))


def _load_world(data_dir: str) -> World:
    path = Path(data_dir) / "world.json"
    try:
        return load_world(path)
    except WorldError as exc:
        raise DataError(str(exc)) from exc


def _load_corpora(data_dir: str) -> dict:
    out = {}
    for split in ("train", "validation", "test"):
        path = Path(data_dir) / f"{split}.jsonl"
        if not path.exists():
            raise DataError(f"corpus split missing: {path}")
        out[split] = load_corpus(path, split)
    return out


def _load_agent_checkpoint(path: str, world: World):
    try:
        doc = load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    if doc["vocab"] != world.spec.vocab:
        raise DataError(f"checkpoint {path} was trained on a different vocabulary")
    agent_echo = doc["config"].get("agent")
    if not agent_echo:
        raise DataError(f"checkpoint {path} carries no agent config echo")
    cfg = AgentConfig(**agent_echo)
    return doc["params"], cfg, doc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_datagen(args, config: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wc = _build_section(config, "world")
    seed = int(config["seed"])
    world = generate_world(wc, seed)
    save_world(out / "world.json", world, config_echo=_echo(config))
    cc = config["corpus"]
    try:
        build_corpus(
            world,
            int(cc["n_dialogs"]),
            int(cc["rounds"]),
            tuple(cc["fractions"]),
            seed,
            out_dir=out,
        )
    except WorldError as exc:
        raise ConfigError(str(exc)) from exc
    (out / "manifest.json").write_text(
        json.dumps({"config": _echo(config), "seed": seed}, sort_keys=True, separators=(",", ":")) + "\n"
    )
    print(f"wrote world ({len(world.images)} images) and corpus to {out}")
    return 0


def cmd_pretrain(args, config: dict) -> int:
    world = _load_world(args.data)
    corpora = _load_corpora(args.data)
    cfg = _build_section(config, "agent")
    tc = _build_section(config, "train")
    out = Path(args.out)
    resume_state = None
    if args.resume:
        doc = load_checkpoint(args.resume)
        params = doc["params"]
        resume_state = {"extra": doc["extra"], "optimizer": doc["optimizer"]}
        if "epoch" not in doc["extra"] or "rng" not in doc["extra"]:
            raise DataError(f"checkpoint {args.resume} carries no trainer state to resume from")
    else:
        try:
            params = build_params(cfg, world.spec, Rng(int(config["seed"])))
        except AgentError as exc:
            raise ConfigError(str(exc)) from exc
    params, history = pretrain(
        params, cfg, corpora, world, tc, out_dir=out, run_id="pretrain", resume_state=resume_state
    )
    print(f"pretrained {len(history)} epochs; checkpoints in {out}")
    if history:
        print(f"final: perplexity={history[-1]['perplexity']:.4f} pmr={history[-1]['final_pmr']:.4f}")
    return 0


def cmd_finetune(args, config: dict) -> int:
    if args.variant not in ("alt", "na", "word"):
        raise ConfigError(f"unknown variant {args.variant!r}")
    world = _load_world(args.data)
    corpora = _load_corpora(args.data)
    tc = _build_section(config, "train")
    params, cfg, _ = _load_agent_checkpoint(args.checkpoint, world)
    out = Path(args.out)
    params, history = finetune_run(
        params, cfg, corpora, world, tc, args.variant, out_dir=out, run_id=f"finetune-{args.variant}"
    )
    print(f"fine-tuned variant={args.variant} for {len(history)} epochs; checkpoints in {out}")
    return 0


def _parse_tagged(pairs: list[str]) -> list[tuple[str, str]]:
    out = []
    for raw in pairs:
        if "=" not in raw:
            raise ConfigError(f"expected tag=path, got {raw!r}")
        tag, path = raw.split("=", 1)
        out.append((tag, path))
    return out


def cmd_eval(args, config: dict) -> int:
    world = _load_world(args.data)
    corpora = _load_corpora(args.data)
    ec = _build_section(config, "eval")
    if ec.seed == 0:
        ec.seed = int(config["seed"])
    entries = []
    for tag, path in _parse_tagged(args.checkpoint):
        params, cfg, _ = _load_agent_checkpoint(path, world)
        entries.append((tag, params, cfg))
    out = Path(args.out)
    try:
        reports, _ = ablation_report(entries, world, corpora["test"], ec, out_dir=out)
    except EvalError as exc:
        raise DataError(str(exc)) from exc
    if args.svg:
        render_curves_svg(reports, out / "curves.svg")
    for r in reports:
        print(
            f"{r.tag}: final_pmr={r.pmr_per_round[-1]:.4f} perplexity={r.perplexity:.4f} "
            f"win_rate={r.win_rate:.3f}"
        )
    return 0


def cmd_play(args, config: dict) -> int:
    from .evaluation import GameRecord, RoundRecord
    from .world import sample_game

    world = _load_world(args.data)
    params, cfg, _ = _load_agent_checkpoint(args.checkpoint, world)
    from .agent import decode_question, encode_round, guess, init_state, rank_percentile

    spec = world.spec
    seed = int(config["seed"]) if args.seed is not None else None
    rng = Rng(seed if seed is not None else int.from_bytes(os.urandom(4), "little"))
    env = sample_game(world, world.game_ids, min(20, len(world.game_ids)), cfg.rounds, rng)
    target = world.image(env.target_id)
    print("you are the answerer; the agent guesses this image:")
    for attr, value in target.attributes.items():
        print(f"  {attr:>11}: {value}")
    print("caption given to the agent:", " ".join(t for t in env.caption if not t.startswith("<")))
    state = init_state(env.caption, params, cfg, spec)
    rounds = []
    try:
        for t in range(1, env.n_rounds + 1):
            q, _ = decode_question(state, params, cfg, spec, "greedy")
            print(f"\n[round {t}/{env.n_rounds}] agent asks: {' '.join(tok for tok in q if not tok.startswith('<'))}")
            answer = input("your answer> ").strip().lower()
            a_tokens = spec.tokenize(answer) or ["unknown"]
            guessed = guess(state, env.pool, params, cfg)
            state = encode_round(state, q, a_tokens, world.image(guessed), params, cfg, spec)
            r = rank_percentile(state, env.pool, env.target_id, params, cfg)
            rounds.append(RoundRecord(q, a_tokens, guessed, r))
        final = guess(state, env.pool, params, cfg)
        win = final == env.target_id
        print(f"\nagent's final guess: image {final} -> {'WIN' if win else 'MISS'} (target {env.target_id})")
        rating = {}
        for crit in ("fluency", "relevance", "comprehension", "diversity"):
            while True:
                raw = input(f"rate {crit} (1-5)> ").strip()
                if raw.isdigit() and 1 <= int(raw) <= 5:
                    rating[crit] = int(raw)
                    break
                print("please enter an integer from 1 to 5")
    except EOFError:
        print("\n(game aborted)")
        return 0
    record = GameRecord(
        target_id=env.target_id,
        pool_ids=[int(i) for i in env.pool.ids],
        caption=list(env.caption),
        rounds=rounds,
        final_guess_id=final,
        win=win,
    )
    log_path = Path(args.log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("a") as fh:
        entry = json.loads(record.to_json())
        entry["rating"] = rating
        fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"logged game to {log_path}")
    return 0


def cmd_serve(args, config: dict) -> int:
    world = _load_world(args.data)
    models = {}
    for tag, path in _parse_tagged(args.model):
        params, cfg, _ = _load_agent_checkpoint(path, world)
        models[tag] = (params, cfg)
    if not models:
        raise ConfigError("serve needs at least one --model tag=path")
    host = args.host or config["serve"]["host"]
    port = int(args.port or config["serve"]["port"])
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise EnvError(f"cannot bind {host}:{port}: {exc}") from exc
    finally:
        probe.close()
    from .service import create_app

    ui_dir = args.ui if args.ui and Path(args.ui).is_dir() else None
    app = create_app(
        world,
        models,
        store_path=args.store,
        show_guess=bool(config["serve"].get("show_guess", False)),
        ui_dir=ui_dir,
    )
    import uvicorn

    print(f"serving {sorted(models)} on http://{host}:{port} (store: {args.store})")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_plot(args, config: dict) -> int:
    path = Path(args.curves)
    if not path.exists():
        raise DataError(f"curves file not found: {path}")
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#") or line.startswith("round,"):
            continue
        rnd, tag, pmr, stderr = line.split(",")
        rows.append((int(rnd), tag, float(pmr), float(stderr)))
    if not rows:
        raise DataError(f"no data rows in {path}")
    from .evaluation import EvalReport

    tags = []
    for _, tag, _, _ in rows:
        if tag not in tags:
            tags.append(tag)
    reports = []
    for tag in tags:
        pts = [(r, p, s) for r, t, p, s in rows if t == tag]
        pts.sort()
        reports.append(
            EvalReport(tag, [p for _, p, _ in pts], [s for _, _, s in pts], 1.0, 0.0, 0, 0)
        )
    render_curves_svg(reports, args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphguess",
        description="goal-oriented retrieval dialog on a synthetic glyph world",
    )
    parser.add_argument("--config", default=None, help=f"config JSON (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate world.json and corpus JSONL files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="supervised pre-training")
    p.add_argument("--data", required=True, help="datagen output dir")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("finetune", help="RL fine-tuning variants")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="SL checkpoint to start from")
    p.add_argument("--variant", required=True, choices=["alt", "na", "word"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="paired evaluation of checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", required=True, help="tag=path (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="also render curves.svg")

    p = sub.add_parser("play", help="terminal human-vs-agent game")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", default="games-log.jsonl")

    p = sub.add_parser("serve", help="HTTP game service (+static UI if built)")
    p.add_argument("--data", required=True)
    p.add_argument("--model", action="append", required=True, help="tag=path (repeatable)")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--store", default="sessions.db")
    p.add_argument("--ui", default=None, help="static UI bundle directory")

    p = sub.add_parser("plot", help="render curves.csv to an SVG chart")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)

    return parser


COMMANDS = {
    "datagen": cmd_datagen,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "play": cmd_play,
    "serve": cmd_serve,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.seed)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EnvError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return 4
    except (TrainError, AgentError, WorldError, EvalError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
