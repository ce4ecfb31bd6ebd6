"""HTTP backend for live human-vs-agent guessing games.

The human plays the answerer: they see the target glyph and the agent's
questions, type answers, and rate the conversation after the reveal.
Sessions live in an on-disk sqlite store so a restart loses nothing; all
mutations are serialized behind one lock (desk scale).
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import tensor as T
from .agent import (
    AgentConfig,
    DialogState,
    decode_question,
    encode_round,
    guess,
    init_state,
    rank_percentile,
)
from .glyphs import render_glyph
from .params import ParamStore
from .rng import Rng
from .world import SPECIALS, ImagePool, World, oracle_answer

POOL_SIZE = 20


class ServiceError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


@dataclass
class ModelEntry:
    tag: str
    params: ParamStore
    cfg: AgentConfig


class SessionStore:
    """sqlite-backed session + choice storage, safe under threaded access."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, model TEXT, status TEXT,"
                " created TEXT, data TEXT)"
            )
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS choices (seed INTEGER, model TEXT, count INTEGER,"
                " PRIMARY KEY (seed, model))"
            )
            self._conn.commit()

    def save(self, session: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO sessions (id, model, status, created, data) VALUES (?,?,?,?,?)",
                (
                    session["id"],
                    session["model"],
                    session["status"],
                    session["created"],
                    json.dumps(session, sort_keys=True),
                ),
            )
            self._conn.commit()

    def load(self, session_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT data FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
        if row is None:
            raise ServiceError(404, f"unknown session {session_id}")
        return json.loads(row[0])

    def finished(self, model: str | None = None, since: str | None = None) -> list[dict]:
        query = "SELECT data FROM sessions WHERE status = 'finished'"
        args: list = []
        if model:
            query += " AND model = ?"
            args.append(model)
        if since:
            query += " AND created >= ?"
            args.append(since)
        query += " ORDER BY created, id"
        with self._lock:
            rows = self._conn.execute(query, args).fetchall()
        return [json.loads(r[0]) for r in rows]

    def record_choice(self, seed: int, model: str) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO choices (seed, model, count) VALUES (?,?,1)"
                " ON CONFLICT(seed, model) DO UPDATE SET count = count + 1",
                (seed, model),
            )
            self._conn.commit()

    def choice_counts(self) -> dict[str, int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT model, SUM(count) FROM choices GROUP BY model"
            ).fetchall()
        return {model: int(count) for model, count in rows}

    def close(self) -> None:
        with self._lock:
            self._conn.close()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _display(tokens: list[str]) -> str:
    return " ".join(t for t in tokens if t not in SPECIALS)


class GameService:
    """Session state machine behind the HTTP surface; usable directly."""

    def __init__(
        self,
        world: World,
        models: dict[str, tuple[ParamStore, AgentConfig]],
        store: SessionStore,
        show_guess: bool = False,
        rounds: int | None = None,
    ):
        if not models:
            raise ValueError("the service needs at least one model")
        self.world = world
        self.models = {tag: ModelEntry(tag, p, c) for tag, (p, c) in models.items()}
        self.store = store
        self.show_guess = show_guess
        self._lock = threading.RLock()
        self._compare_cache: dict[int, dict] = {}

    # -- session helpers ---------------------------------------------------

    def _entry(self, tag: str) -> ModelEntry:
        if tag not in self.models:
            raise ServiceError(404, f"unknown model tag {tag!r}")
        return self.models[tag]

    def _state_of(self, session: dict) -> DialogState:
        return DialogState(
            h=T.Tensor(np.asarray(session["state_h"])),
            c=T.Tensor(np.asarray(session["state_c"])),
            transcript=[(r["q"], r["a"]) for r in session["transcript"]],
            guesses=list(session["guesses"]),
            round=len(session["transcript"]),
        )

    def _pool(self, session: dict) -> ImagePool:
        return ImagePool(self.world, session["pool_ids"])

    def snapshot(self, session: dict) -> dict:
        out = {
            "id": session["id"],
            "model": session["model"],
            "status": session["status"],
            "round": len(session["transcript"]),
            "rounds_total": session["rounds_total"],
            "caption": _display(session["caption"]),
            "target": {
                "id": session["target_id"],
                "svg": render_glyph(self.world.image(session["target_id"])),
            },
            "pool": [
                {"id": i, "svg": render_glyph(self.world.image(i))} for i in session["pool_ids"]
            ],
            "transcript": [
                {"q": _display(r["q"]), "a": _display(r["a"])} for r in session["transcript"]
            ],
            "question": _display(session["pending_question"]) if session["pending_question"] else None,
        }
        if self.show_guess and session["guesses"]:
            out["current_guess_id"] = session["guesses"][-1]
        if session["status"] in ("awaiting_rating", "finished"):
            out["reveal"] = {"guess_id": session["final_guess_id"], "win": session["win"]}
        if session["rating"] is not None:
            out["rating"] = session["rating"]
        return out

    # -- operations ----------------------------------------------------------

    def create_game(self, model_tag: str, seed: int | None = None) -> dict:
        entry = self._entry(model_tag)
        with self._lock:
            if seed is None:
                seed = int.from_bytes(uuid.uuid4().bytes[:4], "little")
            rng = Rng(seed).spawn(900)
            game_ids = self.world.game_ids
            picked = rng.choice(len(game_ids), size=min(POOL_SIZE, len(game_ids)))
            pool_ids = sorted(game_ids[int(i)] for i in picked)
            target_id = pool_ids[rng.integers(0, len(pool_ids))]
            caption = list(self.world.image(target_id).caption)
            state = init_state(caption, entry.params, entry.cfg, self.world.spec)
            question, _ = decode_question(state, entry.params, entry.cfg, self.world.spec, "greedy")
            session = {
                "id": uuid.uuid4().hex,
                "model": model_tag,
                "status": "active",
                "seed": seed,
                "rounds_total": entry.cfg.rounds,
                "target_id": target_id,
                "pool_ids": pool_ids,
                "caption": caption,
                "pending_question": question,
                "transcript": [],
                "guesses": [],
                "percentiles": [],
                "state_h": state.h.data.tolist(),
                "state_c": state.c.data.tolist(),
                "final_guess_id": None,
                "win": None,
                "rating": None,
                "created": _now(),
            }
            self.store.save(session)
            return self.snapshot(session)

    def get_game(self, session_id: str) -> dict:
        return self.snapshot(self.store.load(session_id))

    def submit_answer(self, session_id: str, text: str) -> dict:
        with self._lock:
            session = self.store.load(session_id)
            if session["status"] != "active":
                raise ServiceError(409, f"session is {session['status']}, not active")
            entry = self._entry(session["model"])
            spec = self.world.spec
            a_tokens = spec.tokenize(text)
            if not a_tokens:
                a_tokens = ["unknown"]
            q_tokens = session["pending_question"]
            state = self._state_of(session)
            pool = self._pool(session)
            guessed = guess(state, pool, entry.params, entry.cfg)
            state = encode_round(state, q_tokens, a_tokens, self.world.image(guessed), entry.params, entry.cfg, spec)
            r = rank_percentile(state, pool, session["target_id"], entry.params, entry.cfg)
            session["transcript"].append({"q": q_tokens, "a": a_tokens})
            session["guesses"].append(guessed)
            session["percentiles"].append(r)
            session["state_h"] = state.h.data.tolist()
            session["state_c"] = state.c.data.tolist()
            if len(session["transcript"]) < session["rounds_total"]:
                question, _ = decode_question(state, entry.params, entry.cfg, spec, "greedy")
                session["pending_question"] = question
                self.store.save(session)
                out = {"question": _display(question), "round": len(session["transcript"])}
                if self.show_guess:
                    out["current_guess_id"] = guessed
                return out
            final = guess(state, pool, entry.params, entry.cfg)
            session["pending_question"] = None
            session["final_guess_id"] = final
            session["win"] = bool(final == session["target_id"])
            session["status"] = "awaiting_rating"
            self.store.save(session)
            return {"reveal": {"guess_id": final, "win": session["win"]}}

    def submit_rating(self, session_id: str, rating: dict) -> None:
        for key in ("fluency", "relevance", "comprehension", "diversity"):
            value = rating.get(key)
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise ServiceError(400, f"rating {key} must be an integer in 1..5")
        with self._lock:
            session = self.store.load(session_id)
            if session["status"] == "finished":
                raise ServiceError(409, "rating already submitted")
            if session["status"] != "awaiting_rating":
                raise ServiceError(409, f"session is {session['status']}, not awaiting_rating")
            session["rating"] = {
                k: rating[k] for k in ("fluency", "relevance", "comprehension", "diversity")
            }
            session["status"] = "finished"
            self.store.save(session)

    def export_lines(self, model: str | None = None, since: str | None = None):
        for session in self.store.finished(model=model, since=since):
            yield json.dumps(
                {
                    "session_id": session["id"],
                    "model": session["model"],
                    "target_id": session["target_id"],
                    "pool_ids": session["pool_ids"],
                    "caption": session["caption"],
                    "rounds": [
                        {
                            "q": r["q"],
                            "a": r["a"],
                            "guess": g,
                            "r": p,
                        }
                        for r, g, p in zip(
                            session["transcript"], session["guesses"], session["percentiles"]
                        )
                    ],
                    "final_guess_id": session["final_guess_id"],
                    "win": session["win"],
                    "rating": session["rating"],
                    "created": session["created"],
                },
                sort_keys=True,
                separators=(",", ":"),
            )

    # -- comparative relevance ------------------------------------------------

    def compare_bundle(self, seed: int) -> dict:
        if len(self.models) < 3:
            raise ServiceError(404, "comparison needs at least three loaded models")
        with self._lock:
            if seed in self._compare_cache:
                return self._compare_cache[seed]["bundle"]
            tags = sorted(self.models)[:3]
            rng = Rng(seed).spawn(901)
            order = list(tags)
            rng.shuffle(order)
            keys = ["A", "B", "C"]
            mapping = dict(zip(keys, order))
            game_rng = Rng(seed).spawn(902)
            game_ids = self.world.game_ids
            picked = game_rng.choice(len(game_ids), size=min(POOL_SIZE, len(game_ids)))
            pool_ids = sorted(game_ids[int(i)] for i in picked)
            target_id = pool_ids[game_rng.integers(0, len(pool_ids))]
            caption = list(self.world.image(target_id).caption)
            pool = ImagePool(self.world, pool_ids)
            spec = self.world.spec
            transcripts = []
            for key in keys:
                entry = self.models[mapping[key]]
                state = init_state(caption, entry.params, entry.cfg, spec)
                rounds = []
                answer_rng = Rng(seed).spawn(903)
                for _ in range(entry.cfg.rounds):
                    q, _ = decode_question(state, entry.params, entry.cfg, spec, "greedy")
                    a = oracle_answer(self.world.image(target_id), q, spec, answer_rng)
                    guessed = guess(state, pool, entry.params, entry.cfg)
                    state = encode_round(state, q, a, self.world.image(guessed), entry.params, entry.cfg, spec)
                    rounds.append({"q": _display(q), "a": _display(a)})
                transcripts.append({"key": key, "rounds": rounds})
            bundle = {"seed": seed, "caption": _display(caption), "transcripts": transcripts}
            self._compare_cache[seed] = {"bundle": bundle, "mapping": mapping}
            return bundle

    def compare_choice(self, seed: int, key: str) -> None:
        with self._lock:
            if seed not in self._compare_cache:
                self.compare_bundle(seed)
            mapping = self._compare_cache[seed]["mapping"]
        if key not in mapping:
            raise ServiceError(400, f"choice must be one of {sorted(mapping)}")
        self.store.record_choice(seed, mapping[key])


# ---------------------------------------------------------------------------
# FastAPI surface
# ---------------------------------------------------------------------------

try:
    from pydantic import BaseModel
except ImportError:  # pragma: no cover - fastapi always brings pydantic
    BaseModel = object


class CreateBody(BaseModel):
    model: str
    seed: int | None = None


class AnswerBody(BaseModel):
    text: str


class RatingBody(BaseModel):
    fluency: int
    relevance: int
    comprehension: int
    diversity: int


class ChoiceBody(BaseModel):
    model: str


def create_app(
    world: World,
    models: dict[str, tuple[ParamStore, AgentConfig]],
    store_path: str | Path,
    show_guess: bool = False,
    ui_dir: str | Path | None = None,
):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, PlainTextResponse, Response

    service = GameService(world, models, SessionStore(store_path), show_guess=show_guess)
    app = FastAPI(title="glyphguess game service")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    @app.get("/health")
    def health():
        return {"models": sorted(service.models), "status": "ok"}

    @app.post("/games", status_code=201)
    def create_game(body: CreateBody):
        return service.create_game(body.model, body.seed)

    @app.get("/games/{session_id}")
    def get_game(session_id: str):
        return service.get_game(session_id)

    @app.post("/games/{session_id}/answer")
    def submit_answer(session_id: str, body: AnswerBody):
        return service.submit_answer(session_id, body.text)

    @app.post("/games/{session_id}/rating", status_code=204)
    def submit_rating(session_id: str, body: RatingBody):
        service.submit_rating(session_id, body.model_dump())
        return Response(status_code=204)

    @app.get("/compare/{seed}")
    def compare(seed: int):
        return service.compare_bundle(seed)

    @app.post("/compare/{seed}/choice", status_code=204)
    def compare_choice(seed: int, body: ChoiceBody):
        service.compare_choice(seed, body.model)
        return Response(status_code=204)

    @app.get("/export")
    def export(model: str | None = None, since: str | None = None):
        text = "\n".join(service.export_lines(model=model, since=since))
        return PlainTextResponse(text + "\n" if text else "", media_type="application/x-ndjson")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
