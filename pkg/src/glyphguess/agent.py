"""The question-asking retrieval agent.

Three blocks over one ParamStore:
  encoder   - token embeddings, QA LSTM, image-feature linear, fusion
              linear, and the history LSTM whose hidden state is the
              dialog state vector s_t;
  decoder   - two-layer LSTM + output projection, initialized from s_t;
  guesser   - optional linear on image features (identity by default).

Candidate ranking, the top-K guess policy, and percentile ranks all key
off squared euclidean distance between embedded features and s_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .params import ParamStore, linear_init, lstm_init, uniform_init
from .rng import Rng
from .world import END, START, ImagePool, SynthImage, WorldSpec


class AgentError(ValueError):
    """Configuration or usage violates an agent contract."""


@dataclass
class AgentConfig:
    embed_dim: int = 32
    qa_hidden: int = 64
    state_dim: int = 64
    decoder_layers: int = 2
    decoder_hidden: int = 64
    max_question_len: int = 8
    top_k: int = 10
    rounds: int = 5
    learnable_guesser: bool = False

    def __post_init__(self):
        if self.decoder_layers != 2:
            raise AgentError("decoder is fixed at two layers")
        if self.decoder_hidden != self.state_dim:
            raise AgentError("decoder hidden size must equal the state size it is initialized from")


def build_params(cfg: AgentConfig, spec: WorldSpec, rng: Rng) -> ParamStore:
    if cfg.state_dim != spec.feature_dim:
        raise AgentError(
            f"state dim {cfg.state_dim} must equal world feature dim {spec.feature_dim}"
        )
    store = ParamStore()
    v = spec.vocab_size
    store.register("embed.table", uniform_init(rng, (v, cfg.embed_dim), cfg.embed_dim), "encoder")
    lstm_init(store, "qa", cfg.embed_dim, cfg.qa_hidden, "encoder", rng)
    linear_init(store, "img", cfg.state_dim, cfg.state_dim, "encoder", rng)
    linear_init(store, "fuse", cfg.qa_hidden + cfg.state_dim, cfg.state_dim, "encoder", rng)
    lstm_init(store, "hist", cfg.state_dim, cfg.state_dim, "encoder", rng)
    lstm_init(store, "dec1", cfg.embed_dim, cfg.decoder_hidden, "decoder", rng)
    lstm_init(store, "dec2", cfg.decoder_hidden, cfg.decoder_hidden, "decoder", rng)
    linear_init(store, "out", cfg.decoder_hidden, v, "decoder", rng)
    if cfg.learnable_guesser:
        # Starts as the identity so enabling it changes nothing until trained.
        store.register("guess.w", np.eye(cfg.state_dim), "guesser")
        store.register("guess.b", np.zeros(cfg.state_dim), "guesser")
    return store


@dataclass
class DialogState:
    """Evolving multimodal context: s_t is ``h``; round == len(transcript)."""

    h: T.Tensor
    c: T.Tensor
    transcript: list[tuple[list[str], list[str]]] = field(default_factory=list)
    guesses: list[int] = field(default_factory=list)
    round: int = 0

    @property
    def s(self) -> np.ndarray:
        return self.h.data


def _qa_encode(tokens: list[str], params: ParamStore, cfg: AgentConfig, spec: WorldSpec) -> tuple[T.Tensor, T.Tensor]:
    h = T.zeros(cfg.qa_hidden)
    c = T.zeros(cfg.qa_hidden)
    table = params["embed.table"]
    wx, wh, b = params["qa.wx"], params["qa.wh"], params["qa.b"]
    for tid in spec.token_ids(tokens):
        x = T.embed(table, tid)
        h, c = T.lstm_step(x, h, c, wx, wh, b)
    return h, c


def _fuse_and_advance(
    f: T.Tensor,
    image_feature: T.Tensor,
    prev_h: T.Tensor,
    prev_c: T.Tensor,
    params: ParamStore,
) -> tuple[T.Tensor, T.Tensor]:
    z_emb = T.linear(params["img.w"], params["img.b"], image_feature)
    h_round = T.linear(params["fuse.w"], params["fuse.b"], T.concat(f, z_emb))
    return T.lstm_step(h_round, prev_h, prev_c, params["hist.wx"], params["hist.wh"], params["hist.b"])


def init_state(caption_tokens: list[str], params: ParamStore, cfg: AgentConfig, spec: WorldSpec) -> DialogState:
    """Caption fed as a round-0 QA pass with an all-zero image feature."""
    f, _ = _qa_encode(caption_tokens, params, cfg, spec)
    s, c = _fuse_and_advance(
        f, T.zeros(cfg.state_dim), T.zeros(cfg.state_dim), T.zeros(cfg.state_dim), params
    )
    return DialogState(h=s, c=c)


def encode_round(
    state: DialogState,
    q_tokens: list[str],
    a_tokens: list[str],
    image: SynthImage,
    params: ParamStore,
    cfg: AgentConfig,
    spec: WorldSpec,
) -> DialogState:
    if state.round >= cfg.rounds:
        raise AgentError(f"round {state.round} exceeds the {cfg.rounds}-round budget")
    f, _ = _qa_encode(list(q_tokens) + list(a_tokens), params, cfg, spec)
    s, c = _fuse_and_advance(f, T.Tensor(image.feature), state.h, state.c, params)
    return DialogState(
        h=s,
        c=c,
        transcript=state.transcript + [(list(q_tokens), list(a_tokens))],
        guesses=state.guesses + [image.id],
        round=state.round + 1,
    )


def _decoder_step(
    prev_token: int,
    h1: T.Tensor,
    c1: T.Tensor,
    h2: T.Tensor,
    c2: T.Tensor,
    params: ParamStore,
) -> tuple[T.Tensor, T.Tensor, T.Tensor, T.Tensor, T.Tensor]:
    x = T.embed(params["embed.table"], prev_token)
    h1, c1 = T.lstm_step(x, h1, c1, params["dec1.wx"], params["dec1.wh"], params["dec1.b"])
    h2, c2 = T.lstm_step(h1, h2, c2, params["dec2.wx"], params["dec2.wh"], params["dec2.b"])
    probs = T.softmax(T.linear(params["out.w"], params["out.b"], h2))
    return probs, h1, c1, h2, c2


def decode_question(
    state: DialogState,
    params: ParamStore,
    cfg: AgentConfig,
    spec: WorldSpec,
    mode: str = "greedy",
    rng: Rng | None = None,
) -> tuple[list[str], float]:
    """Emit tokens until <end>, hard-stopping by forcing <end> at the cap.

    Returns the tokens (always <end>-terminated) and their total log
    probability; greedy breaks ties toward the lowest token id.
    """
    if mode not in ("greedy", "sample"):
        raise AgentError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise AgentError("sampling mode needs an rng")
    end_id = spec.token_id(END)
    with T.no_grad():
        # Both layers start from the dialog state, hidden and cell alike:
        # the deeper coupling makes generation genuinely state-conditional.
        h1 = h2 = c1 = c2 = state.h
        prev = spec.token_id(START)
        tokens: list[str] = []
        logp = 0.0
        for step in range(cfg.max_question_len):
            probs, h1, c1, h2, c2 = _decoder_step(prev, h1, c1, h2, c2, params)
            p = probs.data
            if step == cfg.max_question_len - 1:
                tok = end_id
            elif mode == "greedy":
                tok = int(np.argmax(p))
            else:
                tok = rng.choice_weighted(spec.vocab_size, p)
            logp += float(np.log(p[tok]))
            tokens.append(spec.vocab[tok])
            prev = tok
            if tok == end_id:
                break
    return tokens, logp


def score_question(
    state: DialogState,
    tokens: list[str],
    params: ParamStore,
    cfg: AgentConfig,
    spec: WorldSpec,
) -> T.Tensor:
    """Teacher-forced total log probability of an <end>-terminated question."""
    if not tokens:
        raise AgentError("cannot score an empty question")
    if tokens[-1] != END:
        raise AgentError("questions must end with <end>")
    h1 = h2 = c1 = c2 = state.h
    prev = spec.token_id(START)
    ce_terms = []
    for tok_id in spec.token_ids(tokens):
        probs, h1, c1, h2, c2 = _decoder_step(prev, h1, c1, h2, c2, params)
        ce_terms.append(T.cross_entropy(probs, tok_id))
        prev = tok_id
    return T.neg(T.add_scalars(ce_terms))


def embedded_features(pool: ImagePool, params: ParamStore, cfg: AgentConfig) -> np.ndarray:
    """Guesser-embedded pool features, cached per optimizer version.

    Rows are computed one by one with the same matvec the per-candidate
    graph path uses, so both paths agree bit-for-bit.
    """
    if not cfg.learnable_guesser or "guess.w" not in params:
        return pool.features
    key = (params.uid, params.version)
    cached = pool._embed_cache
    if cached is not None and cached[0] == key:
        return cached[1]
    w, b = params["guess.w"].data, params["guess.b"].data
    rows = np.empty_like(pool.features)
    for i in range(pool.features.shape[0]):
        rows[i] = w @ pool.features[i] + b
    pool._embed_cache = (key, rows)
    return rows


def distances(state: DialogState, pool: ImagePool, params: ParamStore, cfg: AgentConfig) -> np.ndarray:
    """Squared euclidean distance from s_t to every candidate, in pool order."""
    if state.s.shape[0] != pool.features.shape[1]:
        raise AgentError("state dim does not match pool feature dim")
    emb = embedded_features(pool, params, cfg)
    diff = emb - state.s
    return (diff * diff).sum(axis=1)


def distance_graph(state: DialogState, pool: ImagePool, index: int, params: ParamStore, cfg: AgentConfig) -> T.Tensor:
    """Differentiable twin of one ``distances`` entry."""
    z = T.Tensor(pool.features[index])
    if cfg.learnable_guesser and "guess.w" in params:
        z = T.linear(params["guess.w"], params["guess.b"], z)
    return T.sq_dist(z, state.h)


def guess(state: DialogState, pool: ImagePool, params: ParamStore, cfg: AgentConfig) -> int:
    """Argmin-distance image id; ties break toward the lowest id."""
    d = distances(state, pool, params, cfg)
    order = np.lexsort((pool.ids, d))
    return int(pool.ids[order[0]])


def policy_topk(
    state: DialogState,
    pool: ImagePool,
    params: ParamStore,
    cfg: AgentConfig,
    k: int | None = None,
) -> tuple[list[int], np.ndarray]:
    """K nearest candidates and the softmax of their negated distances."""
    k = cfg.top_k if k is None else k
    if k <= 0:
        raise AgentError(f"top-K needs K >= 1, got {k}")
    if k > len(pool):
        raise AgentError(f"K={k} exceeds pool size {len(pool)}")
    d = distances(state, pool, params, cfg)
    order = np.lexsort((pool.ids, d))[:k]
    cand_ids = [int(i) for i in pool.ids[order]]
    probs = T.softmax(T.Tensor(-1.0 * d[order])).data
    return cand_ids, probs


def rank_percentile(
    state: DialogState,
    pool: ImagePool,
    target_id: int,
    params: ParamStore,
    cfg: AgentConfig,
) -> float:
    """Fraction of candidates ranked strictly farther than the target.

    Ties count against the target; a singleton pool scores 1.0 by the
    degenerate-pool convention.
    """
    d = distances(state, pool, params, cfg)
    ti = pool.index_of(target_id)
    m = len(pool)
    if m == 1:
        return 1.0
    return float(np.count_nonzero(d > d[ti])) / (m - 1)
