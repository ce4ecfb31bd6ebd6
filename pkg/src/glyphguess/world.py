"""Synthetic attribute world: glyph images, captions, oracle answerer, corpus.

Each image is a bundle of categorical attributes. Its feature vector is a
frozen random projection of the concatenated one-hot encoding plus Gaussian
noise, standing in for fixed perceptual features; nothing downstream ever
retrains the projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng

START, END, PAD, UNK = "<start>", "<end>", "<pad>", "<unk>"
SPECIALS = (START, END, PAD, UNK)
FILLERS = ("a", "what", "image", "unknown", "is")

DEFAULT_SCHEMA: list[tuple[str, list[str]]] = [
    ("shape", ["circle", "square", "triangle", "star", "hexagon", "diamond"]),
    ("color", ["red", "green", "blue", "yellow", "purple", "orange"]),
    ("size", ["small", "medium", "large"]),
    ("fill", ["solid", "hollow", "striped"]),
    ("count", ["1", "2", "3", "4"]),
    ("background", ["white", "gray", "black"]),
]


class WorldError(ValueError):
    """Invalid world configuration or corpus request."""


@dataclass
class WorldConfig:
    n_train_images: int = 2000
    n_game_images: int = 500
    feature_dim: int = 64
    feature_noise: float = 0.05
    answer_noise: float = 0.0
    caption_mentions: int = 1
    schema: list[tuple[str, list[str]]] = field(
        default_factory=lambda: [(a, list(v)) for a, v in DEFAULT_SCHEMA]
    )


@dataclass
class WorldSpec:
    """Attribute schema, vocabulary, and the frozen feature projection."""

    schema: list[tuple[str, list[str]]]
    feature_noise: float
    answer_noise: float
    vocab: list[str]
    projection: np.ndarray  # (feature_dim, raw_dim)

    def __post_init__(self):
        if not self.schema:
            raise WorldError("attribute schema is empty")
        if len(set(self.vocab)) != len(self.vocab):
            raise WorldError("vocabulary tokens are not unique")
        self.attributes = [a for a, _ in self.schema]
        self.values = {a: list(v) for a, v in self.schema}
        self.raw_dim = sum(len(v) for _, v in self.schema)
        self.feature_dim = self.projection.shape[0]
        self._tok2id = {t: i for i, t in enumerate(self.vocab)}
        offsets = {}
        off = 0
        for a, vals in self.schema:
            offsets[a] = off
            off += len(vals)
        self._block_offset = offsets

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token_id(self, token: str) -> int:
        return self._tok2id.get(token, self._tok2id[UNK])

    def token_ids(self, tokens: list[str]) -> list[int]:
        return [self.token_id(t) for t in tokens]

    def tokenize(self, text: str) -> list[str]:
        """Whitespace + lowercase; unknown words survive as raw tokens and
        map to <unk> at id time."""
        return [w for w in text.lower().split() if w]

    def raw_encoding(self, attributes: dict[str, str]) -> np.ndarray:
        x = np.zeros(self.raw_dim)
        for a, vals in self.schema:
            x[self._block_offset[a] + vals.index(attributes[a])] = 1.0
        return x


@dataclass
class SynthImage:
    id: int
    attributes: dict[str, str]
    feature: np.ndarray
    caption: list[str]


@dataclass
class World:
    spec: WorldSpec
    images: list[SynthImage]
    train_ids: list[int]
    game_ids: list[int]

    def image(self, image_id: int) -> SynthImage:
        return self.images[image_id]

    def features(self, ids: list[int]) -> np.ndarray:
        return np.stack([self.images[i].feature for i in ids])


def build_vocab(schema: list[tuple[str, list[str]]]) -> list[str]:
    vocab = list(SPECIALS) + list(FILLERS) + [a for a, _ in schema]
    for _, vals in schema:
        vocab.extend(vals)
    if len(set(vocab)) != len(vocab):
        raise WorldError("schema induces duplicate vocabulary tokens")
    return vocab


def caption_of(image: SynthImage, spec: WorldSpec, rng: Rng, k_mentions: int = 2) -> list[str]:
    """Template caption naming k distinct true attribute values, <end>-terminated."""
    if k_mentions > len(spec.attributes):
        raise WorldError(f"cannot mention {k_mentions} of {len(spec.attributes)} attributes")
    picked = sorted(rng.choice(len(spec.attributes), size=k_mentions).tolist())
    values = [image.attributes[spec.attributes[i]] for i in picked]
    return ["a"] + values + ["image", END]


def generate_world(config: WorldConfig, seed: int) -> World:
    if not config.schema:
        raise WorldError("attribute schema is empty")
    if config.n_train_images + config.n_game_images < 2:
        raise WorldError("need at least 2 images in the database")
    vocab = build_vocab(config.schema)
    rng = Rng(seed)
    raw_dim = sum(len(v) for _, v in config.schema)
    projection = rng.normal(0.0, 1.0 / np.sqrt(raw_dim), (config.feature_dim, raw_dim))
    spec = WorldSpec(
        schema=[(a, list(v)) for a, v in config.schema],
        feature_noise=config.feature_noise,
        answer_noise=config.answer_noise,
        vocab=vocab,
        projection=projection,
    )
    n_total = config.n_train_images + config.n_game_images
    images = []
    for i in range(n_total):
        attrs = {a: vals[rng.integers(0, len(vals))] for a, vals in config.schema}
        noise = rng.normal(0.0, config.feature_noise, config.feature_dim) if config.feature_noise > 0 else 0.0
        feature = projection @ spec.raw_encoding(attrs) + noise
        img = SynthImage(id=i, attributes=attrs, feature=feature, caption=[])
        img.caption = caption_of(img, spec, rng, config.caption_mentions)
        images.append(img)
    train_ids = list(range(config.n_train_images))
    game_ids = list(range(config.n_train_images, n_total))
    return World(spec=spec, images=images, train_ids=train_ids, game_ids=game_ids)


def oracle_answer(image: SynthImage, question_tokens: list[str], spec: WorldSpec, rng: Rng) -> list[str]:
    """Rule-based answerer: "what <attribute>" gets the image's value
    (noise flips it to another value of the same attribute), anything
    else gets "unknown"."""
    content = [t for t in question_tokens if t not in SPECIALS]
    if len(content) >= 2 and content[0] == "what" and content[1] in spec.values:
        attr = content[1]
        value = image.attributes[attr]
        if spec.answer_noise > 0 and rng.random() < spec.answer_noise:
            others = [v for v in spec.values[attr] if v != value]
            if others:
                value = others[rng.integers(0, len(others))]
        return [value]
    return ["unknown"]


def scripted_dialog(
    image: SynthImage,
    caption: list[str],
    n_rounds: int,
    spec: WorldSpec,
    rng: Rng,
) -> list[tuple[list[str], list[str]]]:
    """Scripted questioner: asks n distinct attributes the caption omits."""
    mentioned = {
        a for a in spec.attributes if image.attributes[a] in caption
    }
    unmentioned = [a for a in spec.attributes if a not in mentioned]
    if n_rounds > len(unmentioned):
        raise WorldError(
            f"{n_rounds} rounds requested but only {len(unmentioned)} unmentioned attributes"
        )
    order = list(unmentioned)
    rng.shuffle(order)
    rounds = []
    for attr in order[:n_rounds]:
        q = ["what", attr, END]
        a = oracle_answer(image, q, spec, rng)
        rounds.append((q, a))
    return rounds


@dataclass
class Dialog:
    image_id: int
    caption: list[str]
    rounds: list[tuple[list[str], list[str]]]


@dataclass
class Corpus:
    split: str
    dialogs: list[Dialog]


def build_corpus(
    world: World,
    n_dialogs: int,
    n_rounds: int,
    split_fractions: tuple[float, float, float],
    seed: int,
    out_dir: str | Path | None = None,
) -> dict[str, Corpus]:
    """Scripted train/validation/test dialogs over the train images.

    With answer noise 0 every stored answer re-validates against the
    oracle. Files are one JSON object per line, written deterministically.
    """
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise WorldError(f"split fractions {split_fractions} do not sum to 1")
    rng = Rng(seed)
    spec = world.spec
    n_attrs = len(spec.attributes)
    k_mentions = min(2, n_attrs - n_rounds) if n_rounds < n_attrs else 0
    if k_mentions < 0:
        raise WorldError(f"{n_rounds} rounds cannot fit a {n_attrs}-attribute schema")
    dialogs = []
    for i in range(n_dialogs):
        image = world.images[world.train_ids[rng.integers(0, len(world.train_ids))]]
        caption = caption_of(image, spec, rng, k_mentions) if k_mentions > 0 else ["a", "image", END]
        rounds = scripted_dialog(image, caption, n_rounds, spec, rng)
        dialogs.append(Dialog(image_id=image.id, caption=caption, rounds=rounds))

    n_train = int(round(split_fractions[0] * n_dialogs))
    n_val = int(round(split_fractions[1] * n_dialogs))
    corpora = {
        "train": Corpus("train", dialogs[:n_train]),
        "validation": Corpus("validation", dialogs[n_train : n_train + n_val]),
        "test": Corpus("test", dialogs[n_train + n_val :]),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split, corpus in corpora.items():
            write_corpus(out / f"{split}.jsonl", corpus)
    return corpora


def write_corpus(path: str | Path, corpus: Corpus) -> None:
    lines = []
    for d in corpus.dialogs:
        lines.append(
            json.dumps(
                {
                    "image_id": d.image_id,
                    "caption": d.caption,
                    "rounds": [{"q": q, "a": a} for q, a in d.rounds],
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_corpus(path: str | Path, split: str | None = None) -> Corpus:
    path = Path(path)
    dialogs = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        dialogs.append(
            Dialog(
                image_id=obj["image_id"],
                caption=list(obj["caption"]),
                rounds=[(list(r["q"]), list(r["a"])) for r in obj["rounds"]],
            )
        )
    return Corpus(split or path.stem, dialogs)


def save_world(path: str | Path, world: World, config_echo: dict | None = None) -> None:
    doc = {
        "format_version": "glyphguess-world-1",
        "schema": [[a, v] for a, v in world.spec.schema],
        "feature_noise": world.spec.feature_noise,
        "answer_noise": world.spec.answer_noise,
        "vocab": world.spec.vocab,
        "projection": world.spec.projection.tolist(),
        "train_ids": world.train_ids,
        "game_ids": world.game_ids,
        "images": [
            {
                "id": img.id,
                "attributes": img.attributes,
                "feature": img.feature.tolist(),
                "caption": img.caption,
            }
            for img in world.images
        ],
    }
    if config_echo is not None:
        doc["config"] = config_echo
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_world(path: str | Path) -> World:
    path = Path(path)
    if not path.exists():
        raise WorldError(f"world file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format_version") != "glyphguess-world-1":
        raise WorldError(f"unsupported world file {path}")
    spec = WorldSpec(
        schema=[(a, list(v)) for a, v in doc["schema"]],
        feature_noise=doc["feature_noise"],
        answer_noise=doc["answer_noise"],
        vocab=list(doc["vocab"]),
        projection=np.asarray(doc["projection"], dtype=np.float64),
    )
    images = [
        SynthImage(
            id=obj["id"],
            attributes=dict(obj["attributes"]),
            feature=np.asarray(obj["feature"], dtype=np.float64),
            caption=list(obj["caption"]),
        )
        for obj in doc["images"]
    ]
    return World(spec=spec, images=images, train_ids=list(doc["train_ids"]), game_ids=list(doc["game_ids"]))


class ImagePool:
    """A candidate set: sorted ids plus their stacked feature rows."""

    def __init__(self, world: World, ids: list[int]):
        if not ids:
            raise WorldError("empty candidate pool")
        self.ids = np.asarray(sorted(ids), dtype=np.int64)
        self.features = world.features(self.ids.tolist())
        self.world = world
        self._embed_cache: tuple[tuple[int, int], np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, image_id: int) -> int:
        idx = int(np.searchsorted(self.ids, image_id))
        if idx >= len(self.ids) or self.ids[idx] != image_id:
            raise WorldError(f"image {image_id} not in pool")
        return idx


class GameEnv:
    """One guessing game: a pool, a hidden target, and the rule answerer."""

    def __init__(self, world: World, pool: ImagePool, target_id: int, n_rounds: int, rng: Rng, caption: list[str] | None = None):
        self.world = world
        self.pool = pool
        self.target_id = target_id
        self.target = world.image(target_id)
        self.n_rounds = n_rounds
        self.rng = rng
        self.caption = caption if caption is not None else list(self.target.caption)

    def answer(self, question_tokens: list[str]) -> list[str]:
        return oracle_answer(self.target, question_tokens, self.world.spec, self.rng)

    def clone_for_rollout(self, *key: int) -> "GameEnv":
        """Same game, independent answer-noise stream for lookahead rollouts."""
        return GameEnv(self.world, self.pool, self.target_id, self.n_rounds, self.rng.spawn(*key), self.caption)


def sample_game(world: World, ids: list[int], pool_size: int, n_rounds: int, rng: Rng) -> GameEnv:
    """Uniform pool + target from the given id set."""
    if pool_size > len(ids):
        raise WorldError(f"pool size {pool_size} exceeds {len(ids)} available images")
    picked = rng.choice(len(ids), size=pool_size)
    pool_ids = [ids[int(i)] for i in picked]
    target_id = pool_ids[rng.integers(0, pool_size)]
    pool = ImagePool(world, pool_ids)
    return GameEnv(world, pool, target_id, n_rounds, rng)
