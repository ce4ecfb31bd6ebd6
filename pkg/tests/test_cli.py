import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from glyphguess.checkpoint import load_checkpoint, partition_payload
from glyphguess.cli import CONFIG_ENV_VAR, default_config, load_config, main


def small_config(tmp_path, **overrides) -> Path:
    config = {
        "seed": 77,
        "world": {"n_train_images": 30, "n_game_images": 12, "feature_dim": 16},
        "corpus": {"n_dialogs": 20, "rounds": 3, "fractions": [0.7, 0.15, 0.15]},
        "agent": {
            "embed_dim": 8,
            "qa_hidden": 12,
            "state_dim": 16,
            "decoder_hidden": 16,
            "max_question_len": 6,
            "top_k": 5,
            "rounds": 3,
        },
        "train": {"epochs": 2, "episodes": 2, "rl_pool_size": 8, "eval_games": 3, "seed": 77},
        "eval": {"n_games": 3, "pool_size": 8, "win_games": 2, "win_pool_size": 4, "seed": 5},
    }
    for key, value in overrides.items():
        config.setdefault(key, {}).update(value) if isinstance(value, dict) else config.update({key: value})
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared datagen + pretrain run for the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli-pipeline")
    cfg_path = small_config(root)
    data = root / "data"
    runs = root / "runs"
    assert main(["--config", str(cfg_path), "datagen", "--out", str(data)]) == 0
    assert main([
        "--config", str(cfg_path), "pretrain", "--data", str(data), "--out", str(runs / "sl"),
    ]) == 0
    ckpt = runs / "sl" / "pretrain-epoch002.json"
    assert ckpt.exists()
    return {"root": root, "config": cfg_path, "data": data, "runs": runs, "sl": ckpt}


class TestConfig:
    def test_defaults_complete(self):
        config = default_config()
        assert config["seed"] == 1234
        assert config["agent"]["top_k"] == 10
        assert config["train"]["beta"] == 10.0

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"worlds": {}}))
        assert main(["--config", str(bad), "datagen", "--out", str(tmp_path / "o")]) == 2
        bad.write_text(json.dumps({"train": {"velocity": 3}}))
        assert main(["--config", str(bad), "datagen", "--out", str(tmp_path / "o")]) == 2

    def test_invalid_section_value(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"gamma": 1.5}}))
        assert main(["--config", str(bad), "datagen", "--out", str(tmp_path / "o")]) == 2

    def test_env_var_default(self, tmp_path, monkeypatch):
        cfg = small_config(tmp_path)
        monkeypatch.setenv(CONFIG_ENV_VAR, str(cfg))
        loaded = load_config(None)
        assert loaded["seed"] == 77

    def test_seed_flag_wins(self, tmp_path):
        cfg = small_config(tmp_path)
        loaded = load_config(str(cfg), seed_override=123)
        assert loaded["seed"] == 123

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "none.json"), "datagen", "--out", str(tmp_path)]) == 2


class TestDatagen:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = small_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["--config", str(cfg), "datagen", "--out", str(a)]) == 0
        assert main(["--config", str(cfg), "datagen", "--out", str(b)]) == 0
        for name in ("world.json", "train.jsonl", "validation.jsonl", "test.jsonl", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_manifest_embeds_config_and_seed(self, tmp_path):
        cfg = small_config(tmp_path)
        out = tmp_path / "out"
        main(["--config", str(cfg), "datagen", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 77
        assert manifest["config"]["corpus"]["n_dialogs"] == 20

    def test_creates_missing_dir(self, tmp_path):
        cfg = small_config(tmp_path)
        nested = tmp_path / "deep" / "nested" / "dir"
        assert main(["--config", str(cfg), "datagen", "--out", str(nested)]) == 0
        assert (nested / "world.json").exists()

    def test_corpus_revalidates_against_oracle(self, tmp_path):
        from glyphguess.rng import Rng
        from glyphguess.world import load_corpus, load_world, oracle_answer

        cfg = small_config(tmp_path)
        out = tmp_path / "out"
        main(["--config", str(cfg), "datagen", "--out", str(out)])
        world = load_world(out / "world.json")
        for split in ("train", "validation", "test"):
            for d in load_corpus(out / f"{split}.jsonl").dialogs:
                img = world.image(d.image_id)
                for q, a in d.rounds:
                    assert oracle_answer(img, q, world.spec, Rng(0)) == a


class TestPretrain:
    def test_epochs_zero_initial_checkpoint_only(self, tmp_path, pipeline):
        cfg = small_config(tmp_path, train={"epochs": 0, "episodes": 1, "eval_games": 2, "seed": 77})
        out = tmp_path / "sl0"
        assert main(["--config", str(cfg), "pretrain", "--data", str(pipeline["data"]), "--out", str(out)]) == 0
        ckpts = sorted(p.name for p in out.glob("pretrain-epoch*.json"))
        assert ckpts == ["pretrain-epoch000.json"]

    def test_metrics_rows_equal_epochs(self, pipeline):
        lines = (pipeline["runs"] / "sl" / "pretrain-metrics.csv").read_text().splitlines()
        assert lines[0].startswith("# config:")
        assert len(lines) == 2 + 2  # comment + header + 2 epochs

    def test_missing_data_dir_exit_3(self, tmp_path):
        cfg = small_config(tmp_path)
        assert main(["--config", str(cfg), "pretrain", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3

    def test_resume_matches_uninterrupted(self, tmp_path, pipeline):
        cfg3 = small_config(tmp_path, train={"epochs": 3, "episodes": 1, "eval_games": 3, "seed": 77})
        full = tmp_path / "full"
        assert main(["--config", str(cfg3), "pretrain", "--data", str(pipeline["data"]), "--out", str(full)]) == 0

        cfg1 = small_config(tmp_path / "c1", train={"epochs": 1, "episodes": 1, "eval_games": 3, "seed": 77})
        part = tmp_path / "part"
        assert main(["--config", str(cfg1), "pretrain", "--data", str(pipeline["data"]), "--out", str(part)]) == 0
        assert main([
            "--config", str(cfg3), "pretrain", "--data", str(pipeline["data"]), "--out", str(part),
            "--resume", str(part / "pretrain-epoch001.json"),
        ]) == 0
        for epoch in (2, 3):
            assert (full / f"pretrain-epoch{epoch:03d}.json").read_bytes() == (
                part / f"pretrain-epoch{epoch:03d}.json"
            ).read_bytes()


class TestFinetune:
    def test_variants_and_decoder_freeze(self, tmp_path, pipeline):
        cfg = pipeline["config"]
        for variant in ("alt", "na", "word"):
            out = tmp_path / variant
            assert main([
                "--config", str(cfg), "finetune", "--data", str(pipeline["data"]),
                "--checkpoint", str(pipeline["sl"]), "--variant", variant, "--out", str(out),
            ]) == 0
            metrics = (out / f"finetune-{variant}-metrics.csv").read_text().splitlines()
            phases = [row.split(",")[1] for row in metrics[2:]]
            if variant == "alt":
                assert phases == ["rl", "sl"]
            elif variant == "na":
                assert phases == ["rl", "rl"]
            else:
                assert phases == ["word", "word"]
        # Decoder partition is frozen through every RL phase of alt and na.
        for variant, frozen_epochs in (("alt", [(0, 1)]), ("na", [(0, 1), (1, 2)])):
            for before, after in frozen_epochs:
                a = partition_payload(tmp_path / variant / f"finetune-{variant}-epoch{before:03d}.json", "decoder")
                b = partition_payload(tmp_path / variant / f"finetune-{variant}-epoch{after:03d}.json", "decoder")
                assert a == b

    def test_missing_checkpoint_exit_3(self, tmp_path, pipeline):
        assert main([
            "--config", str(pipeline["config"]), "finetune", "--data", str(pipeline["data"]),
            "--checkpoint", str(tmp_path / "missing.json"), "--variant", "alt", "--out", str(tmp_path / "o"),
        ]) == 3


class TestEval:
    def test_report_and_rerun_identical(self, tmp_path, pipeline):
        cfg = pipeline["config"]
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        for out in (out1, out2):
            assert main([
                "--config", str(cfg), "eval", "--data", str(pipeline["data"]),
                "--checkpoint", f"sl={pipeline['sl']}", "--out", str(out), "--svg",
            ]) == 0
        for name in ("report.csv", "curves.csv", "games.jsonl", "curves.svg"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        report = (out1 / "report.csv").read_text().splitlines()
        assert len(report) == 3
        svg = (out1 / "curves.svg").read_text()
        assert svg.count("<circle") == 3  # rounds x tags = 3 x 1

    def test_two_checkpoints_two_rows(self, tmp_path, pipeline):
        out = tmp_path / "e3"
        assert main([
            "--config", str(pipeline["config"]), "eval", "--data", str(pipeline["data"]),
            "--checkpoint", f"a={pipeline['sl']}", "--checkpoint", f"b={pipeline['sl']}",
            "--out", str(out),
        ]) == 0
        rows = (out / "report.csv").read_text().splitlines()[2:]
        assert len(rows) == 2
        assert rows[0].split(",")[1:] == rows[1].split(",")[1:]

    def test_bad_tag_syntax_exit_2(self, tmp_path, pipeline):
        assert main([
            "--config", str(pipeline["config"]), "eval", "--data", str(pipeline["data"]),
            "--checkpoint", "no-equals-sign", "--out", str(tmp_path / "o"),
        ]) == 2


class TestPlay:
    def test_scripted_session(self, tmp_path, pipeline, monkeypatch, capsys):
        answers = iter(["red", "blue", "small", "4", "4", "3", "5"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(answers))
        log = tmp_path / "log.jsonl"
        code = main([
            "--config", str(pipeline["config"]), "--seed", "9", "play",
            "--data", str(pipeline["data"]), "--checkpoint", str(pipeline["sl"]),
            "--log", str(log),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "final guess" in out
        entry = json.loads(log.read_text().splitlines()[0])
        assert set(entry["rating"].values()) <= {1, 2, 3, 4, 5}
        assert len(entry["rounds"]) == 3

    def test_rating_reprompts_on_invalid(self, tmp_path, pipeline, monkeypatch, capsys):
        answers = iter(["red", "blue", "small", "0", "9", "4", "4", "3", "5"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(answers))
        log = tmp_path / "log.jsonl"
        assert main([
            "--config", str(pipeline["config"]), "--seed", "9", "play",
            "--data", str(pipeline["data"]), "--checkpoint", str(pipeline["sl"]),
            "--log", str(log),
        ]) == 0
        assert "please enter an integer" in capsys.readouterr().out

    def test_eof_aborts_cleanly(self, tmp_path, pipeline, monkeypatch, capsys):
        def raise_eof(prompt=""):
            raise EOFError

        monkeypatch.setattr("builtins.input", raise_eof)
        assert main([
            "--config", str(pipeline["config"]), "--seed", "9", "play",
            "--data", str(pipeline["data"]), "--checkpoint", str(pipeline["sl"]),
            "--log", str(tmp_path / "log.jsonl"),
        ]) == 0
        assert "aborted" in capsys.readouterr().out

    def test_logged_game_replays_to_same_questions(self, tmp_path, pipeline, monkeypatch):
        from glyphguess.agent import decode_question, encode_round, guess, init_state
        from glyphguess.world import ImagePool, load_world

        answers = iter(["red", "blue", "small", "4", "4", "3", "5"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(answers))
        log = tmp_path / "log.jsonl"
        main([
            "--config", str(pipeline["config"]), "--seed", "9", "play",
            "--data", str(pipeline["data"]), "--checkpoint", str(pipeline["sl"]),
            "--log", str(log),
        ])
        entry = json.loads(log.read_text().splitlines()[0])
        world = load_world(pipeline["data"] / "world.json")
        doc = load_checkpoint(pipeline["sl"])
        from glyphguess.agent import AgentConfig

        cfg = AgentConfig(**doc["config"]["agent"])
        params = doc["params"]
        pool = ImagePool(world, entry["pool_ids"])
        state = init_state(entry["caption"], params, cfg, world.spec)
        for rd in entry["rounds"]:
            q, _ = decode_question(state, params, cfg, world.spec, "greedy")
            assert q == rd["q"]
            state = encode_round(state, q, rd["a"], world.image(rd["guess"]), params, cfg, world.spec)


class TestServe:
    def test_port_busy_exit_4(self, tmp_path, pipeline):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        try:
            code = main([
                "--config", str(pipeline["config"]), "serve", "--data", str(pipeline["data"]),
                "--model", f"sl={pipeline['sl']}", "--port", str(port), "--host", "127.0.0.1",
                "--store", str(tmp_path / "s.db"),
            ])
        finally:
            sock.close()
        assert code == 4

    def test_serves_api_without_ui(self, tmp_path, pipeline):
        import httpx

        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "glyphguess.cli",
                "--config", str(pipeline["config"]), "serve",
                "--data", str(pipeline["data"]), "--model", f"sl={pipeline['sl']}",
                "--port", str(port), "--host", "127.0.0.1",
                "--store", str(tmp_path / "serve.db"),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        try:
            base = f"http://127.0.0.1:{port}"
            deadline = time.time() + 20
            health = None
            while time.time() < deadline:
                try:
                    health = httpx.get(f"{base}/health", timeout=1.0)
                    break
                except Exception:
                    if proc.poll() is not None:
                        raise AssertionError(proc.stdout.read().decode())
                    time.sleep(0.2)
            assert health is not None and health.status_code == 200
            assert health.json()["models"] == ["sl"]
            created = httpx.post(f"{base}/games", json={"model": "sl", "seed": 1}, timeout=5.0)
            assert created.status_code == 201
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestPlot:
    def test_plot_from_curves(self, tmp_path, pipeline):
        out_dir = tmp_path / "ev"
        main([
            "--config", str(pipeline["config"]), "eval", "--data", str(pipeline["data"]),
            "--checkpoint", f"sl={pipeline['sl']}", "--out", str(out_dir),
        ])
        svg = tmp_path / "plotted.svg"
        assert main(["plot", "--curves", str(out_dir / "curves.csv"), "--out", str(svg)]) == 0
        assert svg.read_text().count("<polyline") == 1

    def test_missing_curves_exit_3(self, tmp_path):
        assert main(["plot", "--curves", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.svg")]) == 3
