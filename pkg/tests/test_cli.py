import json
from pathlib import Path

import pytest

from spdlab.cli import main
from spdlab.models import load


def run(root: Path, command: str, *args) -> tuple[int, Path | None]:
    before = set(root.glob(f"*-{command}-*"))
    code = main([command, "--quiet", "--out-root", str(root), *map(str, args)])
    made = set(root.glob(f"*-{command}-*")) - before
    return code, made.pop() if made else None


TINY = ["--d-model", 16, "--n-heads", 2, "--d-ff", 32, "--batch-size", 8, "--pack-to", 96]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    code, data = run(root, "gen-data", "--cpt-docs", 40, "--n-stage1", 12, "--n-stage2", 16, "--n-eval", 4,
                     "--n-heldout", 4, "--n-bench", 3)
    assert code == 0
    code, pre = run(root, "pretrain", "--corpus", data / "cpt_corpus.txt", "--vocab", data / "vocab.json", *TINY)
    assert code == 0
    code, tuned = run(root, "sft", "--init", pre / "model.ckpt", "--data", data / "stage2.jsonl",
                      "--batch-size", 8)
    assert code == 0
    return {"root": root, "data": data, "target": tuned / "model.ckpt", "draft": pre / "model.ckpt"}


class TestPipeline:
    def test_run_directory_contents(self, pipeline):
        data = pipeline["data"]
        assert {p.name for p in data.iterdir()} >= {"config.json", "vocab.json", "cpt_corpus.txt", "stage2.jsonl"}
        echo = json.loads((data / "config.json").read_text())
        assert echo["command"] == "gen-data" and echo["config"]["cpt_docs"] == 40

    def test_checkpoint_carries_provenance(self, pipeline):
        _, vocab, prov = load(pipeline["target"])
        assert vocab is not None and prov["command"] == "sft"

    def test_build_vocab_matches_gen_data(self, pipeline):
        data = pipeline["data"]
        code, out = run(pipeline["root"], "build-vocab", "--corpus", data / "cpt_corpus.txt",
                        data / "stage1.jsonl", data / "stage2.jsonl", data / "bench.jsonl")
        assert code == 0
        ours = set(json.loads((out / "vocab.json").read_text())["chars"])
        assert ours <= set(json.loads((data / "vocab.json").read_text())["chars"])

    def test_decode_is_deterministic(self, pipeline):
        args = ["--target", pipeline["target"], "--draft", pipeline["draft"], "--method", "speculative",
                "--prompts", pipeline["data"] / "bench.jsonl", "--mode", "top_p", "--max-tokens", 12]
        _, a = run(pipeline["root"], "decode", *args)
        _, b = run(pipeline["root"], "decode", *args)
        for name in ("outputs.jsonl", "traces.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert len((a / "outputs.jsonl").read_text().splitlines()) == 3

    def test_greedy_speculative_matches_autoregressive(self, pipeline):
        common = ["--target", pipeline["target"], "--prompts", pipeline["data"] / "bench.jsonl", "--max-tokens", 20]
        _, ar = run(pipeline["root"], "decode", *common)
        _, sp = run(pipeline["root"], "decode", *common, "--method", "speculative", "--draft", pipeline["draft"])
        _, pl = run(pipeline["root"], "decode", *common, "--method", "prompt_lookup")
        outs = [[json.loads(ln)["tokens"] for ln in (d / "outputs.jsonl").read_text().splitlines()]
                for d in (ar, sp, pl)]
        assert outs[0] == outs[1] == outs[2]

    def test_eval_writes_scores(self, pipeline):
        code, out = run(pipeline["root"], "eval", "--model", pipeline["target"], "--data",
                        pipeline["data"] / "eval_domain.jsonl", "--max-tokens", 16)
        assert code == 0
        scores = json.loads((out / "scores.json").read_text())
        assert scores["samples"] == 4 and 0 <= scores["rouge1"]["f1"] <= 1

    def test_export_and_distill(self, pipeline):
        data, root = pipeline["data"], pipeline["root"]
        code, store = run(root, "export-logits", "--teacher", pipeline["target"], "--data", data / "stage2.jsonl")
        assert code == 0
        code, out = run(root, "distill", "--student", pipeline["draft"], "--store", store / "teacher_logits.bin",
                        "--data", data / "stage2.jsonl", "--batch-size", 8)
        assert code == 0
        assert (out / "model.ckpt").exists()
        assert json.loads((out / "config.json").read_text())["config"]["pack_mode"] == "single"

    def test_bench_with_checkpoints(self, pipeline):
        code, out = run(pipeline["root"], "bench", "--target", pipeline["target"], "--drafts",
                        f"d={pipeline['draft']}", "--prompts", pipeline["data"] / "bench.jsonl", "--max-tokens", 8,
                        "--repetitions", 3, "--formats", "json", "txt")
        assert code == 0
        report = json.loads((out / "bench.json").read_text())
        base = next(c for c in report["cells"] if c["method"] == "autoregressive")
        assert base["speedup"] == 1.0
        assert not (out / "bench.csv").exists()


class TestConfigPrecedence:
    def test_flag_beats_file_beats_default(self, pipeline, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"cpt_docs": 20, "n_stage1": 5, "n_stage2": 6, "n_eval": 2, "n_heldout": 2,
                                   "n_bench": 2, "seed": 3}))
        code, out = run(pipeline["root"], "gen-data", "--config", cfg, "--seed", 4)
        assert code == 0
        resolved = json.loads((out / "config.json").read_text())["config"]
        assert resolved["seed"] == 4 and resolved["cpt_docs"] == 20 and resolved["world_seed"] == 7

    def test_same_config_same_data(self, pipeline):
        args = ["--cpt-docs", 10, "--n-stage1", 3, "--n-stage2", 3, "--n-eval", 2, "--n-heldout", 2, "--n-bench", 2]
        _, a = run(pipeline["root"], "gen-data", *args)
        _, b = run(pipeline["root"], "gen-data", *args)
        assert a != b
        for name in ("cpt_corpus.txt", "stage2.jsonl", "vocab.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestExitCodes:
    def test_missing_file_is_invalid_argument(self, tmp_path, capsys):
        code, _ = run(tmp_path, "sft", "--init", tmp_path / "nope.ckpt", "--data", tmp_path / "nope.jsonl")
        assert code == 2
        assert "init" in capsys.readouterr().err

    def test_missing_required(self, tmp_path, capsys):
        code, _ = run(tmp_path, "sft")
        assert code == 2
        assert "required" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(tmp_path, "gen-data", "--config", bad)[0] == 2
        bad.write_text(json.dumps({"bogus": 1}))
        assert run(tmp_path, "gen-data", "--config", bad)[0] == 2
        bad.write_text(json.dumps({"seed": "x"}))
        assert run(tmp_path, "gen-data", "--config", bad)[0] == 2

    def test_corrupt_checkpoint_is_data_error(self, tmp_path, pipeline):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage" * 4)
        code, _ = run(tmp_path, "sft", "--init", bad, "--data", pipeline["data"] / "stage2.jsonl")
        assert code == 3

    def test_bad_choice_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["decode", "--method", "beam"])
        assert exc.value.code == 2


SHIPPED = Path(__file__).resolve().parents[1] / "data"


@pytest.mark.skipif(not SHIPPED.is_dir(), reason="shipped data directory not present")
def test_shipped_data_matches_generator(tmp_path):
    code, out = run(tmp_path, "gen-data")
    assert code == 0
    for shipped in SHIPPED.iterdir():
        assert (out / shipped.name).read_bytes() == shipped.read_bytes(), shipped.name
