# Copyright 2026 The ttprag Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json
import os
import pathlib
import shutil
import threading

import pytest

import ttprag

DATA = pathlib.Path(
    os.environ.get("TTPRAG_TEST_DATA", pathlib.Path(__file__).resolve().parents[2] / "tests" / "data")
)
APPENDIX = DATA / "appendix"


@pytest.fixture()
def appendix(tmp_path):
    # stub misses are written next to the stubs; keep the source tree clean
    dst = tmp_path / "appendix"
    shutil.copytree(APPENDIX, dst)
    return dst


def jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_ids():
    assert ttprag.parse_id(" t1059.001 ") == "T1059.001"
    assert ttprag.truncate("T1059.001") == "T1059"
    assert ttprag.scan_ids("use T1053.005, then XT1000 and T1071") == ["T1053.005", "T1071"]
    with pytest.raises(ttprag.Error):
        ttprag.parse_id("T10")


def test_tokens_and_windows():
    assert ttprag.tokenize("Ran T1059.004 via Bash") == ["ran", "t1059.004", "via", "bash"]
    assert ttprag.estimate_tokens("one two three four five six seven eight nine ten") == 13
    assert ttprag.window_offsets(100, 40, 20) == [60, 40, 20, 0]
    with pytest.raises(ttprag.Error):
        ttprag.window_offsets(10, 5, 5)


def test_bm25_orders_by_overlap():
    corpus = ttprag.Corpus.from_records(
        [
            {"id": "a", "text": "powershell download cradle", "labels": ["T1059.001"]},
            {"id": "b", "text": "scheduled task persistence", "labels": ["T1053.005"]},
            {"id": "c", "text": "powershell scheduled task", "labels": ["T1053"]},
        ]
    )
    hits = ttprag.Bm25Index(corpus).search("powershell task", 3)
    assert hits[0][0] == "c"
    assert {h[0] for h in hits} == {"a", "b", "c"}
    assert all(s1 >= s2 for (_, s1), (_, s2) in zip(hits, hits[1:]))


def test_prompt_and_parse():
    window = [("T1059", "Command and Scripting Interpreter", "Runs commands."), ("T1053", "Scheduled Task/Job", "")]
    messages = ttprag.build_prompt("query text", window)
    assert [role for role, _ in messages] == ["system", "user"]
    assert "query text" in messages[1][1]
    assert ttprag.parse_ranking("thinking...\n> T1053 > T1059", ["T1059", "T1053"]) == ["T1053", "T1059"]
    # unmentioned ids are appended in window order
    assert ttprag.parse_ranking("> [2]", ["T1059", "T1053", "T1005"]) == ["T1053", "T1059", "T1005"]
    with pytest.raises(ttprag.UnparseableResponse):
        ttprag.parse_ranking("no idea", ["T1059", "T1053"])


def test_scoring():
    assert ttprag.score_sets(["T1059.001", "T1005"], ["T1059.001", "T1053"]) == (1, 1, 1)
    assert ttprag.score_sets(["T1059.001"], ["T1059.003"], level="technique") == (1, 0, 0)
    gold = ttprag.Corpus.from_records(
        [{"id": "x", "text": "a", "labels": ["T1059.001"]}, {"id": "y", "text": "b", "labels": ["T1053"]}],
        split="test",
    )
    report = ttprag.evaluate({"x": ["T1059.001"], "y": ["T1005"]}, gold)
    assert (report["tp"], report["fp"], report["fn"]) == (1, 1, 1)
    assert report["f1"] == pytest.approx(0.5)
    with pytest.raises(ttprag.MissingPrediction):
        ttprag.evaluate({"x": ["T1059.001"]}, gold)


def test_appendix_replay_matches_golden(appendix):
    pipeline = ttprag.Pipeline.from_config(appendix / "config.json")
    golden = {row["id"]: row for row in jsonl(appendix / "annotate.golden.jsonl")}
    for query in jsonl(appendix / "queries.jsonl"):
        result = pipeline.run(query["text"], query["id"])
        assert result["predicted"] == golden[query["id"]]["predicted"]
        assert result["names"] == golden[query["id"]]["names"]
        assert not result["degraded"]


def test_python_backends_across_threads(appendix):
    taxonomy = ttprag.Taxonomy.load(appendix / "taxonomy.csv")
    corpus = ttprag.Corpus.load(appendix / "train.jsonl")
    seen = []

    def reranker(request):
        seen.append(request["temperature"])
        return "I cannot rank these."

    def generator(request):
        assert request["messages"][0]["content"] == ttprag.generator_instruction()
        return "T1053.005, T9999"

    pipeline = ttprag.Pipeline(corpus, taxonomy, reranker, generator, exemplars=2)
    results = [None] * 4

    def work(i):
        results[i] = pipeline.run("schtasks.exe adds a scheduled task", f"q{i}")

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in results:
        assert r["predicted"] == ["T1053.005"]
        assert r["filtered_count"] == 1
        assert len(r["exemplars"]) <= 2
    assert seen and all(t == 0.0 for t in seen)


def test_backend_exception_surfaces_as_stage_error(appendix):
    taxonomy = ttprag.Taxonomy.load(appendix / "taxonomy.csv")
    corpus = ttprag.Corpus.load(appendix / "train.jsonl")

    def broken(request):
        raise RuntimeError("down")

    pipeline = ttprag.Pipeline(corpus, taxonomy, lambda r: "> T1053", broken)
    with pytest.raises(ttprag.StageError, match="generate"):
        pipeline.run("schtasks.exe adds a scheduled task")


def test_export_training(appendix):
    pipeline = ttprag.Pipeline.from_config(appendix / "config.json")
    records = pipeline.export_training(oversample_multi=1)
    assert len(records) == len(pipeline)
    assert all(r["instruction"] == ttprag.generator_instruction() for r in records)
