"""Every JSON artifact the CLI writes validates against its published schema."""
import json
from pathlib import Path

import jsonschema
import pytest

from hop_gesture.cli import main

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def schema(name):
    s = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(s)
    return jsonschema.Draft202012Validator(s)


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("schemas")
    ckpt = "run/checkpoints/epoch_0001"
    steps = [
        ("synth-data", {"seed": 3, "clips": 4}, "corpus"),
        ("train", {"model": {"preset": "toy"}, "training": {"epochs": 1, "batch_size": 4},
                   "data": {"manifest": "corpus/manifest.jsonl"}}, "run"),
        ("generate", {"checkpoint": ckpt, "manifest": "corpus/manifest.jsonl"}, "gen"),
        ("evaluate", {"real_manifest": "corpus/manifest.jsonl", "generated": "gen",
                      "extractor_config": {"epochs": 2}}, "eval"),
    ]
    for what in ("adjacency", "attention", "alignment", "mel"):
        steps.append(("inspect", {"checkpoint": ckpt, "what": what, "manifest": "corpus/manifest.jsonl"}, "inspect"))
    for i, (cmd, cfg, out) in enumerate(steps):
        assert main([cmd, "--config", write(d / f"c{i}.json", cfg), "--out", str(d / out), "--quiet"]) == 0
    return d


def test_schemas_are_valid():
    for p in SCHEMAS.glob("*.schema.json"):
        jsonschema.Draft202012Validator.check_schema(json.loads(p.read_text()))


def test_manifest_records(run):
    v = schema("manifest_record")
    for line in (run / "corpus" / "manifest.jsonl").read_text().splitlines():
        v.validate(json.loads(line))


def test_corpus_summary(run):
    schema("corpus").validate(json.loads((run / "corpus" / "corpus.json").read_text()))


def test_pose_files(run):
    v = schema("pose")
    for p in list((run / "corpus" / "poses").glob("*.json")) + list((run / "gen").glob("clip*.json")):
        v.validate(json.loads(p.read_text()))


def test_train_summary(run):
    schema("train_summary").validate(json.loads((run / "run" / "train_summary.json").read_text()))


def test_generation_record(run):
    schema("generation").validate(json.loads((run / "gen" / "generation.json").read_text()))


def test_metric_report(run):
    schema("metric_report").validate(json.loads((run / "eval" / "report.json").read_text()))


def test_inspect_dumps(run):
    v = schema("inspect")
    dumps = sorted((run / "inspect").glob("inspect_*.json"))
    assert len(dumps) == 4
    for p in dumps:
        v.validate(json.loads(p.read_text()))


def test_schema_rejects_malformed_pose():
    with pytest.raises(jsonschema.ValidationError):
        schema("pose").validate({"fps": 15, "joints": ["a"], "frames": [[[0.0, 1.0]]]})
