import json
import math
from pathlib import Path

import pytest

import emodetect as emo

FIXTURES = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "protocol"
LABELS = ["anger", "fear", "joy", "sadness", "surprise"]


def records(n=20):
    out = []
    for i in range(n):
        angry = i % 2 == 0
        out.append(
            {
                "id": f"s{i}",
                "lang": "eng" if i < n // 2 else "deu",
                "text": ("furious about it " if angry else "delighted today ") + str(i),
                "labels": {"anger": int(angry), "fear": 0, "joy": int(not angry), "sadness": 0, "surprise": 0},
            }
        )
    return out


def test_render_and_parse_round_trip():
    prompts = emo.render_prompts("I was late.", LABELS, emo.Track.A, emo.Strategy.base,
                                 {"anger": 1, "fear": 0, "joy": 0, "sadness": 1, "surprise": 0})
    assert len(prompts) == 1
    roles = [m["role"] for m in prompts[0]["messages"]]
    assert roles == ["system", "user", "assistant"]
    assert prompts[0]["messages"][2]["content"] == "anger, sadness"
    parsed = emo.parse_completion("anger, sadness", LABELS, emo.Track.A, emo.Strategy.base)
    assert parsed == {"anger": 1, "fear": 0, "joy": 0, "sadness": 1, "surprise": 0}


def test_pairwise_track_b_completion():
    gold = {"anger": 2, "fear": 0, "joy": 0, "sadness": 1, "surprise": 0}
    prompts = emo.render_prompts("x", LABELS, emo.Track.B, emo.Strategy.pairwise, gold)
    assert [p["target"] for p in prompts] == LABELS
    assert prompts[0]["messages"][2]["content"] == "moderate"
    text = emo.render_completion(gold, LABELS, emo.Track.B, emo.Strategy.base)
    assert text == "moderate degree of anger, low degree of sadness"


def test_parse_error_has_category():
    with pytest.raises(emo.EmoError) as info:
        emo.parse_completion("anger, envy", LABELS, emo.Track.A, emo.Strategy.base)
    assert info.value.category == "parse"


def test_dataset_split_and_echo_inference(tmp_path):
    d = emo.Dataset.from_records(records(), LABELS, emo.Track.A)
    assert len(d) == 20 and d.langs == {"eng", "deu"}
    train, dev = d.split(0.1, 42)
    assert len(train) + len(dev) == 20 and len(dev) == 2
    d.save(tmp_path / "d.jsonl")
    again = emo.Dataset.load(tmp_path / "d.jsonl", emo.Track.A)
    assert again.records() == d.records()

    preds, stats = emo.infer(d, "mock-echo", emo.Strategy.pairwise, 4)
    assert stats["requests"] == 100 and stats["dropped"] == 0
    golds = {r["id"]: r["labels"] for r in d.records()}
    report = emo.macro_f1(preds, golds, LABELS)
    scores = {row["label"]: row["score"] for row in report["per_label"]}
    assert scores["anger"] == scores["joy"] == 1.0
    # labels that never occur score zero
    assert report["degenerate_labels"] == ["fear", "sadness", "surprise"]
    assert report["aggregate"] == pytest.approx(0.4)


def test_metrics_hand_example():
    golds = {"1": {"a": 1, "b": 0}, "2": {"a": 0, "b": 1}, "3": {"a": 1, "b": 1}}
    preds = {"1": {"a": 1, "b": 1}, "2": {"a": 0, "b": 1}, "3": {"a": 0, "b": 1}}
    # a: P=1 R=.5 F1=2/3; b: P=2/3 R=1 F1=.8
    assert emo.macro_f1(preds, golds, ["a", "b"])["aggregate"] == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-12)
    g = {"1": {"a": 0}, "2": {"a": 1}, "3": {"a": 3}}
    p = {"1": {"a": 1}, "2": {"a": 1}, "3": {"a": 2}}
    r = emo.pearson(p, g, ["a"])
    # cov 15/9, variances 42/9 and 6/9
    assert r["aggregate"] == pytest.approx(15 / math.sqrt(252), abs=1e-12)
    assert emo.per_sample_f1({"a": 1, "b": 0}, {"a": 1, "b": 1}) == pytest.approx(2 / 3)


def test_train_head_and_predict():
    d = emo.Dataset.from_records(records(40), LABELS, emo.Track.A)
    ck, history = emo.train_head(d, d, feature_dim=64, epochs=3)
    assert [h["epoch"] for h in history] == [1, 2, 3]
    probs = emo.head_probabilities(ck, ["furious about it"])
    assert set(probs[0]) == set(LABELS)
    assert all(0.0 < v < 1.0 for v in probs[0].values())
    assert len(emo.featurize("hello", 32, 0)) == 32


@pytest.mark.parametrize("name", sorted(p.stem for p in FIXTURES.glob("chat_*.json")))
def test_wire_protocol_fixtures(name):
    fx = json.loads((FIXTURES / f"{name}.json").read_text())
    r, g = fx["render"], fx["generation"]
    track = emo.Track.A if r["track"] == "a" else emo.Track.B
    strategy = emo.Strategy.base if r["strategy"] == "base" else emo.Strategy.pairwise
    req = emo.build_chat_request(r["text"], r["labels"], track, strategy, r.get("target"), "emo-test",
                                 g["max_new_tokens"], g["temperature"], g["logprobs"], g.get("top_logprobs", 5))
    assert req == fx["request"]
    got = emo.parse_chat_response(json.dumps(fx["response"]))
    assert got["text"] == fx["expected"]["text"]
    if "yes_probability" in fx["expected"]:
        p = emo.pairwise_yes_probability(got["alternatives"])
        assert p == pytest.approx(fx["expected"]["yes_probability"], abs=1e-12)


def test_cli_in_process(tmp_path):
    d = emo.Dataset.from_records(records(), LABELS, emo.Track.A)
    d.save(tmp_path / "d.jsonl")
    code, out, err = emo.cli(["export", "--track", "a", "--strategy", "pairwise",
                              "--input", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 0, err
    assert len((tmp_path / "o" / "instructions.jsonl").read_text().splitlines()) == 100
    code, _, err = emo.cli(["export", "--track", "z"])
    assert code == 2 and "error[config]" in err
