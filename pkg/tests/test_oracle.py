import io
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from scipy.stats import norm

from prefbed.benchmarks import get_benchmark
from prefbed.errors import ContractViolation, OracleError, TransportError
from prefbed.oracle import (
    Choice,
    Console,
    EndpointConfig,
    LLMOracle,
    OracleLog,
    PromptTemplate,
    ReplayOracle,
    SyntheticOracleSpec,
    Verdict,
    build_prompt,
    interactive_compare,
    llm_compare,
    parse_choice,
    synthetic_compare,
)

FIRE = SyntheticOracleSpec([1.0, 0.0, 1.0])


def test_fire_rescue_example():
    v = synthetic_compare(FIRE, (2, 9, 1), (1, 9, 5), np.random.default_rng(0))
    assert v.choice == Choice.SECOND


def test_tie_is_seeded_coin():
    draws = [synthetic_compare(FIRE, (1, 2, 3), (1, 2, 3), np.random.default_rng(s)).choice for s in range(200)]
    again = [synthetic_compare(FIRE, (1, 2, 3), (1, 2, 3), np.random.default_rng(s)).choice for s in range(200)]
    assert draws == again
    assert 60 < sum(c == Choice.FIRST for c in draws) < 140


def test_scaling_invariance_and_antisymmetry(rng):
    scaled = SyntheticOracleSpec([3.5, 0.0, 3.5])
    for _ in range(500):
        a, b = rng.normal(size=3), rng.normal(size=3)
        v = synthetic_compare(FIRE, a, b, rng).choice
        assert synthetic_compare(scaled, a, b, rng).choice == v
        assert not (v == Choice.FIRST and synthetic_compare(FIRE, b, a, rng).choice == Choice.FIRST)


def test_stochastic_frequency():
    spec = SyntheticOracleSpec([1.0, 0.0, 1.0], lambda_true=0.8)
    y1, y2 = np.array([0.5, 0.0, 0.2]), np.array([0.1, 0.0, 0.1])
    rng = np.random.default_rng(11)
    hits = sum(synthetic_compare(spec, y1, y2, rng).choice == Choice.FIRST for _ in range(10_000))
    expect = norm.cdf(0.5 / (math.sqrt(2) * 0.8))
    assert abs(hits / 10_000 - expect) < 0.02


def test_synthetic_validation():
    with pytest.raises(ContractViolation):
        SyntheticOracleSpec([1.0, np.nan])
    with pytest.raises(ContractViolation):
        synthetic_compare(FIRE, [1, 2], [1, 2, 3], np.random.default_rng(0))
    with pytest.raises(ValueError):
        Verdict(3)


def test_power_grid_prompt():
    tmpl = get_benchmark("PowerGrid5").default_prompt
    text = build_prompt(tmpl, (0.3, 2.0, 0.8, 0.9), (0.1, 1.0, 0.5, 0.7))
    for name in ("Fairness", "Cost", "Priority", "Resilience"):
        assert text.count(name) >= 2
    assert "prioritize Priority, followed by Cost".lower() in text.lower()
    assert text == build_prompt(tmpl, (0.3, 2.0, 0.8, 0.9), (0.1, 1.0, 0.5, 0.7))
    # order: task, scenarios, criteria, instruction
    assert text.index("Scenario 1") < text.index("Scenario 2") < text.index(tmpl.criteria) < text.index("1 or 2") \
        or text.index("Scenario 2") < text.index(tmpl.criteria)


def test_prompt_four_significant_digits():
    tmpl = PromptTemplate("Task.", ("A", "B"), "Prefer big A.")
    text = build_prompt(tmpl, (3.14159265, 123456.0), (0.000123456, 2.0))
    assert "3.142" in text and "1.235e+05" in text and "0.0001235" in text


def test_prompt_validation():
    with pytest.raises(ContractViolation):
        PromptTemplate("Task.", ("A",), "")
    with pytest.raises(ContractViolation):
        PromptTemplate("Task.", ("A",), "   ")
    with pytest.raises(ContractViolation):
        build_prompt(PromptTemplate("Task.", ("A",), "c"), (1.0, 2.0), (1.0,))


@pytest.mark.parametrize("text, expected", [
    ("2", Choice.SECOND),
    ("The better option is 1.", Choice.FIRST),
    ("Scenario 2 is preferable", Choice.SECOND),
    ("1.5 versus 2.5: I pick 2", Choice.SECOND),
    ("both are fine", None),
    ("12 of them", None),
    ("", None),
])
def test_parse_rule(text, expected):
    assert parse_choice(text) == expected


class _Stub(BaseHTTPRequestHandler):
    replies: list = []
    status = 200
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        self.wfile.write(json.dumps({"choices": [{"message": {"content": reply}}]}).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def stub(monkeypatch):
    monkeypatch.setenv("PREFBED_TEST_KEY", "secret")
    handler = type("Handler", (_Stub,), {"replies": ["1"], "status": 200, "seen": []})
    server = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    cfg = EndpointConfig(f"http://127.0.0.1:{server.server_port}/v1/chat", "judge-model",
                         api_key_env="PREFBED_TEST_KEY", timeout_s=5)
    yield handler, cfg
    server.shutdown()


TMPL = PromptTemplate("Compare.", ("A", "B", "C"), "Prefer large A.")
NO_SLEEP = dict(sleep=lambda s: None)


def test_llm_verdict_two(stub):
    handler, cfg = stub
    handler.replies = ["2"]
    v = llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), **NO_SLEEP)
    assert v.choice == Choice.SECOND and v.raw_response == "2" and v.latency_ms >= 0
    body, auth = handler.seen[0]
    assert auth == "Bearer secret"
    assert body["model"] == "judge-model" and body["temperature"] == 0.0
    assert len(body["messages"]) == 1 and body["messages"][0]["role"] == "user"
    assert body["messages"][0]["content"] == build_prompt(TMPL, (1, 2, 3), (3, 2, 1))


def test_llm_sentence_reply(stub):
    handler, cfg = stub
    handler.replies = ["The better option is 1."]
    assert llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), **NO_SLEEP).choice == Choice.FIRST


def test_llm_retry_exhaustion_and_backoff(stub):
    handler, cfg = stub
    handler.replies = ["both are fine"]
    delays = []
    with pytest.raises(OracleError):
        llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), sleep=delays.append)
    assert delays == [0.5, 1.0, 2.0]
    assert len(handler.seen) == 4


def test_llm_recovers_after_bad_reply(stub):
    handler, cfg = stub
    handler.replies = ["hmm", "I choose 2"]
    oracle = LLMOracle(cfg, TMPL, sleep=lambda s: None)
    assert oracle.compare((1, 2, 3), (3, 2, 1)).choice == Choice.SECOND


def test_llm_http_error(stub):
    handler, cfg = stub
    handler.status = 500
    with pytest.raises(TransportError):
        llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), **NO_SLEEP)


def test_llm_unreachable(monkeypatch):
    monkeypatch.setenv("PREFBED_TEST_KEY", "x")
    cfg = EndpointConfig("http://127.0.0.1:9/none", "m", api_key_env="PREFBED_TEST_KEY", timeout_s=1)
    with pytest.raises(TransportError):
        llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), **NO_SLEEP)


def test_llm_missing_key(monkeypatch):
    monkeypatch.delenv("PREFBED_NO_SUCH_KEY", raising=False)
    cfg = EndpointConfig("http://127.0.0.1:9/none", "m", api_key_env="PREFBED_NO_SUCH_KEY")
    with pytest.raises(OracleError):
        llm_compare(cfg, TMPL, (1, 2, 3), (3, 2, 1), **NO_SLEEP)


def _console(text):
    return Console(io.StringIO(text), io.StringIO())


def test_interactive():
    assert interactive_compare(TMPL, (1, 2, 3), (3, 2, 1), _console("1\n")).choice == Choice.FIRST
    c = _console("x\n2\n")
    assert interactive_compare(TMPL, (1, 2, 3), (3, 2, 1), c).choice == Choice.SECOND
    assert c.stdout.getvalue().count("Your choice") == 2
    with pytest.raises(OracleError):
        interactive_compare(TMPL, (1, 2, 3), (3, 2, 1), _console(""))


def test_log_and_replay(tmp_path):
    log = OracleLog(tmp_path / "oracle.jsonl")
    log.append(0, [1.0, 2.0], [3.0, 4.0], Verdict(2, raw_response="2"), "llm")
    log.append(1, [0.5, 0.5], [0.1, 0.1], Verdict(1), "synthetic")
    recs = log.read()
    assert [r["iter"] for r in recs] == [0, 1]
    assert set(recs[0]) == {"iter", "y1", "y2", "verdict", "backend", "raw_response"}
    replay = ReplayOracle(recs)
    assert replay.compare([1.0, 2.0], [3.0, 4.0]).choice == Choice.SECOND
    with pytest.raises(OracleError):
        replay.compare([9.0, 9.0], [0.1, 0.1])
