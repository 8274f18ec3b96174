"""Pairwise-comparison oracles: synthetic utility, chat-completion LLM proxy and console."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, TextIO

import numpy as np
from scipy.special import ndtr

from .errors import ContractViolation, OracleError, TransportError

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"(?<![\w.])([12])(?![\w]|\.\d)")


class Choice(enum.IntEnum):
    FIRST = 1
    SECOND = 2


@dataclass(frozen=True)
class Verdict:
    choice: Choice
    raw_response: str | None = None
    latency_ms: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "choice", Choice(int(self.choice)))


class Oracle(Protocol):
    backend: str

    def compare(self, y1, y2, rng: np.random.Generator) -> Verdict: ...


# --------------------------------------------------------------------------
# synthetic


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Ground-truth linear utility ``weights . y``; ``lambda_true = 0`` gives a noiseless judge."""

    weights: np.ndarray
    lambda_true: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ContractViolation("oracle weights must be finite")
        if not self.lambda_true >= 0:
            raise ContractViolation("lambda_true must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def synthetic_compare(spec: SyntheticOracleSpec, y1, y2, rng: np.random.Generator) -> Verdict:
    y1 = np.asarray(y1, dtype=float).reshape(-1)
    y2 = np.asarray(y2, dtype=float).reshape(-1)
    if y1.size != spec.weights.size or y2.size != spec.weights.size:
        raise ContractViolation(
            f"observables of length {y1.size}/{y2.size}, oracle weights have {spec.weights.size}")
    diff = float(spec.weights @ y1) - float(spec.weights @ y2)
    if spec.lambda_true == 0:
        if diff > 0:
            first = True
        elif diff < 0:
            first = False
        else:
            first = bool(rng.random() < 0.5)
    else:
        first = bool(rng.random() < ndtr(diff / (math.sqrt(2.0) * spec.lambda_true)))
    return Verdict(Choice.FIRST if first else Choice.SECOND)


@dataclass
class SyntheticOracle:
    spec: SyntheticOracleSpec
    backend: str = "synthetic"

    def compare(self, y1, y2, rng):
        return synthetic_compare(self.spec, y1, y2, rng)


# --------------------------------------------------------------------------
# prompts


@dataclass(frozen=True)
class PromptTemplate:
    task_description: str
    objective_names: tuple
    criteria: str
    response_instruction: str = (
        "Which scenario better satisfies the criteria? Reply with exactly one "
        "character: 1 for Scenario 1 or 2 for Scenario 2.")

    def __post_init__(self):
        names = tuple(tuple(n) if isinstance(n, (list, tuple)) else (str(n), "")
                      for n in self.objective_names)
        object.__setattr__(self, "objective_names", names)
        if not self.criteria or not self.criteria.strip():
            raise ContractViolation("prompt criteria must be non-empty")
        if not self.task_description.strip():
            raise ContractViolation("prompt task description must be non-empty")
        if not names:
            raise ContractViolation("prompt needs at least one objective name")


def _render_metrics(tmpl: PromptTemplate, y) -> list[str]:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != len(tmpl.objective_names):
        raise ContractViolation(
            f"observable length {y.size} does not match {len(tmpl.objective_names)} metric names")
    lines = []
    for (name, unit), v in zip(tmpl.objective_names, y):
        suffix = f" {unit}" if unit else ""
        lines.append(f"  - {name}: {float(v):.4g}{suffix}")
    return lines


def build_prompt(tmpl: PromptTemplate, y1, y2) -> str:
    parts = [tmpl.task_description.strip(), "", "Objective metrics:", "Scenario 1:"]
    parts += _render_metrics(tmpl, y1)
    parts.append("Scenario 2:")
    parts += _render_metrics(tmpl, y2)
    parts += ["", "Evaluation criteria:", tmpl.criteria.strip(), "", tmpl.response_instruction]
    return "\n".join(parts)


def parse_choice(text: str) -> Choice | None:
    """First standalone ``1`` or ``2`` in ``text``, or ``None``."""
    m = _TOKEN.search(text or "")
    return Choice(int(m.group(1))) if m else None


# --------------------------------------------------------------------------
# LLM proxy


@dataclass
class EndpointConfig:
    url: str
    model: str
    temperature: float = 0.0
    api_key_env: str = "PREFBED_API_KEY"
    timeout_s: float = 60.0
    backoff_s: tuple = (0.5, 1.0, 2.0)

    @property
    def max_retries(self) -> int:
        return len(self.backoff_s)


def llm_compare(cfg: EndpointConfig, tmpl: PromptTemplate, y1, y2, *,
                session=None, sleep: Callable[[float], None] = time.sleep) -> Verdict:
    """Ask a chat-completion endpoint which scenario it prefers.

    Parse failures and transport problems are retried after each delay in
    ``cfg.backoff_s``; the last failure is raised.
    """
    import requests

    http = session or requests
    api_key = os.environ.get(cfg.api_key_env)
    if api_key is None:
        raise OracleError(f"environment variable {cfg.api_key_env} is not set")
    prompt = build_prompt(tmpl, y1, y2)
    payload = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": prompt}],
    }
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    last_error: OracleError | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(cfg.backoff_s[attempt - 1])
        start = time.perf_counter()
        try:
            resp = http.post(cfg.url, json=payload, headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            last_error = TransportError(f"request to {cfg.url} failed: {exc}")
            log.warning("oracle attempt %d: %s", attempt + 1, last_error)
            continue
        latency = (time.perf_counter() - start) * 1000.0
        if not 200 <= resp.status_code < 300:
            last_error = TransportError(f"endpoint returned HTTP {resp.status_code}")
            log.warning("oracle attempt %d: %s", attempt + 1, last_error)
            continue
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            last_error = OracleError("response is not a chat-completion document")
            continue
        choice = parse_choice(text)
        if choice is None:
            last_error = OracleError(f"no verdict token in reply: {text!r}")
            log.warning("oracle attempt %d: %s", attempt + 1, last_error)
            continue
        return Verdict(choice, raw_response=text, latency_ms=latency)
    raise last_error


@dataclass
class LLMOracle:
    endpoint: EndpointConfig
    template: PromptTemplate
    session: object = None
    sleep: Callable[[float], None] = time.sleep
    backend: str = "llm"

    def compare(self, y1, y2, rng=None):
        return llm_compare(self.endpoint, self.template, y1, y2, session=self.session,
                           sleep=self.sleep)


# --------------------------------------------------------------------------
# console


@dataclass
class Console:
    stdin: TextIO = field(default_factory=lambda: sys.stdin)
    stdout: TextIO = field(default_factory=lambda: sys.stdout)


def interactive_compare(tmpl: PromptTemplate, y1, y2, console: Console | None = None) -> Verdict:
    console = console or Console()
    console.stdout.write(build_prompt(tmpl, y1, y2) + "\n")
    while True:
        console.stdout.write("Your choice [1/2]: ")
        console.stdout.flush()
        line = console.stdin.readline()
        if line == "":
            raise OracleError("input closed before a verdict was given")
        answer = line.strip()
        if answer in ("1", "2"):
            return Verdict(Choice(int(answer)), raw_response=answer)
        console.stdout.write("Please answer 1 or 2.\n")


@dataclass
class InteractiveOracle:
    template: PromptTemplate
    console: Console = field(default_factory=Console)
    backend: str = "interactive"

    def compare(self, y1, y2, rng=None):
        return interactive_compare(self.template, y1, y2, self.console)


# --------------------------------------------------------------------------
# persistent log and replay


class OracleLog:
    """Append-only JSON-lines record of every duel."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, iteration: int, y1, y2, verdict: Verdict, backend: str) -> None:
        rec = {
            "iter": int(iteration),
            "y1": [float(v) for v in np.asarray(y1).reshape(-1)],
            "y2": [float(v) for v in np.asarray(y2).reshape(-1)],
            "verdict": int(verdict.choice),
            "backend": backend,
            "raw_response": verdict.raw_response,
        }
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


@dataclass
class ReplayOracle:
    """Serves verdicts from an oracle log, in order, checking the observables match."""

    records: list
    backend: str = "replay"
    position: int = 0

    def compare(self, y1, y2, rng=None):
        if self.position >= len(self.records):
            raise OracleError("replay log exhausted")
        rec = self.records[self.position]
        if not (np.allclose(rec["y1"], y1, rtol=0, atol=0) and np.allclose(rec["y2"], y2, rtol=0, atol=0)):
            raise OracleError(f"replay mismatch at record {self.position}")
        self.position += 1
        return Verdict(Choice(rec["verdict"]), raw_response=rec.get("raw_response"))
