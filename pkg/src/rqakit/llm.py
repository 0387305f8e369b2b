"""LLM clients used for data generation and judging.

The mock client is a pure function of the prompt (hash-seeded), so every
test and desk-scale run is deterministic and touches no network. The remote
client speaks a minimal JSON protocol configured through the
``RQA_LLM_ENDPOINT`` / ``RQA_LLM_KEY`` environment variables.
"""

import hashlib
import os
import random
import re
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx

from .errors import ConfigError, GenerationBackendError

ENDPOINT_ENV = "RQA_LLM_ENDPOINT"
API_KEY_ENV = "RQA_LLM_KEY"

_WORD_RE = re.compile(r"[A-Za-z0-9_]{2,}")


@dataclass
class SamplingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_new_tokens: int = 64
    seed: int | None = None


class LLMClient(Protocol):
    """Prompt-in, text-out client with a stable identity string."""

    identity: str

    def generate(self, prompt: str, sampling: SamplingParams | None = None) -> str: ...


class MockLLMClient:
    """Deterministic stand-in for a remote LLM.

    By default it answers with a handful of words sampled (hash-seeded) from
    the prompt itself, which keeps mock questions/answers lexically tied to
    the passage they were prompted with. A ``script`` callable overrides the
    behaviour entirely; ``responses`` replays a fixed list keyed by call
    order.
    """

    def __init__(
        self,
        script: Callable[[str], str] | None = None,
        responses: Sequence[str] | None = None,
        identity: str = "mock",
        n_words: int = 6,
    ):
        self.identity = identity
        self._script = script
        self._responses = list(responses) if responses is not None else None
        self._call_count = 0
        self._n_words = n_words

    def generate(self, prompt: str, sampling: SamplingParams | None = None) -> str:
        if self._script is not None:
            return self._script(prompt)
        if self._responses is not None:
            response = self._responses[self._call_count % len(self._responses)]
            self._call_count += 1
            return response
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        rng = random.Random(int(digest[:16], 16))
        words = sorted(set(_WORD_RE.findall(prompt)))
        if not words:
            return f"mock-{digest[:8]}"
        picked = rng.sample(words, min(self._n_words, len(words)))
        return " ".join(picked)


class RemoteLLMClient:
    """JSON-over-HTTP client: POST {prompt, ...} -> {"text": ...}."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        identity: str = "remote",
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.endpoint:
            raise ConfigError(f"remote client needs an endpoint ({ENDPOINT_ENV} unset)")
        self.identity = identity
        self.timeout = timeout

    def generate(self, prompt: str, sampling: SamplingParams | None = None) -> str:
        sampling = sampling or SamplingParams()
        payload = {
            "prompt": prompt,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_new_tokens": sampling.max_new_tokens,
            "seed": sampling.seed,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            response = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            response.raise_for_status()
            return response.json()["text"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise GenerationBackendError(f"remote LLM call failed: {exc}") from exc


def make_client(kind: str, **kwargs) -> LLMClient:
    """Build a client from a CLI-style name: ``mock`` or ``remote``."""
    if kind == "mock":
        return MockLLMClient(**kwargs)
    if kind == "remote":
        return RemoteLLMClient(**kwargs)
    raise ConfigError(f"unknown client kind {kind!r} (expected mock|remote)")
