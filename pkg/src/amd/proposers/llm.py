import functools
import logging
import os
import re
import threading
from collections.abc import Mapping
from dataclasses import dataclass
from json import JSONDecodeError
from typing import Self

import numpy as np
import requests
from requests.exceptions import RequestException

from amd.proposers.base import (
    ProposalRejectedError,
    ProposalRequest,
    ProposerUnavailableError,
)
from amd.proposers.prompts import render_prompts
from amd.requests import make_amd_requests_session
from amd.retry import ExecutionError, execute_with_retry, exponential_backoff

logger = logging.getLogger(__name__)

CHAT_COMPLETIONS_PATH = "/chat/completions"

FENCED_BLOCK = re.compile(r"```[a-zA-Z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


class LlmConfigError(ValueError):
    """Exception raised when the endpoint config is invalid"""


@dataclass(frozen=True, slots=True)
class LlmEndpointConfig:
    """
    An OpenAI compatible chat completion endpoint

    The api key is read from the environment variable named by api_key_env,
    so it never ends up in config files or run artifacts.
    """

    base_url: str
    model: str
    api_key_env: str | None = None
    temperature: float = 0.8
    max_tokens: int = 512
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 2.0
    max_concurrent: int = 8
    extra_hints: bool = False

    def __post_init__(self) -> None:
        if not self.base_url:
            raise LlmConfigError("base_url can't be empty")
        if not self.model:
            raise LlmConfigError("model can't be empty")
        if self.max_tokens < 1:
            raise LlmConfigError("max_tokens must be positive")
        if self.timeout <= 0:
            raise LlmConfigError("timeout must be positive")
        if self.retries < 0:
            raise LlmConfigError("retries can't be negative")
        if self.max_concurrent < 1:
            raise LlmConfigError("max_concurrent must be at least 1")

    @property
    def api_key(self) -> str | None:
        if self.api_key_env is None:
            return None
        return os.environ.get(self.api_key_env, None)

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + CHAT_COMPLETIONS_PATH

    @classmethod
    def from_dict(cls, source: Mapping[str, object]) -> Self:
        base_url = source.get("base_url", None)
        model = source.get("model", None)
        if not isinstance(base_url, str) or not isinstance(model, str):
            raise LlmConfigError("proposer.base_url and proposer.model are required")

        api_key_env = source.get("api_key_env", None)
        if api_key_env is not None and not isinstance(api_key_env, str):
            raise LlmConfigError("proposer.api_key_env must be a string")

        extra_hints = source.get("extra_hints", False)
        if not isinstance(extra_hints, bool):
            raise LlmConfigError("proposer.extra_hints must be a bool")

        return cls(
            base_url=base_url,
            model=model,
            api_key_env=api_key_env,
            temperature=_number(source, "temperature", 0.8),
            max_tokens=int(_number(source, "max_tokens", 512, integer=True)),
            timeout=_number(source, "timeout", 60.0),
            retries=int(_number(source, "retries", 3, integer=True)),
            backoff=_number(source, "backoff", 2.0),
            max_concurrent=int(_number(source, "max_concurrent", 8, integer=True)),
            extra_hints=extra_hints,
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timeout": self.timeout,
            "retries": self.retries,
            "backoff": self.backoff,
            "max_concurrent": self.max_concurrent,
            "extra_hints": self.extra_hints,
        }


def _number(
    source: Mapping[str, object], key: str, default: float, *, integer: bool = False
) -> float:
    value = source.get(key, default)
    allowed = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, allowed):
        kind = "an integer" if integer else "a number"
        raise LlmConfigError(f"proposer.{key} must be {kind}")
    return float(value)


def extract_code(reply: str) -> str:
    """The first fenced code block of the reply, or the whole reply"""
    match = FENCED_BLOCK.search(reply)
    if match is not None:
        return match.group(1).strip()
    return reply.strip()


class LlmProposer:
    """Proposer asking a chat completion endpoint for new heuristics"""

    def __init__(
        self,
        config: LlmEndpointConfig,
        session: requests.Session | None = None,
    ) -> None:
        self.config = config
        self.session = session or make_amd_requests_session(config.max_concurrent)
        # Cap the number of requests in flight
        self.semaphore = threading.BoundedSemaphore(config.max_concurrent)

    def _payload(self, request: ProposalRequest, seed: int) -> dict[str, object]:
        system, user = render_prompts(request, self.config.extra_hints)
        return {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "seed": seed,
        }

    def _headers(self) -> dict[str, str]:
        api_key = self.config.api_key
        if api_key is None:
            return {}
        return {"Authorization": f"Bearer {api_key}"}

    def _make_request(
        self, *, payload: dict[str, object], last_try: bool
    ) -> requests.Response:
        try:
            with self.semaphore:
                response = self.session.post(
                    self.config.url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
        except RequestException as e:
            raise ExecutionError("Request to the proposer endpoint failed") from e

        if response.status_code == 429 or response.status_code >= 500:
            raise ExecutionError(
                f"Proposer endpoint returned {response.status_code}, retrying"
            )

        return response

    def propose(self, request: ProposalRequest, rng: np.random.Generator) -> str:
        payload = self._payload(request, seed=int(rng.integers(2**31)))

        try:
            response = execute_with_retry(
                functools.partial(self._make_request, payload=payload),
                backoff=exponential_backoff(self.config.retries, self.config.backoff),
            )
        except ExecutionError as e:
            raise ProposerUnavailableError(
                f"Proposer endpoint {self.config.url} unreachable"
            ) from e

        if not response:
            raise ProposalRejectedError(f"http_{response.status_code}")

        try:
            response_json = response.json()
        except JSONDecodeError as e:
            raise ProposalRejectedError("invalid_json") from e

        reply, finish_reason = _first_choice(response_json)

        if finish_reason == "length":
            raise ProposalRejectedError("truncated")

        code = extract_code(reply)
        if not code:
            raise ProposalRejectedError("empty")

        logger.debug(f"Proposer replied with {len(code)} characters")
        return code


def _first_choice(response_json: object) -> tuple[str, str | None]:
    """The message content and finish reason of the first completion choice"""
    if not isinstance(response_json, dict):
        raise ProposalRejectedError("invalid_json")

    choices = response_json.get("choices", None)
    if not isinstance(choices, list) or not choices:
        raise ProposalRejectedError("empty")

    choice = choices[0]
    if not isinstance(choice, dict):
        raise ProposalRejectedError("invalid_json")

    message = choice.get("message", None)
    content = message.get("content", None) if isinstance(message, dict) else None
    if not isinstance(content, str):
        raise ProposalRejectedError("empty")

    finish_reason = choice.get("finish_reason", None)
    return content, finish_reason if isinstance(finish_reason, str) else None


def llm_propose(
    request: ProposalRequest,
    endpoint: LlmEndpointConfig,
    rng: np.random.Generator | None = None,
) -> str:
    """Ask the endpoint for one candidate with a fresh session"""
    proposer = LlmProposer(endpoint)
    return proposer.propose(request, rng or np.random.default_rng())
