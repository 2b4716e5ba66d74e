import json

import httpx
import numpy as np
import pytest
from builders import chat_reply

from disputebench.gateway import ProviderConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def api_key(monkeypatch) -> str:
    monkeypatch.setenv("DISPUTEBENCH_OPENAI_KEY", "test-key")
    return "test-key"


@pytest.fixture
def provider_config() -> ProviderConfig:
    return ProviderConfig(provider="openai", model="test-model", max_retries=3, initial_backoff=1.0)


@pytest.fixture
def echo_transport() -> httpx.MockTransport:
    """Replies with the content of the last message it was sent."""

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        return chat_reply(body["messages"][-1]["content"])

    return httpx.MockTransport(handler)


class RecordingSleep:
    def __init__(self):
        self.delays: list[float] = []

    async def __call__(self, delay: float) -> None:
        self.delays.append(delay)


@pytest.fixture
def fake_sleep() -> RecordingSleep:
    return RecordingSleep()
