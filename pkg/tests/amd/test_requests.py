import requests

from amd import USER_AGENT
from amd.requests import make_amd_requests_session


def test_make_amd_requests_session() -> None:
    session = make_amd_requests_session(max_connections=4)
    assert isinstance(session, requests.Session)
    assert session.headers["User-Agent"] == USER_AGENT

    adapter = session.get_adapter("http://localhost:8000/v1/chat/completions")
    assert isinstance(adapter, requests.adapters.HTTPAdapter)
    assert adapter._pool_maxsize == 4  # type: ignore [attr-defined]
