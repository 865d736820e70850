import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from helpers import TrajBuilder
from vragloop.backends import ChatClient, HttpJudge, HttpPolicy, HttpStatus, ScriptedPolicy, ScriptError
from vragloop.context import build_context
from vragloop.grammar import Search, parse_response
from vragloop.loop import PolicyFailure
from vragloop.reward import JudgeFailure
from vragloop.trajectory import Query

Q = Query("q", "Which year?")
CANNED = "<think>need the chart</think><search>fulfillment centers</search>"


class MockServer:
    """Chat-completions stand-in. ``replies`` is a list of (status, content) consumed in order."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests.append({"path": self.path, "headers": dict(self.headers), "json": json.loads(body)})
                status, content = outer.replies.pop(0) if len(outer.replies) > 1 else outer.replies[0]
                payload = json.dumps({"choices": [{"message": {"content": content}}]}) if status == 200 else content
                data = payload.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def __enter__(self):
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def client(url, **kw):
    return ChatClient(url, "test-model", api_key="secret", backoff_s=0.0, timeout=5, **kw)


def test_echo_parses_downstream(templates):
    with MockServer([(200, CANNED)]) as srv:
        raw = HttpPolicy(client(srv.url)).generate(build_context(TrajBuilder(Q).traj, templates, 2))
    assert parse_response(raw).response.action == Search("fulfillment centers")
    req = srv.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["headers"]["Authorization"] == "Bearer secret"
    assert req["json"]["model"] == "test-model"
    assert [m["role"] for m in req["json"]["messages"]] == ["system", "user", "user"]


def test_500_three_times_is_policy_failure(templates):
    with MockServer([(500, "boom")]) as srv:
        with pytest.raises(PolicyFailure):
            HttpPolicy(client(srv.url)).generate(build_context(TrajBuilder(Q).traj, templates, 2))
    assert len(srv.requests) == 3


def test_retry_then_success():
    with MockServer([(503, "busy"), (200, CANNED)]) as srv:
        assert client(srv.url).complete([{"role": "user", "content": "hi"}]) == CANNED
    assert len(srv.requests) == 2


def test_client_error_not_retried():
    with MockServer([(401, "nope")]) as srv:
        with pytest.raises(HttpStatus):
            client(srv.url).complete([])
    assert len(srv.requests) == 1


def test_window_limits_attached_images(templates):
    b = TrajBuilder(Q)
    for i in range(6):
        b.search(f"p{i}", f"t{i}")
    ctx = build_context(b.traj, templates, window=2)

    class Renderer:
        def render(self, ref):
            return b"\x89PNG fake " + ref.page_id.encode()

    with MockServer([(200, CANNED)]) as srv:
        HttpPolicy(client(srv.url), images=Renderer()).generate(ctx)
    messages = srv.requests[0]["json"]["messages"]
    parts = [p for m in messages if isinstance(m["content"], list) for p in m["content"]]
    images = [p for p in parts if p["type"] == "image_url"]
    assert 0 < len(images) <= 2
    assert all(p["image_url"]["url"].startswith("data:image/png;base64,") for p in images)
    assert [m["role"] for m in messages[3:]] == ["assistant", "user", "assistant", "user"]


def test_http_judge():
    with MockServer([(200, "1"), (200, "0"), (200, "maybe")]) as srv:
        judge = HttpJudge(client(srv.url))
        assert judge.correctness("q", "2010", "2010") == 1
        assert judge.honesty("no idea") == 0.0
        with pytest.raises(JudgeFailure):
            judge.correctness("q", "a", "b")


def test_scripted_policy_rules(templates):
    policy = ScriptedPolicy({"*": [{"turn": 1, "response": "first"}, {"match": "retrieved page", "response": "any"}]})
    ctx = build_context(TrajBuilder(Q).traj, templates, 2)
    assert policy.generate(ctx) == "first"
    ctx2 = build_context(TrajBuilder(Q).search("p1").traj, templates, 2)
    assert policy.generate(ctx2) == "any"
    with pytest.raises(ScriptError):
        ScriptedPolicy({"q": [{"turn": 1}]})
    with pytest.raises(PolicyFailure):
        ScriptedPolicy({"other": []}).generate(ctx)
