import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

import example_features as ex
from urbandiff.llm import LLMClient, LLMClientConfig, enrich_elaborate, enrich_many
from urbandiff.prompts import ENRICH_INSTRUCTION, generate_minimal, generate_structured


class MockChat:
    """Local chat-completions endpoint; ``reply(content) -> str`` shapes each answer."""

    def __init__(self, reply, status=200):
        self.reply = reply
        self.status = status
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append(body)
                if outer.status != 200:
                    self.send_response(outer.status)
                    self.end_headers()
                    return
                content = body["messages"][0]["content"]
                data = json.dumps({"choices": [{"message": {"role": "assistant",
                                                            "content": outer.reply(content)}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"

    def __enter__(self):
        threading.Thread(target=self.server.serve_forever, daemon=True).start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def original(content):
    return content.split("### Original:\n")[1].split("\n### Enriched:")[0]


def test_instruction_text():
    assert "Keeping ALL original numbers/percentages EXACTLY as given" in ENRICH_INSTRUCTION
    body = LLMClient(LLMClientConfig("http://x")).request_body("DESC")
    assert body["messages"][0]["role"] == "user"
    assert "### Original:\nDESC\n### Enriched:" in body["messages"][0]["content"]


def test_instruction_needs_slot():
    with pytest.raises(ValueError):
        LLMClientConfig(instruction="no slot")


def test_happy_path_returns_elaborate():
    f = ex.la()
    with MockChat(lambda c: "A leafy district. " + original(c)) as mock:
        rec = enrich_elaborate(generate_minimal(f, 3), f, LLMClientConfig(mock.url, timeout=5))
    assert rec.style == "elaborate" and not rec.fallback
    assert rec.text.startswith("A leafy district.")
    assert rec.numbers == ["85%", "10%"]
    assert mock.requests[0]["model"] == "deepseek-llm-7b-chat"


def test_altered_number_triggers_fallback_after_retries():
    f = ex.la()
    with MockChat(lambda c: original(c).replace("85%", "most")) as mock:
        rec = enrich_elaborate(generate_minimal(f, 3), f, LLMClientConfig(mock.url, timeout=5, max_retries=2))
    assert rec.fallback and rec.style == "structured"
    assert rec.text == generate_structured(f, 3).text
    assert len(mock.requests) == 3


def test_http_error_falls_back():
    f = ex.dallas()
    with MockChat(lambda c: c, status=500) as mock:
        rec = enrich_elaborate(generate_minimal(f, 1), f, LLMClientConfig(mock.url, timeout=5, max_retries=1))
    assert rec.fallback and len(mock.requests) == 2


def test_unreachable_endpoint_falls_back():
    f = ex.la()
    rec = enrich_elaborate(generate_minimal(f), f, LLMClientConfig("http://127.0.0.1:9/none", timeout=1,
                                                                   max_retries=0))
    assert rec.fallback


def test_enrich_many_keeps_order():
    fs = [ex.la(), ex.dallas(), ex.chicago()]
    with MockChat(lambda c: "Enriched. " + original(c)) as mock:
        recs = enrich_many([generate_minimal(f) for f in fs], fs, LLMClientConfig(mock.url, max_concurrency=3))
    assert [r.text.split(". ", 1)[1] for r in recs] == [generate_minimal(f).text for f in fs]
