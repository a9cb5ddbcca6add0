"""In-process OpenAI-compatible mock server for backend tests."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockOpenAI:
    """Records request bodies and serves a scripted status/response queue."""

    def __init__(self):
        self.requests: list[dict] = []
        self.paths: list[str] = []
        # each entry: (status_code, payload dict); repeats last entry forever
        self.script: list[tuple[int, dict]] = [(200, self._default_chat("ok"))]
        self._lock = threading.Lock()
        self._served = 0

    @staticmethod
    def _default_chat(text):
        return {"choices": [{"message": {"role": "assistant", "content": text}}]}

    @staticmethod
    def chat_payload(text):
        return MockOpenAI._default_chat(text)

    @staticmethod
    def embedding_payload(vectors):
        return {"data": [{"embedding": list(v)} for v in vectors]}

    def next_response(self):
        with self._lock:
            idx = min(self._served, len(self.script) - 1)
            self._served += 1
            return self.script[idx]


def start_mock(mock: MockOpenAI):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            mock.requests.append(body)
            mock.paths.append(self.path)
            status, payload = mock.next_response()
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"
