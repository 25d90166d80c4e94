"""Serve a checkpoint over the completions HTTP contract.

The endpoint accepts the same POST body the upstream evaluation client
sends ({"prompt", "max_tokens", "temperature", "n", "stop",
"logprobs"}) and answers with {"choices": [{"text", ...}]}, so a
served checkpoint scores through that client with no changes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import torch
import torch.nn.functional as F

from finetune_runner.data import EOS_ID, ByteTokenizer
from finetune_runner.model import TinyLM, load_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_logprobs: tuple[float, ...]


def generate(
    model: TinyLM,
    tok: ByteTokenizer,
    prompt: str,
    *,
    max_tokens: int = 64,
    temperature: float = 0.0,
    stop: tuple[str, ...] = (),
    generator: torch.Generator | None = None,
) -> GenerationResult:
    """One completion; greedy when temperature is zero.

    The prompt is left-truncated so prompt plus generation always fits
    the model's position budget. Generation ends at EOS, at the token
    budget, or at the earliest stop-sequence hit, whichever is first.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be positive")
    prompt_ids = tok.encode(prompt)
    keep = model.cfg.max_position - max_tokens
    if keep < 1:
        raise ValueError("max_tokens leaves no room for the prompt")
    prompt_ids = prompt_ids[-keep:]

    out_ids: list[int] = []
    logprobs: list[float] = []
    with torch.no_grad():
        for _ in range(max_tokens):
            ids = torch.tensor([prompt_ids + out_ids], dtype=torch.long)
            logits = model(ids)[0, -1].float()
            if temperature <= 0:
                next_id = int(logits.argmax())
            else:
                probs = F.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=generator))
            logprobs.append(float(F.log_softmax(logits, dim=-1)[next_id]))
            if next_id == EOS_ID:
                break
            out_ids.append(next_id)
            text = tok.decode(out_ids)
            cuts = [idx for s in stop if (idx := text.find(s)) != -1]
            if cuts:
                return GenerationResult(text[: min(cuts)], tuple(logprobs))
    return GenerationResult(tok.decode(out_ids), tuple(logprobs))


class _Handler(BaseHTTPRequestHandler):
    server_version = "finetune-runner/0.1"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        log.debug("%s " + format, self.address_string(), *args)

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):  # noqa: N802 - stdlib casing
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            prompt = payload["prompt"]
            if not isinstance(prompt, str):
                raise ValueError("prompt must be a string")
            max_tokens = int(payload.get("max_tokens", 64))
            temperature = float(payload.get("temperature", 0.0))
            n = int(payload.get("n", 1))
            stop = payload.get("stop") or ()
            want_logprobs = payload.get("logprobs") is not None
            if n < 1 or max_tokens < 1 or temperature < 0:
                raise ValueError("n, max_tokens, temperature out of range")
            if not all(isinstance(s, str) for s in stop):
                raise ValueError("stop must be a list of strings")
        except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
            self._reply(400, {"error": f"bad request: {exc}"})
            return

        srv: "CompletionServer" = self.server  # type: ignore[assignment]
        if temperature <= 0:
            results = [srv.generate_one(prompt, max_tokens, 0.0, tuple(stop))] * n
        else:
            results = [
                srv.generate_one(prompt, max_tokens, temperature, tuple(stop))
                for _ in range(n)
            ]
        choices = []
        for res in results:
            choice: dict = {"text": res.text}
            if want_logprobs:
                choice["logprobs"] = {"token_logprobs": list(res.token_logprobs)}
            choices.append(choice)
        self._reply(200, {"choices": choices})


class CompletionServer(HTTPServer):
    """Sequential server bound to one loaded checkpoint."""

    def __init__(self, address: tuple[str, int], model: TinyLM, seed: int = 0):
        super().__init__(address, _Handler)
        self.model = model
        self.tokenizer = ByteTokenizer()
        self.generator = torch.Generator().manual_seed(seed)

    def generate_one(
        self, prompt: str, max_tokens: int, temperature: float,
        stop: tuple[str, ...],
    ) -> GenerationResult:
        return generate(
            self.model,
            self.tokenizer,
            prompt,
            max_tokens=max_tokens,
            temperature=temperature,
            stop=stop,
            generator=self.generator,
        )


def make_server(
    checkpoint_dir: str | Path, host: str = "127.0.0.1", port: int = 0
) -> CompletionServer:
    """Load the checkpoint and bind; a busy port raises at bind time."""
    model, _ = load_checkpoint(checkpoint_dir)
    return CompletionServer((host, port), model)


def serve(checkpoint_dir: str | Path, port: int, host: str = "127.0.0.1") -> None:
    server = make_server(checkpoint_dir, host, port)
    log.info("serving %s on %s:%d", checkpoint_dir, *server.server_address)
    print(f"serving on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
