import json
import socket
import threading

import pytest
import requests
import torch

from finetune_runner.data import EOS_ID, ByteTokenizer
from finetune_runner.model import TinyLM, TinyLMConfig, save_checkpoint
from finetune_runner.serve import generate, make_server
from finetune_runner.train import train
from tests.conftest import TOY_HPARAMS, TOY_RECORDS, write_jsonl

TOK = ByteTokenizer()


class _FixedLM(TinyLM):
    """Emits a scripted byte sequence then EOS, whatever the prompt."""

    def __init__(self, script: bytes):
        super().__init__(TinyLMConfig(d_model=8, n_layers=1, n_heads=1,
                                      d_ff=8, max_position=256))
        self.script = script

    def forward(self, input_ids):
        batch, width = input_ids.shape
        logits = torch.zeros(batch, width, self.cfg.vocab_size)
        tail = list(input_ids[0, -len(self.script):].tolist())
        emitted = 0
        for n in range(len(self.script), 0, -1):
            if tail[-n:] == list(self.script[:n]):
                emitted = n
                break
        target = self.script[emitted] if emitted < len(self.script) else EOS_ID
        logits[:, -1, target] = 10.0
        return logits


class TestGenerate:
    def test_scripted_sequence(self):
        model = _FixedLM(b"hi there")
        res = generate(model, TOK, "anything", max_tokens=32)
        assert res.text == "hi there"
        assert len(res.token_logprobs) == len(b"hi there") + 1  # plus EOS
        assert all(lp <= 0 for lp in res.token_logprobs)

    def test_token_budget(self):
        model = _FixedLM(b"abcdef")
        res = generate(model, TOK, "x", max_tokens=3)
        assert res.text == "abc"
        assert len(res.token_logprobs) == 3

    def test_stop_sequence_cuts(self):
        model = _FixedLM(b"one\n\ntwo")
        res = generate(model, TOK, "x", max_tokens=32, stop=("\n\n",))
        assert res.text == "one"

    def test_bad_budget(self):
        model = _FixedLM(b"a")
        with pytest.raises(ValueError):
            generate(model, TOK, "x", max_tokens=0)
        with pytest.raises(ValueError):
            generate(model, TOK, "x", max_tokens=256)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("serve")
    train_file = root / "train.jsonl"
    write_jsonl(train_file, TOY_RECORDS)
    hparams = root / "hparams.toml"
    hparams.write_text(TOY_HPARAMS, encoding="utf-8")
    train(train_file, hparams, out_dir=root / "ckpt", seed=0)
    return root / "ckpt"


@pytest.fixture(scope="module")
def server(checkpoint):
    srv = make_server(checkpoint, "127.0.0.1", 0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://{srv.server_address[0]}:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()
    thread.join(timeout=5)


class TestServer:
    def test_contract_shape(self, server):
        resp = requests.post(server, json={
            "prompt": "Answer the following question: What is item 0?\n"
                      "The answer is:",
            "max_tokens": 16,
            "temperature": 0.0,
            "n": 1,
            "stop": ["\n\n"],
            "logprobs": None,
        }, timeout=30)
        assert resp.status_code == 200
        choices = resp.json()["choices"]
        assert len(choices) == 1
        assert isinstance(choices[0]["text"], str)
        assert "logprobs" not in choices[0]

    def test_greedy_deterministic(self, server):
        body = {"prompt": "The answer is:", "max_tokens": 8, "temperature": 0.0}
        first = requests.post(server, json=body, timeout=30).json()
        second = requests.post(server, json=body, timeout=30).json()
        assert first == second

    def test_n_replicates_greedy(self, server):
        body = {"prompt": "x", "max_tokens": 4, "temperature": 0.0, "n": 3}
        choices = requests.post(server, json=body, timeout=30).json()["choices"]
        assert len(choices) == 3
        assert len({c["text"] for c in choices}) == 1

    def test_logprobs_when_requested(self, server):
        body = {"prompt": "x", "max_tokens": 4, "temperature": 0.0,
                "logprobs": 1}
        choice = requests.post(server, json=body, timeout=30).json()["choices"][0]
        lps = choice["logprobs"]["token_logprobs"]
        assert lps and all(lp <= 0 for lp in lps)

    def test_sampling_accepted(self, server):
        body = {"prompt": "x", "max_tokens": 4, "temperature": 1.0, "n": 2}
        choices = requests.post(server, json=body, timeout=30).json()["choices"]
        assert len(choices) == 2

    @pytest.mark.parametrize(
        "body",
        [
            {},
            {"prompt": 7},
            {"prompt": "x", "n": 0},
            {"prompt": "x", "max_tokens": 0},
            {"prompt": "x", "temperature": -1},
            {"prompt": "x", "stop": [3]},
        ],
    )
    def test_bad_requests(self, server, body):
        resp = requests.post(server, json=body, timeout=30)
        assert resp.status_code == 400
        assert "error" in resp.json()

    def test_malformed_json(self, server):
        resp = requests.post(
            server, data="not json",
            headers={"Content-Type": "application/json"},
            timeout=30,
        )
        assert resp.status_code == 400

    def test_busy_port_raises(self, checkpoint, server):
        port = int(server.rsplit(":", 1)[1])
        with pytest.raises(OSError):
            make_server(checkpoint, "127.0.0.1", port)

    def test_port_actually_bound_before_serving(self, checkpoint):
        srv = make_server(checkpoint, "127.0.0.1", 0)
        try:
            with socket.create_connection(srv.server_address, timeout=5):
                pass
        finally:
            srv.server_close()
