"""A small causal transformer over bytes, with checkpoint round trips.

The model family is deliberately self-contained: no pretrained weights,
no hub lookups. ``model_id`` strings pick a size from the built-in
family, which is all a desk-scale CPU run needs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from finetune_runner.data import VOCAB_SIZE

_WEIGHTS = "model.pt"
_CONFIG = "model_config.json"


@dataclass(frozen=True)
class TinyLMConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 256
    max_position: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly into heads")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def parse_model_id(model_id: str) -> TinyLMConfig:
    if model_id == "tiny":
        return TinyLMConfig()
    if model_id.startswith("tiny:"):
        parts = model_id[len("tiny:"):].split("x")
        if len(parts) == 3 and all(p.isdigit() for p in parts):
            d_model, n_layers, n_heads = (int(p) for p in parts)
            return TinyLMConfig(
                d_model=d_model, n_layers=n_layers, n_heads=n_heads, d_ff=4 * d_model
            )
    raise ValueError(
        f"unsupported model id {model_id!r}; use 'tiny' or "
        "'tiny:<d_model>x<layers>x<heads>'"
    )


class _Block(nn.Module):
    def __init__(self, cfg: TinyLMConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, batch_first=True
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
        )

    def forward(self, x: torch.Tensor, causal: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        attn_out, _ = self.attn(h, h, h, attn_mask=causal, need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.ln2(x))


class TinyLM(nn.Module):
    """Decoder-only byte LM.

    Batches are right-padded, so the causal mask alone keeps real
    positions from attending to padding; no key-padding mask needed.
    """

    def __init__(self, cfg: TinyLMConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_position, cfg.d_model)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        _, width = input_ids.shape
        if width > self.cfg.max_position:
            raise ValueError(
                f"sequence length {width} exceeds max position "
                f"{self.cfg.max_position}"
            )
        pos = torch.arange(width, device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(pos)
        causal = torch.triu(
            torch.ones(width, width, dtype=torch.bool, device=input_ids.device),
            diagonal=1,
        )
        for block in self.blocks:
            x = block(x, causal)
        return self.head(self.ln_f(x))


def masked_loss_terms(
    logits: torch.Tensor, input_ids: torch.Tensor, loss_mask: torch.Tensor
) -> tuple[torch.Tensor, int]:
    """Summed next-token cross-entropy over supervised targets, and count.

    A target token is supervised when its own loss flag is set; the
    prediction comes from the position before it.
    """
    targets = input_ids[:, 1:]
    flags = loss_mask[:, 1:].bool()
    n = int(flags.sum())
    if n == 0:
        raise ValueError("batch has no supervised targets")
    per_token = F.cross_entropy(
        logits[:, :-1].float().transpose(1, 2), targets, reduction="none"
    )
    return per_token[flags].sum(), n


def masked_loss(
    logits: torch.Tensor, input_ids: torch.Tensor, loss_mask: torch.Tensor
) -> torch.Tensor:
    total, n = masked_loss_terms(logits, input_ids, loss_mask)
    return total / n


def save_checkpoint(
    out_dir: str | Path, model: TinyLM, meta: dict | None = None
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / _WEIGHTS)
    payload = {"model": asdict(model.cfg), "meta": meta or {}}
    (out / _CONFIG).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def load_checkpoint(ckpt_dir: str | Path) -> tuple[TinyLM, dict]:
    ckpt = Path(ckpt_dir)
    config_path = ckpt / _CONFIG
    if not config_path.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    payload = json.loads(config_path.read_text(encoding="utf-8"))
    model = TinyLM(TinyLMConfig(**payload["model"]))
    model.load_state_dict(torch.load(ckpt / _WEIGHTS, weights_only=True))
    model.eval()
    return model, payload["meta"]
