"""Desk-scale trainable models: a word-level vocab, a tiny decoder LM, a tiny
encoder-decoder, and a hashing bag-of-words embedder.

These run every training and generation path on CPU in seconds, so the whole
toolkit is exercisable without downloading pretrained weights. They share the
checkpoint layout used across the toolkit: a directory with ``manifest.json``
(model type + config), ``weights.pt``, and ``vocab.json`` where applicable.
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class WordVocab:
    """Whitespace word-level vocabulary with pad/bos/eos/unk specials."""

    def __init__(self, words: Sequence[str]):
        self.itos = list(SPECIAL_TOKENS) + list(words)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Sequence[str]) -> "WordVocab":
        seen = sorted({w for text in texts for w in text.lower().split()})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(w, UNK) for w in text.lower().split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i > UNK)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.itos[len(SPECIAL_TOKENS):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WordVocab":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def _state_digest(module: nn.Module) -> str:
    """Short content hash of the parameters; changes whenever weights change."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:8]


class _Block(nn.Module):
    """Pre-norm transformer block: self-attention (+ optional cross) + MLP."""

    def __init__(self, d_model: int, n_heads: int, cross: bool = False, dtype=torch.float32):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model, dtype=dtype)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True, dtype=dtype)
        self.cross = cross
        if cross:
            self.ln_cross = nn.LayerNorm(d_model, dtype=dtype)
            self.cross_attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True, dtype=dtype)
        self.ln2 = nn.LayerNorm(d_model, dtype=dtype)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model, dtype=dtype),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model, dtype=dtype),
        )

    def forward(
        self,
        x: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        key_padding_mask: torch.Tensor | None = None,
        memory: torch.Tensor | None = None,
        collect_cross: list | None = None,
    ) -> torch.Tensor:
        h = self.ln1(x)
        attn_out, _ = self.attn(
            h, h, h, attn_mask=attn_mask, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = x + attn_out
        if self.cross and memory is not None:
            h = self.ln_cross(x)
            need = collect_cross is not None
            cross_out, weights = self.cross_attn(
                h, memory, memory, need_weights=need, average_attn_weights=False
            )
            if need:
                collect_cross.append(weights.detach())
            x = x + cross_out
        return x + self.mlp(self.ln2(x))


class TinyDecoderLM(nn.Module):
    """Two-layer causal transformer language model over a word vocabulary."""

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 64,
        n_heads: int = 2,
        n_layers: int = 2,
        max_len: int = 512,
        dtype=torch.float32,
    ):
        super().__init__()
        self.config = {
            "vocab_size": vocab_size,
            "d_model": d_model,
            "n_heads": n_heads,
            "n_layers": n_layers,
            "max_len": max_len,
        }
        self.tok_emb = nn.Embedding(vocab_size, d_model, dtype=dtype)
        self.pos_emb = nn.Embedding(max_len, d_model, dtype=dtype)
        self.blocks = nn.ModuleList(
            [_Block(d_model, n_heads, dtype=dtype) for _ in range(n_layers)]
        )
        self.ln_f = nn.LayerNorm(d_model, dtype=dtype)
        self.head = nn.Linear(d_model, vocab_size, bias=False, dtype=dtype)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        seq_len = ids.shape[1]
        if seq_len > self.config["max_len"]:
            raise ConfigError(f"sequence of {seq_len} tokens exceeds max_len {self.config['max_len']}")
        pos = torch.arange(seq_len, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None]
        mask = torch.triu(
            torch.full((seq_len, seq_len), float("-inf"), dtype=x.dtype, device=ids.device), 1
        )
        for block in self.blocks:
            x = block(x, attn_mask=mask)
        return self.head(self.ln_f(x))


class TinyEncoderDecoder(nn.Module):
    """Small seq2seq transformer whose decoder cross-attends to encoder states.

    The decoder accepts any memory length, so several independently encoded
    inputs can be concatenated along the sequence axis before decoding; no
    segment-index information is added, which keeps the decoder logits
    invariant to the concatenation order.
    """

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 64,
        n_heads: int = 2,
        n_layers: int = 2,
        max_len: int = 512,
        dtype=torch.float32,
    ):
        super().__init__()
        self.config = {
            "vocab_size": vocab_size,
            "d_model": d_model,
            "n_heads": n_heads,
            "n_layers": n_layers,
            "max_len": max_len,
        }
        self.tok_emb = nn.Embedding(vocab_size, d_model, dtype=dtype)
        self.pos_emb = nn.Embedding(max_len, d_model, dtype=dtype)
        self.enc_blocks = nn.ModuleList(
            [_Block(d_model, n_heads, dtype=dtype) for _ in range(n_layers)]
        )
        self.enc_ln = nn.LayerNorm(d_model, dtype=dtype)
        self.dec_tok_emb = nn.Embedding(vocab_size, d_model, dtype=dtype)
        self.dec_pos_emb = nn.Embedding(max_len, d_model, dtype=dtype)
        self.dec_blocks = nn.ModuleList(
            [_Block(d_model, n_heads, cross=True, dtype=dtype) for _ in range(n_layers)]
        )
        self.dec_ln = nn.LayerNorm(d_model, dtype=dtype)
        self.head = nn.Linear(d_model, vocab_size, bias=False, dtype=dtype)

    def encode(self, ids: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None]
        for block in self.enc_blocks:
            x = block(x, key_padding_mask=key_padding_mask)
        return self.enc_ln(x)

    def encode_fid(self, id_lists: Sequence[Sequence[int]]) -> torch.Tensor:
        """Encode each input independently and concatenate the states.

        Returns memory of shape [1, sum(len_i), d_model].
        """
        parts = []
        for ids in id_lists:
            tensor = torch.as_tensor(list(ids), dtype=torch.long)[None]
            parts.append(self.encode(tensor)[0])
        return torch.cat(parts, dim=0)[None]

    def decode(
        self,
        memory: torch.Tensor,
        decoder_ids: torch.Tensor,
        collect_cross: list | None = None,
    ) -> torch.Tensor:
        seq_len = decoder_ids.shape[1]
        pos = torch.arange(seq_len, device=decoder_ids.device)
        x = self.dec_tok_emb(decoder_ids) + self.dec_pos_emb(pos)[None]
        mask = torch.triu(
            torch.full((seq_len, seq_len), float("-inf"), dtype=x.dtype, device=x.device), 1
        )
        for block in self.dec_blocks:
            x = block(x, attn_mask=mask, memory=memory, collect_cross=collect_cross)
        return self.head(self.dec_ln(x))

    def forward(self, encoder_ids: torch.Tensor, decoder_ids: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(encoder_ids), decoder_ids)

    def cross_attention(
        self, id_lists: Sequence[Sequence[int]], decoder_ids: torch.Tensor
    ) -> torch.Tensor:
        """Cross-attention weights for a FiD forward pass, teacher-forced.

        Returns a tensor of shape [layers, heads, decoder_len, total_encoder_len]
        whose rows sum to 1 over the encoder axis.
        """
        memory = self.encode_fid(id_lists)
        collected: list[torch.Tensor] = []
        self.decode(memory, decoder_ids, collect_cross=collected)
        return torch.stack([w[0] for w in collected], dim=0)


def _stable_bucket(token: str, n_buckets: int) -> int:
    digest = hashlib.md5(token.encode("utf-8")).hexdigest()
    return int(digest[:8], 16) % n_buckets


class HashingBowEmbedder(nn.Module):
    """Trainable linear embedder over hashed bag-of-words features.

    Text is lowercased, whitespace-split, hashed into ``n_buckets`` count
    features, projected to ``dim`` and L2-normalized, so inner products are
    cosine similarities. Queries and passages share the projection.
    """

    def __init__(self, dim: int = 32, n_buckets: int = 4096, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = {"dim": dim, "n_buckets": n_buckets, "seed": seed}
        generator = torch.Generator().manual_seed(seed)
        weight = torch.randn(n_buckets, dim, generator=generator, dtype=dtype) / math.sqrt(n_buckets)
        self.weight = nn.Parameter(weight)

    @property
    def dimension(self) -> int:
        return self.config["dim"]

    @property
    def identity(self) -> str:
        cfg = self.config
        return f"hash-bow:b{cfg['n_buckets']}:d{cfg['dim']}:{_state_digest(self)}"

    def featurize(self, texts: Sequence[str]) -> torch.Tensor:
        out = torch.zeros(len(texts), self.config["n_buckets"], dtype=self.weight.dtype)
        for i, text in enumerate(texts):
            for token in text.lower().split():
                out[i, _stable_bucket(token, self.config["n_buckets"])] += 1.0
        return out

    def encode(self, texts: Sequence[str]) -> torch.Tensor:
        """Differentiable batch encoding; rows are unit-norm."""
        feats = self.featurize(texts)
        projected = feats @ self.weight
        return projected / projected.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    # retrieval.Embedder interface (inference only)
    def embed_query(self, text: str) -> np.ndarray:
        with torch.no_grad():
            return self.encode([text])[0].numpy()

    def embed_passage(self, text: str) -> np.ndarray:
        return self.embed_query(text)

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.json").write_text(
            json.dumps({"type": "hash_bow", **self.config}), encoding="utf-8"
        )
        torch.save(self.state_dict(), out_dir / "weights.pt")

    @classmethod
    def load(cls, ckpt_dir: str | Path) -> "HashingBowEmbedder":
        ckpt_dir = Path(ckpt_dir)
        manifest = json.loads((ckpt_dir / "manifest.json").read_text(encoding="utf-8"))
        model = cls(dim=manifest["dim"], n_buckets=manifest["n_buckets"], seed=manifest["seed"])
        model.load_state_dict(torch.load(ckpt_dir / "weights.pt", weights_only=True))
        return model


def save_language_model(
    model: TinyDecoderLM | TinyEncoderDecoder, vocab: WordVocab, out_dir: str | Path
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = "tiny_decoder" if isinstance(model, TinyDecoderLM) else "tiny_encdec"
    (out_dir / "manifest.json").write_text(
        json.dumps({"type": kind, **model.config}), encoding="utf-8"
    )
    torch.save(model.state_dict(), out_dir / "weights.pt")
    vocab.save(out_dir / "vocab.json")


def load_language_model(ckpt_dir: str | Path) -> tuple[TinyDecoderLM | TinyEncoderDecoder, WordVocab]:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text(encoding="utf-8"))
    kind = manifest.pop("type")
    if kind == "tiny_decoder":
        model: TinyDecoderLM | TinyEncoderDecoder = TinyDecoderLM(**manifest)
    elif kind == "tiny_encdec":
        model = TinyEncoderDecoder(**manifest)
    else:
        raise ConfigError(f"unknown language model type {kind!r}")
    model.load_state_dict(torch.load(ckpt_dir / "weights.pt", weights_only=True))
    vocab = WordVocab.load(ckpt_dir / "vocab.json")
    return model, vocab


def load_embedder(ckpt_dir: str | Path) -> HashingBowEmbedder:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("type") != "hash_bow":
        raise ConfigError(f"not an embedder checkpoint: {manifest.get('type')!r}")
    return HashingBowEmbedder.load(ckpt_dir)
