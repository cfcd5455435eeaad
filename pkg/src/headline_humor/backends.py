"""Contextual encoder backends.

A backend turns a subword unit sequence into a stack of per-position layer
states (embedding layer first, top layer last). Two implementations ship:
a small deterministic stand-in that runs anywhere, and a wrapper around
pretrained transformer checkpoints loaded from a local weights directory.
"""

from __future__ import annotations

import abc
import hashlib
import os
import re
import zlib
from typing import Sequence

import torch
from torch import nn

# Directory that holds pretrained backend weights, one subdirectory per
# backend identity.
BACKEND_DIR_ENV = "HEADLINE_HUMOR_BACKEND_DIR"

_TOY_RE = re.compile(r"^toy(?:-d(?P<d>\d+))?(?:-l(?P<l>\d+))?(?:-s(?P<s>\d+))?$")


class EncoderBackend(abc.ABC):
    """Layered per-position encoder with shared parameters across calls."""

    identity: str
    num_layers: int  # transformer layers; encode_layers returns num_layers + 1 stacks
    width: int
    mask_unit: str
    mode: str  # "freeze" | "finetune"
    max_units: int | None = None

    @abc.abstractmethod
    def subword_units(self, word: str, is_first: bool) -> list[str]:
        """Tokenize one word into subword units; never empty."""

    @abc.abstractmethod
    def encode_layers(self, units: Sequence[str]) -> torch.Tensor:
        """Encode a unit sequence into a (num_layers + 1, len(units), width)
        stack of per-position states."""

    @abc.abstractmethod
    def module(self) -> nn.Module:
        """The torch module holding this backend's parameters."""

    def set_mode(self, mode: str) -> None:
        if mode not in ("freeze", "finetune"):
            raise ValueError(f"unknown transfer mode {mode!r}")
        self.mode = mode
        self.module().requires_grad_(mode == "finetune")

    def parameter_checksum(self) -> str:
        """SHA-256 over all parameters, for freeze-invariance checks."""
        digest = hashlib.sha256()
        state = self.module().state_dict()
        for name in sorted(state):
            digest.update(name.encode())
            digest.update(state[name].detach().cpu().numpy().tobytes())
        return digest.hexdigest()


class _ToyModule(nn.Module):
    def __init__(self, buckets: int, width: int, num_layers: int, seed: int):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.embedding = nn.Embedding(buckets, width)
        with torch.no_grad():
            self.embedding.weight.copy_(
                torch.randn(buckets, width, generator=generator) * 0.5
            )
        self.locals = nn.ModuleList()
        self.mixers = nn.ModuleList()
        for _ in range(num_layers):
            local = nn.Linear(width, width)
            mixer = nn.Linear(width, width, bias=False)
            with torch.no_grad():
                for weight in (local.weight, mixer.weight):
                    weight.copy_(
                        torch.randn(width, width, generator=generator)
                        / width**0.5
                    )
                local.bias.zero_()
            self.locals.append(local)
            self.mixers.append(mixer)

    def forward(self, unit_ids: torch.Tensor) -> torch.Tensor:
        states = [self.embedding(unit_ids)]
        for local, mixer in zip(self.locals, self.mixers):
            previous = states[-1]
            sentence = previous.mean(dim=0, keepdim=True)
            states.append(torch.tanh(local(previous) + mixer(sentence)))
        return torch.stack(states)


class ToyBackend(EncoderBackend):
    """Deterministic hash-embedding encoder for offline tests and smoke runs.

    Words longer than five characters split into two pseudo-subwords, so
    multi-unit span pooling gets exercised. Each layer mixes in the sentence
    mean, which makes the mask-position state depend on the whole sentence.
    """

    BUCKETS = 4096

    def __init__(
        self,
        width: int = 32,
        num_layers: int = 4,
        seed: int = 0,
        mode: str = "freeze",
    ):
        self.identity = f"toy-d{width}-l{num_layers}-s{seed}"
        self.width = width
        self.num_layers = num_layers
        self.seed = seed
        self.mask_unit = "[MASK]"
        self.max_units = None
        self._module = _ToyModule(self.BUCKETS, width, num_layers, seed)
        self.set_mode(mode)

    @classmethod
    def from_identity(cls, identity: str, mode: str = "freeze") -> "ToyBackend":
        match = _TOY_RE.match(identity)
        if match is None:
            raise ValueError(f"not a toy backend identity: {identity!r}")
        return cls(
            width=int(match.group("d") or 32),
            num_layers=int(match.group("l") or 4),
            seed=int(match.group("s") or 0),
            mode=mode,
        )

    def subword_units(self, word: str, is_first: bool) -> list[str]:
        if word == self.mask_unit or len(word) <= 5:
            return [word]
        half = len(word) // 2
        return [word[:half], "##" + word[half:]]

    def _bucket(self, unit: str) -> int:
        return zlib.crc32(unit.encode("utf-8")) % self.BUCKETS

    def encode_layers(self, units: Sequence[str]) -> torch.Tensor:
        ids = torch.tensor([self._bucket(u) for u in units], dtype=torch.long)
        return self._module(ids)

    def module(self) -> nn.Module:
        return self._module


class HFBackend(EncoderBackend):
    """Wrapper around a pretrained transformer checkpoint.

    Weights resolve from `directory`, else from ``$HEADLINE_HUMOR_BACKEND_DIR/
    <identity>``, else the identity is passed through to the loader (useful
    for an absolute path). Special tokens are added internally and stripped
    from the returned states, so positions line up with the given units.
    """

    def __init__(
        self,
        identity: str,
        mode: str = "freeze",
        directory: str | None = None,
    ):
        from transformers import AutoModel, AutoTokenizer

        path = directory or _resolve_backend_path(identity)
        self._tokenizer = AutoTokenizer.from_pretrained(path)
        self._model = AutoModel.from_pretrained(path, output_hidden_states=True)
        self._model.eval()
        config = self._model.config
        self.identity = identity
        self.num_layers = config.num_hidden_layers
        self.width = config.hidden_size
        if self._tokenizer.mask_token is None:
            raise ValueError(f"backend {identity!r} has no mask token")
        self.mask_unit = self._tokenizer.mask_token
        # discover the special-token frame empirically: encode the mask token
        # alone and see what surrounds it
        probe = self._tokenizer(self.mask_unit)["input_ids"]
        mask_id = self._tokenizer.convert_tokens_to_ids(self.mask_unit)
        position = probe.index(mask_id)
        self._prefix_ids = probe[:position]
        self._suffix_ids = probe[position + 1 :]
        specials = len(self._prefix_ids) + len(self._suffix_ids)
        limit = getattr(config, "max_position_embeddings", None)
        self.max_units = None if limit is None else limit - specials - 2
        self.set_mode(mode)

    def subword_units(self, word: str, is_first: bool) -> list[str]:
        if word == self.mask_unit:
            return [word]
        text = word if is_first else " " + word
        units = self._tokenizer.tokenize(text)
        if not units:
            raise ValueError(f"word {word!r} produced no subword units")
        return units

    def encode_layers(self, units: Sequence[str]) -> torch.Tensor:
        if not units:
            raise ValueError("empty unit sequence")
        unit_ids = self._tokenizer.convert_tokens_to_ids(list(units))
        input_ids = self._prefix_ids + unit_ids + self._suffix_ids
        offset = len(self._prefix_ids)
        batch = torch.tensor([input_ids], dtype=torch.long)
        outputs = self._model(batch, attention_mask=torch.ones_like(batch))
        hidden = torch.stack(outputs.hidden_states)  # (L + 1, 1, T', width)
        return hidden[:, 0, offset : offset + len(units), :]

    def module(self) -> nn.Module:
        return self._model


def _resolve_backend_path(identity: str) -> str:
    root = os.environ.get(BACKEND_DIR_ENV)
    if root:
        candidate = os.path.join(root, identity)
        if os.path.isdir(candidate):
            return candidate
    return identity


def load_backend(
    identity: str, mode: str = "freeze", directory: str | None = None
) -> EncoderBackend:
    """Build a backend from its identity string."""
    if _TOY_RE.match(identity):
        return ToyBackend.from_identity(identity, mode=mode)
    return HFBackend(identity, mode=mode, directory=directory)
