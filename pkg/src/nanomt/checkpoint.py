"""Versioned model checkpoints.

Layout: a single ``.npz`` archive containing

* ``__meta__``  - UTF-8 JSON bytes (uint8 array) with: ``format_version``,
  ``kind`` ("lm" or "tm"), ``arch`` (architecture dict), ``vocabs`` (full
  tokenizer payloads keyed "src"/"tgt"), ``vocab_hash`` (sha256 over the
  canonical tgt tokenizer JSON), ``step`` and ``dev_history``.
* ``param/<name>`` - one float array per model parameter.

Arrays are stored uncompressed and verbatim, so a save/load round trip
reproduces forward outputs bitwise. Files are written to a temp path and
renamed into place, so a partially written checkpoint is never visible.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import InvalidInputError
from .models import ArchConfig, TransformerLM, TransformerTranslator
from .tokenizer import SubwordModel

FORMAT_VERSION = 1


def vocab_hash(tokenizer: SubwordModel) -> str:
    payload = json.dumps(tokenizer.to_dict(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    meta: dict
    params: dict[str, np.ndarray]

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    @property
    def step(self) -> int:
        return self.meta["step"]

    def tokenizer(self, side: str = "tgt") -> SubwordModel:
        return SubwordModel.from_dict(self.meta["vocabs"][side])

    def build_model(self):
        arch = ArchConfig.from_dict(self.meta["arch"])
        params = {
            name: Tensor(arr.copy(), requires_grad=True, name=name)
            for name, arr in self.params.items()
        }
        if self.kind == "lm":
            model = TransformerLM(self.meta["tgt_vocab_size"], arch, params=params)
        elif self.kind == "tm":
            model = TransformerTranslator(
                self.meta["src_vocab_size"],
                self.meta["tgt_vocab_size"],
                arch,
                params=params,
            )
        else:
            raise InvalidInputError(f"unknown checkpoint kind {self.kind!r}")
        return model


def save_checkpoint(
    path,
    model,
    tokenizers: dict[str, SubwordModel],
    step: int,
    dev_history: list | None = None,
) -> None:
    if "tgt" not in tokenizers:
        raise InvalidInputError("checkpoint needs at least the target tokenizer")
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "arch": model.arch.to_dict(),
        "vocabs": {side: tok.to_dict() for side, tok in tokenizers.items()},
        "vocab_hash": vocab_hash(tokenizers["tgt"]),
        "tgt_vocab_size": len(tokenizers["tgt"].vocab),
        "step": step,
        "dev_history": dev_history or [],
    }
    if model.kind == "tm":
        meta["src_vocab_size"] = len(tokenizers["src"].vocab)
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, tensor in model.params.items():
        arrays[f"param/{name}"] = tensor.data
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as archive:
        if "__meta__" not in archive:
            raise InvalidInputError(f"{path} is not a model checkpoint")
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise InvalidInputError(
                f"unsupported checkpoint format {meta.get('format_version')!r}"
            )
        params = {
            key[len("param/"):]: archive[key]
            for key in archive.files
            if key.startswith("param/")
        }
    return Checkpoint(meta=meta, params=params)
