"""Self-describing model files: a text header line followed by JSON with base64 float64 blobs."""

from __future__ import annotations

import base64
import json

import numpy as np

from .ganforge import ByzantineDiscriminator, Discriminator, FixedSampler, Head, MlpGenerator
from .numerics import MlpModel
from .synthdata import UnlabeledDataset

HEADER = "FEDGOLAB-MODEL v1"


class ModelFormatError(ValueError):
    pass


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(blob["shape"]).astype(np.float64)


def _mlp_payload(m: MlpModel) -> dict:
    return {
        "layer_dims": list(m.layer_dims),
        "activations": [a.value for a in m.activations],
        "weights": [_encode(w) for w in m.weights],
        "biases": [_encode(b) for b in m.biases],
    }


def _mlp_from(payload: dict) -> MlpModel:
    return MlpModel(
        list(payload["layer_dims"]),
        list(payload["activations"]),
        [_decode(w) for w in payload["weights"]],
        [_decode(b) for b in payload["biases"]],
    )


def to_payload(obj) -> dict:
    if isinstance(obj, MlpModel):
        return {"kind": "mlp", "mlp": _mlp_payload(obj)}
    if isinstance(obj, Discriminator):
        return {"kind": "discriminator", "head": obj.head.value, "eps": obj.eps, "mlp": _mlp_payload(obj.body)}
    if isinstance(obj, ByzantineDiscriminator):
        return {"kind": "byzantine", "head": obj.head.value, "eps": obj.eps}
    if isinstance(obj, MlpGenerator):
        return {"kind": "generator", "noise_dim": obj.noise_dim, "mlp": _mlp_payload(obj.body)}
    if isinstance(obj, FixedSampler):
        return {"kind": "fixed_sampler", "points": _encode(obj.data.points)}
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def from_payload(payload: dict):
    kind = payload.get("kind")
    if kind == "mlp":
        return _mlp_from(payload["mlp"])
    if kind == "discriminator":
        return Discriminator(_mlp_from(payload["mlp"]), Head(payload["head"]), payload["eps"])
    if kind == "byzantine":
        return ByzantineDiscriminator(Head(payload["head"]), payload["eps"])
    if kind == "generator":
        return MlpGenerator(payload["noise_dim"], _mlp_from(payload["mlp"]))
    if kind == "fixed_sampler":
        return FixedSampler(UnlabeledDataset(_decode(payload["points"])))
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dumps(obj) -> str:
    return HEADER + "\n" + json.dumps(to_payload(obj), sort_keys=True) + "\n"


def loads(text: str):
    head, _, body = text.partition("\n")
    if head.strip() != HEADER:
        raise ModelFormatError(f"not a model file (header {head[:40]!r})")
    try:
        return from_payload(json.loads(body))
    except (KeyError, json.JSONDecodeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from None


def save(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
