"""Python bindings for the tensor-train transformer training core."""

import json as _json

from . import _core
from ._core import ConfigError, ShapeError, TTLinear, TTMEmbedding, closed_forms, schedule_qkv

__all__ = [
    "ConfigError",
    "ShapeError",
    "TTLinear",
    "TTMEmbedding",
    "bram_plan",
    "closed_forms",
    "compression",
    "cost_report",
    "gradcheck",
    "schedule_qkv",
    "sweep",
    "synthesize",
    "train",
]


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def cost_report(out_modes, in_modes, rank, K):
    return _json.loads(_core.cost_report(list(out_modes), list(in_modes), rank, K))


def sweep(out_modes, in_modes, rank, K, axis, values):
    return _json.loads(_core.sweep(list(out_modes), list(in_modes), rank, K, axis, list(values)))


def bram_plan(arrays, g_max=8):
    return _json.loads(_core.bram_plan(_json.dumps(arrays), g_max))


def synthesize(classes=2, length=32, count=500, seed=7, vocab=100):
    text = _core.synthesize(classes, length, count, seed, vocab)
    return [_json.loads(line) for line in text.splitlines() if line]


def train(config=None, epochs=0):
    return _core.train(_dump(config), epochs)


def gradcheck(config=None):
    return _core.gradcheck(_dump(config))


def compression(config=None):
    compressed, dense = _core.compression(_dump(config))
    return {"compressed_params": compressed, "dense_params": dense, "ratio": dense / compressed}
