"""Combining the attribute, text and image embeddings into one context vector."""
from __future__ import annotations

from dataclasses import dataclass, field

from maex import tensor as T
from maex.errors import ConfigError, DimensionError
from maex.tensor import Tensor

VARIANTS = ("concat", "gmu", "text", "image")


@dataclass
class FusionParams:
    variant: str
    weights: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.weights[name]


def param_shapes(variant, k):
    """Parameter names and shapes needed by one fusion variant."""
    if variant == "concat":
        return {"W": (3 * k, k), "b": (k,)}
    if variant == "gmu":
        return {
            "text.W": (2 * k, k),
            "text.b": (k,),
            "image.W": (2 * k, k),
            "image.b": (k,),
            "gate.W": (2 * k, k),
            "gate.b": (k,),
        }
    if variant in ("text", "image"):
        return {"W": (2 * k, k), "b": (k,)}
    raise ConfigError(f"unknown fusion variant {variant!r}; expected one of {', '.join(VARIANTS)}")


def _same_shape(*xs):
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise DimensionError("fusion inputs differ in shape: " + ", ".join(str(x.shape) for x in xs))


def fuse_concat(c_a, c_D, c_I, params):
    _same_shape(c_a, c_D, c_I)
    return T.affine(T.concat([c_a, c_D, c_I]), params["W"], params["b"])


def gmu_parts(c_a, c_D, c_I, params):
    """Return (c_D^a, c_I^a, z, c) for the gated multimodal unit."""
    _same_shape(c_a, c_D, c_I)
    cD_a = T.affine(T.concat([c_a, c_D]), params["text.W"], params["text.b"])
    cI_a = T.affine(T.concat([c_a, c_I]), params["image.W"], params["image.b"])
    z = T.sigmoid(T.affine(T.concat([cD_a, cI_a]), params["gate.W"], params["gate.b"]))
    # z*cD + (1-z)*cI, written to touch z once
    c = cI_a + z * (cD_a - cI_a)
    return cD_a, cI_a, z, c


def fuse_gmu(c_a, c_D, c_I, params):
    return gmu_parts(c_a, c_D, c_I, params)[3]


def fuse_unimodal(c_a, c_mode, params):
    _same_shape(c_a, c_mode)
    return T.affine(T.concat([c_a, c_mode]), params["W"], params["b"])


def fuse(c_a, c_D, c_I, params):
    """Dispatch on ``params.variant``; unimodal variants ignore the other modality."""
    v = params.variant
    if v == "concat":
        return fuse_concat(c_a, c_D, c_I, params)
    if v == "gmu":
        return fuse_gmu(c_a, c_D, c_I, params)
    if v == "text":
        return fuse_unimodal(c_a, c_D, params)
    if v == "image":
        return fuse_unimodal(c_a, c_I, params)
    raise ConfigError(f"unknown fusion variant {v!r}")
