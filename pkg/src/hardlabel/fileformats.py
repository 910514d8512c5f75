"""Descriptor + raw-blob file formats for models and images.

A stored object is a pair of files: a plain-text descriptor of ``key = value``
lines naming the geometry, and a little-endian float32 binary blob holding
the raw numbers. Model blobs concatenate, layer by layer, the row-major
weight matrix followed by the bias vector. Image blobs hold the flat pixel
buffer. Loading is bit-exact: saving a loaded object reproduces the blob
byte for byte.
"""

from __future__ import annotations

import os

import numpy as np

from .core import Image
from .errors import ShapeError
from .oracles import ACTIVATIONS, MlpModel

_FLOAT = np.dtype("<f4")


def _write_descriptor(path: str, fields: dict) -> None:
    lines = [f"{key} = {value}" for key, value in fields.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_descriptor(path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed descriptor line: {raw!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    return fields


def _blob_path(descriptor_path: str, fields: dict[str, str], key: str) -> str:
    name = fields[key]
    return os.path.join(os.path.dirname(os.path.abspath(descriptor_path)), name)


def save_mlp(model: MlpModel, path: str) -> None:
    """Write ``path`` (descriptor) and ``path + '.bin'`` (weight blob)."""
    blob_name = os.path.basename(path) + ".bin"
    fields: dict = {
        "kind": "mlp",
        "channels": model.dims[0],
        "width": model.dims[1],
        "height": model.dims[2],
        "classes": model.class_count,
        "layers": len(model.layers),
        "weights": blob_name,
    }
    chunks = []
    for i, (w, b, act) in enumerate(model.layers):
        fields[f"layer{i}.rows"] = w.shape[0]
        fields[f"layer{i}.cols"] = w.shape[1]
        fields[f"layer{i}.activation"] = act
        chunks.append(np.ascontiguousarray(w, dtype=_FLOAT).tobytes())
        chunks.append(np.ascontiguousarray(b, dtype=_FLOAT).tobytes())
    _write_descriptor(path, fields)
    with open(os.path.join(os.path.dirname(os.path.abspath(path)), blob_name), "wb") as fh:
        fh.write(b"".join(chunks))


def load_mlp(path: str) -> MlpModel:
    fields = _read_descriptor(path)
    if fields.get("kind") != "mlp":
        raise ValueError(f"{path}: not a model descriptor (kind={fields.get('kind')!r})")
    dims = (int(fields["channels"]), int(fields["width"]), int(fields["height"]))
    n_layers = int(fields["layers"])
    blob = np.fromfile(_blob_path(path, fields, "weights"), dtype=_FLOAT)
    layers = []
    offset = 0
    for i in range(n_layers):
        rows = int(fields[f"layer{i}.rows"])
        cols = int(fields[f"layer{i}.cols"])
        act = fields[f"layer{i}.activation"]
        if act not in ACTIVATIONS:
            raise ValueError(f"{path}: unknown activation {act!r}")
        w = blob[offset : offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        b = blob[offset : offset + rows]
        offset += rows
        layers.append((np.float64(1.0) * w, np.float64(1.0) * b, act))
    if offset != blob.size:
        raise ShapeError(f"{path}: blob holds {blob.size} floats, descriptor uses {offset}")
    model = MlpModel(layers, *dims)
    if model.class_count != int(fields["classes"]):
        raise ShapeError(f"{path}: final layer width disagrees with declared class count")
    return model


def save_image(image: Image, path: str) -> None:
    """Write ``path`` (descriptor) and ``path + '.bin'`` (pixel blob)."""
    blob_name = os.path.basename(path) + ".bin"
    _write_descriptor(
        path,
        {
            "kind": "image",
            "channels": image.channels,
            "width": image.width,
            "height": image.height,
            "data": blob_name,
        },
    )
    with open(os.path.join(os.path.dirname(os.path.abspath(path)), blob_name), "wb") as fh:
        fh.write(np.ascontiguousarray(image.data, dtype=_FLOAT).tobytes())


def load_image(path: str) -> Image:
    fields = _read_descriptor(path)
    if fields.get("kind") != "image":
        raise ValueError(f"{path}: not an image descriptor (kind={fields.get('kind')!r})")
    dims = (int(fields["channels"]), int(fields["width"]), int(fields["height"]))
    blob = np.fromfile(_blob_path(path, fields, "data"), dtype=_FLOAT)
    return Image(blob.astype(np.float64), *dims)
