"""Network <-> container sections."""

from __future__ import annotations

import numpy as np

from .. import container
from .layers import LAYER_TYPES, BatchNorm, Conv1D, Dense, Dropout, Reshape
from .network import Network

KIND = "network"


def _build_layer(kind, cfg):
    cls = LAYER_TYPES[kind]
    if cls is Dense:
        return Dense(cfg["n_in"], cfg["n_out"], bias=cfg["bias"])
    if cls is Conv1D:
        return Conv1D(cfg["in_channels"], cfg["filters"], cfg["width"], cfg["stride"], bias=cfg["bias"])
    if cls is BatchNorm:
        return BatchNorm(cfg["n_features"], cfg["eps"], cfg["momentum"])
    if cls is Dropout:
        return Dropout(cfg["rate"], cfg["rng_seed"])
    if cls is Reshape:
        return Reshape(cfg["shape"])
    return cls()


def network_sections(net: Network):
    sections = [("network", {"input_shape": list(net.input_shape), "order": net.describe()})]
    for i, layer in enumerate(net.layers):
        sections.append((f"layer.{i}", {
            "type": layer.kind,
            "config": layer.config(),
            "params": {k: container.encode_array(v) for k, v in layer.params().items()},
            "state": {k: container.encode_array(v) for k, v in layer.state().items()},
        }))
    return sections


def network_from_sections(sections):
    if "network" not in sections:
        raise container.ContainerError("network", "missing")
    meta = sections["network"]
    layers = []
    for i, kind in enumerate(meta.get("order", [])):
        name = f"layer.{i}"
        payload = sections.get(name)
        if payload is None:
            raise container.ContainerError(name, "missing")
        if payload.get("type") != kind or kind not in LAYER_TYPES:
            raise container.ContainerError(name, f"layer type {payload.get('type')!r} does not match order entry {kind!r}")
        try:
            layer = _build_layer(kind, payload["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise container.ContainerError(name, f"bad layer config ({exc})") from None
        for key, enc in payload.get("params", {}).items():
            _assign(layer, key, container.decode_array(enc, name), name)
        for key, enc in payload.get("state", {}).items():
            value = container.decode_array(enc, name)
            if key == "tracked":
                layer.tracked = bool(value[0])
            else:
                _assign(layer, key, value, name)
        layers.append(layer)
    try:
        net = Network(layers, tuple(meta["input_shape"]))
    except (KeyError, ValueError) as exc:
        raise container.ContainerError("network", f"invalid layer stack ({exc})") from None
    return net.set_mode("infer")


def _assign(layer, key, value, section):
    current = getattr(layer, key, None)
    if not isinstance(current, np.ndarray) or current.shape != value.shape:
        raise container.ContainerError(section, f"parameter {key!r} has wrong shape {value.shape}")
    setattr(layer, key, value)


def save_network(path, net: Network, extra_sections=()):
    return container.write(path, KIND, network_sections(net) + list(extra_sections))


def load_network(path):
    """Returns the network (infer mode) and all remaining sections."""
    _, sections = container.read(path, expected_kind=KIND)
    net = network_from_sections(sections)
    extras = {k: v for k, v in sections.items() if k != "network" and not k.startswith("layer.")}
    return net, extras
