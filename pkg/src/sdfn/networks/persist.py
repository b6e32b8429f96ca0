"""Versioned weight files: text header, then little-endian float64 values.

Header lines::

    SDFN-WEIGHTS
    version 1
    kind densenet
    config {"growth_rate": 8, ...}
    count 10734
    end

Values follow in declaration order, parameters first, then buffers.
"""
import hashlib
import json

import numpy as np

from .models import FusionConfig, MiniDenseNetConfig, MiniUNetConfig, build_model

MAGIC = "SDFN-WEIGHTS"
VERSION = 1

CONFIG_TYPES = {"densenet": MiniDenseNetConfig, "unet": MiniUNetConfig, "fusion": FusionConfig}


class WeightFileError(ValueError):
    pass


def config_from_dict(kind, d):
    try:
        cls = CONFIG_TYPES[kind]
    except KeyError:
        raise WeightFileError(f"unknown model kind {kind!r}") from None
    try:
        return cls(**d)
    except (TypeError, ValueError) as err:
        raise WeightFileError(f"bad {kind} config: {err}") from None


def flat_state(model):
    return np.concatenate([a.ravel() for a in model.state_arrays()]).astype("<f8")


def checksum(model, params_only=False):
    arrays = [t.data for _, t in model.parameters()] if params_only else model.state_arrays()
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def encode_weights(model, extra=None):
    values = flat_state(model)
    lines = [MAGIC, f"version {VERSION}", f"kind {model.kind}",
             "config " + json.dumps(model.config.to_dict(), sort_keys=True)]
    if extra:
        lines.append("extra " + json.dumps(extra, sort_keys=True))
    lines += [f"count {values.size}", "end"]
    return ("\n".join(lines) + "\n").encode("ascii") + values.tobytes()


def save_weights(path, model, extra=None):
    with open(path, "wb") as fh:
        fh.write(encode_weights(model, extra))


def _parse_header(buf):
    fields = {}
    pos = 0
    for expected in range(64):
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise WeightFileError("unterminated header")
        line = buf[pos:nl].decode("ascii")
        pos = nl + 1
        if expected == 0:
            if line != MAGIC:
                raise WeightFileError(f"bad magic {line!r}")
            continue
        if line == "end":
            return fields, pos
        key, _, val = line.partition(" ")
        fields[key] = val
    raise WeightFileError("header too long")


def decode_weights(buf, expect_kind=None, expect_config=None):
    """Rebuild the model stored in ``buf``; returns ``(model, extra)``."""
    fields, pos = _parse_header(buf)
    if fields.get("version") != str(VERSION):
        raise WeightFileError(f"unsupported version {fields.get('version')!r}")
    kind = fields.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise WeightFileError(f"file holds a {kind} model, expected {expect_kind}")
    config = config_from_dict(kind, json.loads(fields["config"]))
    if expect_config is not None and config != expect_config:
        raise WeightFileError(f"config mismatch: file has {config}, expected {expect_config}")
    count = int(fields["count"])
    payload = buf[pos:]
    if len(payload) != 8 * count:
        raise WeightFileError(f"payload holds {len(payload)} bytes, header promises {8 * count}")
    model = build_model(kind, config)
    values = np.frombuffer(payload, dtype="<f8")
    arrays = model.state_arrays()
    if sum(a.size for a in arrays) != count:
        raise WeightFileError("value count does not match the architecture")
    off = 0
    for a in arrays:
        a[...] = values[off:off + a.size].reshape(a.shape)
        off += a.size
    extra = json.loads(fields["extra"]) if "extra" in fields else {}
    return model, extra


def load_weights(path, expect_kind=None, expect_config=None):
    with open(path, "rb") as fh:
        return decode_weights(fh.read(), expect_kind, expect_config)
