"""Checkpoint directories: ``manifest.json`` plus ``params.bin``.

``params.bin`` is every parameter and buffer as little-endian float32,
concatenated in manifest order. The manifest records names, shapes, byte
offsets, the architecture, the training configuration and the validation
history.
"""
import hashlib
import json
import os

import numpy as np

from ..errors import CompatibilityError, IntegrityError
from ..models import FewShotModel, ModelConfig

MANIFEST = "manifest.json"
PARAMS = "params.bin"
FORMAT = "fewshot-checkpoint"


def components_for(train_config):
    comps = ["extractor"]
    if train_config.method == "CC":
        comps.append("classifier")
    if train_config.ssl_task == "rotation":
        comps.append("rot_head")
    if train_config.ssl_task == "location":
        comps.append("loc_head")
    if train_config.patch_aux_loss:
        comps.append("patch_aux")
    return comps


class Checkpoint:
    """In-memory checkpoint: manifest dict and named float32 arrays."""

    def __init__(self, manifest, arrays):
        self.manifest = manifest
        self.arrays = arrays

    @classmethod
    def from_model(cls, model, train_config=None, epoch=None, val_history=(), extra=None):
        entries, arrays, offset = [], {}, 0
        kinds = [(n, p.data, "parameter") for n, p in model.named_parameters()]
        kinds += [(n, b, "buffer") for n, b in model.named_buffers()]
        for name, value, kind in kinds:
            arr = np.asarray(value, dtype="<f4")
            arrays[name] = arr.copy()
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                            "offset": offset, "nbytes": int(arr.nbytes)})
            offset += int(arr.nbytes)
        manifest = {
            "format": FORMAT,
            "version": 1,
            "model_config": model.config.to_dict(),
            "n_base_classes": model.n_base_classes,
            "components": list(model.components),
            "train_config": train_config.to_dict() if train_config is not None else None,
            "train_config_sha256": train_config.digest() if train_config is not None else None,
            "epoch": epoch,
            "val_history": [float(v) for v in val_history],
            "notes": {"weight_decay_on_log_gamma": False},
            "entries": entries,
            "payload_bytes": offset,
        }
        if extra:
            manifest.update(extra)
        return cls(manifest, arrays)

    def manifest_bytes(self):
        return (json.dumps(self.manifest, indent=2, sort_keys=False) + "\n").encode("utf-8")

    def params_bytes(self):
        return b"".join(self.arrays[e["name"]].astype("<f4").tobytes() for e in self.manifest["entries"])

    def digest(self):
        h = hashlib.sha256()
        h.update(self.manifest_bytes())
        h.update(self.params_bytes())
        return h.hexdigest()

    @property
    def n_parameters(self):
        return int(sum(np.prod(e["shape"], dtype=np.int64)
                       for e in self.manifest["entries"] if e["kind"] == "parameter"))

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for fname, data in ((MANIFEST, self.manifest_bytes()), (PARAMS, self.params_bytes())):
            tmp = os.path.join(directory, fname + ".tmp")
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, os.path.join(directory, fname))

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, MANIFEST), "rb") as fh:
            try:
                manifest = json.loads(fh.read().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise IntegrityError(f"unreadable manifest: {exc}") from None
        if manifest.get("format") != FORMAT:
            raise IntegrityError(f"not a checkpoint manifest (format={manifest.get('format')!r})")
        with open(os.path.join(directory, PARAMS), "rb") as fh:
            payload = fh.read()
        expected = int(manifest["payload_bytes"])
        if len(payload) != expected:
            raise IntegrityError(f"params.bin has {len(payload)} bytes, manifest expects {expected}")
        names, arrays, offset = set(), {}, 0
        for e in manifest["entries"]:
            if e["name"] in names:
                raise IntegrityError(f"duplicate entry {e['name']!r}")
            names.add(e["name"])
            count = int(np.prod(e["shape"], dtype=np.int64))
            if e["offset"] != offset or e["nbytes"] != 4 * count:
                raise IntegrityError(f"entry {e['name']!r} has inconsistent offset/size")
            arrays[e["name"]] = np.frombuffer(payload, dtype="<f4", count=count, offset=offset) \
                .reshape(e["shape"]).astype(np.float32)
            offset += e["nbytes"]
        if offset != expected:
            raise IntegrityError(f"entries cover {offset} bytes, manifest expects {expected}")
        return cls(manifest, arrays)

    def to_model(self, dtype=np.float32):
        config = ModelConfig(**self.manifest["model_config"])
        model = FewShotModel(config, self.manifest["n_base_classes"], self.manifest["components"])
        try:
            model.load_state_dict(self.arrays)
        except KeyError as exc:
            raise CompatibilityError(f"checkpoint lacks tensor {exc}") from None
        if dtype != np.float32:
            model.astype(dtype)
        return model

    def has_component(self, name):
        return name in self.manifest["components"]
