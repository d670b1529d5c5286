from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from imdd_dsp.autoencoder import AeModel, BrnnReceiver
from imdd_dsp.config import AeConfig, Scheme
from imdd_dsp.errors import DatasetFormatError, ShapeError
from imdd_dsp.nn import load_module_arrays, module_arrays, parameter_count
from imdd_dsp.pamsys.sffnn import Sffnn
from imdd_dsp.pamsys.volterra import VolterraCoeffs
from imdd_dsp.storage import read_model_file, write_model_file


logger = logging.getLogger(__name__)


@dataclass
class ModelBundle:
    """Everything a scheme needs at evaluation time.

    ae holds the BRNN transmitter and receiver of the auto-encoder schemes; receiver is the
    separately trained detector (SFFNN, or the PAM BRNN); volterra the equalizer coefficients.
    """

    scheme: Scheme
    ae: AeModel | None = None
    receiver: torch.nn.Module | None = None
    volterra: VolterraCoeffs | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def rx_params(self) -> int:
        if self.receiver is not None:
            return parameter_count(self.receiver)
        if self.scheme is Scheme.AE_TX_BRNN_RX_SFFNN:
            return 0
        if self.ae is not None:
            return parameter_count(self.ae.rx)
        if self.volterra is not None:
            return self.volterra.feature_count
        return 0


def _describe(module: torch.nn.Module) -> dict[str, Any]:
    if isinstance(module, AeModel):
        return {"type": "ae", "config": asdict(module.cfg)}
    if isinstance(module, Sffnn):
        return {"type": "sffnn", "window": module.window, "block_len": module.block_len, "classes": module.classes}
    if isinstance(module, BrnnReceiver):
        return {
            "type": "brnn_rx",
            "block_len": module.block_len,
            "classes": module.classes,
            "state_dim": module.cell.state_dim,
        }
    raise ShapeError(f"unsupported_component: {type(module).__name__}")


def _rebuild(desc: dict[str, Any]) -> torch.nn.Module:
    kind = desc.get("type")
    if kind == "ae":
        return AeModel(AeConfig(**desc["config"]))
    if kind == "sffnn":
        return Sffnn(int(desc["window"]), int(desc["block_len"]), int(desc["classes"]))
    if kind == "brnn_rx":
        return BrnnReceiver(int(desc["block_len"]), int(desc["classes"]), state_dim=int(desc["state_dim"]))
    raise DatasetFormatError(f"unknown_component_type: {kind}")


def _components(bundle: ModelBundle) -> list[tuple[str, torch.nn.Module]]:
    # ae first so the transmitter occupies the leading bytes of the payload
    out: list[tuple[str, torch.nn.Module]] = []
    if bundle.ae is not None:
        out.append(("ae", bundle.ae))
    if bundle.receiver is not None:
        out.append(("receiver", bundle.receiver))
    return out


def save_bundle(bundle: ModelBundle, path: str | Path) -> Path:
    chunks: list[np.ndarray] = []
    tensors: list[dict[str, Any]] = []
    components: list[dict[str, Any]] = []
    for name, module in _components(bundle):
        components.append({"name": name, **_describe(module)})
        for key, arr in module_arrays(module).items():
            tensors.append({"name": f"{name}.{key}", "shape": list(arr.shape)})
            chunks.append(arr.ravel())
    if bundle.volterra is not None:
        coeffs = bundle.volterra
        components.append(
            {"name": "volterra", "type": "volterra", "window": coeffs.window, "w1": coeffs.w1, "n": coeffs.n, "rank": coeffs.rank}
        )
        vec = coeffs.vector()
        tensors.append({"name": "volterra.coefficients", "shape": [vec.size]})
        chunks.append(vec)

    meta = {"scheme": bundle.scheme.value, "components": components, "tensors": tensors, "info": bundle.info}
    payload = np.concatenate(chunks) if chunks else np.zeros(0)
    return write_model_file(path, scheme_tag=bundle.scheme.tag, params=payload, meta=meta)


def load_bundle(path: str | Path) -> ModelBundle:
    record = read_model_file(path)
    meta = record.meta
    try:
        scheme = Scheme(meta["scheme"])
        tensors = meta["tensors"]
        components = meta["components"]
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"model_metadata_incomplete: {path}") from exc

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in tensors:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + size > record.data.size:
            raise DatasetFormatError(f"model_payload_shorter_than_metadata: {path}")
        arrays[entry["name"]] = record.data[offset : offset + size].reshape(entry["shape"])
        offset += size
    if offset != record.data.size:
        raise DatasetFormatError(f"model_payload_longer_than_metadata: {path}")

    bundle = ModelBundle(scheme=scheme, info=dict(meta.get("info") or {}))
    for desc in components:
        name = desc["name"]
        if desc["type"] == "volterra":
            bundle.volterra = VolterraCoeffs.from_vector(
                arrays["volterra.coefficients"], int(desc["window"]), int(desc["w1"]), int(desc["n"]), rank=desc.get("rank")
            )
            continue
        module = _rebuild(desc)
        prefix = f"{name}."
        load_module_arrays(module, {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        setattr(bundle, name, module)
    logger.info("model_loaded path=%s scheme=%s components=%s", path, scheme.value, [c["name"] for c in components])
    return bundle
