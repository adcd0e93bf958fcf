"""Checkpoint archives: manifest.txt + data.bin directories holding named arrays.

Each manifest line is `name rank dims... dtype offset crc32`; data.bin holds
the arrays' little-endian row-major bytes concatenated in manifest order.
Model save/load helpers store hyperparameters as rank-0 arrays under
`hyper.` names so archives are self-describing.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np
import torch

from ..face3d import FaceBasis
from ..framegen import FrameDenoiser
from ..latentcodec import FrameCodec
from ..lipexpert import SyncExpert
from ..motiongen import MotionDenoiser

MANIFEST = "manifest.txt"
DATA = "data.bin"

_DTYPES = {"f32": "<f4", "f64": "<f8"}


class CheckpointError(Exception):
    """Raised on malformed or corrupted checkpoint archives."""


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    blob = bytearray()
    for name, arr in arrays.items():
        if " " in name or "\n" in name:
            raise CheckpointError(f"array name {name!r} may not contain whitespace")
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            tag, arr = "f32", arr.astype("<f4", copy=False)
        else:
            tag, arr = "f64", arr.astype("<f8")
        data = arr.tobytes(order="C")
        dims = " ".join(str(d) for d in arr.shape)
        fields = [name, str(arr.ndim)] + ([dims] if dims else []) + [
            tag,
            str(len(blob)),
            str(zlib.crc32(data)),
        ]
        lines.append(" ".join(fields))
        blob.extend(data)
    (path / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (path / DATA).write_bytes(bytes(blob))


def load_arrays(path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = path / MANIFEST
    if not manifest.exists():
        raise CheckpointError(f"no manifest at {manifest}")
    blob = (path / DATA).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split()
        try:
            name = fields[0]
            rank = int(fields[1])
            dims = tuple(int(d) for d in fields[2 : 2 + rank])
            tag, offset, crc = fields[2 + rank], int(fields[3 + rank]), int(fields[4 + rank])
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"malformed manifest line: {line!r}") from exc
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype {tag!r} in manifest")
        dtype = np.dtype(_DTYPES[tag])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"array {name!r}: data.bin truncated")
        if zlib.crc32(chunk) != crc:
            raise CheckpointError(f"array {name!r}: CRC mismatch")
        arrays[name] = np.frombuffer(chunk, dtype=dtype).reshape(dims).copy()
    return arrays


def _split_hyper(arrays: dict[str, np.ndarray]) -> tuple[dict, dict]:
    hyper = {
        k[len("hyper.") :]: float(np.asarray(v).ravel()[0])
        for k, v in arrays.items()
        if k.startswith("hyper.")
    }
    state = {k: v for k, v in arrays.items() if not k.startswith("hyper.")}
    return hyper, state


def _module_arrays(module: torch.nn.Module, hyper: dict[str, float]) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for key, value in hyper.items():
        arrays[f"hyper.{key}"] = np.float64(value)
    for key, tensor in module.state_dict().items():
        arrays[key] = tensor.detach().cpu().numpy()
    return arrays


def _load_state(module: torch.nn.Module, state: dict[str, np.ndarray]) -> None:
    tensors = {}
    for key, ref in module.state_dict().items():
        if key not in state:
            raise CheckpointError(f"missing array {key!r} in checkpoint")
        tensors[key] = torch.as_tensor(state[key], dtype=ref.dtype).reshape(ref.shape)
    module.load_state_dict(tensors)


def save_motion_model(path, model: MotionDenoiser) -> None:
    save_arrays(
        path,
        _module_arrays(
            model,
            {
                "dim": model.dim,
                "audio_dim": model.audio_dim,
                "width": model.width,
                "layers": model.num_layers,
                "heads": model.blocks[0]["self_attn"].heads,
                "window_radius": model.window_radius,
                "time_dim": model.time_dim,
                "use_alignment_mask": int(model.use_alignment_mask),
            },
        ),
    )


def load_motion_model(path) -> MotionDenoiser:
    hyper, state = _split_hyper(load_arrays(path))
    model = MotionDenoiser(
        dim=int(hyper["dim"]),
        audio_dim=int(hyper["audio_dim"]),
        width=int(hyper["width"]),
        layers=int(hyper["layers"]),
        heads=int(hyper["heads"]),
        window_radius=int(hyper["window_radius"]),
        time_dim=int(hyper["time_dim"]),
        use_alignment_mask=bool(hyper["use_alignment_mask"]),
    )
    _load_state(model, state)
    return model


def save_expert(path, expert: SyncExpert) -> None:
    hidden = expert.mouth_encoder[0].out_features
    save_arrays(
        path,
        _module_arrays(
            expert,
            {
                "mouth_dim": expert.mouth_dim,
                "audio_dim": expert.audio_dim,
                "window": expert.window,
                "embed_dim": expert.embed_dim,
                "hidden": hidden,
            },
        ),
    )


def load_expert(path) -> SyncExpert:
    hyper, state = _split_hyper(load_arrays(path))
    expert = SyncExpert(
        mouth_dim=int(hyper["mouth_dim"]),
        audio_dim=int(hyper["audio_dim"]),
        window=int(hyper["window"]),
        embed_dim=int(hyper["embed_dim"]),
        hidden=int(hyper["hidden"]),
    )
    _load_state(expert, state)
    return expert


def save_codec(path, codec: FrameCodec, base_channels: int) -> None:
    save_arrays(
        path,
        _module_arrays(codec, {"d": codec.d, "f": codec.f, "base_channels": base_channels}),
    )


def load_codec(path) -> FrameCodec:
    hyper, state = _split_hyper(load_arrays(path))
    codec = FrameCodec(d=int(hyper["d"]), f=int(hyper["f"]), base_channels=int(hyper["base_channels"]))
    _load_state(codec, state)
    return codec


def save_unet(path, model: FrameDenoiser, channels: tuple[int, int], heads: int) -> None:
    save_arrays(
        path,
        _module_arrays(
            model,
            {
                "latent_dim": model.latent_dim,
                "motion_dim": model.motion_dim,
                "c0": channels[0],
                "c1": channels[1],
                "heads": heads,
                "time_dim": model.time_dim,
                "fused_conditions": int(model.fused_conditions),
            },
        ),
    )


def load_unet(path) -> FrameDenoiser:
    hyper, state = _split_hyper(load_arrays(path))
    model = FrameDenoiser(
        latent_dim=int(hyper["latent_dim"]),
        motion_dim=int(hyper["motion_dim"]),
        channels=(int(hyper["c0"]), int(hyper["c1"])),
        heads=int(hyper["heads"]),
        time_dim=int(hyper["time_dim"]),
        fused_conditions=bool(hyper["fused_conditions"]),
    )
    _load_state(model, state)
    return model


def save_basis(path, basis: FaceBasis) -> None:
    save_arrays(
        path,
        {
            "mean_shape": basis.mean_shape,
            "basis_id": basis.basis_id,
            "basis_exp": basis.basis_exp,
            "mouth_indices": basis.mouth_indices.astype(np.float64),
        },
    )


def load_basis(path) -> FaceBasis:
    arrays = load_arrays(path)
    return FaceBasis(
        arrays["mean_shape"],
        arrays["basis_id"],
        arrays["basis_exp"],
        arrays["mouth_indices"].astype(np.int64),
    )
