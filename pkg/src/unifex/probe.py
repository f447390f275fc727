"""The trainable projection head: dropout + linear map to 64 dimensions.

Also houses the training-free zero-shot projections (seeded random linear
map or chunked average pooling) and the PRB1 checkpoint format:

    bytes 0-3   magic ``PRB1``
    bytes 4-7   u32 length of the JSON config header
    then        the header (sorted keys, compact) followed by float32
                little-endian arrays: W_proj (D_in x 64), b_proj (64),
                classifier W (C x K x 64), all row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError, IoError, ShapeError
from .losses import ClassifierWeights, LossConfig, init_classifier
from .rand import STREAM_DROPOUT, STREAM_PROJ_INIT, STREAM_ZEROSHOT, philox

PROJECTED_DIM = 64

PRB1_MAGIC = b"PRB1"
_PRB1_LEN = struct.Struct("<I")


@dataclass
class ProbeModel:
    """Projection-head parameters plus the classifier used during training."""

    w_proj: np.ndarray
    b_proj: np.ndarray
    dropout_rate: float
    classifier: ClassifierWeights

    def __post_init__(self) -> None:
        self.w_proj = np.asarray(self.w_proj, dtype=np.float64)
        self.b_proj = np.asarray(self.b_proj, dtype=np.float64)
        if self.w_proj.ndim != 2 or self.w_proj.shape[1] != PROJECTED_DIM:
            raise ShapeError(f"w_proj must be (D_in, {PROJECTED_DIM}), got {self.w_proj.shape}")
        if self.b_proj.shape != (PROJECTED_DIM,):
            raise ShapeError(f"b_proj must be ({PROJECTED_DIM},), got {self.b_proj.shape}")
        if not (np.all(np.isfinite(self.w_proj)) and np.all(np.isfinite(self.b_proj))):
            raise DataError("projection parameters contain non-finite values")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.classifier.dim != PROJECTED_DIM:
            raise ShapeError("classifier dim must equal the projected dim")

    @property
    def input_dim(self) -> int:
        return self.w_proj.shape[0]

    def copy(self) -> "ProbeModel":
        return ProbeModel(
            self.w_proj.copy(), self.b_proj.copy(), self.dropout_rate, self.classifier.copy()
        )


def init_probe_model(
    input_dim: int,
    num_classes: int,
    subcenters: int = 1,
    dropout_rate: float = 0.2,
    seed: int = 0,
) -> ProbeModel:
    """Gaussian W_proj with std 1/sqrt(D_in), zero bias, unit-row classifier."""
    if input_dim < 1 or num_classes < 1:
        raise ConfigError("input_dim and num_classes must be positive")
    w = philox(seed, STREAM_PROJ_INIT).standard_normal((input_dim, PROJECTED_DIM))
    w /= np.sqrt(input_dim)
    return ProbeModel(
        w_proj=w,
        b_proj=np.zeros(PROJECTED_DIM),
        dropout_rate=dropout_rate,
        classifier=init_classifier(num_classes, subcenters, PROJECTED_DIM, seed),
    )


def project(
    model: ProbeModel, x, mode: str = "eval", seed: int = 0, step: int = 0
) -> tuple[np.ndarray, np.ndarray | None]:
    """Project N x D_in embeddings to N x 64.

    Train mode applies inverted dropout to the input (mask entries are 0 or
    1/keep, deterministic given (seed, step)) so eval needs no rescaling;
    the mask actually used is returned for the backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected N x {model.input_dim} input, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        return x @ model.w_proj + model.b_proj, None
    keep = 1.0 - model.dropout_rate
    rng = philox(seed, STREAM_DROPOUT, step)
    mask = (rng.random(x.shape) >= model.dropout_rate).astype(np.float64) / keep
    return (x * mask) @ model.w_proj + model.b_proj, mask


def probe_backward(
    model: ProbeModel, x, dl_dy, mask=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the (masked) affine map: (dL/dW_proj, dL/db, dL/dx)."""
    x = np.asarray(x, dtype=np.float64)
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected N x {model.input_dim} input, got shape {x.shape}")
    if dl_dy.shape != (x.shape[0], PROJECTED_DIM):
        raise ShapeError(f"dl_dy must be N x {PROJECTED_DIM}, got shape {dl_dy.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != x.shape:
            raise ShapeError("dropout mask shape does not match the input")
        x = x * mask
    dw = x.T @ dl_dy
    db = dl_dy.sum(axis=0)
    dx = dl_dy @ model.w_proj.T
    if mask is not None:
        dx = dx * mask
    return dw, db, dx


def zero_shot_project(x, mode: str, seed: int = 0) -> np.ndarray:
    """Training-free reduction to 64 dims.

    random_linear: x @ R with R a seeded Gaussian scaled by 1/sqrt(D_in).
    avg_pool: mean over contiguous chunks of D_in/64 coordinates; D_in must
    divide evenly (no silent padding).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {x.shape}")
    d_in = x.shape[1]
    if mode == "random_linear":
        r = philox(seed, STREAM_ZEROSHOT).standard_normal((d_in, PROJECTED_DIM))
        return x @ (r / np.sqrt(d_in))
    if mode == "avg_pool":
        if d_in % PROJECTED_DIM != 0:
            raise ConfigError(
                f"avg_pool needs the input dim divisible by {PROJECTED_DIM}, got {d_in}"
            )
        return x.reshape(x.shape[0], PROJECTED_DIM, d_in // PROJECTED_DIM).mean(axis=2)
    raise ConfigError(f"unknown zero-shot mode {mode!r}")


# ---------------------------------------------------------------------------
# PRB1 checkpoints


def save_checkpoint(model: ProbeModel, loss_cfg: LossConfig, step: int, path) -> None:
    header = {
        "input_dim": model.input_dim,
        "output_dim": PROJECTED_DIM,
        "num_classes": model.classifier.num_classes,
        "subcenters": model.classifier.num_subcenters,
        "dropout_rate": model.dropout_rate,
        "step": int(step),
        "loss": {
            "variant": loss_cfg.variant,
            "m": loss_cfg.m,
            "s": loss_cfg.s,
            "k": loss_cfg.k,
            "m_min": loss_cfg.m_min,
            "m_max": loss_cfg.m_max,
            "curricular_alpha": loss_cfg.curricular_alpha,
            "adaface_h": loss_cfg.adaface_h,
            "adaface_ema": loss_cfg.adaface_ema,
            "adaface_eps": loss_cfg.adaface_eps,
            "adacos_fixed": loss_cfg.adacos_fixed,
            "class_margins": list(loss_cfg.class_margins)
            if loss_cfg.class_margins is not None
            else None,
        },
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(PRB1_MAGIC)
            fh.write(_PRB1_LEN.pack(len(blob)))
            fh.write(blob)
            for arr in (model.w_proj, model.b_proj, model.classifier.values):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[ProbeModel, LossConfig, int]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint from {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != PRB1_MAGIC:
        raise FormatError(f"{path}: not a PRB1 checkpoint")
    (blob_len,) = _PRB1_LEN.unpack_from(raw, 4)
    if len(raw) < 8 + blob_len:
        raise FormatError(f"{path}: truncated config header")
    try:
        header = json.loads(raw[8 : 8 + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad config header: {exc}") from exc
    d_in = header["input_dim"]
    c = header["num_classes"]
    k = header["subcenters"]
    sizes = (d_in * PROJECTED_DIM, PROJECTED_DIM, c * k * PROJECTED_DIM)
    expected = 8 + blob_len + 4 * sum(sizes)
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=8 + blob_len)
    w_proj = flat[: sizes[0]].reshape(d_in, PROJECTED_DIM)
    b_proj = flat[sizes[0] : sizes[0] + sizes[1]]
    cls = flat[sizes[0] + sizes[1] :].reshape(c, k, PROJECTED_DIM)
    lc = header["loss"]
    loss_cfg = LossConfig(
        variant=lc["variant"],
        m=lc["m"],
        s=lc["s"],
        k=lc["k"],
        m_min=lc["m_min"],
        m_max=lc["m_max"],
        curricular_alpha=lc["curricular_alpha"],
        adaface_h=lc["adaface_h"],
        adaface_ema=lc["adaface_ema"],
        adaface_eps=lc["adaface_eps"],
        adacos_fixed=lc["adacos_fixed"],
        class_margins=tuple(lc["class_margins"]) if lc["class_margins"] is not None else None,
    )
    model = ProbeModel(
        w_proj=w_proj,
        b_proj=b_proj,
        dropout_rate=header["dropout_rate"],
        classifier=ClassifierWeights(cls),
    )
    return model, loss_cfg, int(header["step"])
