"""Margin-based metric-learning losses with exact analytic gradients.

Implemented variants (selected via ``LossConfig.variant``):

* ``arcface``             additive angular margin (https://arxiv.org/abs/1801.07698)
* ``subcenter-arcface``   K sub-centers per class, max-pooled (https://arxiv.org/abs/2010.05350)
* ``li-arcface``          linear target-logit curve in the angle (https://arxiv.org/abs/1907.12256)
* ``adacos``              dynamically scaled cosine logits (https://arxiv.org/abs/1905.00292)
* ``curricularface``      hard-negative modulation with an EMA curriculum (https://arxiv.org/abs/2004.00288)
* ``adaface``             feature-norm adaptive margin (https://arxiv.org/abs/2204.00964)
* ``dynmargin-arcface``   per-class margin from class size via a cosine mapping

The full chain computed by :func:`loss_and_grad` is

    row-normalize x and W  ->  cosine logits (max over sub-centers)
    ->  variant transform  ->  softmax cross-entropy,

and the returned gradients are the exact derivatives of that chain,
including the normalization Jacobian ``(I - uu^T)/||v||``. Adaptive
quantities (AdaCos scale, CurricularFace t, AdaFace norm statistics and
margin scaler) are treated as constants taken from/derived via the input
state and updated for the *next* step, so the loss is a pure function of
``(inputs, state)``. All arithmetic is float64 regardless of the storage
precision of the embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .data import ClassStats
from .errors import ConfigError, DataError, ShapeError
from .rand import STREAM_CLS_INIT, philox

_TINY = 1e-12

VARIANTS = (
    "arcface",
    "subcenter-arcface",
    "li-arcface",
    "adacos",
    "curricularface",
    "adaface",
    "dynmargin-arcface",
)

# Variants whose target logit is cos(theta + margin) with the ArcFace fallback.
_ANGULAR_FAMILY = ("arcface", "subcenter-arcface", "dynmargin-arcface")


@dataclass(frozen=True)
class LossConfig:
    """Loss-variant selector plus every margin/scale/adaptivity knob."""

    variant: str = "arcface"
    m: float = 0.5
    s: float = 30.0
    k: int = 1
    m_min: float = 0.2
    m_max: float = 0.6
    curricular_alpha: float = 0.01
    adaface_h: float = 0.333
    adaface_ema: float = 0.01
    adaface_eps: float = 1e-3
    adacos_fixed: bool = False
    class_margins: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}; pick one of {VARIANTS}")
        _check_margin(self.m)
        if self.s <= 0.0:
            raise ConfigError("scale s must be > 0")
        if self.k < 1:
            raise ConfigError("sub-center count k must be >= 1")
        if self.m_min > self.m_max:
            raise ConfigError("m_min must be <= m_max")
        if not 0.0 < self.curricular_alpha < 1.0:
            raise ConfigError("curricular_alpha must be in (0, 1)")
        if not 0.0 < self.adaface_ema < 1.0:
            raise ConfigError("adaface_ema must be in (0, 1)")
        if self.adaface_h <= 0.0:
            raise ConfigError("adaface_h must be > 0")
        if self.class_margins is not None:
            for mc in self.class_margins:
                _check_margin(mc)


def _check_margin(m) -> None:
    arr = np.asarray(m, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr >= math.pi):
        raise ConfigError(f"margin must lie in [0, pi), got {m}")


class ClassifierWeights:
    """C x K x E class (sub-)center weight tensor."""

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"classifier weights must be (C, K, E), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("classifier weights contain non-finite values")
        self.values = arr

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def num_subcenters(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """(unit-row view, row norms); zero rows stay zero."""
        norms = np.linalg.norm(self.values, axis=2)
        safe = np.where(norms == 0.0, 1.0, norms)
        return self.values / safe[..., None], norms

    def copy(self) -> "ClassifierWeights":
        return ClassifierWeights(self.values.copy())


def init_classifier(num_classes: int, subcenters: int, dim: int, seed: int = 0) -> ClassifierWeights:
    """Unit-normalized rows of a seeded standard Gaussian."""
    if num_classes < 1 or subcenters < 1 or dim < 1:
        raise ConfigError("classifier dimensions must be positive")
    g = philox(seed, STREAM_CLS_INIT).standard_normal((num_classes, subcenters, dim))
    g /= np.linalg.norm(g, axis=2, keepdims=True)
    return ClassifierWeights(g)


@dataclass(frozen=True)
class LossState:
    """Adaptive quantities carried across training steps."""

    adacos_s: float = 0.0
    curricular_t: float = 0.0
    adaface_mu: float = 20.0
    adaface_sigma: float = 100.0
    step: int = 0


def init_loss_state(cfg: LossConfig, num_classes: int) -> LossState:
    if cfg.variant == "adacos":
        if num_classes < 2:
            raise ConfigError("AdaCos requires at least 2 classes")
        return LossState(adacos_s=math.sqrt(2.0) * math.log(num_classes - 1.0))
    return LossState()


# ---------------------------------------------------------------------------
# cosine logits


def cosine_logits(x_norm, weights: ClassifierWeights) -> tuple[np.ndarray, np.ndarray]:
    """Pooled cosine similarities between unit rows and class sub-centers.

    Returns the N x C cosine matrix (entry (i, c) is the max over the K
    sub-centers of class c, clamped to [-1, 1]) and the N x C argmax
    sub-center index (ties resolved to the lowest index).
    """
    x = np.asarray(x_norm, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {x.shape}")
    w_hat, _ = weights.normalized()
    return _pooled_cosines(x, w_hat)


def _pooled_cosines(x_hat, w_hat):
    c, k, e = w_hat.shape
    if x_hat.shape[1] != e:
        raise ShapeError(
            f"embedding dim {x_hat.shape[1]} does not match classifier dim {e}"
        )
    full = (x_hat @ w_hat.reshape(c * k, e).T).reshape(x_hat.shape[0], c, k)
    kidx = np.argmax(full, axis=2)
    pooled = np.take_along_axis(full, kidx[:, :, None], axis=2)[:, :, 0]
    # clamp absorbs |dot| > 1 from rounding; treated as identity in gradients
    np.clip(pooled, -1.0, 1.0, out=pooled)
    return pooled, kidx


# ---------------------------------------------------------------------------
# variant transforms (each returns logits and d logits / d cosine)


def _cos_plus_margin(c, m):
    """cos(theta + m) from cos(theta), with the monotonic fallback.

    Computed stably as c*cos(m) - sqrt(1-c^2)*sin(m). Past theta + m = pi
    the additive form turns back up, so c <= cos(pi - m) switches to the
    standard fallback c - m*sin(m). Returns (value, d value/dc, raw phi),
    raw phi being cos(theta + m) without the fallback.
    """
    m = np.asarray(m, dtype=np.float64)
    cos_m = np.cos(m)
    sin_m = np.sin(m)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - c * c))
    phi = c * cos_m - sin_t * sin_m
    dphi = cos_m + sin_m * c / np.maximum(sin_t, _TINY)
    past_pi = c <= -cos_m
    value = np.where(past_pi, c - m * sin_m, phi)
    deriv = np.where(past_pi, 1.0, dphi)
    return value, deriv, phi


def _arcface_logits(cos, targets, m, s):
    n = cos.shape[0]
    rows = np.arange(n)
    value, deriv, _ = _cos_plus_margin(cos[rows, targets], m)
    logits = s * cos
    dcos = np.full_like(cos, float(s))
    logits[rows, targets] = s * value
    dcos[rows, targets] = s * deriv
    return logits, dcos


def arcface_transform(cos, targets, m, s) -> np.ndarray:
    """ArcFace logits: target entries s*cos(theta+m), the rest s*cos(theta).

    `m` may be a scalar or a per-sample array (dynamic margins). This is
    the threshold-fallback variant, not the easy-margin one.
    """
    _check_margin(m)
    logits, _ = _arcface_logits(np.asarray(cos, dtype=np.float64), np.asarray(targets), m, s)
    return logits


def _li_logits(cos, targets, m, s):
    n = cos.shape[0]
    rows = np.arange(n)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    logits = s * (np.pi - 2.0 * theta) / np.pi
    # same slope for target and non-target: the margin is an additive angle
    dcos = s * 2.0 / (np.pi * np.sqrt(np.maximum(1.0 - cos * cos, _TINY)))
    logits[rows, targets] = s * (np.pi - 2.0 * (theta[rows, targets] + m)) / np.pi
    return logits, dcos


def li_arcface_transform(cos, targets, m, s) -> np.ndarray:
    """Li-ArcFace logits: linear in the angle, target shifted by m."""
    _check_margin(m)
    logits, _ = _li_logits(np.asarray(cos, dtype=np.float64), np.asarray(targets), m, s)
    return logits


def adacos_update_scale(state: LossState, cos, targets) -> float:
    """Next dynamic AdaCos scale from the current batch statistics.

    s <- ln(B_avg) / cos(min(pi/4, theta_med)), with B_avg the batch mean
    of the summed non-target exp-logits (at the current scale) and
    theta_med the median target angle. Non-finite or non-positive updates
    keep the previous scale.
    """
    cos = np.asarray(cos, dtype=np.float64)
    if cos.ndim != 2 or cos.shape[1] < 2:
        raise ConfigError("AdaCos requires an N x C cosine matrix with C >= 2")
    targets = np.asarray(targets)
    rows = np.arange(cos.shape[0])
    expz = np.exp(state.adacos_s * cos)
    expz[rows, targets] = 0.0
    b_avg = expz.sum(axis=1).mean()
    theta_med = np.median(np.arccos(np.clip(cos[rows, targets], -1.0, 1.0)))
    s_new = np.log(b_avg) / np.cos(min(np.pi / 4.0, theta_med))
    if not np.isfinite(s_new) or s_new <= 0.0:
        return float(state.adacos_s)
    return float(s_new)


def _curricular_logits(cos, targets, m, s, t):
    n = cos.shape[0]
    rows = np.arange(n)
    value, deriv, phi = _cos_plus_margin(cos[rows, targets], m)
    hard = cos > phi[:, None]
    logits = np.where(hard, s * cos * (t + cos), s * cos)
    dcos = np.where(hard, s * (t + 2.0 * cos), float(s))
    logits[rows, targets] = s * value
    dcos[rows, targets] = s * deriv
    return logits, dcos


def curricular_transform(
    cos, targets, m, s, state: LossState, alpha: float = 0.01
) -> tuple[np.ndarray, LossState]:
    """CurricularFace logits plus the updated curriculum state.

    Negatives harder than the margined target get amplified to
    s*cos(theta_j)*(t + cos(theta_j)); t is read from the state and moved
    towards the batch-mean target cosine by an EMA for the next step.
    """
    _check_margin(m)
    cos = np.asarray(cos, dtype=np.float64)
    targets = np.asarray(targets)
    logits, _ = _curricular_logits(cos, targets, m, s, state.curricular_t)
    new_state = replace(
        state, curricular_t=_curricular_next_t(cos, targets, state.curricular_t, alpha)
    )
    return logits, new_state


def _curricular_next_t(cos, targets, t, alpha):
    r = float(cos[np.arange(cos.shape[0]), targets].mean())
    # clamp keeps t inside its documented [0, 1] range even for adversarial batches
    return float(min(1.0, max(0.0, alpha * r + (1.0 - alpha) * t)))


def _adaface_logits(cos, targets, norm_hat, m, s):
    n = cos.shape[0]
    rows = np.arange(n)
    tgt = cos[rows, targets]
    g_angle = -m * norm_hat
    g_add = m * norm_hat + m
    theta = np.arccos(np.clip(tgt, -1.0, 1.0))
    shifted = theta + g_angle
    clipped = (shifted < 0.0) | (shifted > np.pi)
    theta_m = np.clip(shifted, 0.0, np.pi)
    value = np.cos(theta_m) - g_add
    deriv = np.where(
        clipped, 0.0, np.sin(theta_m) / np.sqrt(np.maximum(1.0 - tgt * tgt, _TINY))
    )
    logits = s * cos
    dcos = np.full_like(cos, float(s))
    logits[rows, targets] = s * value
    dcos[rows, targets] = s * deriv
    return logits, dcos


def _adaface_update_stats(state: LossState, norms, ema) -> LossState:
    if norms.size < 2:
        return state  # degenerate batch: keep previous statistics
    mu_b = float(norms.mean())
    sigma_b = float(norms.std(ddof=1))
    if not (math.isfinite(mu_b) and math.isfinite(sigma_b)):
        return state
    return replace(
        state,
        adaface_mu=ema * mu_b + (1.0 - ema) * state.adaface_mu,
        adaface_sigma=ema * sigma_b + (1.0 - ema) * state.adaface_sigma,
    )


def _adaface_norm_hat(norms, state: LossState, h, eps):
    return np.clip((norms - state.adaface_mu) / (state.adaface_sigma / h + eps), -1.0, 1.0)


def adaface_transform(
    cos,
    targets,
    feature_norms,
    m,
    s,
    h,
    state: LossState,
    ema: float = 0.01,
    eps: float = 1e-3,
) -> tuple[np.ndarray, LossState]:
    """AdaFace logits plus updated feature-norm statistics.

    The per-sample margin scaler is norm_hat = clamp((|z| - mu)/(sigma/h + eps), -1, 1)
    with (mu, sigma) the EMA norm statistics refreshed with the current
    batch first. The target gets the angular margin -m*norm_hat and the
    additive margin m*norm_hat + m. norm_hat is a stop-gradient quantity.
    """
    _check_margin(m)
    cos = np.asarray(cos, dtype=np.float64)
    norms = np.asarray(feature_norms, dtype=np.float64)
    if norms.shape != (cos.shape[0],):
        raise ShapeError("feature_norms must have one entry per row of cos")
    new_state = _adaface_update_stats(state, norms, ema)
    norm_hat = _adaface_norm_hat(norms, new_state, h, eps)
    logits, _ = _adaface_logits(cos, np.asarray(targets), norm_hat, m, s)
    return logits, new_state


def dynamic_margin(n: float, stats: ClassStats, m_min: float, m_max: float) -> float:
    """Margin for a class of size n: larger margins for smaller classes.

    f(n) = m_min + 0.5*(m_max - m_min)*(1 + cos(pi * n_r)) with the class
    size rescaled to n_r = (n - n_min)/(n_max - n_min); degenerate stats
    (all classes equal) give the midpoint.
    """
    if m_min > m_max:
        raise ConfigError("m_min must be <= m_max")
    if stats.n_max == stats.n_min:
        return 0.5 * (m_min + m_max)
    n_r = (n - stats.n_min) / (stats.n_max - stats.n_min)
    return m_min + 0.5 * (m_max - m_min) * (1.0 + math.cos(math.pi * n_r))


def margins_from_counts(counts: Mapping[int, int], m_min: float, m_max: float) -> np.ndarray:
    """Per-class margin array indexed by class id (missing ids get the midpoint)."""
    stats = ClassStats.from_counts(counts)
    out = np.full(max(counts) + 1, 0.5 * (m_min + m_max), dtype=np.float64)
    for cid, n in counts.items():
        out[cid] = dynamic_margin(n, stats, m_min, m_max)
    return out


# ---------------------------------------------------------------------------
# cross-entropy and the composite


def cross_entropy_from_logits(logits, targets) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (log-sum-exp shifted) and its gradient."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ShapeError(f"logits must be a non-empty 2-D matrix, got shape {z.shape}")
    targets = np.asarray(targets)
    n = z.shape[0]
    rows = np.arange(n)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(denom)
    loss = float(-log_probs[rows, targets].mean())
    grad = ez / denom
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad


def _variant_aux(cfg: LossConfig, targets, state: LossState, feature_norms):
    """Per-step constants the transforms consume (stop-gradient quantities)."""
    if cfg.variant in _ANGULAR_FAMILY:
        if cfg.variant == "dynmargin-arcface":
            if cfg.class_margins is None:
                raise ConfigError(
                    "dynmargin-arcface requires LossConfig.class_margins "
                    "(see margins_from_counts)"
                )
            margins = np.asarray(cfg.class_margins, dtype=np.float64)
            if targets.max(initial=-1) >= margins.size:
                raise ConfigError("class_margins shorter than the number of classes")
            return {"m": margins[targets]}
        return {"m": cfg.m}
    if cfg.variant == "adacos":
        if state.adacos_s <= 0.0:
            raise ConfigError("AdaCos state not initialized; use init_loss_state")
        return {"scale": state.adacos_s}
    if cfg.variant == "curricularface":
        return {"t": state.curricular_t}
    if cfg.variant == "adaface":
        stats = _adaface_update_stats(state, feature_norms, cfg.adaface_ema)
        return {
            "norm_hat": _adaface_norm_hat(feature_norms, stats, cfg.adaface_h, cfg.adaface_eps),
            "mu": stats.adaface_mu,
            "sigma": stats.adaface_sigma,
        }
    return {}  # li-arcface needs nothing beyond cfg


def _variant_logits(cfg: LossConfig, pooled, targets, aux):
    if cfg.variant in _ANGULAR_FAMILY:
        return _arcface_logits(pooled, targets, aux["m"], cfg.s)
    if cfg.variant == "li-arcface":
        return _li_logits(pooled, targets, cfg.m, cfg.s)
    if cfg.variant == "adacos":
        return aux["scale"] * pooled, np.full_like(pooled, aux["scale"])
    if cfg.variant == "curricularface":
        return _curricular_logits(pooled, targets, cfg.m, cfg.s, aux["t"])
    if cfg.variant == "adaface":
        return _adaface_logits(pooled, targets, aux["norm_hat"], cfg.m, cfg.s)
    raise ConfigError(f"unknown loss variant {cfg.variant!r}")


def _advance_state(cfg: LossConfig, pooled, targets, state: LossState, aux) -> LossState:
    new = replace(state, step=state.step + 1)
    if cfg.variant == "adacos" and not cfg.adacos_fixed:
        new = replace(new, adacos_s=adacos_update_scale(state, pooled, targets))
    elif cfg.variant == "curricularface":
        new = replace(
            new,
            curricular_t=_curricular_next_t(
                pooled, targets, state.curricular_t, cfg.curricular_alpha
            ),
        )
    elif cfg.variant == "adaface":
        new = replace(new, adaface_mu=aux["mu"], adaface_sigma=aux["sigma"])
    return new


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return norms, x / safe[:, None]


def _scatter_subcenter_grads(dpooled, kidx, x_hat, w_hat):
    """Route pooled-cosine gradients through the argmax sub-center only."""
    c, k, e = w_hat.shape
    dx_hat = np.zeros_like(x_hat)
    dw_hat = np.zeros_like(w_hat)
    for j in range(k):
        dj = np.where(kidx == j, dpooled, 0.0)
        dx_hat += dj @ w_hat[:, j, :]
        dw_hat[:, j, :] = dj.T @ x_hat
    return dx_hat, dw_hat


def _tangent_project(g, unit, norms):
    """Pull a gradient w.r.t. unit rows back through v -> v/|v|."""
    radial = (g * unit).sum(axis=-1, keepdims=True)
    out = g - radial * unit
    safe = np.where(norms == 0.0, 1.0, norms)
    out = out / safe[..., None]
    out[norms == 0.0] = 0.0
    return out


def _validate_loss_inputs(cfg, x, weights, targets):
    if x.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {x.shape}")
    if weights.dim != x.shape[1]:
        raise ShapeError(
            f"embedding dim {x.shape[1]} does not match classifier dim {weights.dim}"
        )
    if weights.num_subcenters != cfg.k:
        raise ShapeError(
            f"classifier has {weights.num_subcenters} sub-centers, config says {cfg.k}"
        )
    if targets.ndim != 1 or targets.shape[0] != x.shape[0]:
        raise ShapeError("targets must be a 1-D array with one entry per sample")
    if not np.issubdtype(targets.dtype, np.integer):
        raise DataError("targets must be integers")
    if x.shape[0] and (targets.min() < 0 or targets.max() >= weights.num_classes):
        raise DataError("target class ids out of range")


def loss_and_grad(
    cfg: LossConfig, x, weights: ClassifierWeights, targets, state: LossState
) -> tuple[float, np.ndarray, np.ndarray, LossState]:
    """Loss value, dL/dx, dL/dW, and the advanced state for one batch.

    `x` holds raw (un-normalized) projected embeddings; gradients for the
    sub-center max-pool flow only through the argmax sub-center, and both
    gradients include the row-normalization Jacobian, so they are tangent
    to the unit sphere.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets)
    _validate_loss_inputs(cfg, x, weights, targets)
    xn, x_hat = _unit_rows(x)
    w_hat, w_norms = weights.normalized()
    pooled, kidx = _pooled_cosines(x_hat, w_hat)
    aux = _variant_aux(cfg, targets, state, feature_norms=xn)
    logits, dlogit_dcos = _variant_logits(cfg, pooled, targets, aux)
    loss, dlogits = cross_entropy_from_logits(logits, targets)
    dpooled = dlogits * dlogit_dcos
    dx_hat, dw_hat = _scatter_subcenter_grads(dpooled, kidx, x_hat, w_hat)
    dx = _tangent_project(dx_hat, x_hat, xn)
    dw = _tangent_project(dw_hat, w_hat, w_norms)
    new_state = _advance_state(cfg, pooled, targets, state, aux)
    return loss, dx, dw, new_state


def loss_value(
    cfg: LossConfig, x, weights: ClassifierWeights, targets, state: LossState, _aux=None
) -> float:
    """Loss only; `_aux` lets verification code freeze the per-step constants."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets)
    _validate_loss_inputs(cfg, x, weights, targets)
    xn, x_hat = _unit_rows(x)
    w_hat, _ = weights.normalized()
    pooled, _ = _pooled_cosines(x_hat, w_hat)
    aux = _variant_aux(cfg, targets, state, feature_norms=xn) if _aux is None else _aux
    logits, _ = _variant_logits(cfg, pooled, targets, aux)
    return cross_entropy_from_logits(logits, targets)[0]
