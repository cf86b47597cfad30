"""Classification heads over frozen view/text features.

Three heads share one logit pipeline:

* ``zero_shot_logits`` — per-view cosine logits against the text matrix,
  combined by fixed view weights and a softmax.
* the viewpoint adapter — per-view square maps ``local_i = relu(f_i W_li)``
  plus one global feature ``relu(concat W_g1^T) W_g2^T`` added to every
  view before text matching. The rectifier applies only after ``W_g1``;
  the global feature gets no activation after ``W_g2``.
* the inter-view adapter baseline — a single global bottleneck
  ``F^g = relu(f2(relu(f1(concat))) W^T)`` added to the raw view rows.

All math runs in float64 torch. Both adapters compute their final
per-view logits and the weighted softmax through the same helpers as the
zero-shot head, so the residual configuration (zero global weights,
identity per-view maps, non-negative features) reproduces the zero-shot
output bit for bit, not merely within tolerance.

Adapted features are deliberately not re-normalized before the text dot
product: the summed-logit arithmetic here is pinned by a worked example
(views (1,-1),(0,2), identity W_li, zero global, equal weights 1/2 ->
summed logits (0.5, 1.0)), which only holds without re-normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError

ADAPTER_MODES = ("view_only", "global_only", "both")


def _to_t(x) -> torch.Tensor:
    # ascontiguousarray: torch rejects negative-stride views (e.g. arr[::-1]).
    return torch.as_tensor(
        np.ascontiguousarray(np.asarray(x, dtype=np.float64)), dtype=torch.float64
    )


def uniform_view_weights(m: int) -> np.ndarray:
    if m < 1:
        raise ValidationError("need at least one view")
    return np.full(m, 1.0 / m, dtype=np.float64)


# ---------------------------------------------------------------------------
# Shared torch core. Every head funnels through these two helpers; the exact
# residual identities depend on that sharing.
# ---------------------------------------------------------------------------

def per_view_logits_t(feats: torch.Tensor, text: torch.Tensor,
                      temperature: float) -> torch.Tensor:
    """tau * (feats @ text^T) for feats (..., M, C), text (K, C)."""
    return temperature * (feats @ text.transpose(0, 1))


def weighted_softmax_t(per_view: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """softmax over K of sum_i alpha_i * per_view[..., i, :]."""
    summed = (alpha[:, None] * per_view).sum(dim=-2)
    return torch.softmax(summed, dim=-1)


def weighted_logits_t(per_view: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    return (alpha[:, None] * per_view).sum(dim=-2)


def _check_view_text(view: np.ndarray, text: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    view = np.asarray(view, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if view.ndim != 2 or text.ndim != 2:
        raise ValidationError(
            f"expected 2-D view and text matrices, got {view.shape} and {text.shape}"
        )
    if view.shape[1] != text.shape[1]:
        raise ValidationError(
            f"feature dimension mismatch: view C={view.shape[1]}, text C={text.shape[1]}"
        )
    return view, text


def zero_shot_logits(view: np.ndarray, text: np.ndarray, alpha: np.ndarray,
                     temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-view cosine logits and the weighted-softmax class distribution.

    Returns ``(per_view, probs)`` with ``per_view[i] = tau * f_i . text^T``
    and ``probs = softmax(sum_i alpha_i per_view[i])``.
    """
    view, text = _check_view_text(view, text)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (view.shape[0],):
        raise ValidationError(
            f"alpha must have one weight per view: got {alpha.shape} for M={view.shape[0]}"
        )
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("view weights must be finite")
    per_view = per_view_logits_t(_to_t(view), _to_t(text), float(temperature))
    probs = weighted_softmax_t(per_view, _to_t(alpha))
    return per_view.numpy(), probs.numpy()


# ---------------------------------------------------------------------------
# Viewpoint adapter
# ---------------------------------------------------------------------------

@dataclass
class ViewpointAdapterParams:
    """Per-view square maps, a global bottleneck, and learnable view weights.

    Shapes: ``w_local`` (M, C, C), ``w_g1`` (C_h, M*C), ``w_g2`` (C, C_h),
    ``alpha`` (M,). All maps are bias-free.
    """

    w_local: np.ndarray
    w_g1: np.ndarray
    w_g2: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.w_local = np.asarray(self.w_local, dtype=np.float64)
        self.w_g1 = np.asarray(self.w_g1, dtype=np.float64)
        self.w_g2 = np.asarray(self.w_g2, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        m, c, c2 = self.w_local.shape
        if c != c2:
            raise ValidationError("per-view maps must be square C x C")
        c_h = self.w_g1.shape[0]
        if self.w_g1.shape != (c_h, m * c):
            raise ValidationError(
                f"w_g1 must be (C_h, M*C); got {self.w_g1.shape} for M={m}, C={c}"
            )
        if self.w_g2.shape != (c, c_h):
            raise ValidationError(
                f"w_g2 must be (C, C_h); got {self.w_g2.shape}"
            )
        if self.alpha.shape != (m,):
            raise ValidationError(f"alpha must be (M,); got {self.alpha.shape}")

    @property
    def n_views(self) -> int:
        return self.w_local.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_local.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_g1.shape[0]

    @property
    def param_count(self) -> int:
        m, c, c_h = self.n_views, self.feature_dim, self.hidden_dim
        return m * c * c + c_h * m * c + c * c_h + m

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "w_local": self.w_local,
            "w_g1": self.w_g1,
            "w_g2": self.w_g2,
            "alpha": self.alpha,
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ViewpointAdapterParams":
        return cls(arrays["w_local"], arrays["w_g1"], arrays["w_g2"], arrays["alpha"])

    def copy(self) -> "ViewpointAdapterParams":
        return ViewpointAdapterParams(
            self.w_local.copy(), self.w_g1.copy(), self.w_g2.copy(), self.alpha.copy()
        )


def init_viewpoint_params(n_views: int, feature_dim: int, hidden_dim: int | None = None,
                          seed: int = 0, mode: str = "both") -> ViewpointAdapterParams:
    """Initialize near the zero-shot solution.

    Per-view maps start at identity + 0.01 Gaussian, global maps at
    0.01 Gaussian, alpha at 1/M. ``view_only`` zeroes the global maps and
    ``global_only`` zeroes the per-view maps (the trainer also freezes the
    zeroed parts in those modes).
    """
    if mode not in ADAPTER_MODES:
        raise ValidationError(f"unknown adapter mode {mode!r}; expected {ADAPTER_MODES}")
    m, c = n_views, feature_dim
    c_h = c if hidden_dim is None else hidden_dim
    rng = np.random.default_rng(seed)
    w_local = np.broadcast_to(np.eye(c), (m, c, c)) + 0.01 * rng.standard_normal((m, c, c))
    w_g1 = 0.01 * rng.standard_normal((c_h, m * c))
    w_g2 = 0.01 * rng.standard_normal((c, c_h))
    if mode == "view_only":
        w_g1, w_g2 = np.zeros_like(w_g1), np.zeros_like(w_g2)
    elif mode == "global_only":
        w_local = np.zeros((m, c, c))
    return ViewpointAdapterParams(w_local, w_g1, w_g2, uniform_view_weights(m))


def adapted_features_t(w_local: torch.Tensor, w_g1: torch.Tensor, w_g2: torch.Tensor,
                       views: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Local and global adapter features for views (..., M, C), torch-native.

    ``local[..., i, :] = relu(views[..., i, :] @ w_local[i])``;
    ``global = relu(concat @ w_g1^T) @ w_g2^T`` with no second activation.
    """
    local = torch.relu(torch.einsum("...mc,mcd->...md", views, w_local))
    concat = views.reshape(*views.shape[:-2], -1)
    hidden = torch.relu(torch.nn.functional.linear(concat, w_g1))
    global_feat = torch.nn.functional.linear(hidden, w_g2)
    return local, global_feat


def viewpoint_probs_t(w_local, w_g1, w_g2, alpha, views, text,
                      temperature: float) -> torch.Tensor:
    """Torch-native classify for views (..., M, C); used by training too."""
    local, global_feat = adapted_features_t(w_local, w_g1, w_g2, views)
    adapted = local + global_feat.unsqueeze(-2)
    per_view = per_view_logits_t(adapted, text, temperature)
    return weighted_softmax_t(per_view, alpha)


def viewpoint_summed_logits_t(w_local, w_g1, w_g2, alpha, views, text,
                              temperature: float) -> torch.Tensor:
    local, global_feat = adapted_features_t(w_local, w_g1, w_g2, views)
    adapted = local + global_feat.unsqueeze(-2)
    per_view = per_view_logits_t(adapted, text, temperature)
    return weighted_logits_t(per_view, alpha)


def _check_adapter_inputs(params, view: np.ndarray) -> np.ndarray:
    view = np.asarray(view, dtype=np.float64)
    if view.shape != (params.n_views, params.feature_dim):
        raise ValidationError(
            f"view matrix {view.shape} does not match adapter "
            f"(M={params.n_views}, C={params.feature_dim})"
        )
    return view


def viewpoint_adapter_forward(params: ViewpointAdapterParams,
                              view: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (local MxC, global C) adapter features for one view matrix."""
    view = _check_adapter_inputs(params, view)
    local, global_feat = adapted_features_t(
        _to_t(params.w_local), _to_t(params.w_g1), _to_t(params.w_g2), _to_t(view)
    )
    return local.numpy(), global_feat.numpy()


def classify(params: ViewpointAdapterParams, view: np.ndarray, text: np.ndarray,
             temperature: float = 1.0) -> np.ndarray:
    """Class distribution softmax(sum_i alpha_i tau ((local_i + global) . text^T))."""
    view = _check_adapter_inputs(params, view)
    _, text = _check_view_text(view, text)
    probs = viewpoint_probs_t(
        _to_t(params.w_local), _to_t(params.w_g1), _to_t(params.w_g2),
        _to_t(params.alpha), _to_t(view), _to_t(text), float(temperature),
    )
    return probs.numpy()


# ---------------------------------------------------------------------------
# Inter-view adapter baseline
# ---------------------------------------------------------------------------

@dataclass
class InterViewAdapterParams:
    """Global-bottleneck baseline: f1 (C_h, M*C), f2 (C_g, C_h), w (C, C_g)."""

    f1: np.ndarray
    f2: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.f1 = np.asarray(self.f1, dtype=np.float64)
        self.f2 = np.asarray(self.f2, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.f2.shape[1] != self.f1.shape[0]:
            raise ValidationError("f2 input width must equal f1 output width")
        if self.w.shape[1] != self.f2.shape[0]:
            raise ValidationError("w input width must equal f2 output width")

    @property
    def feature_dim(self) -> int:
        return self.w.shape[0]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"f1": self.f1, "f2": self.f2, "w": self.w}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "InterViewAdapterParams":
        return cls(arrays["f1"], arrays["f2"], arrays["w"])

    def copy(self) -> "InterViewAdapterParams":
        return InterViewAdapterParams(self.f1.copy(), self.f2.copy(), self.w.copy())


def init_interview_params(n_views: int, feature_dim: int, hidden_dim: int | None = None,
                          global_dim: int | None = None, seed: int = 0) -> InterViewAdapterParams:
    """Small-Gaussian init throughout.

    Zero-initializing ``w`` would pin F^g = relu(0) = 0 with zero gradient
    through the rectifier, so the final map starts small but nonzero.
    """
    c = feature_dim
    c_h = c if hidden_dim is None else hidden_dim
    c_g = c if global_dim is None else global_dim
    rng = np.random.default_rng(seed)
    return InterViewAdapterParams(
        0.01 * rng.standard_normal((c_h, n_views * c)),
        0.01 * rng.standard_normal((c_g, c_h)),
        0.01 * rng.standard_normal((c, c_g)),
    )


def interview_probs_t(f1, f2, w, alpha, views, text, temperature: float) -> torch.Tensor:
    concat = views.reshape(*views.shape[:-2], -1)
    g = torch.nn.functional.linear(
        torch.relu(torch.nn.functional.linear(concat, f1)), f2
    )
    global_feat = torch.relu(torch.nn.functional.linear(g, w))
    adapted = views + global_feat.unsqueeze(-2)
    per_view = per_view_logits_t(adapted, text, temperature)
    return weighted_softmax_t(per_view, alpha)


def interview_summed_logits_t(f1, f2, w, alpha, views, text, temperature: float) -> torch.Tensor:
    concat = views.reshape(*views.shape[:-2], -1)
    g = torch.nn.functional.linear(
        torch.relu(torch.nn.functional.linear(concat, f1)), f2
    )
    global_feat = torch.relu(torch.nn.functional.linear(g, w))
    adapted = views + global_feat.unsqueeze(-2)
    per_view = per_view_logits_t(adapted, text, temperature)
    return weighted_logits_t(per_view, alpha)


def interview_adapter_forward(params: InterViewAdapterParams, view: np.ndarray,
                              text: np.ndarray, alpha: np.ndarray,
                              temperature: float = 1.0) -> np.ndarray:
    """Baseline head: F^g = relu(f2(relu(f1(concat))) w^T) added to raw views."""
    view = np.asarray(view, dtype=np.float64)
    if view.ndim != 2 or view.shape[1] != params.feature_dim:
        raise ValidationError(
            f"view matrix {view.shape} does not match adapter C={params.feature_dim}"
        )
    if view.shape[0] * view.shape[1] != params.f1.shape[1]:
        raise ValidationError(
            f"concat width {view.size} does not match f1 input {params.f1.shape[1]}"
        )
    _, text = _check_view_text(view, text)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (view.shape[0],):
        raise ValidationError(f"alpha must be (M,); got {alpha.shape}")
    probs = interview_probs_t(
        _to_t(params.f1), _to_t(params.f2), _to_t(params.w),
        _to_t(alpha), _to_t(view), _to_t(text), float(temperature),
    )
    return probs.numpy()
