"""Training objectives with analytic gradients, plus a finite-difference oracle.

Three losses drive training:

* global_infonce  -- contrastive alignment between page-global vectors and
  descriptor-global vectors over a batch (temperature-scaled, in-batch
  negatives, positives on the diagonal).
* local_align     -- each patch row is pulled toward its best-matching
  descriptor token row (negated sum of row-max cosines).
* retrieval_infonce -- InfoNCE over the in-batch MaxSim score grid.

Every loss returns a LossValue carrying d(loss)/d(input) for each matrix
input, keyed by parameter name, so finite_diff_check can verify any of them
coordinate-by-coordinate against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import NORM_EPS
from .errors import ConfigurationError, DegenerateInputError, DimensionMismatchError
from .scoring import ScoreMatrix

#: Default temperature for both contrastive losses.
DEFAULT_TAU = 0.02


@dataclass
class LossValue:
    """A scalar loss plus gradients shaped exactly like each named input."""

    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    #: Rows of the first input whose argmax was tied (subgradient points).
    tie_rows: tuple[int, ...] = ()


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    return tau


def _unit_rows(name: str, mat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate a nonempty 2-D matrix with no zero rows; return (mat, norms, unit rows)."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise DimensionMismatchError(f"{name}: expected a nonempty 2-D matrix, got shape {mat.shape}")
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError(f"{name}: zero-norm row (cosine undefined for training)")
    return mat, norms, mat / norms


def _row_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable per-row softmax; returns (probabilities, per-row log-sum-exp)."""
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = np.sum(e, axis=1, keepdims=True)
    return e / z, (m + np.log(z)).ravel()


def global_infonce(
    visual_globals: np.ndarray,
    descriptor_globals: np.ndarray,
    tau: float = DEFAULT_TAU,
) -> LossValue:
    """Contrastive loss between page globals and descriptor globals.

    With s_ij = cos(row i of visual_globals, row j of descriptor_globals)/tau,
    the loss is -(1/B) sum_i (s_ii - log sum_j exp(s_ij)). Gradients flow into
    both branches (both pass through the same trainable backbone).
    """
    tau = _check_tau(tau)
    gv, gv_norms, gv_unit = _unit_rows("visual_globals", visual_globals)
    gd, gd_norms, gd_unit = _unit_rows("descriptor_globals", descriptor_globals)
    if gv.shape != gd.shape:
        raise DimensionMismatchError(f"global_infonce: shapes {gv.shape} vs {gd.shape}")
    b = gv.shape[0]

    cos_grid = gv_unit @ gd_unit.T
    logits = cos_grid / tau
    probs, lse = _row_softmax(logits)
    value = float(-np.mean(np.diag(logits) - lse))

    # d(loss)/d(logits) = -(1/B) (I - P); chain through 1/tau and the cosine.
    dlogits = -(np.eye(b) - probs) / b
    dcos = dlogits / tau
    row_dots = np.sum(dcos * cos_grid, axis=1, keepdims=True)
    col_dots = np.sum(dcos * cos_grid, axis=0)[:, None]
    d_gv = (dcos @ gd_unit - row_dots * gv_unit) / gv_norms
    d_gd = (dcos.T @ gv_unit - col_dots * gd_unit) / gd_norms
    return LossValue(
        value=value,
        gradients={"visual_globals": d_gv, "descriptor_globals": d_gd},
    )


def local_align(
    patches: np.ndarray,
    descriptor_tokens: np.ndarray,
    tie_tol: float = 1e-9,
) -> LossValue:
    """Negated sum over patch rows of the max cosine against descriptor tokens.

    The gradient flows only through each row's argmax descriptor token; ties
    resolve to the lowest index (a subgradient) and the tied rows are reported
    via LossValue.tie_rows so verification can exclude them.
    """
    pm, p_norms, p_unit = _unit_rows("patches", patches)
    em, e_norms, e_unit = _unit_rows("descriptor_tokens", descriptor_tokens)
    if pm.shape[1] != em.shape[1]:
        raise DimensionMismatchError(f"local_align: dims {pm.shape[1]} vs {em.shape[1]}")

    cos_grid = p_unit @ e_unit.T
    best = np.argmax(cos_grid, axis=1)
    best_vals = cos_grid[np.arange(pm.shape[0]), best]
    value = float(-np.sum(best_vals))

    ties: list[int] = []
    if cos_grid.shape[1] > 1:
        sorted_vals = np.sort(cos_grid, axis=1)
        margins = sorted_vals[:, -1] - sorted_vals[:, -2]
        ties = [int(k) for k in np.nonzero(margins < tie_tol)[0]]

    d_p = np.zeros_like(pm)
    d_e = np.zeros_like(em)
    for k, j in enumerate(best):
        c = best_vals[k]
        d_p[k] = -(e_unit[j] - c * p_unit[k]) / p_norms[k, 0]
        d_e[j] += -(p_unit[k] - c * e_unit[j]) / e_norms[j, 0]
    return LossValue(
        value=value,
        gradients={"patches": d_p, "descriptor_tokens": d_e},
        tie_rows=tuple(ties),
    )


def retrieval_infonce(scores: ScoreMatrix | np.ndarray, tau: float = DEFAULT_TAU) -> LossValue:
    """InfoNCE over a square in-batch score grid with positives on the diagonal.

    Returns gradients w.r.t. the raw scores; the trainer chains them into the
    embedding rows through the MaxSim argmax structure.
    """
    tau = _check_tau(tau)
    values = scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
        raise ConfigurationError(f"retrieval_infonce: expected a square score matrix, got {values.shape}")
    b = values.shape[0]

    logits = values / tau
    probs, lse = _row_softmax(logits)
    value = float(-np.mean(np.diag(logits) - lse))
    d_scores = -(np.eye(b) - probs) / (b * tau)
    return LossValue(value=value, gradients={"scores": d_scores})


def scale_loss(lv: LossValue, factor: float) -> LossValue:
    """Scale a loss and its gradients by a constant weight."""
    return LossValue(
        value=lv.value * factor,
        gradients={k: g * factor for k, g in lv.gradients.items()},
        tie_rows=lv.tie_rows,
    )


def joint_loss(
    global_part: LossValue | None,
    local_part: LossValue | None,
    retrieval_part: LossValue | None,
) -> LossValue:
    """Unweighted sum of the enabled loss components.

    Disabled components are passed as None; gradients for inputs shared
    between components are summed, others are carried through unchanged.
    """
    parts = [p for p in (global_part, local_part, retrieval_part) if p is not None]
    value = float(sum(p.value for p in parts))
    gradients: dict[str, np.ndarray] = {}
    ties: list[int] = []
    for p in parts:
        for key, grad in p.gradients.items():
            if key in gradients:
                gradients[key] = gradients[key] + grad
            else:
                gradients[key] = grad
        ties.extend(p.tie_rows)
    return LossValue(value=value, gradients=gradients, tie_rows=tuple(ties))


@dataclass
class FiniteDiffReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_error: float
    n_checked: int
    n_excluded: int
    tolerance: float
    passed: bool
    worst: tuple[str, tuple, float, float] | None = None  # (input, index, analytic, numeric)


def local_align_tie_exclusion(
    patches: np.ndarray,
    descriptor_tokens: np.ndarray,
    tie_tol: float = 1e-9,
) -> dict[str, np.ndarray]:
    """Exclusion masks for finite_diff_check at local_align subgradient points.

    Marks every coordinate of a tied patch row and of all descriptor rows
    attaining its max (the finite difference is one-sided there).
    """
    lv = local_align(patches, descriptor_tokens, tie_tol=tie_tol)
    p = np.asarray(patches, dtype=np.float64)
    e = np.asarray(descriptor_tokens, dtype=np.float64)
    p_mask = np.zeros(p.shape, dtype=bool)
    e_mask = np.zeros(e.shape, dtype=bool)
    if lv.tie_rows:
        p_unit = p / np.linalg.norm(p, axis=1, keepdims=True)
        e_unit = e / np.linalg.norm(e, axis=1, keepdims=True)
        cos_grid = p_unit @ e_unit.T
        for k in lv.tie_rows:
            p_mask[k, :] = True
            top = np.max(cos_grid[k])
            e_mask[cos_grid[k] >= top - tie_tol, :] = True
    return {"patches": p_mask, "descriptor_tokens": e_mask}


def finite_diff_check(
    loss_fn,
    inputs: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    exclude: dict[str, np.ndarray] | None = None,
) -> FiniteDiffReport:
    """Compare loss_fn's analytic gradients against central finite differences.

    loss_fn is called as loss_fn(**inputs) and must return a LossValue whose
    gradient keys cover the input names. Every coordinate of every input is
    perturbed by +/- epsilon unless masked out via `exclude` (boolean masks
    keyed like inputs, used for known subgradient points). Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise ValueError(f"finite_diff_check: epsilon {epsilon} outside [1e-6, 1e-3]")
    exclude = exclude or {}
    base = loss_fn(**inputs)
    missing = set(inputs) - set(base.gradients)
    if missing:
        raise ConfigurationError(f"finite_diff_check: loss_fn returned no gradient for {sorted(missing)}")

    max_rel = 0.0
    n_checked = 0
    n_excluded = 0
    worst = None
    for name, arr in inputs.items():
        arr = np.asarray(arr, dtype=np.float64)
        analytic = base.gradients[name]
        mask = exclude.get(name)
        for idx in np.ndindex(arr.shape):
            if mask is not None and mask[idx]:
                n_excluded += 1
                continue
            bumped = {k: np.array(v, dtype=np.float64, copy=True) for k, v in inputs.items()}
            bumped[name][idx] += epsilon
            f_plus = loss_fn(**bumped).value
            bumped[name][idx] -= 2 * epsilon
            f_minus = loss_fn(**bumped).value
            numeric = (f_plus - f_minus) / (2 * epsilon)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, idx, a, numeric)
    return FiniteDiffReport(
        max_rel_error=max_rel,
        n_checked=n_checked,
        n_excluded=n_excluded,
        tolerance=tolerance,
        passed=max_rel < tolerance,
        worst=worst,
    )
