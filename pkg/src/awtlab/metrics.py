"""Transfer evaluation: success rates, parameter-noise transfer scores,
gradient-norm profiles, correlation statistics and the input-residual search.

The transfer score measures how much the surrogate's logits at an
adversarial input move when the surrogate's parameters are jittered with
isotropic Gaussian noise: flat-region examples move less and tend to
transfer better, so lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .attacks import AdversarialBatch
from .errors import AwtlabError, NonFiniteError, ShapeError
from .glyphs import Dataset
from .nn import (
    Model,
    ParamSet,
    backprop_logits,
    forward,
    grad_dual,
    input_grad,
    perturb_params,
)
from .seeding import derive_seed

__all__ = [
    "attack_success_rate",
    "per_sample_transfer_score",
    "transfer_score",
    "empirical_transfer_gap",
    "pearson",
    "spearman",
    "correlation",
    "GradNormProfile",
    "grad_norm_profile",
    "ResidualSearchResult",
    "residual_search",
    "TransferReport",
]


def attack_success_rate(target: Model, batch: AdversarialBatch) -> float:
    """Fraction of adversarial inputs the target classifies away from truth."""
    if len(batch) == 0:
        raise ShapeError("attack_success_rate: empty batch")
    preds = forward(target, batch.x_adv).argmax(axis=1)
    return float((preds != batch.labels).mean())


def per_sample_transfer_score(
    batch: AdversarialBatch,
    surrogate: Model,
    eps: float,
    n_eta: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Mean L2 logit displacement per sample under parameter noise.

    Each of n_eta draws perturbs every parameter coordinate with N(0, eps^2)
    noise; draws use per-index derived seeds and a fixed-order average.
    """
    if eps < 0:
        raise ShapeError(f"eps must be >= 0, got {eps}")
    if n_eta < 1:
        raise ShapeError(f"n_eta must be >= 1, got {n_eta}")
    base = forward(surrogate, batch.x_adv)
    acc = np.zeros(len(batch))
    dim = surrogate.params.total_dim
    for i in range(n_eta):
        rng = np.random.default_rng(derive_seed(seed, "eta", i))
        eta = surrogate.params.with_vector(rng.normal(0.0, eps, dim) if eps > 0 else np.zeros(dim))
        shifted = forward(perturb_params(surrogate, eta, 1.0), batch.x_adv)
        acc += np.linalg.norm(shifted - base, axis=1)
    return acc / n_eta


def transfer_score(
    batch: AdversarialBatch,
    surrogate: Model,
    eps: float,
    n_eta: int = 10,
    seed: int = 0,
) -> float:
    """Batch mean of per_sample_transfer_score; lower means more transferable."""
    return float(per_sample_transfer_score(batch, surrogate, eps, n_eta, seed).mean())


def empirical_transfer_gap(target: Model, batch: AdversarialBatch) -> np.ndarray:
    """|logit_y(x_clean) - logit_y(x_adv)| per sample on raw target logits.

    Invariant to any constant shift of the target's logits.
    """
    if len(batch) == 0:
        raise ShapeError("empirical_transfer_gap: empty batch")
    rows = np.arange(len(batch))
    z_clean = forward(target, batch.x_clean)[rows, batch.labels]
    z_adv = forward(target, batch.x_adv)[rows, batch.labels]
    return np.abs(z_clean - z_adv)


def _as_series(xs, ys):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise ShapeError(f"series lengths differ: {xs.size} vs {ys.size}")
    if xs.size < 3:
        raise ShapeError(f"need at least 3 points, got {xs.size}")
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise NonFiniteError("non-finite values in correlation input")
    return xs, ys


def pearson(xs, ys) -> float:
    xs, ys = _as_series(xs, ys)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise AwtlabError("pearson undefined: a series has zero variance")
    return float((dx @ dy) / np.sqrt(vx * vy))


def _average_ranks(a: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; ties get the average of their rank block."""
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size)
    sorted_vals = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    xs, ys = _as_series(xs, ys)
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise AwtlabError("spearman undefined: constant ranks")
    return pearson(rx, ry)


def correlation(xs, ys, kind: str = "pearson") -> float:
    if kind == "pearson":
        return pearson(xs, ys)
    if kind == "spearman":
        return spearman(xs, ys)
    raise AwtlabError(f"unknown correlation kind {kind!r}")


@dataclass(frozen=True, eq=False)
class GradNormProfile:
    """Per-sample (input-grad L2, param-grad L2) pairs, raw and standardized."""

    raw: np.ndarray         # (n, 2)
    normalized: np.ndarray  # (n, 2), (g - mean) / std per column; std 0 -> zeros


def grad_norm_profile(model: Model, data: Dataset, max_samples: int = 200) -> GradNormProfile:
    """Dual gradient norms of the per-sample loss over the first samples."""
    n = min(max_samples, len(data))
    if n < 1:
        raise ShapeError("grad_norm_profile: no samples")
    raw = np.zeros((n, 2))
    for i in range(n):
        dual = grad_dual(model, data.images[i : i + 1], data.labels[i : i + 1])
        raw[i, 0] = np.linalg.norm(dual.wrt_input)
        raw[i, 1] = np.linalg.norm(dual.wrt_params.to_vector())
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    normalized = np.zeros_like(raw)
    nz = std > 0
    normalized[:, nz] = (raw[:, nz] - mean[nz]) / std[nz]
    return GradNormProfile(raw=raw, normalized=normalized)


@dataclass(frozen=True, eq=False)
class ResidualSearchResult:
    delta: np.ndarray
    residual: float
    residual0: float
    steps_run: int


def residual_search(
    model: Model,
    x,
    eta: ParamSet,
    eta_scale: float,
    steps: int = 500,
    step_size: float = 0.1,
) -> ResidualSearchResult:
    """Find an input shift whose effect on the logits mimics a weight shift.

    Minimizes || f_{theta + scale * eta}(x) - f_theta(x + delta) ||_2^2 by
    momentum descent on delta from zero: gradients are taken at a Nesterov
    lookahead point, accepted steps must strictly decrease the objective,
    and a rejected step restarts the momentum. Backtracking halving keeps
    a too-large step from ever diverging. Deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        x = x[None]
    if steps < 0:
        raise ShapeError(f"steps must be >= 0, got {steps}")
    target = forward(perturb_params(model, eta, eta_scale), x)
    base = forward(model, x)
    residual0 = float(np.linalg.norm(base - target))
    if eta_scale == 0.0:
        return ResidualSearchResult(np.zeros_like(x[0]), 0.0, 0.0, 0)

    delta = np.zeros_like(x)

    def objective(d):
        diff = forward(model, x + d) - target
        return float((diff * diff).sum()), diff

    j_cur, diff = objective(delta)
    vel = np.zeros_like(x)
    s = step_size
    run = 0
    for t in range(steps):
        if vel.any():
            probe = delta + (t / (t + 3.0)) * vel
            _, diff_probe = objective(probe)
        else:
            probe, diff_probe = delta, diff
        g, _ = backprop_logits(model, x + probe, 2.0 * diff_probe)
        if not np.isfinite(g).all():
            raise NonFiniteError("residual search: non-finite descent gradient")
        accepted = False
        for _ in range(40):
            cand = probe - s * g
            j_new, diff_new = objective(cand)
            if j_new < j_cur:
                vel = cand - delta
                delta, j_cur, diff = cand, j_new, diff_new
                s = min(s * 1.25, 1e3)
                accepted = True
                break
            s *= 0.5
        run += 1
        if not accepted:
            if not vel.any():
                break  # no descent direction at float precision
            vel[:] = 0.0  # discard momentum, retry as a plain step
            s = step_size
    return ResidualSearchResult(delta[0], float(np.sqrt(j_cur)), residual0, run)


@dataclass(frozen=True)
class TransferReport:
    """Everything one experiment produced, as JSON-ready row dicts."""

    config: dict
    models: tuple[dict, ...] = ()
    asr: tuple[dict, ...] = ()
    transfer_scores: tuple[dict, ...] = ()
    flatness: tuple[dict, ...] = ()
    correlations: tuple[dict, ...] = ()
    scatter: tuple[dict, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "config": self.config,
            "models": list(self.models),
            "asr": list(self.asr),
            "transfer_scores": list(self.transfer_scores),
            "flatness": list(self.flatness),
            "correlations": list(self.correlations),
            "scatter": list(self.scatter),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TransferReport":
        if doc.get("version") != 1:
            raise AwtlabError(f"unsupported report version {doc.get('version')!r}")
        return cls(
            config=doc["config"],
            models=tuple(doc["models"]),
            asr=tuple(doc["asr"]),
            transfer_scores=tuple(doc["transfer_scores"]),
            flatness=tuple(doc["flatness"]),
            correlations=tuple(doc["correlations"]),
            scatter=tuple(doc["scatter"]),
        )

    def flat_rows(self):
        """One (surrogate, target, method, metric, value) row per fact."""
        for row in self.asr:
            yield (row["surrogate"], row["target"], row["method"], "asr", row["asr"])
        for row in self.transfer_scores:
            yield (
                row["surrogate"],
                "",
                row["method"],
                f"transfer_score[eps={row['eps']}]",
                row["score"],
            )
        for row in self.flatness:
            yield (row["surrogate"], "", row["method"], "flatness", row["mean_grad_norm"])
        for row in self.correlations:
            subject = row.get("surrogate") or row.get("model") or ""
            target = row.get("target") or ""
            yield (subject, target, "", f"pearson[{row['analysis']}]", row["pearson"])
            yield (subject, target, "", f"spearman[{row['analysis']}]", row["spearman"])
