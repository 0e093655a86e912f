"""Iterative sign attacks sharing one skeleton.

Seven methods: plain momentum (mi), lookahead momentum (ni), variance
tuning (vmi), ensembled interval sampling (emi), and three neighborhood
samplers (pgn, ncs, awt). The awt variant additionally tunes the surrogate
weights once per iteration with a two-step ascent/descent update that
targets flat loss regions around the current adversarial batch; the caller
keeps the original surrogate untouched because models are immutable.

Every method runs T iterations of: estimate a gradient, fold it into an
L1-normalized momentum accumulator, take an alpha-sized sign step, then
project back onto the epsilon ball intersected with [0, 1].

Scale convention: wherever a gradient direction re-enters input space (the
neighborhood lookahead, the ni lookahead point, the emi sampling interval)
it is normalized by its per-sample mean absolute value, not the raw L1
sum, so the displacement per pixel is of order alpha regardless of input
resolution. Dividing by the plain sum would shrink those steps by the
pixel count and quietly turn every lookahead into a no-op. The momentum
accumulator itself keeps plain L1 normalization; the sign step is
invariant to that constant.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import AttackError, ConfigError, FormatError, ShapeError
from .fileio import FORMAT_VERSION, read_container, take, write_container
from .nn import Model, _check_input, _check_labels, grad_dual, input_grad, model_hash
from .seeding import derive_seed

MAGIC = b"AWTA1"
METHODS = ("mi", "ni", "vmi", "emi", "pgn", "ncs", "awt")

EMI_POINTS = 11
EMI_BOUND = 7.0
VMI_RADIUS_FACTOR = 1.5
DEGENERATE_L1 = 1e-12


class DegenerateGradientWarning(RuntimeWarning):
    """An L1 gradient norm fell below the usable threshold."""


@dataclass(frozen=True)
class AttackConfig:
    """Attack knobs; alpha and zeta default to eps/steps and 3*eps."""

    method: str = "mi"
    eps: float = 16 / 255
    steps: int = 10
    alpha: float | None = None
    mu: float = 1.0
    n_samples: int = 20
    zeta: float | None = None
    omega: float = 0.5
    beta: float = 0.005
    lr: float = 0.002
    rng_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.eps / self.steps)
        if self.zeta is None:
            object.__setattr__(self, "zeta", 3.0 * self.eps)
        if self.eps > 0 and self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0 for eps > 0, got {self.alpha}")
        if self.alpha < 0 or self.zeta < 0:
            raise ConfigError("alpha and zeta must be non-negative")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.mu < 0 or self.lr < 0:
            raise ConfigError("mu and lr must be non-negative")


@dataclass(frozen=True, eq=False)
class AdversarialBatch:
    """Attack output: clean inputs, adversarial inputs, labels, provenance."""

    x_clean: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    method: str
    config: AttackConfig
    surrogate_hash: int
    degenerate_steps: int = 0

    def __post_init__(self):
        xc = np.asarray(self.x_clean, dtype=np.float64)
        xa = np.asarray(self.x_adv, dtype=np.float64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if xc.shape != xa.shape:
            raise ShapeError(f"x_clean {xc.shape} and x_adv {xa.shape} differ")
        if lab.shape != (xc.shape[0],):
            raise ShapeError(f"labels: expected ({xc.shape[0]},), got {lab.shape}")
        for arr in (xc, xa, lab):
            arr.flags.writeable = False
        object.__setattr__(self, "x_clean", xc)
        object.__setattr__(self, "x_adv", xa)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.x_clean.shape[0]


def project_ball(x_adv, x_clean, eps: float):
    """Clamp onto the L-inf ball around x_clean, then onto the [0, 1] box."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_clean = np.asarray(x_clean, dtype=np.float64)
    if x_adv.shape != x_clean.shape:
        raise ShapeError(f"project_ball: shapes differ, {x_adv.shape} vs {x_clean.shape}")
    if eps < 0:
        raise ConfigError(f"eps must be >= 0, got {eps}")
    out = np.clip(x_adv, x_clean - eps, x_clean + eps)
    return np.clip(out, 0.0, 1.0)


def _l1(g, axes):
    return np.abs(g).sum(axis=axes, keepdims=True)


def momentum_update(g_prev, g_bar, mu: float, sample_axes: tuple[int, ...] | None = None):
    """mu * g_prev + g_bar / ||g_bar||_1.

    With sample_axes given, the L1 norm is taken per sample over those
    axes; otherwise over the whole tensor. A norm below 1e-12 skips the
    normalized term for that sample and emits DegenerateGradientWarning.
    """
    g_prev = np.asarray(g_prev, dtype=np.float64)
    g_bar = np.asarray(g_bar, dtype=np.float64)
    if g_prev.shape != g_bar.shape:
        raise ShapeError(f"momentum_update: shapes differ, {g_prev.shape} vs {g_bar.shape}")
    axes = sample_axes if sample_axes is not None else tuple(range(g_bar.ndim))
    norm = _l1(g_bar, axes)
    ok = norm >= DEGENERATE_L1
    if not ok.all():
        warnings.warn("gradient L1 norm below threshold", DegenerateGradientWarning, stacklevel=2)
    normalized = np.where(ok, g_bar / np.where(ok, norm, 1.0), 0.0)
    return mu * g_prev + normalized


def ascent_descent_step(theta, grad_fn, beta: float, lr: float):
    """Two-step flatness-seeking update on a flat parameter vector.

    Ascend by beta along the gradient, then descend from the original
    point using the gradient taken at the ascended point.
    """
    theta = np.asarray(theta, dtype=np.float64)
    g1 = np.asarray(grad_fn(theta), dtype=np.float64)
    if beta != 0.0:
        g2 = np.asarray(grad_fn(theta + beta * g1), dtype=np.float64)
    else:
        g2 = g1
    return theta - lr * g2


def _pair_loss_grad(model: Model, x_clean, x_adv, y):
    """Value and parameter gradient of CE(x_adv) + CE(x_clean)."""
    da = grad_dual(model, x_adv, y)
    dc = grad_dual(model, x_clean, y)
    return da.loss_value + dc.loss_value, da.wrt_params.combine(dc.wrt_params, 1.0)


def awt_tune(model: Model, x_clean, x_adv, y, beta: float, lr: float) -> Model:
    """One surrogate tuning step against the paired clean/adversarial loss.

    Returns a new model; with lr == 0 the input model is returned as-is,
    so a zero-strength tune is bit-exact by construction.
    """
    if lr == 0.0:
        return model
    base = model.params.to_vector()

    def grad_fn(vec):
        m = model.with_params(model.params.with_vector(vec))
        _, gp = _pair_loss_grad(m, x_clean, x_adv, y)
        return gp.to_vector()

    new_vec = ascent_descent_step(base, grad_fn, beta, lr)
    return model.with_params(model.params.with_vector(new_vec))


def neighborhood_grad(model: Model, x_t, y, cfg: AttackConfig, iteration: int = 0):
    """Average lookahead-mixed gradient over an L-inf neighborhood.

    For each of n_samples draws: perturb the batch uniformly within radius
    zeta, take the gradient there, step each sample by alpha against its
    own gradient scaled to unit mean absolute value, take the gradient
    again, and average (1 - omega) * first + omega * second. Samples whose
    first gradient is degenerate skip the lookahead. Per-draw RNG streams
    are derived from (rng_seed, iteration, i) so the accumulation order
    carries no state.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    axes = tuple(range(1, x_t.ndim))
    dim = float(np.prod(x_t.shape[1:]))
    g_bar = np.zeros_like(x_t)
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(derive_seed(cfg.rng_seed, "nbr", iteration, i))
        u = rng.uniform(-1.0, 1.0, size=x_t.shape)
        x_star = x_t + cfg.zeta * u
        g1 = input_grad(model, x_star, y, reduction="sum")
        n1 = _l1(g1, axes)
        ok = n1 >= DEGENERATE_L1
        x_pred = np.where(ok, x_star - cfg.alpha * dim * g1 / np.where(ok, n1, 1.0), x_star)
        g2 = input_grad(model, x_pred, y, reduction="sum")
        g2 = np.where(ok, g2, g1)
        g_bar += ((1.0 - cfg.omega) * g1 + cfg.omega * g2) / cfg.n_samples
    return g_bar


def _count_degenerate(g_bar, axes) -> int:
    return int((_l1(g_bar, axes) < DEGENERATE_L1).sum())


def run_attack(method: str, surrogate: Model, x_clean, y, cfg: AttackConfig | None = None) -> AdversarialBatch:
    """Run one attack over a batch; deterministic given (cfg.rng_seed, model, data).

    The positional method overrides cfg.method so one config can drive
    several methods with identical knobs. The surrogate is never mutated;
    awt works on internal copies and the returned batch records the hash
    of the original surrogate.
    """
    if cfg is None:
        cfg = AttackConfig(method=method)
    elif cfg.method != method:
        cfg = replace(cfg, method=method)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")

    x0 = _check_input(surrogate, x_clean).copy()
    labels = _check_labels(y, x0.shape[0], surrogate.n_classes)
    axes = tuple(range(1, x0.ndim))
    # momentum terms have unit L1 sum; scale by dim where they displace pixels
    dim = float(np.prod(x0.shape[1:]))

    x_adv = x0.copy()
    g_mom = np.zeros_like(x0)
    v_var = np.zeros_like(x0)  # vmi variance carry-over, starts at zero
    model = surrogate
    degenerate = 0

    for t in range(cfg.steps):
        try:
            if method == "awt":
                model = awt_tune(model, x0, x_adv, labels, cfg.beta, cfg.lr)

            if method == "mi":
                g_bar = input_grad(model, x_adv, labels, reduction="sum")
            elif method == "ni":
                lookahead = x_adv + cfg.alpha * cfg.mu * dim * g_mom
                g_bar = input_grad(model, lookahead, labels, reduction="sum")
            elif method == "vmi":
                g_hat = input_grad(model, x_adv, labels, reduction="sum")
                g_bar = g_hat + v_var
                radius = VMI_RADIUS_FACTOR * cfg.eps
                acc = np.zeros_like(x0)
                for i in range(cfg.n_samples):
                    rng = np.random.default_rng(derive_seed(cfg.rng_seed, "vmi", t, i))
                    xi = x_adv + rng.uniform(-radius, radius, size=x0.shape)
                    acc += input_grad(model, xi, labels, reduction="sum")
                v_var = acc / cfg.n_samples - g_hat
            elif method == "emi":
                points = np.linspace(-EMI_BOUND, EMI_BOUND, EMI_POINTS)
                acc = np.zeros_like(x0)
                for c in points:
                    acc += input_grad(
                        model, x_adv + c * cfg.alpha * dim * g_mom, labels, reduction="sum"
                    )
                g_bar = acc / EMI_POINTS
            else:  # pgn, ncs, awt share the neighborhood estimator
                g_bar = neighborhood_grad(model, x_adv, labels, cfg, iteration=t)

            degenerate += _count_degenerate(g_bar, axes)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateGradientWarning)
                g_mom = momentum_update(g_mom, g_bar, cfg.mu, sample_axes=axes)
            x_adv = project_ball(x_adv + cfg.alpha * np.sign(g_mom), x0, cfg.eps)
        except (ConfigError, AttackError):
            raise
        except Exception as e:
            raise AttackError(f"{method}: step {t} failed: {e}") from e

    return AdversarialBatch(
        x_clean=x0,
        x_adv=x_adv,
        labels=labels,
        method=method,
        config=cfg,
        surrogate_hash=model_hash(surrogate),
        degenerate_steps=degenerate,
    )


def save_batch(batch: AdversarialBatch, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "method": batch.method,
        "config": asdict(batch.config),
        "surrogate_hash": batch.surrogate_hash,
        "m": len(batch),
        "shape": list(batch.x_clean.shape[1:]),
        "degenerate_steps": batch.degenerate_steps,
    }
    payloads = [
        np.ascontiguousarray(batch.x_clean, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.x_adv, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.labels, dtype="<i4").tobytes(),
    ]
    write_container(path, MAGIC, header, payloads)


def load_batch(path) -> AdversarialBatch:
    """Read a stored batch. Pixels come back at float32 precision."""
    header, payload = read_container(path, MAGIC)
    for key in ("method", "config", "surrogate_hash", "m", "shape"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    m = int(header["m"])
    shape = tuple(int(d) for d in header["shape"])
    n = int(np.prod(shape)) * m
    raw_c = take(payload, 0, n * 4, path, "x_clean")
    raw_a = take(payload, n * 4, n * 4, path, "x_adv")
    raw_l = take(payload, 2 * n * 4, m * 4, path, "labels")
    try:
        cfg = AttackConfig(**header["config"])
    except TypeError as e:
        raise FormatError(f"{path}: malformed config: {e}") from e
    return AdversarialBatch(
        x_clean=np.frombuffer(raw_c, dtype="<f4").astype(np.float64).reshape((m,) + shape),
        x_adv=np.frombuffer(raw_a, dtype="<f4").astype(np.float64).reshape((m,) + shape),
        labels=np.frombuffer(raw_l, dtype="<i4").astype(np.int64),
        method=header["method"],
        config=cfg,
        surrogate_hash=int(header["surrogate_hash"]),
        degenerate_steps=int(header.get("degenerate_steps", 0)),
    )
