"""Finite-difference oracles for the analytic gradients.

Central differences evaluated through the same layer stack but never
through the reverse pass, so the two routes stay independent.
"""

from __future__ import annotations

import numpy as np

from .nn import Model, ParamSet, _check_input, _check_labels, _ce_pieces

__all__ = ["central_difference", "fd_gradient", "fd_gradient_at"]


def central_difference(f, v: float, h: float) -> float:
    """(f(v+h) - f(v-h)) / 2h for a scalar function."""
    return (f(v + h) - f(v - h)) / (2.0 * h)


def _loss_through_layers(model: Model, x, y, params_by_layer) -> float:
    """Forward pass with externally supplied parameter views, then mean CE."""
    h = x
    for layer in model.layers:
        h, _ = layer.forward(h, params_by_layer[layer.name])
    per_sample, _ = _ce_pieces(h, y)
    return float(per_sample.mean())


def _mutable_param_views(model: Model):
    """One flat mutable vector plus per-layer reshaped views into it."""
    vec = model.params.to_vector()
    views: dict[str, dict[str, np.ndarray]] = {l.name: {} for l in model.layers}
    off = 0
    for name, arr in model.params:
        layer_name, pname = name.split(".", 1)
        views[layer_name][pname] = vec[off : off + arr.size].reshape(arr.shape)
        off += arr.size
    return vec, views


def fd_gradient(model: Model, x, y, h: float = 1e-5):
    """Full central-difference gradients: (wrt_input, wrt_params ParamSet).

    Cost is two forward passes per coordinate; intended for small models.
    """
    xb = _check_input(model, x).copy()
    labels = _check_labels(y, xb.shape[0], model.n_classes)
    vec, views = _mutable_param_views(model)

    def loss() -> float:
        return _loss_through_layers(model, xb, labels, views)

    gx = np.zeros_like(xb)
    flat_x = xb.ravel()
    gx_flat = gx.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = loss()
        flat_x[i] = orig - h
        down = loss()
        flat_x[i] = orig
        gx_flat[i] = (up - down) / (2.0 * h)

    gp = np.zeros_like(vec)
    for i in range(vec.size):
        orig = vec[i]
        vec[i] = orig + h
        up = loss()
        vec[i] = orig - h
        down = loss()
        vec[i] = orig
        gp[i] = (up - down) / (2.0 * h)

    return gx, model.params.with_vector(gp)


def fd_gradient_at(model: Model, x, y, input_idx, param_idx, h: float = 1e-5):
    """Central differences at selected flat coordinates only.

    Returns (input derivative values, parameter derivative values) in the
    order of the given index lists.
    """
    xb = _check_input(model, x).copy()
    labels = _check_labels(y, xb.shape[0], model.n_classes)
    vec, views = _mutable_param_views(model)

    def loss() -> float:
        return _loss_through_layers(model, xb, labels, views)

    flat_x = xb.ravel()
    out_x = np.zeros(len(input_idx))
    for j, i in enumerate(input_idx):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = loss()
        flat_x[i] = orig - h
        down = loss()
        flat_x[i] = orig
        out_x[j] = (up - down) / (2.0 * h)

    out_p = np.zeros(len(param_idx))
    for j, i in enumerate(param_idx):
        orig = vec[i]
        vec[i] = orig + h
        up = loss()
        vec[i] = orig - h
        down = loss()
        vec[i] = orig
        out_p[j] = (up - down) / (2.0 * h)

    return out_x, out_p
