"""Differentiation primitives used by the MeanFlow objective.

Forward mode (`jvp`) carries one tangent lane through the network inputs and
gives du/dt in a single pass; reverse mode (`grad_params`) gives parameter
gradients; `detach` is the stop-gradient that keeps the regression target
out of the backward pass. All math runs in float64.
"""
from typing import NamedTuple

import jax
from jax import numpy as jnp

from . import errors

Tensor = jax.Array
ParamGrads = dict

POINT_COMPONENTS = ('z', 'r', 't')


class JvpOutput(NamedTuple):
    primal: Tensor
    tangent: Tensor


def make_rng(seed):
    """A counter-based (threefry) generator key from an explicit integer seed."""
    return jax.random.PRNGKey(int(seed))


def jvp(fn, point, tangent, names=POINT_COMPONENTS):
    """Evaluates `fn` at `point` and its directional derivative along `tangent`.

    Arguments:
    - fn: a differentiable function of the point components, e.g. (z, r, t).
        Parameters should already be closed over.
    - point: tuple of primal inputs.
    - tangent: tuple of tangent inputs, one per point component, same shapes.
    Returns: JvpOutput(primal=fn(*point), tangent=J_fn(point) @ tangent).
    """
    if len(point) != len(tangent):
        raise errors.ShapeMismatchError('tangent', (len(point),),
                                        (len(tangent),))
    names = list(names) + [f'arg{i}' for i in range(len(names), len(point))]
    point = tuple(jnp.asarray(p, dtype=jnp.float64) for p in point)
    tangent = tuple(jnp.asarray(v, dtype=jnp.float64) for v in tangent)
    for name, p, v in zip(names, point, tangent):
        if p.shape != v.shape:
            raise errors.ShapeMismatchError(name, p.shape, v.shape)
    primal, tangent_out = jax.jvp(fn, point, tangent)
    return JvpOutput(primal, tangent_out)


def grad_params(loss_fn, params, has_aux=False):
    """Exact reverse-mode gradient of a scalar `loss_fn` w.r.t. `params`.

    With has_aux=True, `loss_fn` returns (loss, aux) and this returns
    (grads, aux).
    """
    out_shape = jax.eval_shape(loss_fn, params)
    loss_shape = out_shape[0].shape if has_aux else out_shape.shape
    if loss_shape != ():
        raise errors.NonScalarLossError(loss_shape)
    return jax.grad(loss_fn, has_aux=has_aux)(params)


def detach(x):
    """Value-identical copy of `x` that contributes nothing to gradients."""
    return jax.lax.stop_gradient(x)
