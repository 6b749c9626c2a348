"""Graph-based automatic differentiation.

Input derivatives are a graph-to-graph transform (:func:`d_input`), so the
resulting expressions can be differentiated again with respect to parameters
by ordinary reverse mode (:func:`grad_params`, :class:`Program`).
"""

from .engine import Bindings, Program, chunked_value_and_grad, evaluate, grad_params, tree_sum
from .expr import (
    AutodiffError,
    BindingError,
    DifferentiabilityError,
    Expr,
    ShapeError,
    absolute,
    add,
    affine,
    col,
    const,
    cos,
    d_input,
    deadzone,
    exp,
    free_inputs,
    free_params,
    input_var,
    matmul,
    mean,
    mul,
    one_minus_square,
    param,
    powi,
    scale,
    sin,
    source,
    square,
    stack,
    sub,
    tanh,
    topological,
)

eval = evaluate  # noqa: A001 - the operation name used throughout the docs
