"""Python bindings for the nonlocal Poisson finite element solver."""

import json as _json

from ._nlfem import (
    Kernel,
    Mesh,
    NumericalError,
    PreconditionError,
    build_mesh,
    cli_main,
    closed_form_weights_1d_constant,
    default_zeta,
    fit_rate,
    full_ball_rule,
)
from ._nlfem import assemble_stiffness_coo as _assemble_stiffness_coo
from ._nlfem import run_study as _run_study

__all__ = [
    "Kernel",
    "Mesh",
    "NumericalError",
    "PreconditionError",
    "assemble_stiffness",
    "build_mesh",
    "cli_main",
    "closed_form_weights_1d_constant",
    "default_zeta",
    "fit_rate",
    "full_ball_rule",
    "run_study",
]


def run_study(config, threads=1):
    """Run a refinement study. `config` is a dict or a JSON string."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _run_study(config, threads)


def assemble_stiffness(mesh, kernel, points_per_radius=5, n_q=40, t_e=0.0, threads=1):
    """Interior-interior stiffness matrix as scipy.sparse.csr_matrix."""
    import scipy.sparse

    rows, cols, vals, shape = _assemble_stiffness_coo(mesh, kernel, points_per_radius, n_q, t_e, threads)
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=shape)
