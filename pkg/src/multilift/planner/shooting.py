"""Multiple-shooting integration of the whole-body model with exact sensitivities."""

import numpy as np

from ..dynamics import load_cable_derivative, load_cable_jacobians
from ..errors import ModelEvaluationError
from ..rotation import dnormalize
from ..state import cable_base, state_dim


def _renormalize(x, n):
    """Project quaternion and cable directions back to unit norm (batched)."""
    out = np.array(x, copy=True)
    q = out[..., 6:10]
    out[..., 6:10] = q / np.linalg.norm(q, axis=-1, keepdims=True)
    for i in range(n):
        b = cable_base(i)
        s = out[..., b : b + 3]
        out[..., b : b + 3] = s / np.linalg.norm(s, axis=-1, keepdims=True)
    return out


def _renorm_jacobian(x, n):
    """Block-diagonal Jacobian of the renormalization map (batched)."""
    nx = state_dim(n)
    J = np.zeros(x.shape[:-1] + (nx, nx))
    idx = np.arange(nx)
    J[..., idx, idx] = 1.0
    J[..., 6:10, 6:10] = dnormalize(x[..., 6:10])
    for i in range(n):
        b = cable_base(i)
        J[..., b : b + 3, b : b + 3] = dnormalize(x[..., b : b + 3])
    return J


def shoot(x, u, dt, params, substeps=2, check=True):
    """RK4 integration over one shooting interval, renormalized per substep."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    n = params.n
    for _ in range(substeps):
        k1 = load_cable_derivative(x, u, params, check=False)
        k2 = load_cable_derivative(x + 0.5 * h * k1, u, params, check=False)
        k3 = load_cable_derivative(x + 0.5 * h * k2, u, params, check=False)
        k4 = load_cable_derivative(x + h * k3, u, params, check=False)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x = _renormalize(x, n)
    if check and not np.all(np.isfinite(x)):
        raise ModelEvaluationError("shooting integration diverged")
    return x


def shoot_with_jacobians(x, u, dt, params, substeps=2):
    """Batched shoot plus exact discrete Jacobians (A, B).

    ``x`` (..., nx), ``u`` (..., nu), ``dt`` scalar or (...,). The chain rule
    runs through every RK4 stage and through the per-substep renormalization,
    so A and B match finite differences of ``shoot`` itself.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = params.n
    nx = state_dim(n)
    batch = x.shape[:-1]
    dt = np.broadcast_to(np.asarray(dt, dtype=float), batch)
    h = (dt / substeps)[..., None, None]
    hv = h[..., 0]  # (..., 1) for state updates

    A = np.zeros(batch + (nx, nx))
    idx = np.arange(nx)
    A[..., idx, idx] = 1.0
    B = np.zeros(batch + (nx, u.shape[-1]))

    def mm(a, b):
        return a @ b  # broadcasting matmul dispatches to batched BLAS

    for _ in range(substeps):
        k1 = load_cable_derivative(x, u, params, check=False)
        F1x, F1u = load_cable_jacobians(x, u, params)
        x2 = x + 0.5 * hv * k1
        k2 = load_cable_derivative(x2, u, params, check=False)
        F2x_loc, F2u_loc = load_cable_jacobians(x2, u, params)
        K2x = F2x_loc + 0.5 * h * mm(F2x_loc, F1x)
        K2u = F2u_loc + 0.5 * h * mm(F2x_loc, F1u)
        x3 = x + 0.5 * hv * k2
        k3 = load_cable_derivative(x3, u, params, check=False)
        F3x_loc, F3u_loc = load_cable_jacobians(x3, u, params)
        K3x = F3x_loc + 0.5 * h * mm(F3x_loc, K2x)
        K3u = F3u_loc + 0.5 * h * mm(F3x_loc, K2u)
        x4 = x + hv * k3
        k4 = load_cable_derivative(x4, u, params, check=False)
        F4x_loc, F4u_loc = load_cable_jacobians(x4, u, params)
        K4x = F4x_loc + h * mm(F4x_loc, K3x)
        K4u = F4u_loc + h * mm(F4x_loc, K3u)

        x_new = x + (hv / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        A_sub = (h / 6.0) * (F1x + 2 * K2x + 2 * K3x + K4x)
        A_sub[..., idx, idx] += 1.0
        B_sub = (h / 6.0) * (F1u + 2 * K2u + 2 * K3u + K4u)

        Jn = _renorm_jacobian(x_new, n)
        x = _renormalize(x_new, n)
        A = mm(Jn, mm(A_sub, A))
        B = mm(Jn, mm(A_sub, B) + B_sub)
    return x, A, B
