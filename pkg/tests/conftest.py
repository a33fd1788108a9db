import numpy as np
import pytest

from multilift.params import SystemParameters
from multilift.state import LoadCableState, PlannerInput, pack_state


@pytest.fixture
def params():
    return SystemParameters()


def hover_state(params, spread=0.0, yaw=0.0):
    """Static equilibrium whole-body state (vertical or spread cables)."""
    from multilift.equilibrium import equilibrium_state

    return equilibrium_state(params, position=np.zeros(3), yaw=yaw, spread=spread)


def random_state(params, rng, scale=1.0):
    """A random but valid packed state: unit q and s, positive tensions."""
    n = params.n
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    s = rng.normal(size=(n, 3))
    s /= np.linalg.norm(s, axis=-1, keepdims=True)
    return pack_state(
        p=rng.normal(scale=2.0 * scale, size=3),
        v=rng.normal(scale=1.0 * scale, size=3),
        q=q,
        w=rng.normal(scale=1.0 * scale, size=3),
        s=s,
        r=rng.normal(scale=1.0 * scale, size=(n, 3)),
        rd=rng.normal(scale=1.0 * scale, size=(n, 3)),
        rdd=rng.normal(scale=1.0 * scale, size=(n, 3)),
        t=rng.uniform(2.0, 8.0, size=n),
        td=rng.normal(scale=1.0 * scale, size=n),
    )


def random_input(params, rng, scale=1.0):
    n = params.n
    u = PlannerInput(
        gamma=rng.normal(scale=scale, size=(n, 3)), lam=rng.normal(scale=scale, size=n)
    )
    return u.to_vector()


def fd_jacobian(f, x, h=1e-6):
    """Central finite-difference Jacobian of vector function f at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros(f0.shape + (x.size,))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = h
        J[..., k] = (np.asarray(f(x + dx)) - np.asarray(f(x - dx))) / (2.0 * h)
    return J


def rel_err(a, b, floor=1.0):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.max(np.abs(b)), floor)
    return np.max(np.abs(a - b)) / denom
