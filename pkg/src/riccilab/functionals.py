"""Energy and entropy functionals of a (metric, density) pair.

All quantities are evaluated with the single quadrature of
:func:`riccilab.geometry.integrate`, so functional identities inherit the
operator-level integration-by-parts exactness of the discretization.

* ``f_functional``    F = 4 integral(|grad u|^2 + R u^2 / 4)
* ``shannon_entropy`` S = integral(u^2 ln u^2)   (equals -integral(f e^{-f}))
* ``omega``           a + F/4, required positive
* ``log_entropy``     -S + (n/2) ln(omega) + 4 a t
* ``lambda0``         smallest eigenvalue of -Lap + R/4
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NonPositiveOmega, PositivityLoss
from .geometry import (
    ConformalTorus2D,
    MetricState,
    ScalarField,
    dim,
    gradient_sq,
    integrate,
    scalar_curvature,
    scalar_field,
)

__all__ = [
    "f_functional",
    "f_functional_f_form",
    "shannon_entropy",
    "omega",
    "log_entropy",
    "lambda0",
    "lambda0_eig",
    "EntropyRecord",
    "AdjustedColumns",
]

LAMBDA0_TOL = 1e-10
LAMBDA0_MAXITER = 10**4


def f_functional(m: MetricState, u: ScalarField) -> float:
    """Dirichlet-plus-curvature energy F = 4 integral(|grad u|^2 + R u^2/4) dmu."""
    gs = gradient_sq(m, u)
    R = scalar_curvature(m)
    integrand = gs.values + 0.25 * R.values * u.values**2
    return 4.0 * integrate(m, scalar_field(m, integrand))


def f_functional_f_form(m: MetricState, f: ScalarField, v: ScalarField) -> float:
    """Same energy in the potential variable: integral((R + |grad f|^2) e^{-f}),
    with e^{-f} supplied as the density v.  Used to cross-check the change of
    variables; agrees with :func:`f_functional` up to O(h^2) chain-rule error."""
    gs = gradient_sq(m, f)
    R = scalar_curvature(m)
    return integrate(m, scalar_field(m, (R.values + gs.values) * v.values))


def shannon_entropy(m: MetricState, u: ScalarField) -> float:
    """Differential entropy S = integral(u^2 ln u^2) dmu of the density u^2."""
    if np.min(u.values) <= 0.0:
        raise PositivityLoss("density must be positive for the entropy")
    v = u.values**2
    return integrate(m, scalar_field(m, v * np.log(v)))


def omega(F: float, a: float) -> float:
    """Shifted quarter energy a + F/4; raises when not strictly positive."""
    w = a + F / 4.0
    if not (w > 0.0):
        raise NonPositiveOmega(
            f"omega = a + F/4 = {w:g} is not positive (a={a:g}, F={F:g})"
        )
    return w


def log_entropy(m: MetricState, u: ScalarField, a: float, t: float) -> float:
    """Adjusted log entropy -S + (n/2) ln(a + F/4) + 4 a t."""
    n = dim(m.backend)
    S = shannon_entropy(m, u)
    w = omega(f_functional(m, u), a)
    return -S + 0.5 * n * math.log(w) + 4.0 * a * t


# --------------------------------------------------------------------------
# Ground state of -Lap + R/4
# --------------------------------------------------------------------------

_NEG_LAP_CACHE: dict[tuple[int, float], sp.csr_matrix] = {}


def _neg_flat_laplacian(N: int, h: float) -> sp.csr_matrix:
    key = (N, h)
    mat = _NEG_LAP_CACHE.get(key)
    if mat is None:
        ones = np.ones(N)
        lap1d = sp.diags([ones[:-1], -2.0 * ones, ones[:-1]], [-1, 0, 1], format="lil")
        lap1d[0, -1] = 1.0
        lap1d[-1, 0] = 1.0
        lap1d = (lap1d / h**2).tocsr()
        eye = sp.identity(N, format="csr")
        mat = -(sp.kron(lap1d, eye) + sp.kron(eye, lap1d)).tocsr()
        _NEG_LAP_CACHE[key] = mat
    return mat


def _torus_operator(m: MetricState):
    """Stiffness matrix -Lap0 + diag((R/4) e^{2 phi}) and mass diagonal e^{2 phi}.

    Keeping the flat stencil matrix with a diagonal volume weight preserves
    symmetry of the generalized problem (-Lap0 + (R/4) e^{2 phi}) u =
    lambda e^{2 phi} u, which is the weak form of (-Lap_g + R/4) u = lambda u.
    """
    b = m.backend
    neg_lap = _neg_flat_laplacian(b.N, b.h)
    e2p = np.exp(2.0 * m.params).ravel()
    R = scalar_curvature(m).values.ravel()
    A = neg_lap + sp.diags(0.25 * R * e2p)
    return A.tocsc(), e2p, R


def lambda0_eig(
    m: MetricState,
    tol: float = LAMBDA0_TOL,
    maxiter: int = LAMBDA0_MAXITER,
) -> tuple[float, ScalarField]:
    """Smallest eigenvalue of -Lap_g + R/4 with its eigenfunction.

    Constant-curvature backends: R/4 in closed form with the constant ground
    state (-Lap is nonnegative).  Torus: shifted inverse power iteration on
    the symmetric generalized problem, shift min(R/4) - 1 so the target is
    the extreme eigenvalue of the shifted pencil; deterministic constant
    start vector; stops when the Rayleigh quotient settles to ``tol``.
    """
    b = m.backend
    if not isinstance(b, ConformalTorus2D):
        lam = float(scalar_curvature(m).values) / 4.0
        vol = integrate(m, scalar_field(m, 1.0))
        return lam, scalar_field(m, 1.0 / math.sqrt(vol))

    A, e2p, R = _torus_operator(m)
    h2 = b.h**2
    sigma = float(np.min(R)) / 4.0 - 1.0
    shifted = (A - sp.diags(sigma * e2p)).tocsc()
    solve = spla.splu(shifted, permc_spec="MMD_AT_PLUS_A").solve

    x = np.ones(e2p.shape[0])
    x /= math.sqrt(float(np.sum(e2p * x * x)) * h2)
    rho_prev = None
    for _ in range(maxiter):
        y = solve(e2p * x)
        y /= math.sqrt(float(np.sum(e2p * y * y)) * h2)
        rho = float(y @ (A @ y)) / float(np.sum(e2p * y * y))
        x = y
        if rho_prev is not None and abs(rho - rho_prev) <= tol * max(1.0, abs(rho)):
            return rho, scalar_field(m, x.reshape(b.N, b.N))
        rho_prev = rho
    raise NoConvergence(
        f"ground-state iteration did not converge within {maxiter} iterations"
    )


def lambda0(m: MetricState, tol: float = LAMBDA0_TOL, maxiter: int = LAMBDA0_MAXITER) -> float:
    """Smallest eigenvalue of -Lap_g + R/4 (Rayleigh-quotient infimum over
    unit-mass densities)."""
    return lambda0_eig(m, tol=tol, maxiter=maxiter)[0]


# --------------------------------------------------------------------------
# Per-time-step record
# --------------------------------------------------------------------------

@dataclass
class AdjustedColumns:
    """Columns of one record that depend on the adjustment value a."""

    Y: float
    omega: float
    dY_dt_fd: float = math.nan
    rhs_thm: float = math.nan
    rhs_ye: float = math.nan
    res_thm: float = math.nan
    res_equiv: float = math.nan


@dataclass
class EntropyRecord:
    """One row of the run table: scalar functionals at a time instant plus
    the per-adjustment columns (finite-difference derivatives are filled in
    once the whole series exists)."""

    t: float
    F: float
    S: float
    lambda0: float
    per_a: dict[float, AdjustedColumns] = field(default_factory=dict)
