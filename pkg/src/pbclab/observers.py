"""State observers for the averaged converter model.

All of them exploit that, for a known input trajectory, the model is linear
time-varying in the state:  dx/dt = A(t) x + b(t) with A(t) = Lambda(u(t)).

Open-loop copy (parameter-estimation based):
    dxi/dt  = A(t) xi + b(t)
    dPhi/dt = A(t) Phi,  Phi(0) = I
gives x(t) = xi(t) + Phi(t) theta with the constant theta = x(0) - xi(0),
turning state observation into estimation of a constant parameter vector.

From the measurement y_m = C x, linear regression filters with pole lambda

    dY/dt     = -lambda Y     + lambda Phi' C' (y_m - C xi)
    dOmega/dt = -lambda Omega + lambda Phi' C' C Phi

satisfy Y = Omega theta.  Mixing with the adjugate decouples the regression:

    scriptY = adj(Omega) Y = Delta theta,  Delta = det(Omega)

so each parameter obeys its own scalar equation.  The estimator

    domega/dt     = -gamma Delta^2 omega,        omega(0) = 1
    dtheta_hat/dt =  gamma Delta (scriptY - Delta theta_hat)

contracts as theta_hat - theta = omega (theta_hat(0) - theta), and the
algebraic combination

    theta_fct = (theta_hat - omega_c theta_hat(0)) / (1 - omega_c),
    omega_c   = min(omega, 1 - mu)

recovers theta exactly once omega has dropped below 1 - mu, i.e. once the
excitation integral of Delta^2 exceeds -ln(1 - mu) / gamma.  Both scalar
recursions admit exact exponential steps for piecewise-constant Delta,
which keeps them stable for arbitrarily large gamma.

Also provided: a Kalman-Bucy filter (matrix Riccati gain) and plain
gradient parameter estimators on the raw or mixed regression, used as
comparison baselines, plus a windowed observability Gramian diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NotYetExcited",
    "InsufficientSamples",
    "GpeboState",
    "make_gpebo_state",
    "gpebo_matrix_derivatives",
    "adjugate",
    "determinant",
    "drem_mix",
    "scalar_update",
    "fct_combine",
    "gpebo_estimate",
    "emulator_estimate",
    "excitation_time",
    "excitation_time_from_delta",
    "kbf_derivatives",
    "gradient_derivatives",
    "gradient_update",
    "GramianReport",
    "observability_gramian",
]


class NotYetExcited(RuntimeError):
    """The excitation integral never crossed the finite-time threshold."""


class InsufficientSamples(ValueError):
    """Too few samples to cover the requested quadrature window."""


@dataclass
class GpeboState:
    """States of the open-loop copy, the regression filters and the scalar
    estimator.  xi/Phi/Y/Omega integrate with the plant; omega/theta_hat
    advance by exact exponential steps once per grid step."""

    xi: np.ndarray  # open-loop state copy, length n
    Phi: np.ndarray  # n x n transition matrix of the drift
    Y: np.ndarray  # filtered cross-correlation, length n
    Omega: np.ndarray  # filtered regressor Gramian, n x n
    omega: float  # contraction bookkeeping scalar in (0, 1]
    theta_hat: np.ndarray  # parameter estimate, length n
    theta_hat0: np.ndarray  # frozen initial estimate (for the FCT combination)
    lam: float  # regression filter pole [1/s]
    gamma: float  # estimator gain
    mu: float  # finite-time threshold margin in (0, 1)


def make_gpebo_state(
    n: int,
    lam: float = 5.0,
    gamma: float = 1e12,
    mu: float = 1e-6,
    xi0=None,
    theta0=None,
    Omega0=None,
    Y0=None,
) -> GpeboState:
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie in (0, 1)")
    if lam <= 0.0 or gamma <= 0.0:
        raise ValueError("lambda and gamma must be positive")
    xi = np.zeros(n) if xi0 is None else np.asarray(xi0, dtype=float).copy()
    theta = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    Omega = np.zeros((n, n)) if Omega0 is None else np.asarray(Omega0, dtype=float).copy()
    if np.abs(Omega - Omega.T).max() > 1e-12 * max(1.0, np.abs(Omega).max()):
        raise ValueError("Omega(0) must be symmetric")
    if Omega.any() and np.linalg.eigvalsh(Omega).min() < -1e-12:
        raise ValueError("Omega(0) must be positive semidefinite")
    Y = np.zeros(n) if Y0 is None else np.asarray(Y0, dtype=float).copy()
    return GpeboState(
        xi=xi,
        Phi=np.eye(n),
        Y=Y,
        Omega=Omega,
        omega=1.0,
        theta_hat=theta,
        theta_hat0=theta.copy(),
        lam=lam,
        gamma=gamma,
        mu=mu,
    )


def gpebo_matrix_derivatives(A, b, C, state: GpeboState, y_m):
    """Time derivatives of (xi, Phi, Y, Omega) at drift A = Lambda(u) and
    source b = b(u).  y_m is the current measurement C x."""
    xi, Phi, lam = state.xi, state.Phi, state.lam
    dxi = A @ xi + b
    dPhi = A @ Phi
    CPhi = C @ Phi
    innov = np.atleast_1d(y_m) - C @ xi
    dY = lam * (CPhi.T @ innov - state.Y)
    dOmega = lam * (CPhi.T @ CPhi - state.Omega)
    return dxi, dPhi, dY, dOmega


# -- adjugate --------------------------------------------------------------
# Cofactor expansions up to 4 x 4 keep adj and det mutually consistent and
# exact in exact arithmetic; larger sizes fall back to Faddeev-LeVerrier.


def _adj_det_2(a):
    adj = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
    return adj, a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]


def _adj_det_3(a):
    adj = np.empty((3, 3))
    adj[0, 0] = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    adj[0, 1] = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
    adj[0, 2] = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    adj[1, 0] = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    adj[1, 1] = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
    adj[1, 2] = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
    adj[2, 0] = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    adj[2, 1] = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
    adj[2, 2] = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    det = a[0, 0] * adj[0, 0] + a[0, 1] * adj[1, 0] + a[0, 2] * adj[2, 0]
    return adj, det


def _adj_det_4(a):
    # 2 x 2 minors of the top and bottom row pairs
    s0 = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    s1 = a[0, 0] * a[1, 2] - a[0, 2] * a[1, 0]
    s2 = a[0, 0] * a[1, 3] - a[0, 3] * a[1, 0]
    s3 = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    s4 = a[0, 1] * a[1, 3] - a[0, 3] * a[1, 1]
    s5 = a[0, 2] * a[1, 3] - a[0, 3] * a[1, 2]
    c5 = a[2, 2] * a[3, 3] - a[2, 3] * a[3, 2]
    c4 = a[2, 1] * a[3, 3] - a[2, 3] * a[3, 1]
    c3 = a[2, 1] * a[3, 2] - a[2, 2] * a[3, 1]
    c2 = a[2, 0] * a[3, 3] - a[2, 3] * a[3, 0]
    c1 = a[2, 0] * a[3, 2] - a[2, 2] * a[3, 0]
    c0 = a[2, 0] * a[3, 1] - a[2, 1] * a[3, 0]
    det = s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0
    adj = np.empty((4, 4))
    adj[0, 0] = a[1, 1] * c5 - a[1, 2] * c4 + a[1, 3] * c3
    adj[0, 1] = -a[0, 1] * c5 + a[0, 2] * c4 - a[0, 3] * c3
    adj[0, 2] = a[3, 1] * s5 - a[3, 2] * s4 + a[3, 3] * s3
    adj[0, 3] = -a[2, 1] * s5 + a[2, 2] * s4 - a[2, 3] * s3
    adj[1, 0] = -a[1, 0] * c5 + a[1, 2] * c2 - a[1, 3] * c1
    adj[1, 1] = a[0, 0] * c5 - a[0, 2] * c2 + a[0, 3] * c1
    adj[1, 2] = -a[3, 0] * s5 + a[3, 2] * s2 - a[3, 3] * s1
    adj[1, 3] = a[2, 0] * s5 - a[2, 2] * s2 + a[2, 3] * s1
    adj[2, 0] = a[1, 0] * c4 - a[1, 1] * c2 + a[1, 3] * c0
    adj[2, 1] = -a[0, 0] * c4 + a[0, 1] * c2 - a[0, 3] * c0
    adj[2, 2] = a[3, 0] * s4 - a[3, 1] * s2 + a[3, 3] * s0
    adj[2, 3] = -a[2, 0] * s4 + a[2, 1] * s2 - a[2, 3] * s0
    adj[3, 0] = -a[1, 0] * c3 + a[1, 1] * c1 - a[1, 2] * c0
    adj[3, 1] = a[0, 0] * c3 - a[0, 1] * c1 + a[0, 2] * c0
    adj[3, 2] = -a[3, 0] * s3 + a[3, 1] * s1 - a[3, 2] * s0
    adj[3, 3] = a[2, 0] * s3 - a[2, 1] * s1 + a[2, 2] * s0
    return adj, det


def _adj_det_faddeev(a):
    """Faddeev-LeVerrier recursion: returns (adj, det) for any square size."""
    n = a.shape[0]
    M = np.zeros_like(a)
    c = 1.0
    for k in range(1, n + 1):
        M = a @ M + c * np.eye(n)
        c = -np.trace(a @ M) / k
    det = (-1.0) ** n * c
    adj = (-1.0) ** (n - 1) * M
    return adj, det


def _adj_det(a):
    n = a.shape[0]
    if n == 1:
        return np.array([[1.0]]), a[0, 0]
    if n == 2:
        return _adj_det_2(a)
    if n == 3:
        return _adj_det_3(a)
    if n == 4:
        return _adj_det_4(a)
    return _adj_det_faddeev(a)


def adjugate(a: np.ndarray) -> np.ndarray:
    """Adjugate (classical adjoint): adj(A) A = A adj(A) = det(A) I, valid
    also for singular A."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjugate needs a square matrix")
    return _adj_det(a)[0]


def determinant(a: np.ndarray) -> float:
    """Determinant evaluated by the same cofactor scheme as `adjugate`."""
    a = np.asarray(a, dtype=float)
    return float(_adj_det(a)[1])


def drem_mix(Omega: np.ndarray, Y: np.ndarray):
    """Decouple the vector regression Y = Omega theta into n scalar ones:
    returns (scriptY, Delta) with scriptY = adj(Omega) Y and Delta =
    det(Omega), so scriptY = Delta theta."""
    adj, det = _adj_det(np.asarray(Omega, dtype=float))
    return adj @ np.asarray(Y, dtype=float), float(det)


def scalar_update(omega: float, theta_hat: np.ndarray, scriptY, Delta: float, gamma: float, h: float):
    """Advance the scalar estimator over one step of length h with the mix
    (scriptY, Delta) frozen.  The step is the exact solution of

        domega/dt     = -gamma Delta^2 omega
        dtheta_hat/dt =  gamma Delta (scriptY - Delta theta_hat)

    so it remains contractive for any gamma (the recursions are stiff for
    gains of practical interest, up to 1e17)."""
    z = gamma * Delta * Delta * h
    if z == 0.0:
        return omega, theta_hat
    kappa = np.exp(-z)
    pull = -np.expm1(-z)  # 1 - kappa without cancellation
    theta_new = theta_hat + pull * (np.asarray(scriptY, dtype=float) / Delta - theta_hat)
    return omega * kappa, theta_new


def fct_combine(theta_hat: np.ndarray, theta_hat0: np.ndarray, omega: float, mu: float) -> np.ndarray:
    """Finite-time parameter reconstruction.  Exact once omega <= 1 - mu;
    before that it is a well-defined interpolation using the clipped
    weight omega_c = min(omega, 1 - mu)."""
    omega_c = min(omega, 1.0 - mu)
    return (theta_hat - omega_c * theta_hat0) / (1.0 - omega_c)


def gpebo_estimate(xi: np.ndarray, Phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """State reconstruction x_hat = xi + Phi theta."""
    return xi + Phi @ theta


def emulator_estimate(xi: np.ndarray) -> np.ndarray:
    """Open-loop copy used as an observer: x_hat = xi (no correction)."""
    return xi


def excitation_time(times, omega, mu: float) -> float:
    """First sample time with omega <= 1 - mu."""
    times = np.asarray(times, dtype=float)
    omega = np.asarray(omega, dtype=float)
    hit = np.flatnonzero(omega <= 1.0 - mu)
    if hit.size == 0:
        raise NotYetExcited(
            f"omega stayed above 1 - mu = {1.0 - mu} over [{times[0]:g}, {times[-1]:g}] s"
        )
    return float(times[hit[0]])


def excitation_time_from_delta(times, delta, gamma: float, mu: float) -> float:
    """Same crossing computed from a Delta history: omega is rebuilt by
    exact exponential steps on the trapezoid of Delta^2."""
    times = np.asarray(times, dtype=float)
    delta2 = np.asarray(delta, dtype=float) ** 2
    seg = 0.5 * (delta2[1:] + delta2[:-1]) * np.diff(times)
    integral = np.concatenate([[0.0], np.cumsum(seg)])
    return excitation_time(times, np.exp(-gamma * integral), mu)


# -- comparison observers ---------------------------------------------------


def kbf_derivatives(A, b, C, S, x_hat, H, y_m):
    """Kalman-Bucy filter for dx/dt = A x + b, y = C x with unit output
    noise weight and state noise weight S:

        dx_hat/dt = A x_hat + b + H C' (y_m - C x_hat)
        dH/dt     = H A' + A H - H C' C H + S

    The Riccati derivative is symmetrized to suppress drift."""
    innov = np.atleast_1d(y_m) - C @ x_hat
    dx = A @ x_hat + b + H @ (C.T @ innov)
    dH = H @ A.T + A @ H - H @ (C.T @ (C @ H)) + S
    return dx, 0.5 * (dH + dH.T)


def gradient_derivatives(theta_hat, gamma: float, mode: str, CPhi=None, y_shift=None, Omega=None, Y=None):
    """Gradient flow on the regression residual.

    mode "raw":      dtheta/dt = gamma (C Phi)' (y_shift - C Phi theta)
                     with y_shift = y_m - C xi
    mode "extended": dtheta/dt = gamma Omega (Y - Omega theta)
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if mode == "raw":
        resid = np.atleast_1d(y_shift) - CPhi @ theta_hat
        return gamma * (CPhi.T @ resid)
    if mode == "extended":
        return gamma * (Omega @ (Y - Omega @ theta_hat))
    raise ValueError(f"unknown gradient mode {mode!r}")


def gradient_update(theta_hat, gamma: float, mode: str, h: float, CPhi=None, y_shift=None, Omega=None, Y=None):
    """Advance the gradient flow exactly over a step of length h with the
    regression data frozen.  For the gains of interest (1e8) the flow is
    far too stiff for explicit integration, so the linear ODE is solved in
    closed form instead: decompose along the regressor and decay each mode
    with its own exponential."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if mode == "raw":
        CPhi = np.atleast_2d(CPhi)
        y_shift = np.atleast_1d(y_shift)
        if CPhi.shape[0] == 1:  # single measurement: rank-one exact step
            phi = CPhi[0]
            nrm2 = float(phi @ phi)
            if nrm2 == 0.0:
                return theta_hat
            s = float(phi @ theta_hat)
            s_new = y_shift[0] + (s - y_shift[0]) * np.exp(-gamma * nrm2 * h)
            return theta_hat + phi * ((s_new - s) / nrm2)
        M = CPhi.T @ CPhi
        r = CPhi.T @ y_shift
    elif mode == "extended":
        M = Omega @ Omega
        r = Omega @ Y
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    # dtheta/dt = gamma (r - M theta) with M symmetric psd and r in range(M)
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    tcoef = vecs.T @ theta_hat
    rcoef = vecs.T @ r
    for i, s in enumerate(vals):
        if s > 0.0:
            target = rcoef[i] / s
            tcoef[i] = target + (tcoef[i] - target) * np.exp(-gamma * s * h)
    return vecs @ tcoef


@dataclass
class GramianReport:
    matrix: np.ndarray  # n x n windowed Gramian
    lam_min: float
    lam_max: float


def observability_gramian(times, phis, C, t0: float, T: float) -> GramianReport:
    """Trapezoidal quadrature of integral Phi' C' C Phi over [t0, t0 + T].

    phis: array of shape (k, n, n) sampled at `times`.  The window must be
    covered by at least two samples."""
    times = np.asarray(times, dtype=float)
    phis = np.asarray(phis, dtype=float)
    if T <= 0.0:
        raise ValueError("window length must be positive")
    mask = (times >= t0 - 1e-15) & (times <= t0 + T + 1e-15)
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        raise InsufficientSamples(f"only {idx.size} samples inside [{t0}, {t0 + T}]")
    if times[idx[0]] > t0 + 1e-9 or times[idx[-1]] < t0 + T - 1e-9:
        raise InsufficientSamples("samples do not cover the requested window")
    CPhi = C @ phis[idx]  # (k, p, n) stack
    integrand = np.einsum("kpi,kpj->kij", CPhi, CPhi)
    dt = np.diff(times[idx])
    W = 0.5 * np.einsum("k,kij->ij", dt, integrand[:-1] + integrand[1:])
    eigs = np.linalg.eigvalsh(0.5 * (W + W.T))
    return GramianReport(matrix=W, lam_min=float(eigs[0]), lam_max=float(eigs[-1]))
