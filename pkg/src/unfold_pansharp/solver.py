"""Classical primal-dual fusion solver (float64, numpy).

Minimises

    lam/2 ||D B u - Y||^2 + beta ||P_hat * u - P * H_hat||_1 + mu/2 ||grad u||^2

with Chambolle-Pock iterations over the dual variables t (low resolution) and
v (high resolution). B is a Gaussian blur with sigma_b = s/2 and D decimation by s.
Setting ``beta = 0`` removes the L1 block (and its dual variable) altogether.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericalError
from .imaging import (
    bicubic_resample,
    decimate,
    gaussian_blur,
    gaussian_blur_adjoint,
    zero_insert,
)

CG_TOL = 1e-10
CG_MAX_ITER = 500
STEP_MARGIN = 0.99


@dataclass(frozen=True)
class EnergyParams:
    lam: float = 1.0
    beta: float = 0.1
    mu: float = 0.0
    s: int = 4
    sigma_b: float | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ContractViolation(f"lambda must be > 0, got {self.lam}")
        if self.beta < 0 or self.mu < 0:
            raise ContractViolation(f"beta and mu must be >= 0, got beta={self.beta}, mu={self.mu}")
        if self.s < 1:
            raise ContractViolation(f"sampling factor must be >= 1, got {self.s}")

    @property
    def blur_sigma(self):
        return self.s / 2.0 if self.sigma_b is None else self.sigma_b


def DB(u, params):
    return decimate(gaussian_blur(u, params.blur_sigma), params.s)


def DB_adjoint(t, params):
    return gaussian_blur_adjoint(zero_insert(t, params.s), params.blur_sigma)


def gradient(u):
    """Forward differences with Neumann boundary; output (..., 2, H, W)."""
    g = np.zeros(u.shape[:-2] + (2,) + u.shape[-2:], dtype=u.dtype)
    g[..., 0, :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    g[..., 1, :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return g


def gradient_adjoint(p):
    py, px = p[..., 0, :, :], p[..., 1, :, :]
    out = np.zeros(py.shape, dtype=p.dtype)
    out[..., :-1, :] -= py[..., :-1, :]
    out[..., 1:, :] += py[..., :-1, :]
    out[..., :, :-1] -= px[..., :, :-1]
    out[..., :, 1:] += px[..., :, :-1]
    return out


def quadratic_prior(u):
    g = gradient(u)
    return 0.5 * float(np.sum(g * g))


def low_frequency_inputs(Y, pan, params):
    """Bicubic low-frequency images used by the high-frequency constraint.

    Returns (P_hat, H_hat): the PAN degraded by the observation operator and
    bicubically re-expanded, and the bicubic upsampling of Y, both C×H×W.
    """
    c = Y.shape[0]
    pan = np.asarray(pan, dtype=np.float64).reshape((1,) + pan.shape[-2:])
    p_hat = bicubic_resample(DB(pan, params), params.s, "up")
    h_hat = bicubic_resample(np.asarray(Y, dtype=np.float64), params.s, "up")
    return np.repeat(p_hat, c, axis=0), h_hat


def energy_eval(u, Y, P, P_hat, H_hat, params):
    if u.shape != P_hat.shape or u.shape != H_hat.shape:
        raise ContractViolation(f"energy_eval: u {u.shape}, P_hat {P_hat.shape}, H_hat {H_hat.shape} differ")
    r = DB(u, params) - Y
    fid = 0.5 * params.lam * float(np.sum(r * r))
    l1 = params.beta * float(np.sum(np.abs(P_hat * u - P * H_hat))) if params.beta > 0 else 0.0
    prior = params.mu * quadratic_prior(u) if params.mu > 0 else 0.0
    return fid + l1 + prior


def prox_dual_fidelity(arg, tau_d, lam):
    return arg / (1.0 + tau_d / lam)


def project_linf(x, beta):
    if beta <= 0:
        raise ContractViolation(f"project_linf: radius must be > 0, got {beta}")
    return np.clip(x, -beta, beta)


def conjugate_gradient(apply, b, x0=None, tol=CG_TOL, max_iter=CG_MAX_ITER):
    """Solve apply(x) = b for symmetric positive definite ``apply``; relative residual stop."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x)
    p = r.copy()
    rr = float(np.sum(r * r))
    bnorm = np.sqrt(float(np.sum(b * b))) or 1.0
    for it in range(max_iter + 1):
        if np.sqrt(rr) / bnorm < tol:
            return x, np.sqrt(rr) / bnorm, it
        if it == max_iter:
            break
        ap = apply(p)
        alpha = rr / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NumericalError(
        f"conjugate gradient did not converge in {max_iter} iterations (relative residual {np.sqrt(rr) / bnorm:.3e})"
    )


def prox_quadratic_prior(x, tau_p, mu, tol=CG_TOL, max_iter=CG_MAX_ITER):
    """Solve (I + tau_p*mu*grad^T grad) y = x."""
    if tau_p < 0 or mu < 0:
        raise ContractViolation(f"prox_quadratic_prior: tau_p and mu must be >= 0, got {tau_p}, {mu}")
    c = tau_p * mu
    if c == 0:
        return x.copy()
    y, _, _ = conjugate_gradient(lambda z: z + c * gradient_adjoint(gradient(z)), x, x, tol, max_iter)
    return y


def power_iteration_norm(apply, adjoint, shape, iters=100, seed=0):
    """Operator norm estimate sqrt(largest eigenvalue of K^T K)."""
    if iters < 10:
        raise ContractViolation(f"power_iteration_norm: need at least 10 iterations, got {iters}")
    x = np.random.default_rng(seed).standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adjoint(apply(x))
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return float(np.sqrt(lam))


@dataclass
class PDState:
    u: np.ndarray
    u_bar: np.ndarray
    t: np.ndarray
    v: np.ndarray
    n: int = 0


@dataclass
class FusionProblem:
    Y: np.ndarray
    P: np.ndarray
    P_hat: np.ndarray
    H_hat: np.ndarray
    params: EnergyParams

    def __post_init__(self):
        c, h, w = self.Y.shape
        s = self.params.s
        full = (c, h * s, w * s)
        if self.P_hat.shape != full or self.H_hat.shape != full:
            raise ContractViolation(
                f"problem shapes: Y {self.Y.shape} with s={s} needs P_hat/H_hat {full}, "
                f"got {self.P_hat.shape}/{self.H_hat.shape}"
            )
        if self.P.shape[-2:] != full[1:]:
            raise ContractViolation(f"problem shapes: PAN {self.P.shape} does not match {full}")
        self.P_rep = np.broadcast_to(self.P, full)
        self.target = self.P_rep * self.H_hat

    @property
    def use_l1(self):
        return self.params.beta > 0

    def K(self, u):
        return DB(u, self.params), (self.P_hat * u if self.use_l1 else None)

    def K_adjoint(self, t, v):
        out = DB_adjoint(t, self.params)
        if self.use_l1 and v is not None:
            out = out + self.P_hat * v
        return out

    def operator_norm(self, iters=200):
        shape = self.P_hat.shape
        return power_iteration_norm(lambda u: self.K(u), lambda tv: self.K_adjoint(*tv), shape, iters)

    def energy(self, u):
        return energy_eval(u, self.Y, self.P_rep, self.P_hat, self.H_hat, self.params)


def pd_step(state, prob, tau_p, tau_d):
    """One primal-dual iteration: dual ascent on t and v, primal prox step, over-relaxation."""
    p = prob.params
    t = prox_dual_fidelity(state.t + tau_d * DB(state.u_bar, p) - tau_d * prob.Y, tau_d, p.lam)
    if prob.use_l1:
        v = project_linf(state.v + tau_d * prob.P_hat * state.u_bar - tau_d * prob.target, p.beta)
    else:
        v = np.zeros_like(state.v)
    u = prox_quadratic_prior(state.u - tau_p * prob.K_adjoint(t, v), tau_p, p.mu)
    return PDState(u=u, u_bar=2 * u - state.u, t=t, v=v, n=state.n + 1)


def fixed_point_residual(old, new, prob, tau_p, tau_d):
    """Distance between consecutive iterates in the metric the scheme is non-expansive in."""
    du, dt, dv = new.u - old.u, new.t - old.t, new.v - old.v
    kt, kv = prob.K(du)
    cross = float(np.sum(kt * dt)) + (float(np.sum(kv * dv)) if kv is not None else 0.0)
    sq = (
        float(np.sum(du * du)) / tau_p
        + (float(np.sum(dt * dt)) + float(np.sum(dv * dv))) / tau_d
        - 2.0 * cross
    )
    return float(np.sqrt(max(sq, 0.0)))


def initial_state(prob, u0=None):
    u = bicubic_resample(prob.Y, prob.params.s, "up") if u0 is None else np.array(u0, dtype=np.float64)
    return PDState(u=u, u_bar=u.copy(), t=np.zeros_like(prob.Y), v=np.zeros_like(u))


@dataclass
class SolveResult:
    u: np.ndarray
    energy: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    L: float = 0.0
    tau_p: float = 0.0
    tau_d: float = 0.0
    state: PDState | None = None


def primal_dual_solve(
    Y, P, P_hat, H_hat, params, tau_p=None, tau_d=None, max_iter=1000, tol=1e-8, u0=None, state0=None, L=None
):
    Y = np.asarray(Y, dtype=np.float64)
    prob = FusionProblem(Y, np.asarray(P, np.float64), np.asarray(P_hat, np.float64), np.asarray(H_hat, np.float64), params)
    if L is None:
        L = prob.operator_norm()
    if tau_p is None:
        tau_p = STEP_MARGIN / L
    if tau_d is None:
        tau_d = STEP_MARGIN / L
    if tau_p * tau_d * L * L > 1.0 + 1e-12:
        raise ContractViolation(f"step sizes violate tau_p*tau_d*L^2 <= 1 (L={L:.4g})")

    state = state0 if state0 is not None else initial_state(prob, u0)
    e0 = prob.energy(state.u)
    res = SolveResult(u=state.u, energy=[e0], L=L, tau_p=tau_p, tau_d=tau_d)
    for _ in range(max_iter):
        new = pd_step(state, prob, tau_p, tau_d)
        e = prob.energy(new.u)
        res.energy.append(e)
        res.residual.append(fixed_point_residual(state, new, prob, tau_p, tau_d))
        if not np.isfinite(e) or e > 10.0 * max(e0, 1e-300):
            raise NumericalError(
                f"primal-dual iterations diverged at iteration {new.n} (energy {e:.3e} vs initial {e0:.3e}); "
                "reduce tau_p/tau_d so that tau_p*tau_d*L^2 <= 1"
            )
        du = np.linalg.norm(new.u - state.u)
        nu = np.linalg.norm(state.u)
        state = new
        if du <= tol * nu or (nu == 0 and du == 0):
            res.converged = True
            break
    res.u = state.u
    res.iterations = state.n
    res.state = state
    return res
