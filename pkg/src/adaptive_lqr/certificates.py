"""Numerical certificates for the adaptive closed loop.

Each check packages the measured hypothesis margins and the conclusion
margin of one matrix or scalar inequality into a CertificateReport.  All
positive-semidefinite comparisons are evaluated as the minimum eigenvalue
of the re-symmetrized difference, with absolute slack 1e-8; a negative
conclusion margin means the inequality is violated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotStabilizable
from .riccati import (
    Gain,
    MembershipCertificate,
    PlantModel,
    QMatrix,
    ValueMatrix,
    check_membership,
    gain_from_q,
    q_from_p,
    solve_dare,
    sym,
)
from .simulation import TrajectoryLog

PSD_SLACK = 1e-8
# Stand-in for margins that cannot be evaluated (e.g. unsolvable fixed point);
# keeps every reported margin finite.
UNDEFINED_MARGIN = -1e300


def _finite(x: float) -> float:
    x = float(x)
    if np.isnan(x):
        return UNDEFINED_MARGIN
    return float(np.clip(x, UNDEFINED_MARGIN, -UNDEFINED_MARGIN))


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(M)).min())


@dataclass(frozen=True)
class HypothesisCheck:
    """One measured hypothesis: margin plus whether it holds within slack."""

    margin: float
    holds: bool


@dataclass(frozen=True)
class CertificateReport:
    """Named inequality check with per-hypothesis margins and a conclusion margin."""

    name: str
    hypotheses: dict[str, HypothesisCheck]
    hypotheses_hold: bool
    conclusion_margin: float
    details: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "hypotheses": {k: {"margin": h.margin, "holds": h.holds}
                           for k, h in self.hypotheses.items()},
            "hypotheses_hold": self.hypotheses_hold,
            "margins": {"conclusion": self.conclusion_margin},
            "details": dict(self.details),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CertificateReport":
        return cls(
            name=d["name"],
            hypotheses={k: HypothesisCheck(margin=float(h["margin"]), holds=bool(h["holds"]))
                        for k, h in d["hypotheses"].items()},
            hypotheses_hold=bool(d["hypotheses_hold"]),
            conclusion_margin=float(d["margins"]["conclusion"]),
            details={k: float(v) for k, v in d["details"].items()},
        )


def _hyp(margin: float, slack: float = PSD_SLACK) -> HypothesisCheck:
    margin = _finite(margin)
    return HypothesisCheck(margin=margin, holds=margin >= -slack)


def _membership_hypothesis(plant: PlantModel, beta: float) -> tuple[HypothesisCheck, MembershipCertificate]:
    cert = check_membership(plant, beta)
    if cert.Q is None:
        return _hyp(UNDEFINED_MARGIN), cert
    return _hyp(beta**2 - cert.max_eig_Q), cert


def theorem1_margin(plant: PlantModel, P: ValueMatrix, kt: Gain, beta: float, rho: float,
                    sigma: np.ndarray | None = None,
                    sigma_hat: np.ndarray | None = None) -> CertificateReport:
    """Single-step robustness margin of the gain obtained from data.

    Conclusion margin: minimum eigenvalue of

        P / (1 - 2 beta^2 rho (rho+2)) - (I + Kt'Kt + (A + B Kt)' P (A + B Kt))

    with P the true plant's optimal cost matrix.  Hypotheses record the
    contraction condition 2 beta^2 rho (rho+2) < 1, membership of the true
    plant, and (when correlation data is supplied) that rho bounds the
    estimate error.
    """
    c = 2.0 * beta**2 * rho * (rho + 2.0)
    # Strict hypothesis: the conclusion divides by 1 - c.
    hyps = {"contraction": HypothesisCheck(margin=_finite(1.0 - c), holds=1.0 - c > 1e-12)}
    member_hyp, cert = _membership_hypothesis(plant, beta)
    hyps["membership"] = member_hyp
    details = {"beta": float(beta), "rho": float(rho), "contraction_value": _finite(c),
               "max_eig_Q": _finite(cert.max_eig_Q), "dare_residual": _finite(cert.residual)}
    if sigma is not None and sigma_hat is not None:
        est = np.linalg.solve(np.asarray(sigma, dtype=float),
                              np.asarray(sigma_hat, dtype=float).T).T
        rho_data = float(np.linalg.norm(plant.ab - est, 2))
        hyps["data_consistency"] = _hyp(rho - rho_data)
        details["rho_data"] = rho_data
    if 1.0 - c <= 1e-12:
        margin = UNDEFINED_MARGIN
    else:
        K = kt.K
        closed = plant.A + plant.B @ K
        margin = _min_eig(P.P / (1.0 - c)
                          - (np.eye(plant.n) + K.T @ K + closed.T @ P.P @ closed))
    return CertificateReport(name="theorem1", hypotheses=hyps,
                             hypotheses_hold=all(h.holds for h in hyps.values()),
                             conclusion_margin=_finite(margin), details=details)


def alpha_of(beta: float, rho: float, gamma: float) -> float:
    """Performance coefficient

        alpha = beta^2 + (1 / (1 - beta^2/gamma^2)) (1 - beta^2 / (1 - 2 beta^2 rho (rho+2))).

    Requires gamma > beta and 2 beta^2 rho (rho+2) < 1.
    """
    if beta <= 0 or rho < 0 or gamma <= 0:
        raise DomainError("beta and gamma must be positive, rho non-negative")
    if gamma <= beta:
        raise DomainError(f"gamma = {gamma} must exceed beta = {beta}")
    c = 2.0 * beta**2 * rho * (rho + 2.0)
    if c >= 1.0:
        raise DomainError(f"2 beta^2 rho (rho+2) = {c:.6g} must be below 1")
    return float(beta**2 + (1.0 / (1.0 - beta**2 / gamma**2)) * (1.0 - beta**2 / (1.0 - c)))


def consistent_start(log: TrajectoryLog, rho: float) -> int | None:
    """Smallest t0 with rho_t <= rho for every logged t >= t0, None if none exists."""
    ok = log.rho <= rho
    if len(ok) == 0 or not ok[-1]:
        return None
    # Last index where the bound fails, +1; 0 when it never fails.
    bad = np.where(~ok)[0]
    return int(bad[-1] + 1) if len(bad) else 0


def corollary_bound_check(log: TrajectoryLog, plant: PlantModel, t0: int,
                          gamma: float, beta: float, rho: float) -> CertificateReport:
    """Accumulated-cost bound over a logged run.

    LHS = sum_{t=t0}^{T-1} (|x_t|^2 + |K_t x_t|^2),
    RHS = alpha^{-1} |x_{t0}|^2_P + (gamma^2/alpha) sum |B eps_t + w_t|^2,
    margin = RHS - LHS.  Hypotheses: gamma > beta, alpha > 0, membership of
    the true plant, and rho_t <= rho for all logged t in [t0, T).
    """
    T = len(log)
    if not 0 <= t0 < T:
        raise DomainError(f"t0 = {t0} must lie in [0, {T})")
    alpha = alpha_of(beta, rho, gamma)
    if alpha <= 0:
        raise DomainError(f"alpha = {alpha:.6g} must be positive")
    P = solve_dare(plant).P
    xs = log.x[t0:]
    kxs = np.einsum("tij,tj->ti", log.k[t0:], xs)
    lhs = float(np.sum(xs**2) + np.sum(kxs**2))
    drive = log.eps[t0:] @ plant.B.T + log.w[t0:]
    drive_energy = float(np.sum(drive**2))
    initial_energy = float(xs[0] @ P @ xs[0])
    rhs = initial_energy / alpha + gamma**2 / alpha * drive_energy
    member_hyp, cert = _membership_hypothesis(plant, beta)
    max_rho = float(np.max(log.rho[t0:]))
    hyps = {
        "gamma_exceeds_beta": _hyp(gamma - beta, slack=0.0),
        "alpha_positive": _hyp(alpha, slack=0.0),
        "membership": member_hyp,
        "data_consistency": _hyp(rho - max_rho),
    }
    details = {"lhs": _finite(lhs), "rhs": _finite(rhs), "alpha": float(alpha),
               "t0": float(t0), "drive_energy": _finite(drive_energy),
               "initial_energy": _finite(initial_energy), "max_rho": _finite(max_rho),
               "beta": float(beta), "rho": float(rho), "gamma": float(gamma)}
    return CertificateReport(name="corollary", hypotheses=hyps,
                             hypotheses_hold=all(h.holds for h in hyps.values()),
                             conclusion_margin=_finite(rhs - lhs), details=details)


def lemma1_check(sigma, sigma_hat, sigma_tilde, P, Q, beta: float, rho: float) -> CertificateReport:
    """Perturbed correlation bound.

    Hypotheses (measured, violations reported rather than raised):
      (SigmaHat - SigmaTilde)' P (SigmaHat - SigmaTilde) = Sigma (Q - I) Sigma,
      SigmaTilde' SigmaTilde <= rho^2 Sigma^2,
      I <= Q <= beta^2 I.
    Conclusion margin: min eig of
      Sigma Q Sigma + (beta^2 rho (rho+2) - 1) Sigma^2 - SigmaHat' P SigmaHat.
    """
    S = np.asarray(sigma, dtype=float)
    Sh = np.asarray(sigma_hat, dtype=float)
    St = np.asarray(sigma_tilde, dtype=float)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    d = S.shape[0]
    consistency_rhs = S @ (Q - np.eye(d)) @ S
    dev = np.linalg.norm((Sh - St).T @ P @ (Sh - St) - consistency_rhs, 2)
    hyps = {
        "consistency": _hyp(-dev / max(1.0, np.linalg.norm(consistency_rhs, 2))),
        "tilde_bound": _hyp(_min_eig(rho**2 * S @ S - St.T @ St)),
        "q_lower": _hyp(_min_eig(Q - np.eye(d))),
        "q_upper": _hyp(_min_eig(beta**2 * np.eye(d) - Q)),
    }
    margin = _min_eig(S @ Q @ S + (beta**2 * rho * (rho + 2.0) - 1.0) * S @ S - Sh.T @ P @ Sh)
    return CertificateReport(name="lemma1", hypotheses=hyps,
                             hypotheses_hold=all(h.holds for h in hyps.values()),
                             conclusion_margin=_finite(margin),
                             details={"beta": float(beta), "rho": float(rho)})


def lyapunov_decay_check(plant: PlantModel, P: ValueMatrix, K: Gain) -> CertificateReport:
    """Per-step storage decay: min eig of P - (A+BK)'P(A+BK) - I - K'K.

    Zero (to 1e-9) at the optimal gain; negative for any gain that fails the
    strict decay.
    """
    closed = plant.A + plant.B @ K.K
    margin = _min_eig(P.P - closed.T @ P.P @ closed - np.eye(plant.n) - K.K.T @ K.K)
    return CertificateReport(name="lyapunov_decay", hypotheses={}, hypotheses_hold=True,
                             conclusion_margin=_finite(margin),
                             details={"closed_loop_radius": float(np.max(np.abs(np.linalg.eigvals(closed))))})


def admissible_rho(beta: float) -> float:
    """Supremum of rho keeping the certified cost inflation below 1 + beta^{-2}.

    Solves 2 beta^2 rho (rho+2) = 1 - 1/(1 + beta^{-2}) by the quadratic
    formula; any rho below the returned value satisfies the strict condition
    [1 - 2 beta^2 rho (rho+2)]^{-1} < 1 + beta^{-2}.
    """
    if beta <= 1.0:
        raise DomainError("beta must exceed 1")
    return float(np.sqrt(1.0 + 1.0 / (2.0 * beta**2 * (1.0 + beta**2))) - 1.0)


# ---------------------------------------------------------------------------
# Randomized instance generation (seeded, reproducible)

def random_plant(rng: np.random.Generator, n: int, m: int,
                 spectral_radius: float, input_scale: float = 1.0) -> PlantModel:
    """A with i.i.d. uniform [-1,1] entries rescaled to the target spectral
    radius, B with i.i.d. uniform [-1,1] entries times input_scale."""
    while True:
        A = rng.uniform(-1.0, 1.0, (n, n))
        r = float(np.max(np.abs(np.linalg.eigvals(A))))
        if r > 1e-9:
            break
    A *= spectral_radius / r
    B = input_scale * rng.uniform(-1.0, 1.0, (n, m))
    return PlantModel(A, B)


def sample_membership_plant(rng: np.random.Generator, beta: float, n: int, m: int,
                            max_tries: int = 20000) -> tuple[PlantModel, ValueMatrix, QMatrix]:
    """Rejection-sample a plant whose Riccati solution satisfies Q <= beta^2 I."""
    for _ in range(max_tries):
        plant = random_plant(rng, n, m,
                             spectral_radius=rng.uniform(0.02, 0.9),
                             input_scale=rng.uniform(0.05, 1.0))
        try:
            P = solve_dare(plant)
        except NotStabilizable:
            continue
        q = q_from_p(plant, P)
        if np.linalg.eigvalsh(q.Q).max() <= beta**2:
            return plant, P, q
    raise RuntimeError(f"no plant found in the beta = {beta} membership set "
                       f"after {max_tries} tries")


def contraction_rho_root(beta: float) -> float:
    """Positive root of 2 beta^2 rho (rho+2) = 1."""
    return float(np.sqrt(1.0 + 1.0 / (2.0 * beta**2)) - 1.0)


def random_pd_matrix(rng: np.random.Generator, d: int) -> np.ndarray:
    G = rng.standard_normal((d, d))
    return sym(G @ G.T + rng.uniform(0.05, 1.0) * np.eye(d))


def _perturbation(rng: np.random.Generator, n: int, d: int, rho: float) -> np.ndarray:
    if rho == 0.0:
        return np.zeros((n, d))
    D = rng.standard_normal((n, d))
    return rho * D / np.linalg.norm(D, 2)


@dataclass(frozen=True, eq=False)
class Theorem1Instance:
    """Plant in the membership set plus correlation data at estimate distance rho."""

    plant: PlantModel
    P: ValueMatrix
    sigma: np.ndarray
    sigma_hat: np.ndarray
    beta: float
    rho: float
    kt: Gain


def theorem1_instance_for_plant(rng: np.random.Generator, plant: PlantModel,
                                P: ValueMatrix, beta: float, rho: float,
                                solver_tol: float = 1e-12) -> Theorem1Instance:
    """Correlation data at estimate distance exactly rho for a given plant.

    The estimate is [A B] + Delta with spectral norm rho; Kt is the gain the
    data-driven equation produces for that estimate.
    """
    n, m = plant.n, plant.m
    sigma = random_pd_matrix(rng, n + m)
    delta = _perturbation(rng, n, n + m, rho)
    sigma_hat = (plant.ab + delta) @ sigma
    est = PlantModel(plant.A + delta[:, :n], plant.B + delta[:, n:])
    kt = gain_from_q(q_from_p(est, solve_dare(est, tol=solver_tol)))
    return Theorem1Instance(plant=plant, P=P, sigma=sigma, sigma_hat=sigma_hat,
                            beta=beta, rho=rho, kt=kt)


def sample_theorem1_instance(rng: np.random.Generator, beta: float, n: int, m: int,
                             rho_fraction: float | None = None,
                             solver_tol: float = 1e-12) -> Theorem1Instance:
    """Random hypothesis-satisfying instance for theorem1_margin.

    rho is rho_fraction (drawn uniform on [0, 0.9] if not given) of the
    contraction root of 2 beta^2 rho (rho+2) = 1.
    """
    plant, P, _ = sample_membership_plant(rng, beta, n, m)
    frac = rng.uniform(0.0, 0.9) if rho_fraction is None else rho_fraction
    rho = frac * contraction_rho_root(beta)
    return theorem1_instance_for_plant(rng, plant, P, beta, rho, solver_tol=solver_tol)


@dataclass(frozen=True, eq=False)
class Lemma1Instance:
    """Matrices satisfying the perturbed correlation bound hypotheses."""

    sigma: np.ndarray
    sigma_hat: np.ndarray
    sigma_tilde: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    beta: float
    rho: float


def lemma1_instance_for_plant(rng: np.random.Generator, plant: PlantModel,
                              P: ValueMatrix, q: QMatrix, beta: float,
                              rho: float) -> Lemma1Instance:
    """Hypothesis-satisfying matrices for lemma1_check built around a plant."""
    n, m = plant.n, plant.m
    sigma = random_pd_matrix(rng, n + m)
    sigma_tilde = _perturbation(rng, n, n + m, rho) @ sigma
    sigma_hat = plant.ab @ sigma + sigma_tilde
    return Lemma1Instance(sigma=sigma, sigma_hat=sigma_hat, sigma_tilde=sigma_tilde,
                          P=P.P, Q=q.Q, beta=beta, rho=rho)


def sample_lemma1_instance(rng: np.random.Generator, beta: float, n: int, m: int,
                           rho_fraction: float | None = None) -> Lemma1Instance:
    """Random hypothesis-satisfying instance for lemma1_check."""
    plant, P, q = sample_membership_plant(rng, beta, n, m)
    frac = rng.uniform(0.0, 0.9) if rho_fraction is None else rho_fraction
    rho = frac * contraction_rho_root(beta)
    return lemma1_instance_for_plant(rng, plant, P, q, beta, rho)
