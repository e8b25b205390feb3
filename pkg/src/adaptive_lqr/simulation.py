"""Closed-loop simulation of the adaptive controller under disturbances.

The loop per step: compute u_t from the controller, evaluate the disturbance
generator, advance x_{t+1} = A x_t + B u_t + w_t, then let the controller
observe the transition.  The log records everything needed to replay the
run and to evaluate the robustness certificates afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .controller import (
    ExcitationSchedule,
    controller_observe,
    controller_step,
    initial_controller,
)
from .errors import IllConditioned, ShapeMismatch
from .estimation import rho_of
from .riccati import PlantModel, _check_matrix

# A state beyond this Euclidean norm truncates the run with a flag.
STATE_CAP = 1e12

DISTURBANCE_KINDS = ("zero", "external_sequence", "linear_unmodeled", "filtered_unmodeled")


@dataclass(frozen=True)
class DisturbanceModel:
    """Disturbance generator: external signals and unmodeled dynamics.

    kinds:
      zero              w = 0
      external_sequence w_t = sequence[t] (zero past the end)
      linear_unmodeled  w = dA x + dB u
      filtered_unmodeled w = xi_t with xi_{t+1} = pole xi_t + dA x + dB u, xi_0 = 0
    """

    kind: str
    sequence: np.ndarray | None = None
    delta_a: np.ndarray | None = None
    delta_b: np.ndarray | None = None
    pole: float = 0.0

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ShapeMismatch(f"kind must be one of {DISTURBANCE_KINDS}, got {self.kind!r}")
        if self.kind == "external_sequence":
            seq = _check_matrix(self.sequence, "sequence")
            object.__setattr__(self, "sequence", seq)
        if self.kind in ("linear_unmodeled", "filtered_unmodeled"):
            da = _check_matrix(self.delta_a, "delta_a")
            db = _check_matrix(self.delta_b, "delta_b")
            if da.shape[0] != da.shape[1] or db.shape[0] != da.shape[0]:
                raise ShapeMismatch("delta_a must be n x n and delta_b n x m")
            object.__setattr__(self, "delta_a", da)
            object.__setattr__(self, "delta_b", db)
        if self.kind == "filtered_unmodeled" and not -1.0 < self.pole < 1.0:
            raise ShapeMismatch("pole must lie in (-1, 1)")

    @classmethod
    def zero(cls) -> "DisturbanceModel":
        return cls(kind="zero")

    @classmethod
    def external(cls, sequence) -> "DisturbanceModel":
        return cls(kind="external_sequence", sequence=np.atleast_2d(np.asarray(sequence, dtype=float)))

    @classmethod
    def linear(cls, delta_a, delta_b) -> "DisturbanceModel":
        return cls(kind="linear_unmodeled", delta_a=delta_a, delta_b=delta_b)

    @classmethod
    def filtered(cls, delta_a, delta_b, pole: float) -> "DisturbanceModel":
        return cls(kind="filtered_unmodeled", delta_a=delta_a, delta_b=delta_b, pole=pole)

    def scaled(self, magnitude: float) -> "DisturbanceModel":
        """Same shape of disturbance with payload scaled by `magnitude`."""
        if self.kind == "zero":
            return self
        if self.kind == "external_sequence":
            return DisturbanceModel.external(magnitude * self.sequence)
        if self.kind == "linear_unmodeled":
            return DisturbanceModel.linear(magnitude * self.delta_a, magnitude * self.delta_b)
        return DisturbanceModel.filtered(magnitude * self.delta_a, magnitude * self.delta_b, self.pole)


def disturbance_eval(model: DisturbanceModel, t: int, x, u, internal_state):
    """Evaluate the disturbance at time t; returns (w, internal_state')."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    n = x.size
    if model.kind == "zero":
        return np.zeros(n), internal_state
    if model.kind == "external_sequence":
        w = model.sequence[t] if t < len(model.sequence) else np.zeros(n)
        return np.asarray(w, dtype=float).copy(), internal_state
    drive = model.delta_a @ x + model.delta_b @ u
    if model.kind == "linear_unmodeled":
        return drive, internal_state
    xi = np.zeros(n) if internal_state is None else internal_state
    return xi.copy(), model.pole * xi + drive


@dataclass(frozen=True)
class Scenario:
    """Full description of one closed-loop run, seed included."""

    plant: PlantModel
    disturbance: DisturbanceModel
    x0: np.ndarray
    horizon: int
    lam: float = 0.99
    sigma0: np.ndarray | None = None
    excitation: ExcitationSchedule | None = None
    fallback_gain: np.ndarray | None = None
    beta: float = 2.0
    rho: float | None = None
    gamma: float = 20.0
    seed: int = 0
    controller_tol: float = 1e-11

    def __post_init__(self):
        if self.horizon < 1:
            raise ShapeMismatch("horizon must be at least 1")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.plant.n,):
            raise ShapeMismatch(f"x0 must have length {self.plant.n}")
        object.__setattr__(self, "x0", x0)
        if self.excitation is None:
            object.__setattr__(self, "excitation", ExcitationSchedule.none(self.plant.m))


@dataclass(frozen=True, eq=False)
class TrajectoryLog:
    """Time-indexed closed-loop records plus the terminal state.

    Arrays are indexed by step; a run truncated by the state-norm cap has
    fewer than `horizon` rows and overflowed = True.
    """

    n: int
    m: int
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    w: np.ndarray
    k: np.ndarray
    rho: np.ndarray
    eq6_residual: np.ndarray
    fallback: np.ndarray
    x_final: np.ndarray
    overflowed: bool = False

    def __len__(self) -> int:
        return len(self.t)

    def state_input_cost(self, t0: int = 0) -> float:
        """sum over t >= t0 of |x_t|^2 + |u_t|^2."""
        return float(np.sum(self.x[t0:] ** 2) + np.sum(self.u[t0:] ** 2))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "t": self.t.tolist(),
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "eps": self.eps.tolist(),
            "w": self.w.tolist(),
            "k": self.k.tolist(),
            "rho": self.rho.tolist(),
            "eq6_residual": self.eq6_residual.tolist(),
            "fallback": [bool(b) for b in self.fallback],
            "x_final": self.x_final.tolist(),
            "overflowed": bool(self.overflowed),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrajectoryLog":
        n, m = int(d["n"]), int(d["m"])
        steps = len(d["t"])
        return cls(
            n=n,
            m=m,
            t=np.asarray(d["t"], dtype=int),
            x=np.asarray(d["x"], dtype=float).reshape(steps, n),
            u=np.asarray(d["u"], dtype=float).reshape(steps, m),
            eps=np.asarray(d["eps"], dtype=float).reshape(steps, m),
            w=np.asarray(d["w"], dtype=float).reshape(steps, n),
            k=np.asarray(d["k"], dtype=float).reshape(steps, m, n),
            rho=np.asarray(d["rho"], dtype=float),
            eq6_residual=np.asarray(d["eq6_residual"], dtype=float),
            fallback=np.asarray(d["fallback"], dtype=bool),
            x_final=np.asarray(d["x_final"], dtype=float),
            overflowed=bool(d["overflowed"]),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    def csv_header(self) -> list[str]:
        cols = ["t"]
        cols += [f"x_{i}" for i in range(self.n)]
        cols += [f"u_{i}" for i in range(self.m)]
        cols += [f"eps_{i}" for i in range(self.m)]
        cols += [f"w_{i}" for i in range(self.n)]
        cols += [f"K_{i}_{j}" for i in range(self.m) for j in range(self.n)]
        cols += ["rho", "eq6_residual", "fallback"]
        return cols

    def to_csv(self, path) -> None:
        """Delimited dump, 17 significant digits (lossless for doubles)."""
        lines = [",".join(self.csv_header())]
        for i in range(len(self)):
            row = [str(int(self.t[i]))]
            row += [format(v, ".17g") for v in self.x[i]]
            row += [format(v, ".17g") for v in self.u[i]]
            row += [format(v, ".17g") for v in self.eps[i]]
            row += [format(v, ".17g") for v in self.w[i]]
            row += [format(v, ".17g") for v in self.k[i].reshape(-1)]
            row += [format(self.rho[i], ".17g"), format(self.eq6_residual[i], ".17g"),
                    str(int(self.fallback[i]))]
            lines.append(",".join(row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def logs_equal(a: TrajectoryLog, b: TrajectoryLog) -> bool:
    """Exact equality of two logs, entry by entry."""
    return (
        a.n == b.n and a.m == b.m and a.overflowed == b.overflowed
        and np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)
        and np.array_equal(a.u, b.u) and np.array_equal(a.eps, b.eps)
        and np.array_equal(a.w, b.w) and np.array_equal(a.k, b.k)
        and np.array_equal(a.rho, b.rho, equal_nan=True)
        and np.array_equal(a.eq6_residual, b.eq6_residual, equal_nan=True)
        and np.array_equal(a.fallback, b.fallback)
        and np.array_equal(a.x_final, b.x_final)
    )


def simulate(scenario: Scenario) -> TrajectoryLog:
    """Run the closed loop for `horizon` steps.

    rho_t is logged against the true plant as a diagnostic; the controller
    never reads it.  A state norm beyond STATE_CAP truncates the run and
    flags the log instead of raising.
    """
    plant = scenario.plant
    n, m = plant.n, plant.m
    ctrl = initial_controller(
        n, m, lam=scenario.lam, sigma0=scenario.sigma0,
        excitation=scenario.excitation,
        fallback_gain=scenario.fallback_gain,
        tol=scenario.controller_tol,
    )
    x = scenario.x0.copy()
    dist_state = None
    rows_t, rows_x, rows_u, rows_eps, rows_w = [], [], [], [], []
    rows_k, rows_rho, rows_res, rows_fb = [], [], [], []
    overflowed = False
    for t in range(scenario.horizon):
        try:
            rho_t = rho_of(ctrl.corr, plant)
        except IllConditioned:
            rho_t = np.inf
        u, ctrl, diag = controller_step(ctrl, x)
        w, dist_state = disturbance_eval(scenario.disturbance, t, x, u, dist_state)
        x_next = plant.A @ x + plant.B @ u + w
        rows_t.append(t)
        rows_x.append(x)
        rows_u.append(u)
        rows_eps.append(diag.excitation)
        rows_w.append(w)
        rows_k.append(diag.gain)
        rows_rho.append(rho_t)
        rows_res.append(diag.eq6_residual)
        rows_fb.append(diag.fallback)
        ctrl = controller_observe(ctrl, x, u, x_next)
        x = x_next
        if np.linalg.norm(x) > STATE_CAP:
            overflowed = True
            break
    return TrajectoryLog(
        n=n, m=m,
        t=np.asarray(rows_t, dtype=int),
        x=np.asarray(rows_x, dtype=float).reshape(len(rows_t), n),
        u=np.asarray(rows_u, dtype=float).reshape(len(rows_t), m),
        eps=np.asarray(rows_eps, dtype=float).reshape(len(rows_t), m),
        w=np.asarray(rows_w, dtype=float).reshape(len(rows_t), n),
        k=np.asarray(rows_k, dtype=float).reshape(len(rows_t), m, n),
        rho=np.asarray(rows_rho, dtype=float),
        eq6_residual=np.asarray(rows_res, dtype=float),
        fallback=np.asarray(rows_fb, dtype=bool),
        x_final=x,
        overflowed=overflowed,
    )
