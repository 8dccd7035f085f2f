"""Assemble and solve the task-QFI SDP.

The program minimizes lambda over a Hermitian gauge h and one dual-space
element Q per branch, subject to the block positivity

    [[lambda/4 I_r,  B(h)^dag], [B(h), Q]] >= 0,
    B(h) = conj(Cdot) + i conj(C) conj(h),

which by the Schur complement is lambda Q >= Omega(h) with Omega the
performance operator.  The optimum over the allowed strategy set equals the
maximal output-state QFI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sdp_engine as se
from ._basis import product_basis
from .comb_algebra import FactorizedComb, KrausChannel, kraus_product_comb
from .errors import DimensionMismatchError, SolverFailureError
from .strategy_spaces import AffineSpace, StrategySetSpec, dual_space
from .tensor_algebra import LabeledMatrix, hermitize


@dataclass(frozen=True)
class HermitianGauge:
    """Residual decomposition freedom of the process vectors."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if np.linalg.norm(h - h.conj().T) > 1e-8 * max(1.0, np.linalg.norm(h)):
            raise ValueError("gauge must be Hermitian")
        object.__setattr__(self, "h", 0.5 * (h + h.conj().T))


@dataclass(frozen=True)
class QfiResult:
    value: float
    h_opt: HermitianGauge
    q_opt: list[LabeledMatrix]
    spec: StrategySetSpec | None
    spaces: list[AffineSpace]
    solver: se.SdpSolution

    @property
    def branch_tags(self):
        return [sp.branch_tag for sp in self.spaces]


def performance_operator(fc: FactorizedComb, h: HermitianGauge | np.ndarray) -> LabeledMatrix:
    """Omega = 4 [(Cdot - i C h)(Cdot - i C h)^dag]^T, PSD by construction."""
    hm = h.h if isinstance(h, HermitianGauge) else np.asarray(h, dtype=complex)
    if hm.shape != (fc.rank, fc.rank):
        raise DimensionMismatchError(
            f"gauge side {hm.shape} does not match rank {fc.rank}"
        )
    m = fc.dvectors - 1j * fc.vectors @ hm
    omega = 4.0 * (m @ m.conj().T).T
    return LabeledMatrix(fc.layout, omega, hermitian=True)


def gauged_columns(fc: FactorizedComb, h: HermitianGauge | np.ndarray) -> np.ndarray:
    """conj(Cdot - i C h), the columns entering the positivity block."""
    hm = h.h if isinstance(h, HermitianGauge) else np.asarray(h, dtype=complex)
    return np.conj(fc.dvectors - 1j * fc.vectors @ hm)


def schur_block(
    lam: float, fc: FactorizedComb, h: HermitianGauge | np.ndarray, q: LabeledMatrix
) -> np.ndarray:
    """The (r + D) block whose positivity encodes lambda Q >= Omega(h)."""
    r, d = fc.rank, fc.layout.total_dim
    if q.layout.total_dim != d:
        raise DimensionMismatchError("dual element must live on the process space")
    b = gauged_columns(fc, h)
    out = np.zeros((r + d, r + d), dtype=complex)
    out[:r, :r] = (lam / 4.0) * np.eye(r)
    out[r:, :r] = b
    out[:r, r:] = b.conj().T
    out[r:, r:] = q.entries
    return out


def product_comb(ch: KrausChannel, n: int) -> FactorizedComb:
    """N identical queries: columns are tensor products of the single-slot
    Kraus kets with Leibniz-rule derivatives."""
    if n < 1:
        raise ValueError("need at least one query")
    return kraus_product_comb([ch] * n)


def _feasible_lambda0(fc: FactorizedComb, spaces: list[AffineSpace]) -> float:
    b0 = np.conj(fc.dvectors)
    smax = float(np.linalg.norm(b0, 2))
    lam0 = 1.0
    for sp in spaces:
        q0 = sp.canonical.entries
        qmin = float(np.linalg.eigvalsh(hermitize(q0))[0])
        qmin = max(qmin, 1e-12)
        lam0 = max(lam0, 4.2 * smax**2 / qmin + 1.0)
    return lam0


def build_problem(fc: FactorizedComb, spaces: list[AffineSpace]) -> se.SdpProblem:
    """Engine form of the Theorem-style program for the given dual spaces."""
    r, d = fc.rank, fc.layout.total_dim
    cbar = np.conj(fc.vectors)
    cdotbar = np.conj(fc.dvectors)
    lam0 = _feasible_lambda0(fc, spaces)
    variables = [
        se.HermitianVariable("lam", (1,), init=np.array([lam0])),
        se.HermitianVariable("h", (r,)),
    ]
    blocks: list[se.PsdBlockSpec] = []
    equalities: list[se.EqualityRow] = []
    for i, sp in enumerate(spaces):
        name = f"q{i}"
        comp = sp.compiled
        qb = product_basis(sp.layout.dims)
        variables.append(
            se.HermitianVariable(
                name,
                sp.layout.dims,
                pin_mask=comp.kill_mask,
                pin_values=comp.pin_values,
                init=qb.coords(sp.canonical.entries),
            )
        )
        const = np.zeros((r + d, r + d), dtype=complex)
        const[r:, :r] = cdotbar
        const[:r, r:] = cdotbar.conj().T
        blocks.append(
            se.PsdBlockSpec(
                r + d,
                const,
                [
                    ("lam", se.ScaledIdentity(0, r, 0.25)),
                    ("h", se.GaugeOffdiag(cbar, row_offset=r, col_offset=0)),
                    (name, se.EmbedDiag(r)),
                ],
            )
        )
        if comp.rows is not None:
            for row, rhs in zip(comp.rows, comp.rhs):
                equalities.append(se.EqualityRow({name: row}, float(rhs)))
    return se.SdpProblem(
        variables=variables,
        blocks=blocks,
        equalities=equalities,
        objective={"lam": np.array([1.0])},
        sense="min",
    )


def solve_task(
    fc: FactorizedComb,
    spaces: list[AffineSpace],
    spec: StrategySetSpec | None = None,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
) -> QfiResult:
    """Solve the task-QFI program over explicit dual spaces."""
    problem = build_problem(fc, spaces)
    sol = se.solve(problem, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)
    if sol.status == "infeasible":
        raise SolverFailureError("task SDP flagged infeasible")
    if not sol.optimal and sol.gap > 2e-5:
        raise SolverFailureError(
            f"solver stopped at status {sol.status!r} with duality gap "
            f"{sol.gap:.2e} (iterations {sol.iterations})"
        )
    lam = float(sol.objective)
    h_opt = HermitianGauge(sol.variables["h"])
    q_opt = [
        LabeledMatrix(sp.layout, sol.variables[f"q{i}"], hermitian=True)
        for i, sp in enumerate(spaces)
    ]
    if lam < -1e-7:
        raise SolverFailureError(f"negative task QFI {lam:.3e}")
    # direct re-check outside the Schur form
    omega = performance_operator(fc, h_opt).entries
    for q in q_opt:
        wmin = float(np.linalg.eigvalsh(hermitize(lam * q.entries - omega))[0])
        if wmin < -1e-6 * max(1.0, lam):
            raise SolverFailureError(
                f"dual certificate violated: min eig(lam Q - Omega) = {wmin:.3e}"
            )
    return QfiResult(
        value=lam, h_opt=h_opt, q_opt=q_opt, spec=spec, spaces=list(spaces), solver=sol
    )


def task_qfi(
    fc: FactorizedComb,
    spec: StrategySetSpec,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
) -> QfiResult:
    """Maximal output-state QFI over the given strategy set."""
    if len(fc.layout) != 2 * spec.n_steps:
        raise DimensionMismatchError(
            f"process has {len(fc.layout)} factors, spec expects {2 * spec.n_steps}"
        )
    expected = [
        (fc.layout.dim(str(2 * k + 1)), fc.layout.dim(str(2 * k + 2)))
        for k in range(spec.n_steps)
    ]
    if tuple(expected) != tuple(spec.slot_dims):
        raise DimensionMismatchError(
            f"process dims {expected} do not match strategy spec {spec.slot_dims}"
        )
    return solve_task(
        fc,
        dual_space(spec),
        spec=spec,
        gap_tol=gap_tol,
        feas_tol=feas_tol,
        max_iter=max_iter,
    )
