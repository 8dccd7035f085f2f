"""Self-contained dense interior-point solver for SDPs with complex
Hermitian blocks and linear equality constraints.

Problem form after compilation: a real coordinate vector z (orthonormal
Hermitian-basis coordinates of every matrix variable), PSD constraints
``S_j = G_j + A_j(z) >= 0``, coordinate pins and dense equality rows on z,
and a linear objective.  The algorithm is primal-dual path following with
Nesterov-Todd scaling and a Mehrotra predictor-corrector; the Newton normal
equations are solved by eliminating, per block, the coordinates of a
variable embedded as a diagonal sub-block, whose scaled Gram operator is a
congruence map with an exact inverse and is never materialized.

Deterministic: fixed initial point, no randomness anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._basis import ProductBasis, product_basis
from .errors import SolverFailureError
from .tensor_algebra import hermitize

# ---------------------------------------------------------------------------
# linear maps from Hermitian variables into PSD blocks


class EmbedDiag:
    """Variable placed as a diagonal sub-block at the given offset."""

    def __init__(self, offset: int):
        self.offset = int(offset)

    def add_apply(self, out: np.ndarray, m: np.ndarray) -> None:
        o, n = self.offset, m.shape[0]
        out[o : o + n, o : o + n] += m

    def adjoint_coords(self, mat: np.ndarray, basis: ProductBasis) -> np.ndarray:
        o, n = self.offset, basis.side
        return basis.coords(mat[o : o + n, o : o + n])

    def adjoint_coords_many(self, mats: np.ndarray, basis: ProductBasis) -> np.ndarray:
        o, n = self.offset, basis.side
        return basis.coords_many(np.ascontiguousarray(mats[:, o : o + n, o : o + n]))

    def images_chunk(self, basis: ProductBasis, idx: np.ndarray, side: int) -> np.ndarray:
        el = basis.elements(idx)
        out = np.zeros((len(idx), side, side), dtype=complex)
        o, n = self.offset, basis.side
        out[:, o : o + n, o : o + n] = el
        return out


class ScaledIdentity:
    """1x1 variable times ``scale * I`` on a diagonal index range."""

    def __init__(self, offset: int, size: int, scale: float = 1.0):
        self.offset, self.size, self.scale = int(offset), int(size), float(scale)

    def add_apply(self, out: np.ndarray, m: np.ndarray) -> None:
        idx = np.arange(self.offset, self.offset + self.size)
        out[idx, idx] += self.scale * m.reshape(-1)[0]

    def adjoint_coords(self, mat: np.ndarray, basis: ProductBasis) -> np.ndarray:
        idx = np.arange(self.offset, self.offset + self.size)
        return np.array([self.scale * float(np.real(mat[idx, idx].sum()))])

    def adjoint_coords_many(self, mats: np.ndarray, basis: ProductBasis) -> np.ndarray:
        idx = np.arange(self.offset, self.offset + self.size)
        return self.scale * np.real(mats[:, idx, idx].sum(axis=1))[:, None]

    def images_chunk(self, basis: ProductBasis, idx: np.ndarray, side: int) -> np.ndarray:
        out = np.zeros((len(idx), side, side), dtype=complex)
        o = np.arange(self.offset, self.offset + self.size)
        out[:, o, o] = self.scale
        return out


class GaugeOffdiag:
    """Hermitian r x r variable h entering as ``i Cbar conj(h)`` on the
    (rows, cols) off-diagonal block plus the Hermitian transpose."""

    def __init__(self, cbar: np.ndarray, row_offset: int, col_offset: int):
        self.cbar = np.asarray(cbar, dtype=complex)  # (D, r)
        self.row_offset = int(row_offset)
        self.col_offset = int(col_offset)
        self.d, self.r = self.cbar.shape

    def add_apply(self, out: np.ndarray, m: np.ndarray) -> None:
        l = 1j * self.cbar @ m.conj()
        ro, co = self.row_offset, self.col_offset
        out[ro : ro + self.d, co : co + self.r] += l
        out[co : co + self.r, ro : ro + self.d] += l.conj().T

    def adjoint_coords(self, mat: np.ndarray, basis: ProductBasis) -> np.ndarray:
        # <A(h), M> = 2 Re[i Tr(conj(h) K)] = <h, i (K^T - conj(K))>
        # for K = M[cols, rows] @ cbar
        ro, co = self.row_offset, self.col_offset
        k = mat[co : co + self.r, ro : ro + self.d] @ self.cbar
        return basis.coords(1j * (k.T - k.conj()))

    def adjoint_coords_many(self, mats: np.ndarray, basis: ProductBasis) -> np.ndarray:
        ro, co = self.row_offset, self.col_offset
        k = np.matmul(mats[:, co : co + self.r, ro : ro + self.d], self.cbar)
        return basis.coords_many(1j * (np.transpose(k, (0, 2, 1)) - k.conj()))

    def images_chunk(self, basis: ProductBasis, idx: np.ndarray, side: int) -> np.ndarray:
        el = basis.elements(idx)
        l = 1j * np.einsum("dk,akl->adl", self.cbar, el.conj(), optimize=True)
        out = np.zeros((len(idx), side, side), dtype=complex)
        ro, co = self.row_offset, self.col_offset
        out[:, ro : ro + self.d, co : co + self.r] = l
        out[:, co : co + self.r, ro : ro + self.d] = np.transpose(l, (0, 2, 1)).conj()
        return out


class DenseImages:
    """Explicit stack of Hermitian images, one per variable coordinate."""

    def __init__(self, images: np.ndarray):
        self.images = np.asarray(images, dtype=complex)

    def add_apply_coords(self, out: np.ndarray, c: np.ndarray) -> None:
        out += np.tensordot(c, self.images, axes=(0, 0))

    def adjoint_coords(self, mat: np.ndarray, basis: ProductBasis) -> np.ndarray:
        return np.real(np.einsum("aij,ji->a", self.images, mat, optimize=True))

    def adjoint_coords_many(self, mats: np.ndarray, basis: ProductBasis) -> np.ndarray:
        return np.real(np.einsum("aij,bji->ba", self.images, mats, optimize=True))

    def images_chunk(self, basis: ProductBasis, idx: np.ndarray, side: int) -> np.ndarray:
        return self.images[idx]


LinearMap = EmbedDiag | ScaledIdentity | GaugeOffdiag | DenseImages


def apply_map(mp: LinearMap, out: np.ndarray, coords: np.ndarray, basis: ProductBasis) -> None:
    if isinstance(mp, DenseImages):
        mp.add_apply_coords(out, coords)
    else:
        mp.add_apply(out, basis.matrix(coords))


# ---------------------------------------------------------------------------
# problem model


@dataclass
class HermitianVariable:
    """Hermitian matrix variable; ``dims`` are the factor dims of its space.

    ``pin_mask``/``pin_values`` fix product-basis coordinates; ``init`` is a
    coordinate hint for the (deterministic) starting point.
    """

    name: str
    dims: tuple[int, ...]
    pin_mask: np.ndarray | None = None
    pin_values: np.ndarray | None = None
    init: np.ndarray | None = None

    @property
    def side(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1

    @property
    def n_coords(self) -> int:
        return self.side * self.side


@dataclass
class PsdBlockSpec:
    side: int
    const: np.ndarray | None
    terms: list[tuple[str, LinearMap]]


@dataclass
class EqualityRow:
    coefs: dict[str, np.ndarray]
    rhs: float


@dataclass
class SdpProblem:
    variables: list[HermitianVariable]
    blocks: list[PsdBlockSpec]
    equalities: list[EqualityRow] = field(default_factory=list)
    objective: dict[str, np.ndarray] = field(default_factory=dict)
    sense: str = "min"


@dataclass
class SdpSolution:
    status: str
    objective: float
    variables: dict[str, np.ndarray]
    coords: dict[str, np.ndarray]
    gap: float
    iterations: int
    primal_residual: float
    dual_residual: float
    compl_residual: float
    history: list[tuple[float, float, float, float, float]]  # (pobj, dobj, mu, p_res, d_res)
    block_duals: list[np.ndarray]

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def dump_problem(problem: SdpProblem, path: str) -> None:
    """Debug dump of the problem in a documented JSON schema.

    Matrices are row-major nested lists of [re, im] pairs; maps are recorded
    by kind with their defining data so external tools can rebuild the
    block structure and cross-validate.
    """

    def cplx(m):
        m = np.asarray(m, dtype=complex)
        return [[[float(x.real), float(x.imag)] for x in row] for row in m]

    doc = {
        "schema_version": 1,
        "sense": problem.sense,
        "variables": [
            {
                "name": v.name,
                "dims": list(v.dims),
                "pinned": (
                    None
                    if v.pin_mask is None
                    else {
                        "coords": np.nonzero(v.pin_mask)[0].tolist(),
                        "values": np.asarray(v.pin_values)[v.pin_mask].tolist(),
                    }
                ),
            }
            for v in problem.variables
        ],
        "objective": {k: np.asarray(c).tolist() for k, c in problem.objective.items()},
        "equalities": [
            {
                "coefs": {k: np.asarray(c).tolist() for k, c in row.coefs.items()},
                "rhs": row.rhs,
            }
            for row in problem.equalities
        ],
        "blocks": [],
    }
    for b in problem.blocks:
        terms = []
        for name, mp in b.terms:
            if isinstance(mp, EmbedDiag):
                terms.append({"var": name, "kind": "embed_diag", "offset": mp.offset})
            elif isinstance(mp, ScaledIdentity):
                terms.append(
                    {
                        "var": name,
                        "kind": "scaled_identity",
                        "offset": mp.offset,
                        "size": mp.size,
                        "scale": mp.scale,
                    }
                )
            elif isinstance(mp, GaugeOffdiag):
                terms.append(
                    {
                        "var": name,
                        "kind": "gauge_offdiag",
                        "row_offset": mp.row_offset,
                        "col_offset": mp.col_offset,
                        "cbar": cplx(mp.cbar),
                    }
                )
            else:
                terms.append(
                    {"var": name, "kind": "dense_images", "images": [cplx(f) for f in mp.images]}
                )
        doc["blocks"].append(
            {
                "side": b.side,
                "const": None if b.const is None else cplx(b.const),
                "terms": terms,
            }
        )
    with open(path, "w") as f:
        json.dump(doc, f)


# ---------------------------------------------------------------------------
# compiled problem


class _Var:
    def __init__(self, spec: HermitianVariable):
        self.spec = spec
        self.name = spec.name
        self.basis = product_basis(tuple(spec.dims))
        self.m = self.basis.n
        self.local_block: int | None = None
        self.map: EmbedDiag | None = None
        self.offset_in_u = -1
        self.sl: slice | None = None


class _Compiled:
    def __init__(self, problem: SdpProblem):
        self.problem = problem
        self.vars = {v.name: _Var(v) for v in problem.variables}
        occurrences: dict[str, list[tuple[int, LinearMap]]] = {v: [] for v in self.vars}
        for j, b in enumerate(problem.blocks):
            for name, mp in b.terms:
                if name not in self.vars:
                    raise SolverFailureError(f"block references unknown variable {name!r}")
                occurrences[name].append((j, mp))
        # a variable embedded as a diagonal sub-block of exactly one PSD block
        # is eliminated through the congruence structure of its scaled Gram
        self.local_of_block: dict[int, _Var] = {}
        for name, occ in occurrences.items():
            var = self.vars[name]
            if not occ:
                raise SolverFailureError(
                    f"variable {name!r} appears in no PSD block; the normal "
                    "matrix would be singular"
                )
            if len(occ) == 1 and isinstance(occ[0][1], EmbedDiag):
                j, mp = occ[0]
                if j not in self.local_of_block:
                    var.local_block = j
                    var.map = mp
                    self.local_of_block[j] = var
        self.imaged = [v for v in self.vars.values() if v.local_block is None]
        self.locals = [v for v in self.vars.values() if v.local_block is not None]
        off = 0
        for v in self.imaged:
            v.offset_in_u = off
            v.sl = slice(off, off + v.m)
            off += v.m
        self.m_u = off
        for v in self.locals:
            v.sl = slice(off, off + v.m)
            off += v.m
        self.m_total = off
        self.block_terms: list[list[tuple[_Var, LinearMap]]] = [
            [(self.vars[name], mp) for name, mp in b.terms] for b in problem.blocks
        ]
        self.consts = []
        for b in problem.blocks:
            if b.const is None:
                self.consts.append(np.zeros((b.side, b.side), dtype=complex))
                continue
            g = np.asarray(b.const, dtype=complex)
            if np.linalg.norm(g - g.conj().T) > 1e-9 * max(1.0, np.linalg.norm(g)):
                raise SolverFailureError("PSD block constant must be Hermitian")
            self.consts.append(hermitize(g))
        sgn = 1.0 if problem.sense == "min" else -1.0
        self.obj_sign = sgn
        self.c = np.zeros(self.m_total)
        for name, coef in problem.objective.items():
            v = self.vars[name]
            coef = np.asarray(coef, dtype=float)
            if coef.shape != (v.m,):
                raise SolverFailureError(
                    f"objective for {name!r} has shape {coef.shape}, expected ({v.m},)"
                )
            self.c[v.sl] = sgn * coef
        # dense equality rows: explicit rows plus pins of imaged variables
        rows: list[np.ndarray] = []
        rhs: list[float] = []
        for row in problem.equalities:
            r = np.zeros(self.m_total)
            for name, coef in row.coefs.items():
                r[self.vars[name].sl] = np.asarray(coef, dtype=float)
            rows.append(r)
            rhs.append(float(row.rhs))
        for v in self.imaged:
            if v.spec.pin_mask is not None:
                for a in np.nonzero(v.spec.pin_mask)[0]:
                    r = np.zeros(self.m_total)
                    r[v.sl.start + a] = 1.0
                    rows.append(r)
                    rhs.append(float(v.spec.pin_values[a]))
        self.e_rows = np.array(rows) if rows else np.zeros((0, self.m_total))
        self.e_rhs = np.array(rhs) if rhs else np.zeros(0)
        self.local_pins: dict[str, np.ndarray] = {}
        for v in self.locals:
            if v.spec.pin_mask is not None and np.any(v.spec.pin_mask):
                self.local_pins[v.name] = np.nonzero(v.spec.pin_mask)[0]
            else:
                self.local_pins[v.name] = np.zeros(0, dtype=int)

    def block_matrix(self, j: int, z: np.ndarray) -> np.ndarray:
        out = self.consts[j].copy()
        for v, mp in self.block_terms[j]:
            apply_map(mp, out, z[v.sl], v.basis)
        return hermitize(out)

    def adjoint_into(self, j: int, mat: np.ndarray, out: np.ndarray) -> None:
        for v, mp in self.block_terms[j]:
            out[v.sl] += mp.adjoint_coords(mat, v.basis)

    def initial_z(self) -> np.ndarray:
        z = np.zeros(self.m_total)
        for v in self.vars.values():
            if v.spec.init is not None:
                z[v.sl] = np.asarray(v.spec.init, dtype=float)
            if v.spec.pin_mask is not None:
                zz = z[v.sl]
                zz[v.spec.pin_mask] = v.spec.pin_values[v.spec.pin_mask]
        return z


# ---------------------------------------------------------------------------
# numerical helpers


def _nt_scaling_inv(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """W^{-1} of the NT scaling point (W X W = S)."""
    try:
        ls = np.linalg.cholesky(s)
        lsi = np.linalg.inv(ls)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(hermitize(s))
        w = np.maximum(w, 1e-14 * max(float(w[-1]), 1e-30))
        ls = v * np.sqrt(w)
        lsi = (v / np.sqrt(w)).conj().T
    t = hermitize(ls.conj().T @ x @ ls)
    lam, q = np.linalg.eigh(t)
    lam = np.maximum(lam, 1e-300)
    return hermitize(lsi.conj().T @ ((q * lam**0.5) @ q.conj().T) @ lsi)


def _herm_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(m))
    w = np.maximum(w, 1e-300)
    return hermitize((v * np.sqrt(w)) @ v.conj().T)


def _max_step(s: np.ndarray, ds: np.ndarray) -> float:
    """sup {a : S + a dS >= 0} via a whitened eigenvalue bound."""
    try:
        l = np.linalg.cholesky(s)
        li = np.linalg.inv(l)
    except np.linalg.LinAlgError:
        # rounding can push an iterate microscopically across the boundary
        w, v = np.linalg.eigh(hermitize(s))
        w = np.maximum(w, 1e-14 * max(float(w[-1]), 1e-30))
        li = (v / np.sqrt(w)).conj().T
    lam_min = float(np.linalg.eigvalsh(hermitize(li @ ds @ li.conj().T))[0])
    return np.inf if lam_min >= 0 else -1.0 / lam_min


def _lyapunov_solve(lam: np.ndarray, q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (V Y + Y V)/2 = rhs for V = q diag(lam) q^dag."""
    floor = max(1e-14 * float(lam[-1]), 1e-150)
    lam = np.maximum(lam, floor)
    r = q.conj().T @ rhs @ q
    return q @ (r / (0.5 * (lam[:, None] + lam[None, :]))) @ q.conj().T


# ---------------------------------------------------------------------------
# Newton system


class _KktFactors:
    """Per-iteration factorization of the Newton normal system.

    With H = sum_j A_j^T (Winv_j . Winv_j) A_j the system is

        H dz - P^T dnu_loc - E^T dnu_E = r_hat
        P dz = r_pin,  E dz = r_e

    Local (embedded) variables are eliminated through the exact congruence
    inverse of their diagonal H sub-operator; their coordinate pins are
    dualized with a small Cholesky; the remainder reduces to a dense saddle
    system over (imaged coordinates, dense-row multipliers).  Solves apply
    one step of iterative refinement against the exact operators.
    """

    def __init__(self, comp: _Compiled, winvs: list[np.ndarray]):
        self.comp = comp
        self.winvs = winvs
        m_u = comp.m_u
        g = comp.e_rows.shape[0]
        self.h_uu = np.zeros((m_u, m_u))
        self.loc: dict[str, dict] = {}
        for j, block in enumerate(comp.problem.blocks):
            winv = winvs[j]
            img = [(v, mp) for v, mp in comp.block_terms[j] if v.local_block != j]
            locvar = comp.local_of_block.get(j)
            c_loc = None
            if locvar is not None:
                sub = locvar.map.offset
                n = locvar.basis.side
                what = hermitize(winv[sub : sub + n, sub : sub + n])
                whinv = hermitize(np.linalg.inv(what))
                pins = comp.local_pins[locvar.name]
                info = {"var": locvar, "block": j, "whinv": whinv, "pins": pins}
                if len(pins):
                    z = _herm_sqrt(whinv)
                    gm = locvar.basis.sandwich_gram(z, pins)
                    gm = 0.5 * (gm + gm.T)
                    gm += (1e-14 * np.trace(gm) / max(len(pins), 1)) * np.eye(len(pins))
                    info["g_chol"] = np.linalg.cholesky(gm)
                self.loc[locvar.name] = info
                if img:
                    c_loc = np.zeros((locvar.m, sum(v.m for v, _ in img)))
            if img:
                col = 0
                for v, mp in img:
                    chunk = 256
                    for lo in range(0, v.m, chunk):
                        idx = np.arange(lo, min(v.m, lo + chunk))
                        f = mp.images_chunk(v.basis, idx, block.side)
                        y = np.einsum("ij,ajk,kl->ail", winv, f, winv, optimize=True)
                        for v2, mp2 in img:
                            vals = mp2.adjoint_coords_many(y, v2.basis)  # (k, m_v2)
                            self.h_uu[
                                v2.offset_in_u : v2.offset_in_u + v2.m,
                                v.offset_in_u + lo : v.offset_in_u + lo + len(idx),
                            ] += vals.T
                        if locvar is not None:
                            sub = locvar.map.offset
                            n = locvar.basis.side
                            c_loc[:, col + lo : col + lo + len(idx)] = (
                                locvar.basis.coords_many(
                                    np.ascontiguousarray(
                                        y[:, sub : sub + n, sub : sub + n]
                                    )
                                ).T
                            )
                    col += v.m
            if locvar is not None:
                self.loc[locvar.name]["c_loc"] = c_loc
                self.loc[locvar.name]["img"] = img
        self.h_uu = 0.5 * (self.h_uu + self.h_uu.T)
        # rhs-independent eliminations and the reduced saddle matrix
        e_u = comp.e_rows[:, :m_u]
        red_a = self.h_uu.copy()
        red_b = -e_u.T.copy()
        red_d = np.zeros((g, g))
        for v in comp.locals:
            info = self.loc[v.name]
            pins = info["pins"]
            c_loc = info["c_loc"]
            img = info["img"]
            n_c = c_loc.shape[1] if c_loc is not None else 0
            u_idx = (
                np.concatenate(
                    [np.arange(vv.offset_in_u, vv.offset_in_u + vv.m) for vv, _ in img]
                )
                if img
                else np.zeros(0, dtype=int)
            )
            e_q = comp.e_rows[:, v.sl]
            cols = []
            if n_c:
                cols.append(c_loc)
            if g:
                cols.append(e_q.T)
            if cols:
                tb = self._t_apply(v.name, np.concatenate(cols, axis=1))
            else:
                tb = np.zeros((v.m, 0))
            t_c = tb[:, :n_c]
            t_e = tb[:, n_c:]
            info.update(t_c=t_c, t_e=t_e, u_idx=u_idx, n_c=n_c, e_q=e_q)
            if n_c:
                red_a[np.ix_(u_idx, u_idx)] -= c_loc.T @ t_c
                if g:
                    red_b[u_idx, :] += c_loc.T @ t_e
            if g:
                red_d += e_q @ t_e
            if len(pins):
                lch = info["g_chol"]

                def gsolve(b, lch=lch):  # bind now: one factor per local var
                    return np.linalg.solve(lch.T, np.linalg.solve(lch, b))

                u_i = t_c[pins, :] if n_c else np.zeros((len(pins), 0))
                z_i = t_e[pins, :] if g else np.zeros((len(pins), 0))
                gi_u = gsolve(u_i) if n_c else u_i
                gi_z = gsolve(z_i) if g else z_i
                info.update(u_i=u_i, z_i=z_i, gi_u=gi_u, gi_z=gi_z, gsolve=gsolve)
                if n_c:
                    red_a[np.ix_(u_idx, u_idx)] += u_i.T @ gi_u
                    if g:
                        red_b[u_idx, :] -= u_i.T @ gi_z
                if g:
                    red_d -= z_i.T @ gi_z
        if g:
            self.full = np.block([[red_a, red_b], [-red_b.T, red_d]])
        else:
            self.full = red_a
        if self.full.size:
            import scipy.linalg as sla

            # symmetric equilibration keeps the LU honest when the normal
            # part and the multiplier rows live on very different scales
            dg = np.sqrt(np.maximum(np.abs(np.diagonal(self.full)), 1e-300))
            dg = np.maximum(dg, 1e-8 * dg.max() if dg.max() > 0 else 1.0)
            self.full_scale = dg
            scaled = self.full / dg[:, None] / dg[None, :]
            self.full_lu = sla.lu_factor(scaled)
        else:
            self.full_scale = None
            self.full_lu = None

    def _t_apply(self, name: str, cs: np.ndarray) -> np.ndarray:
        """K^{-1} (inverse scaled Gram of the local variable) on coords."""
        info = self.loc[name]
        v: _Var = info["var"]
        if cs.ndim == 1:
            return v.basis.sandwich_coords(info["whinv"], cs)
        return v.basis.sandwich_coords_many(info["whinv"], cs.T).T

    def _h_apply(self, dz: np.ndarray) -> np.ndarray:
        """Exact operator H dz via block congruences."""
        comp = self.comp
        out = np.zeros(comp.m_total)
        for j, block in enumerate(comp.problem.blocks):
            mat = np.zeros((block.side, block.side), dtype=complex)
            for v, mp in comp.block_terms[j]:
                apply_map(mp, mat, dz[v.sl], v.basis)
            y = self.winvs[j] @ mat @ self.winvs[j]
            comp.adjoint_into(j, hermitize(y), out)
        return out

    def _solve_linear(self, r_hat, r_pin, r_e):
        """One backsolve of the factored Newton system."""
        comp = self.comp
        m_u, g = comp.m_u, comp.e_rows.shape[0]
        import scipy.linalg as sla

        rhs_u = r_hat[:m_u].copy()
        rhs_e = np.asarray(r_e, dtype=float).copy()
        t_rqs, gi_rs = {}, {}
        for v in comp.locals:
            info = self.loc[v.name]
            pins = info["pins"]
            t_rq = self._t_apply(v.name, r_hat[v.sl])
            t_rqs[v.name] = t_rq
            if info["n_c"]:
                rhs_u[info["u_idx"]] -= info["c_loc"].T @ t_rq
            if g:
                rhs_e -= info["e_q"] @ t_rq
            if len(pins):
                gi_r = info["gsolve"](np.asarray(r_pin[v.name], dtype=float) - t_rq[pins])
                gi_rs[v.name] = gi_r
                if info["n_c"]:
                    rhs_u[info["u_idx"]] -= info["u_i"].T @ gi_r
                if g:
                    rhs_e -= info["z_i"].T @ gi_r
        rhs = np.concatenate([rhs_u, rhs_e]) if g else rhs_u
        if self.full_lu is not None and rhs.size:
            sol = sla.lu_solve(self.full_lu, rhs / self.full_scale) / self.full_scale
        else:
            sol = np.zeros(0)
        du = sol[:m_u]
        dnu = sol[m_u:]
        dz = np.zeros(comp.m_total)
        dz[:m_u] = du
        dnuloc: dict[str, np.ndarray] = {}
        for v in comp.locals:
            info = self.loc[v.name]
            pins = info["pins"]
            step = t_rqs[v.name].copy()
            if info["n_c"]:
                step -= info["t_c"] @ du[info["u_idx"]]
            if g:
                step += info["t_e"] @ dnu
            if len(pins):
                dn = gi_rs[v.name].copy()
                if info["n_c"]:
                    dn += info["gi_u"] @ du[info["u_idx"]]
                if g:
                    dn -= info["gi_z"] @ dnu
                dnuloc[v.name] = dn
                pv = np.zeros(v.m)
                pv[pins] = dn
                step += self._t_apply(v.name, pv)
            else:
                dnuloc[v.name] = np.zeros(0)
            dz[v.sl] = step
        return dz, dnu, dnuloc

    def _linear_residual(self, r_hat, r_pin, r_e, dz, dnu, dnuloc):
        comp = self.comp
        g = comp.e_rows.shape[0]
        res_hat = r_hat - self._h_apply(dz)
        if g:
            res_hat += comp.e_rows.T @ dnu
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            if len(pins):
                add = np.zeros(v.m)
                add[pins] = dnuloc[v.name]
                res_hat[v.sl] += add
        res_e = (r_e - comp.e_rows @ dz) if g else np.zeros(0)
        res_pin = {}
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            res_pin[v.name] = (
                np.asarray(r_pin[v.name], dtype=float) - dz[v.sl][pins]
                if len(pins)
                else np.zeros(0)
            )
        return res_hat, res_pin, res_e

    def solve(self, r_stat, r_blocks, r_e, r_pin, rc, verify=False, refine=1):
        comp = self.comp
        nblk = len(comp.problem.blocks)
        r_hat = -np.asarray(r_stat, dtype=float).copy()
        for j in range(nblk):
            m = hermitize(rc[j] - self.winvs[j] @ r_blocks[j] @ self.winvs[j])
            comp.adjoint_into(j, m, r_hat)
        dz, dnu, dnuloc = self._solve_linear(r_hat, r_pin, r_e)
        for _ in range(refine):
            res_hat, res_pin, res_e = self._linear_residual(
                r_hat, r_pin, r_e, dz, dnu, dnuloc
            )
            cz, cnu, cnuloc = self._solve_linear(res_hat, res_pin, res_e)
            dz = dz + cz
            dnu = dnu + cnu
            dnuloc = {k: dnuloc[k] + cnuloc[k] for k in dnuloc}
        ds, dx = [], []
        for j in range(nblk):
            a_dz = np.zeros((comp.problem.blocks[j].side,) * 2, dtype=complex)
            for v, mp in comp.block_terms[j]:
                apply_map(mp, a_dz, dz[v.sl], v.basis)
            dsj = hermitize(r_blocks[j] + a_dz)
            dxj = hermitize(rc[j] - self.winvs[j] @ dsj @ self.winvs[j])
            ds.append(dsj)
            dx.append(dxj)
        if verify:
            self._verify(dz, dnu, dnuloc, dx, r_stat, r_e, r_pin)
        return dz, dnu, dnuloc, ds, dx

    def _verify(self, dz, dnu, dnuloc, dx, r_stat, r_e, r_pin):
        comp = self.comp
        lhs = np.zeros(comp.m_total)
        for j in range(len(comp.problem.blocks)):
            comp.adjoint_into(j, dx[j], lhs)
        if comp.e_rows.shape[0]:
            lhs += comp.e_rows.T @ dnu
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            if len(pins):
                add = np.zeros(v.m)
                add[pins] = dnuloc[v.name]
                lhs[v.sl] += add
        # scale by the summand magnitudes: near convergence r_stat vanishes
        # while the cancelling terms do not
        scale = 1.0 + float(np.linalg.norm(r_stat)) + sum(
            float(np.linalg.norm(x)) for x in dx
        )
        err1 = float(np.linalg.norm(lhs - r_stat)) / scale
        err2 = 0.0
        if comp.e_rows.shape[0]:
            err2 = float(np.linalg.norm(comp.e_rows @ dz - r_e)) / (
                1.0 + float(np.linalg.norm(r_e)) + float(np.linalg.norm(dz))
            )
        err3 = 0.0
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            if len(pins):
                err3 = max(
                    err3,
                    float(np.linalg.norm(dz[v.sl][pins] - r_pin[v.name]))
                    / (1.0 + float(np.linalg.norm(r_pin[v.name])) + float(np.linalg.norm(dz))),
                )
        if max(err1, err2, err3) > 1e-5:
            raise SolverFailureError(
                f"Newton direction residuals {err1:.2e} / {err2:.2e} / {err3:.2e}"
            )


# ---------------------------------------------------------------------------
# main loop


def solve(
    problem: SdpProblem,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    verify_newton: bool = False,
) -> SdpSolution:
    """Solve the SDP; see the module docstring for the algorithm."""
    comp = _Compiled(problem)
    nblk = len(problem.blocks)
    sides = [b.side for b in problem.blocks]
    ntot = max(sum(sides), 1)
    c = comp.c
    # deterministic start
    z = comp.initial_z()
    nu = np.zeros(comp.e_rows.shape[0])
    nu_loc = {v.name: np.zeros(len(comp.local_pins[v.name])) for v in comp.locals}
    s_blocks, x_blocks = [], []
    for j, b in enumerate(problem.blocks):
        m = comp.block_matrix(j, z)
        wmin = float(np.linalg.eigvalsh(m)[0])
        scale = max(1.0, float(np.linalg.norm(m)) / max(1, b.side))
        shift = max(0.0, -wmin) + 0.3 * scale
        s_blocks.append(m + shift * np.eye(b.side))
        x_blocks.append(scale * np.eye(b.side, dtype=complex))

    history: list[tuple[float, float, float]] = []
    status = "numerical-limit"
    it = 0
    stall = 0
    degraded = 0
    relgap = p_res = d_res = np.inf
    best = None
    best_merit = np.inf

    def residuals():
        r_stat = c.copy()
        for j in range(nblk):
            comp.adjoint_into(j, -x_blocks[j], r_stat)
        if comp.e_rows.shape[0]:
            r_stat -= comp.e_rows.T @ nu
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            if len(pins):
                sub = np.zeros(v.m)
                sub[pins] = nu_loc[v.name]
                r_stat[v.sl] -= sub
        r_blocks = [comp.block_matrix(j, z) - s_blocks[j] for j in range(nblk)]
        r_e = comp.e_rhs - comp.e_rows @ z if comp.e_rows.shape[0] else np.zeros(0)
        r_pin = {}
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            vals = v.spec.pin_values[pins] if len(pins) else np.zeros(0)
            r_pin[v.name] = vals - z[v.sl][pins]
        return r_stat, r_blocks, r_e, r_pin

    def dual_objective():
        out = float(comp.e_rhs @ nu) if comp.e_rows.shape[0] else 0.0
        for v in comp.locals:
            pins = comp.local_pins[v.name]
            if len(pins):
                out += float(v.spec.pin_values[pins] @ nu_loc[v.name])
        out -= sum(float(np.real(np.trace(comp.consts[j] @ x_blocks[j]))) for j in range(nblk))
        return out

    for it in range(1, max_iter + 1):
        r_stat, r_blocks, r_e, r_pin = residuals()
        mu = sum(float(np.real(np.trace(x_blocks[j] @ s_blocks[j]))) for j in range(nblk)) / ntot
        pobj = float(c @ z)
        dobj = dual_objective()
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        p_res = max(
            max((float(np.linalg.norm(r)) for r in r_blocks), default=0.0),
            float(np.linalg.norm(r_e)) if len(r_e) else 0.0,
            max((float(np.linalg.norm(r)) for r in r_pin.values()), default=0.0),
        ) / (1.0 + float(np.linalg.norm(z)))
        # the stationarity residual is scaled by the terms entering the sum
        # (c - r_stat is the accumulated adjoint part), the customary measure
        d_res = float(np.linalg.norm(r_stat)) / (
            1.0 + float(np.linalg.norm(c)) + float(np.linalg.norm(c - r_stat))
        )
        history.append((comp.obj_sign * pobj, comp.obj_sign * dobj, mu, p_res, d_res))
        merit = max(relgap, p_res, d_res)
        if merit < best_merit:
            best_merit = merit
            best = (
                z.copy(),
                nu.copy(),
                {k: w.copy() for k, w in nu_loc.items()},
                [m_.copy() for m_ in s_blocks],
                [m_.copy() for m_ in x_blocks],
            )
        if relgap <= gap_tol and p_res <= feas_tol and d_res <= feas_tol:
            status = "optimal"
            break
        # stop once numerical precision is exhausted and keep the best iterate
        if it > 4 and merit > 20.0 * best_merit:
            degraded += 1
            if degraded >= 2:
                break
        else:
            degraded = 0
        if float(np.linalg.norm(z)) > 1e10:
            status = "infeasible"
            break

        winvs = [_nt_scaling_inv(s_blocks[j], x_blocks[j]) for j in range(nblk)]
        kkt = _KktFactors(comp, winvs)

        nref = 1 if mu > 1e-5 else (2 if mu > 1e-7 else 3)
        rc_aff = [-x_blocks[j] for j in range(nblk)]
        dz_a, dnu_a, dnuloc_a, ds_a, dx_a = kkt.solve(
            r_stat, r_blocks, r_e, r_pin, rc_aff, verify=verify_newton, refine=nref
        )
        ap = min(1.0, 0.99 * min((_max_step(s_blocks[j], ds_a[j]) for j in range(nblk)), default=np.inf))
        ad = min(1.0, 0.99 * min((_max_step(x_blocks[j], dx_a[j]) for j in range(nblk)), default=np.inf))
        mu_aff = sum(
            float(
                np.real(
                    np.trace((x_blocks[j] + ad * dx_a[j]) @ (s_blocks[j] + ap * ds_a[j]))
                )
            )
            for j in range(nblk)
        ) / ntot
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-10, 1.0))
        # keep centering while infeasibility dominates complementarity, so
        # the barrier never runs ahead of feasibility; once residuals are at
        # tolerance the guard must release or the barrier would stall
        if p_res > max(10.0 * feas_tol, mu / (1.0 + abs(pobj) + abs(dobj))):
            sigma = max(sigma, 0.5)

        rc_cor = []
        for j in range(nblk):
            wih = _herm_sqrt(winvs[j])  # W^{-1/2}
            w_h = np.linalg.inv(wih)
            vmat = hermitize(wih @ s_blocks[j] @ wih)
            lam, q = np.linalg.eigh(vmat)
            lam = np.maximum(lam, 1e-300)
            if mu > 1e-8:
                dss = wih @ ds_a[j] @ wih
                dxs = w_h @ dx_a[j] @ w_h
                cross = hermitize(0.5 * (dss @ dxs + dxs @ dss))
                corr = _lyapunov_solve(lam, q, cross)
            else:
                # the second-order term is pure noise at this scale
                corr = np.zeros_like(s_blocks[j])
            rc_cor.append(
                hermitize(
                    sigma * mu * np.linalg.inv(s_blocks[j])
                    - x_blocks[j]
                    - wih @ corr @ wih
                )
            )
        dz, dnu, dnuloc, ds, dx = kkt.solve(
            r_stat, r_blocks, r_e, r_pin, rc_cor, verify=verify_newton, refine=nref
        )
        tau = 0.995 if mu < 1e-5 else (0.99 if mu < 1e-3 else 0.98)
        ap = min(1.0, tau * min((_max_step(s_blocks[j], ds[j]) for j in range(nblk)), default=np.inf))
        ad = min(1.0, tau * min((_max_step(x_blocks[j], dx[j]) for j in range(nblk)), default=np.inf))
        if min(ap, ad) < 1e-10:
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0

        def try_step(a_p, a_d):
            z_t = z + a_p * dz
            s_t = [hermitize(s_blocks[j] + a_p * ds[j]) for j in range(nblk)]
            x_t = [hermitize(x_blocks[j] + a_d * dx[j]) for j in range(nblk)]
            nu_t = nu + a_d * dnu if comp.e_rows.shape[0] else nu
            nl_t = {
                v.name: (
                    nu_loc[v.name] + a_d * dnuloc[v.name]
                    if len(comp.local_pins[v.name])
                    else nu_loc[v.name]
                )
                for v in comp.locals
            }
            return z_t, s_t, x_t, nu_t, nl_t

        # merit backtracking: reject directions that wreck the residuals
        accepted = False
        for _ in range(4):
            z_t, s_t, x_t, nu_t, nl_t = try_step(ap, ad)
            r_stat_t = c.copy()
            for j in range(nblk):
                comp.adjoint_into(j, -x_t[j], r_stat_t)
            if comp.e_rows.shape[0]:
                r_stat_t -= comp.e_rows.T @ nu_t
            for v in comp.locals:
                pins = comp.local_pins[v.name]
                if len(pins):
                    sub = np.zeros(v.m)
                    sub[pins] = nl_t[v.name]
                    r_stat_t[v.sl] -= sub
            d_res_t = float(np.linalg.norm(r_stat_t)) / (
                1.0 + float(np.linalg.norm(c)) + float(np.linalg.norm(c - r_stat_t))
            )
            if d_res_t <= max(30.0 * d_res, 10.0 * feas_tol):
                accepted = True
                break
            ap *= 0.3
            ad *= 0.3
        if not accepted:
            break  # keep the best iterate
        z, s_blocks, x_blocks, nu, nu_loc = z_t, s_t, x_t, nu_t, nl_t

    if status != "optimal" and best is not None:
        z, nu, nu_loc, s_blocks, x_blocks = best
        r_stat, r_blocks, r_e, r_pin = residuals()
        pobj = float(c @ z)
        dobj = dual_objective()
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        p_res = max(
            max((float(np.linalg.norm(r)) for r in r_blocks), default=0.0),
            float(np.linalg.norm(r_e)) if len(r_e) else 0.0,
            max((float(np.linalg.norm(r)) for r in r_pin.values()), default=0.0),
        ) / (1.0 + float(np.linalg.norm(z)))
        d_res = float(np.linalg.norm(r_stat)) / (
            1.0 + float(np.linalg.norm(c)) + float(np.linalg.norm(c - r_stat))
        )
        if relgap <= gap_tol and p_res <= 10 * feas_tol and d_res <= 10 * feas_tol:
            status = "optimal"
    r_stat, r_blocks, r_e, r_pin = residuals()
    pobj = float(c @ z)
    dobj = dual_objective()
    compl = max(
        (
            float(np.linalg.norm(x_blocks[j] @ s_blocks[j]))
            / (1.0 + float(np.linalg.norm(x_blocks[j]) * np.linalg.norm(s_blocks[j])))
            for j in range(nblk)
        ),
        default=0.0,
    )
    coords = {name: z[var.sl].copy() for name, var in comp.vars.items()}
    mats = {name: comp.vars[name].basis.matrix(cv) for name, cv in coords.items()}
    return SdpSolution(
        status=status,
        objective=comp.obj_sign * pobj,
        variables=mats,
        coords=coords,
        gap=abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
        iterations=it,
        primal_residual=max(
            max((float(np.linalg.norm(r)) for r in r_blocks), default=0.0),
            float(np.linalg.norm(r_e)) if len(r_e) else 0.0,
        ),
        dual_residual=float(np.linalg.norm(r_stat)),
        compl_residual=compl,
        history=history,
        block_duals=[x.copy() for x in x_blocks],
    )
