"""Orthonormal Hermitian product bases and coordinate maps.

For a space with factor dims ``(d_1, ..., d_L)`` the basis is the tensor
product of per-factor generalized Gell-Mann bases, identity-first: element 0
of each factor is ``I/sqrt(d)``, so a product element is "identity on factor
k" iff its per-factor index is 0 there.  Coordinates of Hermitian matrices
in this basis are real, and the coordinate map is an isometry for the
Frobenius inner product.

Every basis element has at most one nonzero entry per row, which the solver
exploits for batched congruence transforms.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def factor_basis(d: int) -> list[np.ndarray]:
    """Orthonormal Hermitian basis of C^{d x d}, identity first.

    Order: I/sqrt(d); for each p<q (lex) the symmetric then antisymmetric
    element; then the d-1 diagonal traceless elements.
    """
    out = [np.eye(d, dtype=complex) / np.sqrt(d)]
    s = 1.0 / np.sqrt(2.0)
    for p in range(d):
        for q in range(p + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[p, q] = s
            m[q, p] = s
            out.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[p, q] = -1j * s
            m[q, p] = 1j * s
            out.append(m)
    for k in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        for j in range(k):
            m[j, j] = 1.0
        m[k, k] = -k
        out.append(m / np.sqrt(k * (k + 1)))
    return out


class ProductBasis:
    """Product basis over factor dims, with padded row-map representation.

    ``cols[a, r]`` / ``vals[a, r]`` encode basis element a as
    ``B_a[r, cols[a, r]] = vals[a, r]`` (vals 0 where the row is empty).
    """

    def __init__(self, dims: tuple[int, ...]):
        self.dims = tuple(int(d) for d in dims)
        self.side = int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1
        self.n_factors = len(self.dims)
        # start from the trivial one-element basis on a 1-dim space
        cols = np.zeros((1, 1), dtype=np.int64)
        vals = np.ones((1, 1), dtype=complex)
        patterns = np.zeros((1, 0), dtype=np.int16)
        side = 1
        for d in self.dims:
            fb = factor_basis(d)
            fcols = np.zeros((d * d, d), dtype=np.int64)
            fvals = np.zeros((d * d, d), dtype=complex)
            for a, m in enumerate(fb):
                for r in range(d):
                    nz = np.nonzero(m[r])[0]
                    if nz.size:
                        fcols[a, r] = nz[0]
                        fvals[a, r] = m[r, nz[0]]
            # combine: new index (a_old, a_f), new row (r_old, r_f)
            n_old, n_f = cols.shape[0], d * d
            ncols = (cols[:, None, :, None] * d + fcols[None, :, None, :]).reshape(
                n_old * n_f, side * d
            )
            nvals = (vals[:, None, :, None] * fvals[None, :, None, :]).reshape(
                n_old * n_f, side * d
            )
            patterns = np.concatenate(
                [
                    np.repeat(patterns, n_f, axis=0),
                    np.tile(
                        np.arange(n_f, dtype=np.int16)[:, None], (n_old, 1)
                    ).reshape(n_old * n_f, 1),
                ],
                axis=1,
            )
            cols, vals, side = ncols, nvals, side * d
        self.cols = cols
        self.vals = vals
        self.patterns = patterns  # (n, L) per-factor basis index
        self.n = cols.shape[0]
        assert self.n == self.side * self.side
        self.is_identity = patterns == 0  # (n, L)
        # sparse map: vec(sum_a c_a B_a) = vecmat.T @ c
        rows = np.repeat(np.arange(self.n), self.side)
        flat = (np.arange(self.side)[None, :] * self.side + self.cols).reshape(-1)
        data = self.vals.reshape(-1)
        keep = data != 0
        self.vecmat = sp.csr_matrix(
            (data[keep], (rows[keep], flat[keep])), shape=(self.n, self.side**2)
        )
        self._vecmat_conj = self.vecmat.conj()

    # -- coordinate maps ---------------------------------------------------

    def coords(self, m: np.ndarray) -> np.ndarray:
        """Real coordinates of a (nearly) Hermitian matrix."""
        v = np.asarray(m, dtype=complex).reshape(-1)
        return np.asarray((self._vecmat_conj @ v).real)

    def coords_many(self, ms: np.ndarray) -> np.ndarray:
        """Coordinates of a stack (k, side, side) -> (k, n)."""
        k = ms.shape[0]
        v = ms.reshape(k, -1).T
        return np.asarray((self._vecmat_conj @ v).real).T

    def matrix(self, c: np.ndarray) -> np.ndarray:
        v = self.vecmat.T @ np.asarray(c, dtype=float)
        return np.asarray(v).reshape(self.side, self.side)

    def matrices(self, cs: np.ndarray) -> np.ndarray:
        """(m, n) coordinate rows -> (m, side, side) matrices."""
        v = (self.vecmat.T @ np.asarray(cs, dtype=float).T).T
        return np.asarray(v).reshape(-1, self.side, self.side)

    def elements(self, idx: np.ndarray) -> np.ndarray:
        """Dense stack of basis elements for the given indices."""
        k = len(idx)
        out = np.zeros((k, self.side, self.side), dtype=complex)
        r = np.arange(self.side)
        for j, a in enumerate(idx):
            out[j, r, self.cols[a]] = self.vals[a]
        return out

    # -- solver helpers ----------------------------------------------------

    def sandwich_coords(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Coordinates of Z @ matrix(c) @ Z for Hermitian Z."""
        return self.coords(z @ self.matrix(c) @ z)

    def sandwich_coords_many(self, z: np.ndarray, cs: np.ndarray) -> np.ndarray:
        ms = self.matrices(cs)
        return self.coords_many(np.einsum("ij,ajk,kl->ail", z, ms, z, optimize=True))

    def sandwich_gram(
        self, z: np.ndarray, idx: np.ndarray, chunk: int = 512
    ) -> np.ndarray:
        """Gram matrix G[a,b] = <Z B_a Z, Z B_b Z> over the index subset.

        With Z = M^{1/2} this is the matrix of X -> M X M restricted to the
        span of the selected elements.
        """
        k = len(idx)
        D = self.side
        yr = np.empty((k, D * D))
        yi = np.empty((k, D * D))
        for lo in range(0, k, chunk):
            hi = min(k, lo + chunk)
            sel = idx[lo:hi]
            # S_a = B_a @ Z: row r of S_a is vals[a, r] * Z[cols[a, r], :]
            s = self.vals[sel][:, :, None] * z[self.cols[sel], :]
            y = np.matmul(z[None, :, :], s)
            yf = y.reshape(hi - lo, D * D)
            yr[lo:hi] = yf.real
            yi[lo:hi] = yf.imag
        return yr @ yr.T + yi @ yi.T

    def sandwich_cross(
        self, z: np.ndarray, idx: np.ndarray, mats: np.ndarray, chunk: int = 512
    ) -> np.ndarray:
        """Cross Gram <Z B_a Z, mats_b> for a in idx; mats (m, side, side)."""
        k = len(idx)
        m = mats.shape[0]
        mf = mats.reshape(m, -1)
        out = np.empty((k, m))
        for lo in range(0, k, chunk):
            hi = min(k, lo + chunk)
            sel = idx[lo:hi]
            s = self.vals[sel][:, :, None] * z[self.cols[sel], :]
            y = np.matmul(z[None, :, :], s).reshape(hi - lo, -1)
            out[lo:hi] = (y.conj() @ mf.T).real
        return out


@lru_cache(maxsize=None)
def product_basis(dims: tuple[int, ...]) -> ProductBasis:
    return ProductBasis(dims)
