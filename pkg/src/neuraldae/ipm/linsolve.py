"""Symmetric indefinite LDL^T factorization with inertia.

Two back ends share one interface:

* below ``dense_threshold`` unknowns the matrix is densified and factored by
  LAPACK ``dsytrf`` (Bunch-Kaufman);
* above it a right-looking sparse elimination runs in numba.  The next pivot
  is the alive node of minimum current degree, accepted as a 1x1 pivot or
  promoted to a 2x2 pivot by the Bunch-Kaufman tests with a threshold
  ``alpha``.  Nodes whose degree is a sizeable fraction of the largest
  degree (network parameters and the rows and states coupled to them) are
  kept in a dense block from the start and updated in place; a candidate
  whose 2x2 partner lies in that block is deferred to it.  Once the
  remaining nodes are nearly fully coupled the trailing Schur complement is
  handed to ``dsytrf``.

The inertia is read off the block diagonal factor: a 2x2 block with negative
determinant contributes one positive and one negative eigenvalue.
"""

from __future__ import annotations

import numpy as np
import numba as nb
from scipy.linalg import lapack

__all__ = ["LdlFactor", "SingularMatrix", "sym_matvec"]


class SingularMatrix(RuntimeError):
    """Raised when solving with a factor that has zero pivots."""


@nb.njit(cache=True)
def sym_matvec(n, rows, cols, vals, x):
    """``y = A x`` for symmetric ``A`` given by one triangle in COO form."""
    y = np.zeros(n)
    for k in range(rows.shape[0]):
        i = rows[k]
        j = cols[k]
        v = vals[k]
        y[i] += v * x[j]
        if i != j:
            y[j] += v * x[i]
    return y


@nb.njit(cache=True)
def _relocate(start, capv, pidx, pval, top, i, w, need):
    """Move the first ``w`` entries of row ``i`` to the pool end; -1 on overflow."""
    newcap = 2 * need + 8
    if top + newcap > pidx.shape[0]:
        return -1
    s = start[i]
    for t in range(w):
        pidx[top + t] = pidx[s + t]
        pval[top + t] = pval[s + t]
    start[i] = top
    capv[i] = newcap
    return top + newcap


@nb.njit(cache=True)
def _sparse_phase(n, rows, cols, vals, alpha, zero_tol, dense_frac, cap, dense_deg, tail_cap):
    # rows of the symmetric matrix live in one pool, both triangles stored
    diag = np.zeros(n)
    cnt = np.zeros(n, dtype=np.int64)
    for k in range(rows.shape[0]):
        if rows[k] != cols[k]:
            cnt[rows[k]] += 1
            cnt[cols[k]] += 1
    start = np.zeros(n, dtype=np.int64)
    length = np.zeros(n, dtype=np.int64)
    capv = np.zeros(n, dtype=np.int64)
    top = 0
    for i in range(n):
        start[i] = top
        capv[i] = 2 * cnt[i] + 8
        top += capv[i]
    pool = max(cap, 2 * top)
    pidx = np.empty(pool, dtype=np.int64)
    pval = np.empty(pool)
    for k in range(rows.shape[0]):
        i = rows[k]
        j = cols[k]
        if i == j:
            diag[i] += vals[k]
            continue
        pidx[start[i] + length[i]] = j
        pval[start[i] + length[i]] = vals[k]
        length[i] += 1
        pidx[start[j] + length[j]] = i
        pval[start[j] + length[j]] = vals[k]
        length[j] += 1

    markN = np.full(n, -1, dtype=np.int64)
    posN = np.zeros(n, dtype=np.int64)
    markR = np.full(n, -1, dtype=np.int64)
    stampN = 0
    stampR = 0

    # merge duplicate entries
    deg = np.zeros(n, dtype=np.int64)
    for i in range(n):
        stampR += 1
        s = start[i]
        w = 0
        for t in range(length[i]):
            j = pidx[s + t]
            if markR[j] == stampR:
                pval[s + posN[j]] += pval[s + t]
            else:
                markR[j] = stampR
                posN[j] = w
                pidx[s + w] = j
                pval[s + w] = pval[s + t]
                w += 1
        length[i] = w
        deg[i] = w

    # heavily coupled nodes go to a dense block that is factored last;
    # the sparse rows keep their couplings to it
    tpos = np.full(n, -1, dtype=np.int64)
    nT = 0
    for i in range(n):
        if deg[i] >= dense_deg:
            nT += 1
    overflow = nT > tail_cap
    T = np.zeros((tail_cap, tail_cap)) if not overflow else np.zeros((1, 1))
    tidx = np.empty(tail_cap, dtype=np.int64)
    nT = 0
    if not overflow:
        for i in range(n):
            if deg[i] >= dense_deg:
                tpos[i] = nT
                tidx[nT] = i
                nT += 1
        for a_ in range(nT):
            i = tidx[a_]
            T[a_, a_] = diag[i]
            s = start[i]
            for t in range(length[i]):
                j = pidx[s + t]
                if tpos[j] >= 0:
                    T[a_, tpos[j]] = pval[s + t]

    alive = np.ones(n, dtype=np.bool_)
    n_alive = n
    step_p = np.empty(n, dtype=np.int64)
    step_r = np.empty(n, dtype=np.int64)
    step_ptr = np.zeros(n + 1, dtype=np.int64)
    d11 = np.zeros(n)
    d21 = np.zeros(n)
    d22 = np.zeros(n)
    Lidx = np.empty(cap, dtype=np.int64)
    L0 = np.empty(cap)
    L1 = np.empty(cap)
    nb_buf = np.empty(n, dtype=np.int64)
    tb_buf = np.empty(n, dtype=np.int64)
    ap = np.empty(n)
    ar = np.empty(n)
    l0 = np.empty(n)
    l1 = np.empty(n)

    pos = 0
    neg = 0
    zero = 0
    ns = 0
    nnz = 0

    while n_alive > nT and not overflow:
        # minimum degree candidate among the sparse nodes
        p = -1
        best = n + 1
        for i in range(n):
            if alive[i] and tpos[i] < 0 and deg[i] < best:
                best = deg[i]
                p = i
        if n_alive > 1 and best >= dense_frac * (n_alive - 1) and n_alive > 8:
            break

        # Bunch-Kaufman tests around p
        colmax = 0.0
        r = -1
        a21 = 0.0
        s = start[p]
        for t in range(length[p]):
            a = abs(pval[s + t])
            if a > colmax:
                colmax = a
                r = pidx[s + t]
                a21 = pval[s + t]
        app = abs(diag[p])
        two = False
        piv = p
        if colmax > 0.0 and app < alpha * colmax and tpos[r] >= 0:
            # the partner lives in the dense block: pair with the strongest
            # sparse neighbour when its coupling is not much weaker
            rs = -1
            cs = 0.0
            s = start[p]
            for t in range(length[p]):
                j = pidx[s + t]
                if tpos[j] < 0 and abs(pval[s + t]) > cs:
                    cs = abs(pval[s + t])
                    rs = j
            if rs < 0 or cs < alpha * colmax:
                # otherwise p joins the dense block
                if nT == tail_cap:
                    overflow = True
                    break
                tpos[p] = nT
                tidx[nT] = p
                T[nT, nT] = diag[p]
                s = start[p]
                for t in range(length[p]):
                    j = pidx[s + t]
                    if tpos[j] >= 0 and j != p:
                        T[nT, tpos[j]] = pval[s + t]
                        T[tpos[j], nT] = pval[s + t]
                nT += 1
                continue
            r = rs
            s = start[p]
            for t in range(length[p]):
                if pidx[s + t] == r:
                    a21 = pval[s + t]
        if colmax > 0.0 and app < alpha * colmax:
            rowmax = 0.0
            s = start[r]
            for t in range(length[r]):
                a = abs(pval[s + t])
                if a > rowmax:
                    rowmax = a
            if app * rowmax >= alpha * colmax * colmax:
                piv = p
            elif abs(diag[r]) >= alpha * rowmax:
                piv = r
            else:
                two = True

        # neighbours and their couplings to the pivot block
        stampN += 1
        k = 0
        if not two:
            q = piv
            s = start[q]
            for t in range(length[q]):
                j = pidx[s + t]
                markN[j] = stampN
                posN[j] = k
                nb_buf[k] = j
                ap[k] = pval[s + t]
                ar[k] = 0.0
                k += 1
            d = diag[q]
            if abs(d) <= zero_tol:
                zero += 1
                d = 0.0
            elif d > 0:
                pos += 1
            else:
                neg += 1
            for a_ in range(k):
                l0[a_] = ap[a_] / d if d != 0.0 else 0.0
                l1[a_] = 0.0
            alive[q] = False
            n_alive -= 1
            step_p[ns] = q
            step_r[ns] = -1
            d11[ns] = d
        else:
            s = start[p]
            for t in range(length[p]):
                j = pidx[s + t]
                if j != r:
                    markN[j] = stampN
                    posN[j] = k
                    nb_buf[k] = j
                    ap[k] = pval[s + t]
                    ar[k] = 0.0
                    k += 1
            s = start[r]
            for t in range(length[r]):
                j = pidx[s + t]
                if j == p:
                    continue
                if markN[j] == stampN:
                    ar[posN[j]] = pval[s + t]
                else:
                    markN[j] = stampN
                    posN[j] = k
                    nb_buf[k] = j
                    ap[k] = 0.0
                    ar[k] = pval[s + t]
                    k += 1
            a11 = diag[p]
            a22 = diag[r]
            det = a11 * a22 - a21 * a21
            if det < 0:
                pos += 1
                neg += 1
            elif a11 + a22 > 0:
                pos += 2
            else:
                neg += 2
            i11 = a22 / det
            i21 = -a21 / det
            i22 = a11 / det
            for a_ in range(k):
                l0[a_] = ap[a_] * i11 + ar[a_] * i21
                l1[a_] = ap[a_] * i21 + ar[a_] * i22
            alive[p] = False
            alive[r] = False
            n_alive -= 2
            step_p[ns] = p
            step_r[ns] = r
            d11[ns] = a11
            d21[ns] = a21
            d22[ns] = a22
        if nnz + k > cap:
            overflow = True
            break

        # Schur complement update; zero multipliers still add structure
        kt = 0
        for a_ in range(k):
            if tpos[nb_buf[a_]] >= 0:
                tb_buf[kt] = a_
                kt += 1
        for c_ in range(kt):
            a_ = tb_buf[c_]
            ti = tpos[nb_buf[a_]]
            li0 = l0[a_]
            li1 = l1[a_]
            for e_ in range(kt):
                b_ = tb_buf[e_]
                T[ti, tpos[nb_buf[b_]]] -= li0 * ap[b_] + li1 * ar[b_]
        for a_ in range(k):
            i = nb_buf[a_]
            if tpos[i] >= 0:
                continue
            li0 = l0[a_]
            li1 = l1[a_]
            diag[i] -= li0 * ap[a_] + li1 * ar[a_]
            stampR += 1
            s = start[i]
            w = 0
            for t in range(length[i]):
                j = pidx[s + t]
                if not alive[j]:
                    continue
                v = pval[s + t]
                if markN[j] == stampN:
                    b_ = posN[j]
                    v -= li0 * ap[b_] + li1 * ar[b_]
                    markR[j] = stampR
                pidx[s + w] = j
                pval[s + w] = v
                w += 1
            nfill = 0
            for b_ in range(k):
                j = nb_buf[b_]
                if j != i and markR[j] != stampR:
                    nfill += 1
            if w + nfill > capv[i]:
                top = _relocate(start, capv, pidx, pval, top, i, w, w + nfill)
                if top < 0:
                    overflow = True
                    break
                s = start[i]
            for b_ in range(k):
                j = nb_buf[b_]
                if j != i and markR[j] != stampR:
                    pidx[s + w] = j
                    pval[s + w] = -(li0 * ap[b_] + li1 * ar[b_])
                    w += 1
            length[i] = w
            deg[i] = w
        if overflow:
            break
        for a_ in range(k):
            Lidx[nnz + a_] = nb_buf[a_]
            L0[nnz + a_] = l0[a_]
            L1[nnz + a_] = l1[a_]
        nnz += k
        ns += 1
        step_ptr[ns] = nnz

    # trailing matrix: the dense block followed by the remaining sparse nodes
    rem = np.empty(n_alive, dtype=np.int64)
    S = np.zeros((n_alive, n_alive)) if not overflow else np.zeros((0, 0))
    if not overflow:
        for a_ in range(nT):
            rem[a_] = tidx[a_]
            posN[tidx[a_]] = a_
        k = nT
        for i in range(n):
            if alive[i] and tpos[i] < 0:
                posN[i] = k
                rem[k] = i
                k += 1
        S[:nT, :nT] = T[:nT, :nT]
        for a_ in range(nT, n_alive):
            i = rem[a_]
            S[a_, a_] = diag[i]
            s = start[i]
            for t in range(length[i]):
                b_ = posN[pidx[s + t]]
                S[a_, b_] = pval[s + t]
                S[b_, a_] = pval[s + t]
    return (overflow, ns, step_p[:ns].copy(), step_r[:ns].copy(), step_ptr[: ns + 1].copy(),
            d11[:ns].copy(), d21[:ns].copy(), d22[:ns].copy(),
            Lidx[:nnz].copy(), L0[:nnz].copy(), L1[:nnz].copy(), rem, S, pos, neg, zero)


@nb.njit(cache=True)
def _forward(b, step_p, step_r, step_ptr, Lidx, L0, L1):
    for s in range(step_p.shape[0]):
        p = step_p[s]
        r = step_r[s]
        bp = b[p]
        if r < 0:
            for t in range(step_ptr[s], step_ptr[s + 1]):
                b[Lidx[t]] -= L0[t] * bp
        else:
            br = b[r]
            for t in range(step_ptr[s], step_ptr[s + 1]):
                b[Lidx[t]] -= L0[t] * bp + L1[t] * br


@nb.njit(cache=True)
def _diag(b, step_p, step_r, d11, d21, d22):
    for s in range(step_p.shape[0]):
        p = step_p[s]
        r = step_r[s]
        if r < 0:
            b[p] = b[p] / d11[s]
        else:
            det = d11[s] * d22[s] - d21[s] * d21[s]
            x0 = b[p]
            x1 = b[r]
            b[p] = (d22[s] * x0 - d21[s] * x1) / det
            b[r] = (-d21[s] * x0 + d11[s] * x1) / det


@nb.njit(cache=True)
def _backward(b, step_p, step_r, step_ptr, Lidx, L0, L1):
    for s in range(step_p.shape[0] - 1, -1, -1):
        p = step_p[s]
        r = step_r[s]
        acc0 = 0.0
        acc1 = 0.0
        for t in range(step_ptr[s], step_ptr[s + 1]):
            x = b[Lidx[t]]
            acc0 += L0[t] * x
            acc1 += L1[t] * x
        b[p] -= acc0
        if r >= 0:
            b[r] -= acc1


def _dense_inertia(ldu, ipiv, zero_tol):
    """Inertia of the block diagonal factor returned by ``dsytrf`` (lower)."""
    n = ldu.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < n:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if abs(d) <= zero_tol:
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            det = a * c - b * b
            if abs(det) <= zero_tol * max(abs(b), zero_tol):
                zero += 1
                if a + c > 0:
                    pos += 1
                else:
                    neg += 1
            elif det < 0:
                pos += 1
                neg += 1
            elif a + c > 0:
                pos += 2
            else:
                neg += 2
            k += 2
    return pos, neg, zero


class LdlFactor:
    """Factor a symmetric matrix given by one triangle in COO form.

    Parameters
    ----------
    n : int
        Matrix dimension.
    rows, cols, vals : array_like
        Entries of either triangle; duplicates are summed.
    alpha : float
        Pivot acceptance threshold of the sparse Bunch-Kaufman tests.
    dense_threshold : int
        Dimensions below this go straight to LAPACK.
    dense_frac : float
        Relative degree at which the sparse phase hands over to LAPACK.
    zero_tol : float, optional
        Pivots of smaller magnitude count as zero eigenvalues; defaults to
        ``1e-13 * max(1, max|A|)``.
    dense_min_degree : int
        Nodes with at least this degree, and at least a quarter of the
        largest degree, start in the dense block.

    Attributes
    ----------
    inertia : tuple of int
        Numbers of positive, negative and zero eigenvalues.
    """

    def __init__(
        self, n, rows, cols, vals, alpha=0.1, dense_threshold=500, dense_frac=0.1, zero_tol=None, dense_min_degree=64
    ):
        self.n = int(n)
        self.dense_min_degree = dense_min_degree
        self.rows = np.ascontiguousarray(rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(vals, dtype=float)
        if zero_tol is None:
            scale = float(np.max(np.abs(self.vals))) if self.vals.size else 1.0
            zero_tol = 1e-13 * max(scale, 1.0)
        self.zero_tol = float(zero_tol)
        if self.n < dense_threshold:
            self._factor_dense()
        else:
            self._factor_sparse(alpha, dense_frac)

    def _factor_dense(self):
        n = self.n
        A = np.zeros((n, n))
        np.add.at(A, (self.rows, self.cols), self.vals)
        off = self.rows != self.cols
        np.add.at(A, (self.cols[off], self.rows[off]), self.vals[off])
        self._steps = None
        self._rem = np.arange(n)
        self._factor_tail(A)
        self.inertia = self._tail_inertia

    def _factor_sparse(self, alpha, dense_frac):
        off = self.rows != self.cols
        deg = np.bincount(np.concatenate([self.rows[off], self.cols[off]]), minlength=self.n)
        dense_deg = max(self.dense_min_degree, 0.25 * float(deg.max(initial=0)))
        n_dense = int(np.count_nonzero(deg >= dense_deg))
        tail_cap = min(self.n, n_dense + max(64, self.n // 10))
        cap = 16 * (self.rows.size + self.n)
        while True:
            out = _sparse_phase(
                self.n, self.rows, self.cols, self.vals, alpha, self.zero_tol, dense_frac, cap, dense_deg, tail_cap
            )
            if not out[0]:
                break
            cap *= 4
            tail_cap = min(self.n, 2 * tail_cap + 64)
        (_, ns, sp_, sr, sptr, d11, d21, d22, Lidx, L0, L1, rem, S, pos, neg, zero) = out
        self._steps = (sp_, sr, sptr, d11, d21, d22, Lidx, L0, L1)
        self._rem = rem
        self._factor_tail(S)
        tp, tn, tz = self._tail_inertia
        self.inertia = (pos + tp, neg + tn, zero + tz)
        self.n_sparse_pivots = ns

    def _factor_tail(self, S):
        self.n_tail = S.shape[0]
        if self.n_tail == 0:
            self._ldu = None
            self._tail_inertia = (0, 0, 0)
            return
        ldu, ipiv, info = lapack.dsytrf(np.asfortranarray(S), lower=1)
        if info < 0:  # pragma: no cover
            raise RuntimeError(f"dsytrf failed with info={info}")
        self._ldu = ldu
        self._ipiv = ipiv
        self._tail_inertia = _dense_inertia(ldu, ipiv, self.zero_tol)

    @property
    def singular(self):
        return self.inertia[2] > 0

    def solve(self, b, refine=2, rtol=1e-12):
        """Solve ``A x = b`` with optional iterative refinement."""
        if self.singular:
            raise SingularMatrix("matrix has zero pivots")
        b = np.asarray(b, dtype=float)
        x = self._solve_once(b)
        for _ in range(refine):
            r = b - sym_matvec(self.n, self.rows, self.cols, self.vals, x)
            if np.max(np.abs(r)) <= rtol * max(1.0, np.max(np.abs(b))):
                break
            x += self._solve_once(r)
        return x

    def _solve_once(self, b):
        x = np.array(b, dtype=float, copy=True)
        if self._steps is not None:
            sp_, sr, sptr, d11, d21, d22, Lidx, L0, L1 = self._steps
            _forward(x, sp_, sr, sptr, Lidx, L0, L1)
            _diag(x, sp_, sr, d11, d21, d22)
        if self.n_tail:
            xt, info = lapack.dsytrs(self._ldu, self._ipiv, x[self._rem], lower=1)
            x[self._rem] = xt
        if self._steps is not None:
            _backward(x, sp_, sr, sptr, Lidx, L0, L1)
        return x
