"""Weighted least squares over the probability simplex.

Solves::

    min_x  sum_i w_i (c_i - (A x)_i)^2
    s.t.   x >= 0,  sum(x) = 1,  [a . x = b]

with a primal active-set method in the spirit of Lawson and Hanson's NNLS,
started from a feasible vertex so that every iterate stays feasible.  The
Hessian ``A^T W A`` is usually singular (more atoms than quotes), so
subproblems are solved in the null space of the active equality rows with a
minimum-norm least squares step.

All residuals in the returned certificate refer to the problem rescaled so
that ``max |sqrt(w) A|`` and ``max |sqrt(w) c|`` are at most one and every
equality row has unit right-hand side.  This makes ``kkt_tol`` independent of
price units and of a common rescaling of the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, InfeasibleConstraintError

_RCOND = 1e-12


@dataclass(frozen=True)
class KKTCertificate:
    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    objective: float
    kkt: KKTCertificate
    iterations: int
    multipliers: np.ndarray


class _Problem:
    def __init__(self, A, c, w, equality):
        A = np.asarray(A, dtype=float)
        c = np.asarray(c, dtype=float)
        if A.ndim != 2 or c.shape != (A.shape[0],):
            raise DomainError("A must be n x m and prices length n")
        if w is None:
            w = np.ones_like(c)
        w = np.asarray(w, dtype=float)
        if w.shape != c.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite, >= 0 and match the prices")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
            raise DomainError("design matrix and prices must be finite")
        self.A, self.c, self.w = A, c, w
        wmax = w.max() if w.size else 0.0
        sw = np.sqrt(w / wmax) if wmax > 0 else np.zeros_like(w)
        As = A * sw[:, None]
        cs = c * sw
        scale = max(np.abs(As).max(initial=0.0), np.abs(cs).max(initial=0.0))
        if scale > 0:
            As, cs = As / scale, cs / scale
        self.As, self.cs = As, cs

        m = A.shape[1]
        rows, rhs = [np.ones(m)], [1.0]
        self.has_forward = equality is not None
        if equality is not None:
            coeffs, target = equality
            coeffs = np.asarray(coeffs, dtype=float)
            if coeffs.shape != (m,) or not np.all(np.isfinite(coeffs)) or not math.isfinite(target):
                raise DomainError("equality coefficients must be a finite m-vector")
            if target == 0:
                raise DomainError("equality right-hand side must be nonzero")
            lo, hi = coeffs.min(), coeffs.max()
            slack = 1e-12 * abs(target)
            if not (lo - slack <= target <= hi + slack):
                raise InfeasibleConstraintError(
                    f"target {target:.10g} outside the attainable range [{lo:.10g}, {hi:.10g}]"
                )
            rows.append(coeffs / target)
            rhs.append(1.0)
        self.E = np.vstack(rows)
        self.b = np.array(rhs)

    @property
    def m(self) -> int:
        return self.A.shape[1]

    def resid(self, x):
        return self.As @ x - self.cs

    def value(self, x) -> float:
        r = self.resid(x)
        return 0.5 * float(r @ r)

    def gradient(self, x):
        return self.As.T @ self.resid(x)

    def multipliers(self, x, free):
        """Bound multipliers ``lam = g + E^T nu`` with ``nu`` fitted on the free set."""
        g = self.gradient(x)
        Ef = self.E[:, free]
        nu = np.linalg.lstsq(Ef.T, -g[free], rcond=None)[0]
        return g + self.E.T @ nu

    def certificate(self, x, free) -> tuple[KKTCertificate, np.ndarray]:
        lam = self.multipliers(x, free)
        mu = np.maximum(lam, 0.0)
        stationarity = float(np.max(np.abs(lam - mu)))
        feas = max(float(np.max(np.abs(self.E @ x - self.b))), float(max(0.0, -x.min())))
        comp = float(np.max(np.abs(x * mu)))
        return KKTCertificate(stationarity, feas, comp), lam

    def start(self) -> np.ndarray:
        """Best feasible vertex (simplex) or best feasible edge (with the equality)."""
        m = self.m
        colres = ((self.As - self.cs[:, None]) ** 2).sum(axis=0)
        if not self.has_forward:
            x = np.zeros(m)
            x[int(np.argmin(colres))] = 1.0
            return x
        t = self.E[1]
        best, best_x = math.inf, None
        exact = np.flatnonzero(np.abs(t - 1.0) <= 1e-14)
        for j in exact:
            if colres[j] < best:
                best, best_x = colres[j], np.eye(m)[j]
        below = np.flatnonzero(t < 1.0)
        above = np.flatnonzero(t > 1.0)
        for i in below:
            for k in above:
                x = np.zeros(m)
                x[i] = (t[k] - 1.0) / (t[k] - t[i])
                x[k] = 1.0 - x[i]
                v = self.value(x)
                if v < best:
                    best, best_x = v, x
        if best_x is None:
            # target sits on the boundary within the feasibility slack
            j = int(np.argmin(np.abs(t - 1.0)))
            best_x = np.eye(m)[j]
        return best_x

    def boundary_face(self):
        """Atoms allowed to carry weight when the equality target is an extreme coefficient."""
        if not self.has_forward:
            return None
        t = self.E[1]
        for side in (t.min(), t.max()):
            if abs(side - 1.0) <= 1e-12:
                return np.flatnonzero(np.abs(t - side) <= 1e-14)
        return None

    def warm(self, x0):
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.m,) or not np.all(np.isfinite(x0)) or x0.min() < 0 or not np.any(x0 > 0):
            return None
        if np.max(np.abs(self.E @ x0 - self.b)) > 1e-12:
            return None
        return x0.copy()

    def subproblem(self, x, free):
        """Minimizer of the objective on span(free) keeping ``E x = b``, nearest to ``x``."""
        Ef = self.E[:, free]
        _, s, vt = np.linalg.svd(Ef, full_matrices=True)
        rank = int(np.sum(s > 1e-13 * max(1.0, s.max(initial=0.0))))
        null = vt[rank:].T
        z = x.copy()
        if null.shape[1] == 0:
            return z
        AN = self.As[:, free] @ null
        y = np.linalg.lstsq(AN, -self.resid(x), rcond=_RCOND)[0]
        z[free] = x[free] + null @ y
        return z


def solve_weights_qp(
    A,
    prices,
    weights=None,
    equality: tuple | None = None,
    kkt_tol: float = 1e-8,
    max_iter: int | None = None,
    x0=None,
) -> QPResult:
    """Simplex-constrained weighted least squares with a KKT certificate.

    ``equality`` is an optional ``(coeffs, rhs)`` pair adding ``coeffs . x = rhs``.
    Raises :class:`InfeasibleConstraintError` when ``rhs`` lies outside the
    range of ``coeffs`` and :class:`ConvergenceError` when the certificate does
    not reach ``kkt_tol`` within ``max_iter`` active-set changes.

    ``x0`` is an optional warm start.  It is used only if it satisfies the
    constraints to within ``1e-12``; otherwise the solver starts from the best
    vertex (or edge).  From a feasible start the objective never increases.
    """
    if kkt_tol <= 0:
        raise DomainError("kkt_tol must be > 0")
    prob = _Problem(A, prices, weights, equality)
    face = prob.boundary_face()
    if face is not None:
        # the target is an extreme coefficient: only atoms attaining it may carry
        # weight and the equality then follows from sum(x) = 1
        sub = solve_weights_qp(
            prob.A[:, face],
            prob.c,
            prob.w,
            kkt_tol=kkt_tol,
            max_iter=max_iter,
            x0=None if x0 is None else np.asarray(x0, dtype=float)[face],
        )
        x = np.zeros(prob.m)
        x[face] = sub.x
        lam = np.zeros(prob.m)
        lam[face] = sub.multipliers
        return QPResult(x=x, objective=sub.objective, kkt=sub.kkt, iterations=sub.iterations, multipliers=lam)
    m = prob.m
    if max_iter is None:
        max_iter = 50 * (m + 5)
    add_tol = max(1e-14, 1e-3 * kkt_tol)

    x = prob.warm(x0) if x0 is not None else None
    if x is None:
        x = prob.start()
    free = [int(j) for j in np.flatnonzero(x > 0)]
    it = 0
    best = (math.inf, x)
    # atoms whose re-entry made no progress; cleared once the objective drops
    blocked: set[int] = set()
    just_added = None
    while True:
        # inner loop: move to the subspace minimizer, dropping blocking atoms
        before = prob.value(x)
        while True:
            it += 1
            if it > max_iter:
                raise ConvergenceError(
                    f"active set did not settle within {max_iter} iterations",
                    best_residual=best[0],
                    best_x=best[1],
                )
            z = prob.subproblem(x, free)
            zf = z[free]
            if np.all(zf > 0):
                x = z
                break
            xf = x[free]
            neg = zf <= 0
            gap = xf[neg] - zf[neg]
            steps = np.divide(xf[neg], gap, out=np.zeros_like(gap), where=gap > 0)
            alpha = float(np.clip(steps.min(), 0.0, 1.0))
            x = x + alpha * (z - x)
            drop_at = np.array(free)[neg][steps <= alpha]
            x[drop_at] = 0.0
            x[x < 0] = 0.0
            free = [j for j in free if x[j] > 0]
            if not free:
                # numerical breakdown; restart from the best vertex/edge
                x = prob.start()
                free = [int(j) for j in np.flatnonzero(x > 0)]

        if prob.value(x) < before * (1 - 1e-15):
            blocked.clear()
        elif just_added is not None:
            blocked.add(just_added)

        cert, lam = prob.certificate(x, free)
        if cert.residual < best[0]:
            best = (cert.residual, x.copy())
        zero = [j for j in range(m) if j not in free and j not in blocked]
        if not zero:
            break
        cand = min(zero, key=lambda j: lam[j])
        if lam[cand] >= -add_tol:
            break
        just_added = int(cand)
        free.append(just_added)

    x = np.where(x > 0, x, 0.0)
    if not prob.has_forward:
        x = x / math.fsum(x)
    cert, lam = prob.certificate(x, [j for j in range(m) if x[j] > 0])
    if cert.residual > kkt_tol:
        raise ConvergenceError(
            f"KKT residual {cert.residual:.3g} above tolerance {kkt_tol:.3g}",
            best_residual=cert.residual,
            best_x=x,
        )
    r = prob.c - prob.A @ x
    objective = float(np.sum(prob.w * r * r))
    return QPResult(x=x, objective=objective, kkt=cert, iterations=it, multipliers=lam)
