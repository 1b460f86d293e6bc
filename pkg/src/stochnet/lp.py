"""Bounded-variable linear programs and a two-phase revised simplex solver.

Every optimisation path in the package compiles to a :class:`LinearProgram`
and goes through :func:`solve_lp`.  The solver keeps each variable's box
``lower <= x <= upper`` implicit (nonbasic variables sit on a bound, bound
flips are ordinary iterations) and represents every row ``a.x (rel) b`` as
``a.x + s = b`` with a bounded slack ``s``.

Small bases are handled with an explicit dense inverse updated in product
form.  Large bases (deterministic equivalents) use a sparse LU factorisation
from SciPy plus an eta file, refactorised periodically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
GAP_TOL = 1e-7

DENSE_BASIS_LIMIT = 300
REFACTOR_EVERY = 64
SPARSE_REFACTOR_EVERY = 24
STALL_THRESHOLD = 40


class LPError(ValueError):
    """Malformed linear program."""


class NumericalFailure(RuntimeError):
    """The simplex could not certify a status within its iteration budget."""


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``max/min c.x + c0`` s.t. ``A x (rel) b``, ``lower <= x <= upper``.

    ``A`` is kept as a CSR matrix.  Bounds may be infinite (a variable with
    both bounds infinite is free) but ``lower <= upper`` must hold.
    """

    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A: sp.csr_matrix
    senses: tuple[str, ...]
    rhs: np.ndarray
    maximize: bool = True
    objective_constant: float = 0.0

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        lo = np.asarray(self.lower, dtype=float).ravel()
        up = np.asarray(self.upper, dtype=float).ravel()
        A = self.A
        if not (isinstance(A, sp.csr_matrix) and A.dtype == np.float64):
            A = sp.csr_matrix(A, dtype=float)
        if A.shape[1] != n and not (A.shape[0] == 0 and n >= 0):
            raise LPError(f"constraint matrix has {A.shape[1]} columns, expected {n}")
        if A.shape[0] == 0:
            A = sp.csr_matrix((0, n))
        m = A.shape[0]
        b = np.asarray(self.rhs, dtype=float).ravel()
        senses = tuple(self.senses)
        if lo.size != n or up.size != n:
            raise LPError("bound vectors must match the objective length")
        if b.size != m or len(senses) != m:
            raise LPError("rhs and senses must have one entry per constraint")
        bad = [s for s in senses if s not in _SENSES]
        if bad:
            raise LPError(f"unknown constraint relation {bad[0]!r}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)) or np.any(lo > up):
            raise LPError("every variable needs lower <= upper")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise LPError("objective, rhs and coefficients must be finite")
        for name, arr in (("objective", c), ("lower", lo), ("upper", up), ("rhs", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "objective_constant", float(self.objective_constant))

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]


class LPBuilder:
    """Incremental construction of a :class:`LinearProgram`.

    >>> b = LPBuilder(maximize=True)
    >>> x = b.add_variable(upper=5.0, cost=1.0)
    >>> lp = b.build()
    """

    def __init__(self, maximize: bool = True):
        self.maximize = maximize
        self._cost: list[float] = []
        self._lo: list[float] = []
        self._up: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self.constant = 0.0

    def add_variable(self, lower: float = 0.0, upper: float = math.inf, cost: float = 0.0) -> int:
        self._cost.append(cost)
        self._lo.append(lower)
        self._up.append(upper)
        return len(self._cost) - 1

    def add_constraint(
        self, coeffs: Mapping[int, float] | Iterable[tuple[int, float]], sense: str, rhs: float
    ) -> int:
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        row = len(self._rhs)
        for j, v in items:
            if not 0 <= j < len(self._cost):
                raise LPError(f"constraint references unknown variable {j}")
            self._rows.append(row)
            self._cols.append(j)
            self._vals.append(v)
        self._senses.append(sense)
        self._rhs.append(rhs)
        return row

    def build(self) -> LinearProgram:
        n, m = len(self._cost), len(self._rhs)
        A = sp.coo_matrix((self._vals, (self._rows, self._cols)), shape=(m, n)).tocsr()
        return LinearProgram(
            objective=np.array(self._cost, dtype=float),
            lower=np.array(self._lo, dtype=float),
            upper=np.array(self._up, dtype=float),
            A=A,
            senses=tuple(self._senses),
            rhs=np.array(self._rhs, dtype=float),
            maximize=self.maximize,
            objective_constant=self.constant,
        )


@dataclass(frozen=True, eq=False)
class SolveReport:
    status: str
    objective_value: float | None
    primal: np.ndarray
    duals: np.ndarray | None
    iterations: int
    dual_objective: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class Residuals:
    max_bound_violation: float
    max_constraint_violation: float
    objective_value: float


def check_solution(lp: LinearProgram, primal: Sequence[float]) -> Residuals:
    """Audit a claimed point against ``lp`` without touching the solver."""
    x = np.asarray(primal, dtype=float).ravel()
    if x.size != lp.n_vars:
        raise LPError(f"point has {x.size} entries, LP has {lp.n_vars} variables")
    with np.errstate(invalid="ignore"):
        below = np.where(np.isfinite(lp.lower), lp.lower - x, 0.0)
        above = np.where(np.isfinite(lp.upper), x - lp.upper, 0.0)
    bound_v = float(max(0.0, below.max(initial=0.0), above.max(initial=0.0)))
    r = lp.A @ x - lp.rhs
    senses = np.array(lp.senses, dtype=object)
    viol = np.zeros_like(r)
    viol[senses == LE] = np.maximum(r[senses == LE], 0.0)
    viol[senses == GE] = np.maximum(-r[senses == GE], 0.0)
    viol[senses == EQ] = np.abs(r[senses == EQ])
    return Residuals(
        max_bound_violation=bound_v,
        max_constraint_violation=float(viol.max(initial=0.0)),
        objective_value=float(lp.objective @ x + lp.objective_constant),
    )


# ---------------------------------------------------------------------------
# basis factorisations


class _DenseFactor:
    def __init__(self, B: np.ndarray):
        try:
            self.inv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis") from exc
        self.n_updates = 0

    def ftran(self, a: np.ndarray) -> np.ndarray:
        return self.inv @ a

    def btran(self, c: np.ndarray) -> np.ndarray:
        return c @ self.inv

    def update(self, r: int, w: np.ndarray) -> None:
        row = self.inv[r] / w[r]
        self.inv -= np.outer(w, row)
        self.inv[r] = row
        self.n_updates += 1


class _SparseFactor:
    def __init__(self, B: sp.csc_matrix):
        try:
            self.lu = splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalFailure(f"basis factorisation failed: {exc}") from exc
        self.etas: list[tuple[int, np.ndarray]] = []

    @property
    def n_updates(self) -> int:
        return len(self.etas)

    def ftran(self, a: np.ndarray) -> np.ndarray:
        v = self.lu.solve(a)
        for r, w in self.etas:
            vr = v[r] / w[r]
            v -= w * vr
            v[r] = vr
        return v

    def btran(self, c: np.ndarray) -> np.ndarray:
        v = np.array(c, dtype=float)
        for r, w in reversed(self.etas):
            v[r] = (v[r] - (w @ v - w[r] * v[r])) / w[r]
        return self.lu.solve(v, trans="T")

    def update(self, r: int, w: np.ndarray) -> None:
        self.etas.append((r, w.copy()))


# ---------------------------------------------------------------------------
# the simplex


class _RevisedSimplex:
    def __init__(self, lp: LinearProgram, max_iter: int | None):
        self.lp = lp
        n, m = lp.n_vars, lp.n_constraints
        self.n, self.m = n, m
        self.max_iter = max_iter if max_iter is not None else 50 * (n + m)
        self.iterations = 0
        b = lp.rhs

        lo = np.concatenate([lp.lower, np.zeros(m)])
        up = np.concatenate([lp.upper, np.zeros(m)])
        senses = lp.senses
        for i, s in enumerate(senses):
            if s == LE:
                up[n + i] = math.inf
            elif s == GE:
                lo[n + i] = -math.inf

        # nonbasic structurals start at their finite bound nearest zero
        x = np.zeros(n + m)
        xs = np.where(np.isfinite(lp.lower), lp.lower, np.where(np.isfinite(lp.upper), lp.upper, 0.0))
        x[:n] = xs
        resid = b - lp.A @ xs

        basis = np.empty(m, dtype=np.int64)
        art_rows, art_signs = [], []
        for i in range(m):
            r = resid[i]
            if lo[n + i] <= r <= up[n + i]:
                basis[i] = n + i
                x[n + i] = r
            else:
                basis[i] = -1
                art_rows.append(i)
                art_signs.append(1.0 if r >= 0 else -1.0)
        na = len(art_rows)
        for a, i in enumerate(art_rows):
            basis[i] = n + m + a
        self.n_art = na
        self.total = n + m + na
        self.dense = m <= DENSE_BASIS_LIMIT
        if self.dense:
            Ad = np.zeros((m, self.total))
            Ad[:, :n] = lp.A.toarray()
            Ad[np.arange(m), n + np.arange(m)] = 1.0
            Ad[art_rows, n + m + np.arange(na)] = art_signs
            self._Ad = Ad
        else:
            art = sp.csc_matrix(
                (np.array(art_signs, dtype=float), (np.array(art_rows, dtype=np.int64), np.arange(na))),
                shape=(m, na),
            )
            self.A = sp.hstack([lp.A.tocsc(), sp.identity(m, format="csc"), art], format="csc")
            self._AT = self.A.T.tocsr()
            self._indptr = self.A.indptr
            self._indices = self.A.indices
            self._data = self.A.data
        self.lo = np.concatenate([lo, np.zeros(na)])
        self.up = np.concatenate([up, np.full(na, math.inf)])
        self.x = np.concatenate([x, np.abs(resid[art_rows]) if na else np.zeros(0)])
        self.basis = basis
        self.is_basic = np.zeros(self.total, dtype=bool)
        self.is_basic[basis] = True
        self.b = b

        self.factor = None
        self._refactor()

    # -- linear algebra helpers -------------------------------------------
    def _column(self, j: int) -> np.ndarray:
        if self.dense:
            return self._Ad[:, j].copy()
        col = np.zeros(self.m)
        s, e = self._indptr[j], self._indptr[j + 1]
        col[self._indices[s:e]] = self._data[s:e]
        return col

    def _refactor(self) -> None:
        if self.dense:
            self.factor = _DenseFactor(self._Ad[:, self.basis])
        else:
            self.factor = _SparseFactor(self.A[:, self.basis].tocsc())
        xn = np.where(self.is_basic, 0.0, self.x)
        if self.dense:
            r = self.b - self._Ad @ xn
        else:
            r = self.b - self.A @ xn
        self.x[self.basis] = self.factor.ftran(r)

    def _price(self, y: np.ndarray) -> np.ndarray:
        if self.dense:
            return y @ self._Ad
        return self._AT @ y

    # -- main loop ---------------------------------------------------------
    def _iterate(self, cost: np.ndarray) -> str:
        degenerate_run = 0
        bland = False
        confirmed = False
        while True:
            y = self.factor.btran(cost[self.basis])
            d = cost - self._price(y)
            nb = ~self.is_basic
            can_inc = nb & (self.x < self.up)
            can_dec = nb & (self.x > self.lo)
            score = np.where(can_inc & (d < -OPT_TOL), -d, 0.0)
            score = np.maximum(score, np.where(can_dec & (d > OPT_TOL), d, 0.0))
            if not score.any():
                if confirmed or self.factor.n_updates == 0:
                    return OPTIMAL
                self._refactor()
                confirmed = True
                continue
            confirmed = False
            if self.iterations >= self.max_iter:
                raise NumericalFailure(
                    f"no status certified within {self.max_iter} iterations"
                )
            self.iterations += 1

            j = int(np.flatnonzero(score)[0]) if bland else int(np.argmax(score))
            direction = 1.0 if d[j] < 0 else -1.0
            w = self.factor.ftran(self._column(j))
            g = direction * w

            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            upb = self.up[self.basis]
            ratio = np.full(self.m, math.inf)
            dec = g > PIVOT_TOL
            inc = g < -PIVOT_TOL
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio[dec] = (xb[dec] - lob[dec]) / g[dec]
                ratio[inc] = (upb[inc] - xb[inc]) / -g[inc]
            ratio = np.where(np.isnan(ratio), math.inf, np.maximum(ratio, 0.0))
            t_flip = self.up[j] - self.lo[j]
            t_min = ratio.min(initial=math.inf)

            if t_flip <= t_min:
                if math.isinf(t_flip):
                    return UNBOUNDED
                t = t_flip
                self.x[j] = self.up[j] if direction > 0 else self.lo[j]
                self.x[self.basis] = xb - t * g
                leave = -1
            else:
                ties = np.flatnonzero(ratio <= t_min + 1e-12)
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(g[ties]))])
                t = ratio[r]
                self.x[j] += direction * t
                self.x[self.basis] = xb - t * g
                leaving = int(self.basis[r])
                self.x[leaving] = self.lo[leaving] if g[r] > 0 else self.up[leaving]
                self.is_basic[leaving] = False
                self.is_basic[j] = True
                self.basis[r] = j
                leave = r

            if t * abs(d[j]) <= 1e-12:
                degenerate_run += 1
                if degenerate_run >= STALL_THRESHOLD:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

            if leave >= 0:
                if self.factor.n_updates >= (REFACTOR_EVERY if self.dense else SPARSE_REFACTOR_EVERY):
                    self._refactor()
                else:
                    self.factor.update(leave, w)

    def run(self) -> SolveReport:
        lp, n, m = self.lp, self.n, self.m
        if self.n_art:
            cost1 = np.zeros(self.total)
            cost1[n + m:] = 1.0
            status = self._iterate(cost1)
            if status != OPTIMAL:
                raise NumericalFailure("phase one reported an unbounded ray")
            self._refactor()
            infeas = float(self.x[n + m:].sum())
            if infeas > FEAS_TOL * (1.0 + float(np.abs(self.b).max(initial=0.0))):
                return SolveReport(INFEASIBLE, None, self.x[:n].copy(), None, self.iterations)
            self.up[n + m:] = 0.0
            nb_art = ~self.is_basic[n + m:]
            self.x[n + m:][nb_art] = 0.0

        sign = -1.0 if lp.maximize else 1.0
        cost2 = np.zeros(self.total)
        cost2[:n] = sign * lp.objective
        status = self._iterate(cost2)
        if status == UNBOUNDED:
            return SolveReport(UNBOUNDED, None, self.x[:n].copy(), None, self.iterations)

        self._refactor()
        x = self.x[:n].copy()
        # clamp round-off on basic variables sitting at a bound
        x = np.minimum(np.maximum(x, lp.lower), lp.upper)
        y = self.factor.btran(cost2[self.basis])
        duals = sign * y
        obj = float(lp.objective @ x + lp.objective_constant)
        reduced = lp.objective - lp.A.T @ duals
        dual_obj = float(duals @ lp.rhs + reduced @ x + lp.objective_constant)
        return SolveReport(OPTIMAL, obj, x, duals, self.iterations, dual_obj)


def solve_lp(lp: LinearProgram, max_iter: int | None = None) -> SolveReport:
    """Solve ``lp`` with the bounded-variable two-phase revised simplex.

    Raises :class:`NumericalFailure` when the iteration budget (default
    ``50 * (n_vars + n_constraints)``) runs out or a basis turns singular.
    """
    return _RevisedSimplex(lp, max_iter).run()


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def write_lp_format(lp: LinearProgram, path) -> None:
    """Dump ``lp`` in CPLEX LP text format for cross-checking elsewhere.

    Variables are named ``x0..x{n-1}`` and rows ``c0..c{m-1}``.  The
    objective constant goes into a comment line since not every reader
    accepts constants in the objective.
    """

    def terms(idx, vals) -> str:
        parts = []
        for j, v in zip(idx, vals):
            parts.append(f"{'-' if v < 0 else '+'} {_fmt(abs(v))} x{j}")
        return " ".join(parts) if parts else "0 x0"

    lines = [f"\\ objective constant: {_fmt(lp.objective_constant)}"]
    lines.append("Maximize" if lp.maximize else "Minimize")
    nz = np.flatnonzero(lp.objective)
    lines.append(" obj: " + terms(nz, lp.objective[nz]))
    lines.append("Subject To")
    A = lp.A
    for i in range(lp.n_constraints):
        s, e = A.indptr[i], A.indptr[i + 1]
        lines.append(f" c{i}: {terms(A.indices[s:e], A.data[s:e])} {lp.senses[i]} {_fmt(lp.rhs[i])}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, up = lp.lower[j], lp.upper[j]
        if math.isinf(lo) and math.isinf(up):
            lines.append(f" x{j} free")
        else:
            lines.append(f" {_fmt(lo)} <= x{j} <= {_fmt(up)}")
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
