"""Special-function kernels: the Buchstab and Dickman delay-ODE solutions,
the logarithmic integral, and a lower-incomplete-gamma ratio, plus the
quadrature and root-finding helpers they need.

Both delay ODEs are solved by the method of steps.  Each unit interval
carries a Chebyshev interpolant; the Dickman function is advanced through
the all-positive integral form u*rho(u) = int_{u-1}^{u} rho, which keeps
full relative precision even when rho underflows toward 1e-60.  Error
bounds are empirical (node doubling), not certified enclosures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.chebyshev import Chebyshev

EULER_GAMMA = 0.5772156649015329
OMEGA_LIMIT = math.exp(-EULER_GAMMA)  # common limit of omega(u) as u -> inf

TABLE_FORMAT = "roughcount-table-v1"

_GL64_NODES, _GL64_WEIGHTS = np.polynomial.legendre.leggauss(64)


# ----------------------------------------------------------------------
# quadrature kernels
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the adaptive quadrature kernels."""

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_depth: int = 48

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol >= 0 and self.max_depth >= 1):
            raise ValueError("invalid quadrature spec")


DEFAULT_QUAD = QuadratureSpec()


def gauss_legendre(f, a: float, b: float) -> float:
    """64-node Gauss-Legendre rule on [a, b] (f vectorized)."""
    if b <= a:
        return 0.0
    x = 0.5 * (b - a) * _GL64_NODES + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.dot(_GL64_WEIGHTS, f(x)))


def gauss_legendre_panels(f, a: float, b: float, max_width: float = 1.0) -> float:
    """Composite 64-node rule with panels no wider than max_width."""
    if b <= a:
        return 0.0
    n = max(1, int(math.ceil((b - a) / max_width)))
    edges = np.linspace(a, b, n + 1)
    return math.fsum(gauss_legendre(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


def adaptive_simpson(f, a: float, b: float, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Classic adaptive Simpson with Richardson correction (f scalar)."""

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth >= spec.max_depth or abs(left + right - whole) < 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + recurse(
            m, b, fm, frm, fb, right, 0.5 * tol, depth + 1
        )

    if b <= a:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return recurse(a, b, fa, fm, fb, whole, spec.abs_tol, 0)


def bisect_root(f, lo: float, hi: float, tol: float = 1e-9) -> float:
    """Bracketing bisection; raises if [lo, hi] does not bracket a sign change."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


# ----------------------------------------------------------------------
# piecewise Chebyshev tables for omega and rho
# ----------------------------------------------------------------------

@dataclass
class PiecewiseFunctionTable:
    """Per-unit-interval Chebyshev representation of omega or rho.

    Intervals tile [start, u_max] with unit length; evaluation beyond
    u_max returns tail_value.  error_bound is the empirical uniform
    absolute error estimated during construction.
    """

    kind: str                     # "buchstab" | "dickman"
    u_max: float
    tol: float
    error_bound: float
    tail_value: float
    pieces: list[Chebyshev] = field(repr=False)

    @property
    def start(self) -> float:
        return 1.0 if self.kind == "buchstab" else 0.0

    def __call__(self, u):
        """Vectorized interpolant evaluation (tail/extension conventions applied)."""
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        out = np.empty_like(u)
        below = u < self.start
        above = u > self.u_max
        out[below] = 0.0 if self.kind == "buchstab" else (1.0 if False else 0.0)
        out[below] = 0.0
        out[above] = self.tail_value
        mid = ~(below | above)
        if np.any(mid):
            idx = np.clip((u[mid] - self.start).astype(int), 0, len(self.pieces) - 1)
            vals = np.empty(idx.shape)
            for j in np.unique(idx):
                sel = idx == j
                vals[sel] = self.pieces[j](u[mid][sel])
            out[mid] = vals
        return float(out[0]) if scalar else out

    def to_json(self) -> str:
        payload = {
            "format": TABLE_FORMAT,
            "kind": self.kind,
            "u_max": self.u_max,
            "tol": self.tol,
            "error_bound": self.error_bound,
            "tail_value": self.tail_value,
            "intervals": [
                {"lo": float(p.domain[0]), "hi": float(p.domain[1]), "coef": p.coef.tolist()}
                for p in self.pieces
            ],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, blob: str) -> "PiecewiseFunctionTable":
        payload = json.loads(blob)
        if payload.get("format") != TABLE_FORMAT:
            raise ValueError(f"unsupported table format: {payload.get('format')!r}")
        pieces = [
            Chebyshev(np.asarray(rec["coef"]), domain=[rec["lo"], rec["hi"]])
            for rec in payload["intervals"]
        ]
        return cls(
            kind=payload["kind"],
            u_max=payload["u_max"],
            tol=payload["tol"],
            error_bound=payload["error_bound"],
            tail_value=payload["tail_value"],
            pieces=pieces,
        )


def _fit_with_doubling(f, lo: float, hi: float, tol: float, max_deg: int = 32):
    """Chebyshev fit with node-doubling error estimate.

    Fits at增 increasing degree up to max_deg, estimating the error as the
    max deviation from a fit with half again as many nodes on a dense
    sample.  Returns (interpolant, error_estimate).
    """
    sample = np.linspace(lo, hi, 257)
    last = None
    for deg in (8, 16, max_deg):
        coarse = Chebyshev.interpolate(f, deg, domain=[lo, hi])
        fine = Chebyshev.interpolate(f, min(2 * deg, 3 * max_deg // 2), domain=[lo, hi])
        err = float(np.max(np.abs(coarse(sample) - fine(sample))))
        last = (fine, err)
        if err <= tol:
            return last
    return last


def _build_omega(u_max: float, tol: float) -> PiecewiseFunctionTable:
    pieces = []
    errs = []
    # closed forms on the first two intervals
    p1, e1 = _fit_with_doubling(lambda u: 1.0 / u, 1.0, 2.0, tol / 8)
    p2, e2 = _fit_with_doubling(lambda u: (np.log(u - 1.0) + 1.0) / u, 2.0, 3.0, tol / 8)
    pieces += [p1, p2]
    errs += [e1, e2]
    k = 3
    carried = max(e1, e2)
    while k < u_max:
        prev = pieces[-1]
        anti = prev.integ()
        omega_k = float(prev(float(k)))
        a, b = float(k), float(k + 1)

        def stepped(u, _anti=anti, _c=omega_k, _k=float(k)):
            return (_k * _c + _anti(u - 1.0) - _anti(_k - 1.0)) / u

        p, e = _fit_with_doubling(stepped, a, b, tol / 8)
        carried = e + carried / k  # lag propagation shrinks by the 1/u factor
        if carried > tol:
            raise RuntimeError(f"omega table: node doubling stalled at [{a},{b}] (err={carried:.3g})")
        pieces.append(p)
        errs.append(carried)
        k += 1
    return PiecewiseFunctionTable(
        kind="buchstab",
        u_max=float(k),
        tol=tol,
        error_bound=max(errs),
        tail_value=OMEGA_LIMIT,
        pieces=pieces,
    )


def _build_rho(u_max: float, tol: float) -> PiecewiseFunctionTable:
    pieces = [Chebyshev([1.0], domain=[0.0, 1.0])]
    errs = [0.0]
    p1, e1 = _fit_with_doubling(lambda t: 1.0 - np.log(t), 1.0, 2.0, tol / 8)
    pieces.append(p1)
    errs.append(e1)
    k = 2
    while k < u_max:
        prev = pieces[-1]
        anti_prev = prev.integ()
        rho_k = float(prev(float(k)))
        a, b = float(k), float(k + 1)

        # u*rho(u) = int_{u-1}^{u} rho: all-positive fixed point, stable in
        # relative terms even when rho(u) is ~1e-60.
        def make_step(cur):
            anti_cur = cur.integ()

            def stepped(u):
                tail = anti_prev(float(k)) - anti_prev(u - 1.0)   # int_{u-1}^{k}
                head = anti_cur(u) - anti_cur(float(k))           # int_{k}^{u}
                return (tail + head) / u

            return stepped

        cur = Chebyshev([rho_k], domain=[a, b])
        sample = np.linspace(a, b, 65)
        prev_delta = math.inf
        for _ in range(200):
            new = Chebyshev.interpolate(make_step(cur), 32, domain=[a, b])
            delta = float(np.max(np.abs(new(sample) - cur(sample))))
            cur = new
            if delta <= 1e-17 * rho_k or delta >= prev_delta:
                break
            prev_delta = delta
        # node-doubling estimate at the converged operator
        check = Chebyshev.interpolate(make_step(cur), 48, domain=[a, b])
        dense = np.linspace(a, b, 257)
        e = float(np.max(np.abs(cur(dense) - check(dense))))
        carried = e + errs[-1] / k
        if carried > tol:
            raise RuntimeError(f"rho table: node doubling stalled at [{a},{b}] (err={carried:.3g})")
        pieces.append(cur)
        errs.append(carried)
        k += 1
    return PiecewiseFunctionTable(
        kind="dickman",
        u_max=float(k),
        tol=tol,
        error_bound=max(errs),
        tail_value=0.0,
        pieces=pieces,
    )


def build_tables(u_max: float = 50.0, tol: float = 1e-12):
    """Construct the omega and rho tables by the method of steps.

    Returns (omega_table, rho_table).  Beyond u_max, omega is the constant
    e^-gamma and rho is treated as 0 (it is below 1e-60 there for the
    default u_max).
    """
    if u_max < 4:
        raise ValueError("u_max must be at least 4")
    if tol < 1e-12:
        raise ValueError("tol below the binary64 resolution of this construction")
    return _build_omega(u_max, tol), _build_rho(u_max, tol)


# ----------------------------------------------------------------------
# point evaluation with exact closed forms on the initial intervals
# ----------------------------------------------------------------------

def buchstab_omega(u: float, table: PiecewiseFunctionTable) -> float:
    """omega(u): continuous solution of (u*omega(u))' = omega(u-1), omega=1/u on [1,2].

    Uses the closed forms exactly on [1,3); the table elsewhere; 0 below 1
    and e^-gamma beyond the table range.
    """
    if not math.isfinite(u):
        raise ValueError("u must be finite")
    if u < 1.0:
        return 0.0
    if u < 2.0:
        return 1.0 / u
    if u < 3.0:
        return (math.log(u - 1.0) + 1.0) / u
    if u > table.u_max:
        return table.tail_value
    return float(table(u))


def dickman_rho(u: float, table: PiecewiseFunctionTable) -> float:
    """rho(u): continuous solution of t*rho'(t) = -rho(t-1), rho=1 on [0,1]."""
    if not math.isfinite(u):
        raise ValueError("u must be finite")
    if u < 0.0:
        return 0.0
    if u <= 1.0:
        return 1.0
    if u <= 2.0:
        return 1.0 - math.log(u)
    if u > table.u_max:
        return table.tail_value
    return float(table(u))


# ----------------------------------------------------------------------
# logarithmic integral
# ----------------------------------------------------------------------

def _one_over_log_minus_pole(t: float) -> float:
    """1/log(t) - 1/(t-1), continued analytically through t=1."""
    w = t - 1.0
    if abs(w) < 0.05:
        # series of 1/log(1+w) - 1/w
        return 0.5 - w / 12.0 + w * w / 24.0 - 19.0 * w**3 / 720.0 + 3.0 * w**4 / 160.0
    if t == 0.0:
        return 1.0
    return 1.0 / math.log(t) - 1.0 / w


_LI2_CACHE: dict[int, float] = {}


def _li_base(spec: QuadratureSpec) -> float:
    # principal value of int_0^2 dt/log t via pole subtraction
    key = 0
    if key not in _LI2_CACHE:
        tight = QuadratureSpec(abs_tol=1e-15, rel_tol=0.0, max_depth=60)
        _LI2_CACHE[key] = adaptive_simpson(_one_over_log_minus_pole, 0.0, 2.0, tight)
    return _LI2_CACHE[key]


def log_integral_difference(a: float, b: float) -> float:
    """int_a^b dt/log t for 1 < a <= b, computed as int e^s/s ds in log space."""
    if not (a > 1.0 and b >= a):
        raise ValueError("need 1 < a <= b")
    return gauss_legendre_panels(lambda s: np.exp(s) / s, math.log(a), math.log(b))


def log_integral(z: float, spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Principal value of li(z) = int_0^z dt/log t for z > 1."""
    if not (z > 1.0):
        raise ValueError("log_integral requires z > 1")
    base = _li_base(spec)
    if z <= 2.0:
        # move the endpoint: li(z) = log(z-1) + int_0^z (1/log t - 1/(t-1)) dt
        return math.log(z - 1.0) + base - adaptive_simpson(_one_over_log_minus_pole, z, 2.0, spec)
    return base + log_integral_difference(2.0, z)


# ----------------------------------------------------------------------
# incomplete gamma ratio
# ----------------------------------------------------------------------

def incomplete_gamma_ratio(t: float) -> float:
    """gamma(t+2, 1) / Gamma(t+2) for t in [0, 1].

    Uses gamma(s, 1) = e^-1 * sum_n 1/(s(s+1)...(s+n)), truncated when a
    term drops below 1e-18.
    """
    if not (0.0 <= t <= 1.0):
        raise ValueError("incomplete_gamma_ratio requires t in [0, 1]")
    s = t + 2.0
    term = 1.0 / s
    total = term
    n = 0
    while term > 1e-18:
        n += 1
        term /= s + n
        total += term
    return math.exp(-1.0) * total / math.gamma(s)


# ----------------------------------------------------------------------
# interior minimum of omega on [3, 4]
# ----------------------------------------------------------------------

def _omega_slope_scaled(u: float, spec: QuadratureSpec) -> float:
    # u^2 * omega'(u) on [3,4], from the closed form of omega on [2,3]
    integral = adaptive_simpson(lambda t: (math.log(t - 2.0) + 1.0) / (t - 1.0), 3.0, u, spec)
    return u * (math.log(u - 2.0) + 1.0) / (u - 1.0) - (math.log(2.0) + 1.0) - integral


def omega_interior_minimum(spec: QuadratureSpec = DEFAULT_QUAD):
    """Locate the minimum of omega on [3, 4] via the sign change of omega'.

    Returns (u2, omega(u2)); fails if the bracket [3, 4] carries no sign
    change (that would indicate a broken table construction upstream).
    """
    u2 = bisect_root(lambda u: _omega_slope_scaled(u, spec), 3.0, 4.0, tol=1e-9)
    integral = adaptive_simpson(lambda t: (math.log(t - 2.0) + 1.0) / (t - 1.0), 3.0, u2, spec)
    value = (math.log(2.0) + 1.0 + integral) / u2
    return u2, value


def buchstab_abs_max():
    """Absolute maximum of omega over [2, inf): the critical point of
    (log(u-1)+1)/u on [2, 3] where log(u-1)+1 = u/(u-1)."""
    u_star = bisect_root(
        lambda u: math.log(u - 1.0) + 1.0 - u / (u - 1.0), 2.5, 3.0, tol=1e-12
    )
    return u_star, (math.log(u_star - 1.0) + 1.0) / u_star
