"""Sampling-based evidence for the twisted-type structure conditions.

Verdicts here are numerical evidence gathered on quasi-random samples of the
declared domain, not proofs. Every failure carries a witness that reproduces
the violation when re-evaluated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domains import DEFAULT_SEED
from .matrices import psd_norm, random_psd, random_symmetric
from .operators import (
    Combination,
    ConcavityGauge,
    MatrixFunction,
    TwistedOperator,
    fd_hess,
)

SCHEMA_VERSION = 1
MONOTONE_TOL = 1e-10
MIDPOINT_TOL = 1e-10
ELLIPTIC_FLOOR = 1e-8


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_tolist(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


@dataclass
class EllipticityReport:
    lambda_hat: float
    Lambda_hat: float
    samples: int
    skipped: int = 0
    violations: list = field(default_factory=list)
    step: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"lambdaHat": self.lambda_hat, "LambdaHat": self.Lambda_hat,
                "samples": self.samples, "skipped": self.skipped,
                "violations": [{"M": _tolist(M), "P": _tolist(P), "ratio": r} for M, P, r in self.violations]}


@dataclass
class CheckResult:
    """Outcome of one sampled condition; ``witness`` is ``None`` on a pass."""

    condition: str
    verdict: bool
    samples: int
    seed: int
    witness: object = None
    witnesses: list = field(default_factory=list)
    notes: str = ""

    def to_dict(self) -> dict:
        return {"condition": self.condition, "verdict": "pass" if self.verdict else "fail",
                "witness": _tolist(self.witness), "samples": self.samples, "seed": self.seed,
                "notes": self.notes}


@dataclass
class StructureCertificate:
    s1: CheckResult
    s2: CheckResult
    s3: CheckResult
    s4: CheckResult
    ellipticity: EllipticityReport | None = None
    notes: str = "sampling-based evidence, not a proof"

    @property
    def passed(self) -> bool:
        return all(c.verdict for c in (self.s1, self.s2, self.s3, self.s4))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "structure-certificate",
                "verdict": "pass" if self.passed else "fail",
                "conditions": [c.to_dict() for c in (self.s1, self.s2, self.s3, self.s4)],
                "ellipticity": None if self.ellipticity is None else self.ellipticity.to_dict(),
                "notes": self.notes}


def _increment_ratio(f: MatrixFunction, M, P, t):
    return (f(M + t * P) - f(M)) / (t * psd_norm(P))


def check_ellipticity(f: MatrixFunction, domain, trials: int = 200, seed: int = DEFAULT_SEED,
                      step: float = 1e-4) -> EllipticityReport:
    """Estimate ellipticity constants from increments ``F(M + tP) - F(M)`` with ``P >= 0``.

    Increments are normalised by ``tr P``, so a linear ``tr(A M)`` reports
    exactly the extreme eigenvalues of ``A``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    Ms = domain.sample(trials, seed)
    n = Ms.shape[-1]
    Ps = np.stack([random_psd(n, rng) for _ in range(len(Ms))])
    ratios = _increment_ratio(f, Ms, Ps, step)
    finite = np.isfinite(ratios)
    report = EllipticityReport(math.inf, -math.inf, int(finite.sum()), int((~finite).sum()), step=step)
    if finite.any():
        report.lambda_hat = float(ratios[finite].min())
        report.Lambda_hat = float(ratios[finite].max())
    for idx in np.flatnonzero(finite & (ratios * step < -MONOTONE_TOL)):
        report.violations.append((Ms[idx], Ps[idx], float(ratios[idx])))
    return report


def check_convexity(f: MatrixFunction, domain, trials: int = 200, seed: int = DEFAULT_SEED,
                    directions: int = 20, label: str = "convexity") -> CheckResult:
    """Midpoint convexity on sampled pairs plus a second-derivative test on random directions."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    Ms = domain.sample(2 * trials, seed)
    A, B = Ms[:trials], Ms[trials:2 * trials]
    gap = f(0.5 * (A + B)) - 0.5 * (f(A) + f(B))
    witnesses = []
    for idx in np.flatnonzero(gap > MIDPOINT_TOL):
        witnesses.append({"M1": A[idx], "M2": B[idx], "gap": float(gap[idx])})
    n = Ms.shape[-1]
    points = A[: min(len(A), 20)]
    H = f.hess(points)
    scale = 1.0 + np.abs(H).max()
    tol = 1e-10 * scale if f.analytic else 1e-5 * scale
    for p, M in enumerate(points):
        dirs = random_symmetric(n, rng, size=(directions,))
        q = np.einsum("ijrs,dij,drs->d", H[p], dirs, dirs)
        for d in np.flatnonzero(q < -tol):
            witnesses.append({"M": M, "H": dirs[d], "second_derivative": float(q[d])})
    first = witnesses[0] if witnesses else None
    return CheckResult(label, not witnesses, trials, seed, first, witnesses)


def negated(f: MatrixFunction) -> MatrixFunction:
    return Combination([(-1.0, f)], name=f"-({f.name})")


def check_concavity(f: MatrixFunction, domain, trials: int = 200, seed: int = DEFAULT_SEED) -> CheckResult:
    """Concavity of ``f`` is convexity of ``-f`` on the same samples."""
    return check_convexity(negated(f), domain, trials, seed, label="concavity")


def check_gauge(gauge: ConcavityGauge, samples: int = 10_000, seed: int = DEFAULT_SEED,
                xs: np.ndarray | None = None) -> dict[str, CheckResult]:
    """Conditions (ii) and (iii) of the gauge on sampled points of ``int U``.

    Points are drawn log-uniformly on half-infinite or infinite intervals so
    both small and large arguments are exercised; ``xs`` adds further points.
    """
    rng = np.random.default_rng(seed)
    lo, hi = gauge.lo, gauge.hi
    if math.isfinite(lo) and math.isfinite(hi):
        x = rng.uniform(lo, hi, samples)
    elif math.isfinite(lo):
        x = lo + 10 ** rng.uniform(-6, 6, samples)
    elif math.isfinite(hi):
        x = hi - 10 ** rng.uniform(-6, 6, samples)
    else:
        x = np.sign(rng.uniform(-1, 1, samples)) * 10 ** rng.uniform(-6, 6, samples)
    if xs is not None:
        x = np.concatenate([x, np.asarray(xs, dtype=float).ravel()])
    x = x[gauge.in_interior(x)]
    h = np.where(x != 0, 1e-4 * np.abs(x), 1e-7)
    if math.isfinite(lo):
        h = np.minimum(h, 0.5 * (x - lo))
    if math.isfinite(hi):
        h = np.minimum(h, 0.5 * (hi - x))
    G, Gp, Q = gauge.G, gauge.Gprime, gauge.Q
    fd1 = (G(x + h) - G(x - h)) / (2 * h)
    fd2 = G(x + h) - 2 * G(x) + G(x - h)
    bad_ii = np.flatnonzero((Gp(x) <= 0) | (fd2 > 1e-10) | (np.abs(fd1 - Gp(x)) > 1e-6 * np.abs(Gp(x)) + 1e-9))
    bad_iii = np.flatnonzero(Gp(x) < Q(x) - 1e-12)
    ii = CheckResult("gauge-ii", bad_ii.size == 0, len(x), seed,
                     None if bad_ii.size == 0 else float(x[bad_ii[0]]),
                     [float(v) for v in x[bad_ii[:20]]])
    iii = CheckResult("gauge-iii", bad_iii.size == 0, len(x), seed,
                      None if bad_iii.size == 0 else float(x[bad_iii[0]]),
                      [float(v) for v in x[bad_iii[:20]]])
    return {"ii": ii, "iii": iii}


def check_weak_concavity(op: TwistedOperator, trials: int = 200, seed: int = DEFAULT_SEED,
                         domain=None) -> CheckResult:
    """Gauge conditions (i)-(iii) for ``F_cap`` on samples of the domain."""
    domain = op.domain if domain is None else domain
    gauge = op.gauge
    Ms = domain.sample(2 * trials, seed)
    vals = op.fcap(Ms)
    inside = gauge.in_U(vals) & np.isfinite(vals)
    if not inside.all():
        idx = int(np.flatnonzero(~inside)[0])
        return CheckResult("S4", False, len(Ms), seed, Ms[idx],
                           [Ms[i] for i in np.flatnonzero(~inside)[:20]],
                           notes=f"(i) F_cap = {float(vals[idx])!r} outside U")
    composed = _GaugeComposite(op.fcap, gauge)
    A, B = Ms[:trials], Ms[trials:]
    gap = composed(0.5 * (A + B)) - 0.5 * (composed(A) + composed(B))
    bad = np.flatnonzero(gap < -MIDPOINT_TOL)
    if bad.size:
        return CheckResult("S4", False, len(Ms), seed, {"M1": A[bad[0]], "M2": B[bad[0]], "gap": float(gap[bad[0]])},
                           notes="(ii) G(F_cap) fails midpoint concavity")
    g = check_gauge(gauge, samples=trials, seed=seed, xs=vals)
    if not g["ii"].verdict:
        return CheckResult("S4", False, len(Ms), seed, g["ii"].witness, notes="(ii) G' > 0, G'' <= 0 fails")
    if not g["iii"].verdict:
        return CheckResult("S4", False, len(Ms), seed, g["iii"].witness, notes="(iii) G' >= Q fails")
    return CheckResult("S4", True, len(Ms), seed, notes=f"gauge {gauge.name}")


class _GaugeComposite(MatrixFunction):
    def __init__(self, f: MatrixFunction, gauge: ConcavityGauge):
        super().__init__(f.dim)
        self.f, self.gauge = f, gauge
        self.name = f"G({f.name})"

    def __call__(self, M):
        return self.gauge.G(self.f(M))


def check_c2(f: MatrixFunction, domain, points: int = 10, seed: int = DEFAULT_SEED) -> CheckResult:
    """Second differences must be stable when the step is halved (norm ratio in [0.5, 2])."""
    Ms = domain.sample(points, seed)
    coarse = fd_hess(f, Ms, step=2e-3)
    fine = fd_hess(f, Ms, step=1e-3)
    nc = np.sqrt(np.einsum("kijrs,kijrs->k", coarse, coarse))
    nf = np.sqrt(np.einsum("kijrs,kijrs->k", fine, fine))
    flat = (nc < 1e-6) & (nf < 1e-6)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(flat, 1.0, nf / nc)
    bad = np.flatnonzero(~np.isfinite(ratio) | (ratio < 0.5) | (ratio > 2.0))
    return CheckResult("C2", bad.size == 0, len(Ms), seed, None if bad.size == 0 else Ms[bad[0]])


def certify(op: TwistedOperator, trials: int = 200, seed: int = DEFAULT_SEED) -> StructureCertificate:
    """Collect S1-S4 evidence for ``op`` over its declared domain."""
    dom = op.domain
    ell_cup = check_ellipticity(op.fcup, dom, trials, seed)
    ell_cap = check_ellipticity(op.fcap, dom, trials, seed)
    ok1 = ell_cup.passed and ell_cap.passed and ell_cup.skipped == 0 and ell_cap.skipped == 0
    w1 = None
    if not ell_cup.passed:
        w1 = {"part": "cup", "M": ell_cup.violations[0][0], "P": ell_cup.violations[0][1]}
    elif not ell_cap.passed:
        w1 = {"part": "cap", "M": ell_cap.violations[0][0], "P": ell_cap.violations[0][1]}
    s1 = CheckResult("S1", ok1, trials, seed, w1, notes="continuity and degenerate ellipticity of both parts")

    c_cup, c_cap = check_c2(op.fcup, dom, seed=seed), check_c2(op.fcap, dom, seed=seed)
    s2 = CheckResult("S2", c_cup.verdict and c_cap.verdict, c_cup.samples, seed,
                     c_cup.witness if not c_cup.verdict else c_cap.witness,
                     notes="second differences stable under step halving")

    conv = check_convexity(op.fcup, dom, trials, seed)
    uniform = ell_cup.passed and ell_cup.lambda_hat > ELLIPTIC_FLOOR
    w3 = conv.witness if not conv.verdict else (None if uniform else {"lambdaHat": ell_cup.lambda_hat})
    s3 = CheckResult("S3", conv.verdict and uniform, trials, seed, w3,
                     notes=f"F_cup convex; lambdaHat={ell_cup.lambda_hat:.6g}, LambdaHat={ell_cup.Lambda_hat:.6g}")

    s4 = check_weak_concavity(op, trials, seed)
    full = Combination([(1.0, op.fcup), (1.0, op.fcap)], name=op.name)
    return StructureCertificate(s1, s2, s3, s4, check_ellipticity(full, dom, trials, seed))


def compute_gamma_Gamma(op: TwistedOperator, u, radius: float = 1.0) -> tuple[float, float]:
    """``gamma = inf Q(-F_cup(D^2 u))`` and ``Gamma = osc G(-F_cup(D^2 u))`` over the discrete ball.

    Uses ``Q`` itself rather than a derivative of it; see the package README.
    """
    from .grid import ball_mask, hessian_field

    H = hessian_field(u)
    sel = ball_mask(u, radius, strict=True) & np.isfinite(H[..., 0, 0])
    vals = -op.fcup(H[sel])
    gauge = op.gauge
    outside = ~gauge.in_U(vals)
    if outside.any():
        idx = np.argwhere(sel)[int(np.flatnonzero(outside)[0])]
        raise ValueError(f"-F_cup = {float(vals[outside][0])!r} outside U at node {tuple(int(i) for i in idx)}")
    Gv = gauge.G(vals)
    return float(np.min(gauge.Q(vals))), float(np.max(Gv) - np.min(Gv))
