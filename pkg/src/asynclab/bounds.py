"""Stability/consensus margins and certified sampling/delay budgets.

Each budget routine reports the largest total lag s = h + tau (or
h + tau + tau_in) for which the corresponding margin condition admits
positive witness parameters (alpha, beta, gamma, eta).

The inner maximization of the margin over (alpha, beta) has an exact
closed form obtained from coordinate-wise stationarity:

    inf over alpha of  omega (1 + 1/alpha) + (1 + alpha) sigma_A^2 s^2
        = (sqrt(omega) + sigma_A s)^2        at alpha* = sqrt(omega)/(sigma_A s)

and the analogous step in beta collapses the whole expression to

    e^{2 lambda_As s} (sqrt(omega) + (sigma_A + sqrt(7/3) c) s)^2,

where c is the coupling constant (sigma_G sigma_K, or lambda_n sigma_BK).
The test suite cross-checks this against a grid-seeded numeric optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import GainDesign, design_constants, theorem4_sigma, verify_lyapunov_family
from .graphs import GraphAlgebra, is_connected
from .matan import LtiModel, expm, max_singular_value

SEVEN_THIRDS = 7.0 / 3.0
SCAN_RESOLUTION = 1e-4
UNBOUNDED_SCAN_LIMIT = 1e3
# Clamps for witness parameters whose exact optimum is a limit (0 or infinity).
PARAM_FLOOR = 1e-9
PARAM_CEIL = 1e9


class InfeasibleError(RuntimeError):
    """A precondition of the budget computation fails outright."""


class SetMembershipError(ValueError):
    """Search parameters violate the feasibility set; lists failed conditions."""


@dataclass(frozen=True)
class BoundQuery:
    """Inputs of the abstract stability condition."""

    mu: float
    eps: float
    omega: float = 0.0
    lambda_As: float = 0.0
    sigma_A: float = 0.0
    sigma_G: float = 0.0
    sigma_K: float = 0.0
    h: float = 0.0
    tau: float = 0.0
    tau_in: float = 0.0

    def __post_init__(self):
        if not (self.mu > 0 and self.eps > 0):
            raise ValueError("mu and eps must be positive")
        if min(self.omega, self.h, self.tau, self.tau_in) < 0:
            raise ValueError("omega, h, tau, tau_in must be nonnegative")


@dataclass(frozen=True)
class SearchParams:
    alpha: float
    beta: float
    gamma: float = 1.0
    eta: float = 1.0
    theta: float = 1.0 + 1e-9

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.eta) <= 0:
            raise ValueError("alpha, beta, gamma, eta must be positive")
        if self.theta <= 1.0:
            raise ValueError("theta must exceed 1")


@dataclass(frozen=True)
class BoundReport:
    feasible: bool
    margin: float
    budget: float
    witness: SearchParams | None
    diagnostics: str
    unbounded: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        w = None
        if self.witness is not None:
            w = {"alpha": self.witness.alpha, "beta": self.witness.beta,
                 "gamma": self.witness.gamma, "eta": self.witness.eta,
                 "theta": self.witness.theta}
        return {"feasible": self.feasible, "budget": self.budget,
                "witness": w, "margin": self.margin,
                "unbounded": self.unbounded, "diagnostics": self.diagnostics,
                "details": dict(self.details)}


def theorem1_margin(q: BoundQuery, p: SearchParams) -> float:
    """Margin of the abstract stability condition at total lag h + tau;
    positive means the condition holds at (alpha, beta)."""
    return _margin_at(q.mu, q.eps, q.omega, q.lambda_As, q.sigma_A,
                      q.sigma_G * q.sigma_K, q.h + q.tau, p.alpha, p.beta)


def _margin_at(mu, eps, omega, lam_As, sigma_A, coupling, s, alpha, beta):
    E = math.exp(2.0 * lam_As * s)
    err_term = omega * (1.0 + 1.0 / alpha) * (1.0 + 1.0 / beta) * E
    drift = ((1.0 + alpha) * (1.0 + 1.0 / beta) * sigma_A**2
             + (1.0 + beta) * SEVEN_THIRDS * coupling**2)
    return mu - eps * err_term - eps * drift * s * s * E


def _clamp(x: float) -> float:
    return float(min(max(x, PARAM_FLOOR), PARAM_CEIL))


def _best_witness(omega, sigma_A, coupling, s):
    """Closed-form maximizer (alpha*, beta*) of the margin at total lag s.

    Limit optima (alpha or beta tending to 0 or infinity) are clamped; the
    margin is flat to within ~1e-9 relative at the clamps.
    """
    sa = sigma_A * s
    if omega > 0 and sa > 0:
        alpha = omega**0.5 / sa
    elif omega > 0:
        alpha = PARAM_CEIL
    else:
        alpha = PARAM_FLOOR
    u = (omega**0.5 + sa) ** 2
    v = SEVEN_THIRDS * (coupling * s) ** 2
    if u > 0 and v > 0:
        beta = (u / v) ** 0.5
    elif u > 0:
        beta = PARAM_CEIL
    else:
        beta = PARAM_FLOOR
    return _clamp(alpha), _clamp(beta)


def _best_margin(mu, eps, omega, lam_As, sigma_A, coupling, s):
    """sup over (alpha, beta) of the margin at total lag s (exact)."""
    E = np.exp(2.0 * lam_As * s)
    g = omega**0.5 + (sigma_A + SEVEN_THIRDS**0.5 * coupling) * s
    return mu - eps * E * g * g


def _find_budget(mu, eps, omega, lam_As, sigma_A, coupling):
    """Largest s with positive best margin: first sign change located by a
    dense vectorized scan, then bisection to machine width.

    Returns (budget, unbounded). The scan (rather than blind bisection)
    covers the non-monotone case lam_As < 0 where the margin can recover
    for large s.
    """
    fm = lambda s: _best_margin(mu, eps, omega, lam_As, sigma_A, coupling, s)
    if fm(0.0) <= 0:
        return 0.0, False
    lo = 0.0
    hi = None
    for a, b in ((0.0, 1.0), (1.0, 10.0), (10.0, 100.0),
                 (100.0, UNBOUNDED_SCAN_LIMIT)):
        grid = np.arange(a, b + SCAN_RESOLUTION / 2, SCAN_RESOLUTION)
        vals = fm(grid)
        neg = np.nonzero(vals <= 0)[0]
        if neg.size:
            k = neg[0]
            lo, hi = grid[k - 1] if k > 0 else a, grid[k]
            break
        lo = b
    if hi is None:
        return float(UNBOUNDED_SCAN_LIMIT), True
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if fm(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float(lo), False


def _budget_report(mu_eff, eps, omega, lam_As, sigma_A, coupling,
                   gamma=1.0, eta=1.0, extra_details=None, note=""):
    if mu_eff <= eps * omega:
        return BoundReport(
            feasible=False, margin=mu_eff - eps * omega, budget=0.0,
            witness=None, unbounded=False,
            diagnostics="infeasible: eps * omega >= available margin "
                        "(stability cannot be certified for any h, tau)" + note,
            details=dict(extra_details or {}))
    budget, unbounded = _find_budget(mu_eff, eps, omega, lam_As, sigma_A, coupling)
    alpha, beta = _best_witness(omega, sigma_A, coupling, max(budget, 1e-12))
    margin = _margin_at(mu_eff, eps, omega, lam_As, sigma_A, coupling,
                        budget, alpha, beta)
    # The clamped witness can lose ~1e-9 of margin relative to the exact
    # limit optimum; shave the budget until the witness itself certifies it.
    while not unbounded and margin <= 0 and budget > 0:
        budget *= 1.0 - 1e-7
        alpha, beta = _best_witness(omega, sigma_A, coupling, max(budget, 1e-12))
        margin = _margin_at(mu_eff, eps, omega, lam_As, sigma_A, coupling,
                            budget, alpha, beta)
    witness = SearchParams(alpha=alpha, beta=beta, gamma=gamma, eta=eta)
    diag = ("unbounded: margin stays positive for all scanned lags; "
            "no finite budget is implied by the condition" + note) if unbounded \
        else f"certified total lag budget {budget:.6g}" + note
    return BoundReport(feasible=True, margin=float(margin), budget=budget,
                       witness=witness, unbounded=unbounded, diagnostics=diag,
                       details=dict(extra_details or {}))


def theorem1_budget(q: BoundQuery) -> BoundReport:
    """Maximum total lag h + tau under the abstract stability condition."""
    return _budget_report(q.mu, q.eps, q.omega, q.lambda_As, q.sigma_A,
                          q.sigma_G * q.sigma_K)


def _gamma_sup(a, b, c):
    """sup over gamma of (a - b/gamma) / (b*gamma + c) subject to a positive
    numerator and a positive denominator.

    a is the decay constant, b = sigma/2 and c the denominator offset.
    Returns (sup, gamma_star, unbounded); unbounded marks the case where the
    denominator can be made nonpositive while the numerator stays positive.
    The stationarity condition is the quadratic
    a*gamma^2 - 2*b*gamma - c = 0.
    """
    if b <= 0:
        # No quadratic-form penalty: the ratio is a/c for all gamma.
        if c <= 0:
            return math.inf, 1.0, True
        return a / c, 1.0, False
    if b * b / a + c <= 0:
        # There is a gamma with positive decay and nonpositive penalty
        # coefficient: the dissipation argument closes for any lag.
        return math.inf, b / a * (1.0 + 1e-6), True
    gamma_star = (b + math.sqrt(b * b + a * c)) / a
    sup = (a - b / gamma_star) / (b * gamma_star + c)
    return sup, gamma_star, False


def theorem2_budget(model: LtiModel, design: GainDesign, algebra: GraphAlgebra,
                    omega: float) -> BoundReport:
    """Maximum h + tau certifying average consensus under the relative-edge
    sampling protocol with gain K and Lyapunov matrix P."""
    if not is_connected(algebra.graph):
        raise InfeasibleError("interaction graph must be connected")
    spectrum = algebra.spectrum[1:]
    if not verify_lyapunov_family(design, model, spectrum):
        raise InfeasibleError("Lyapunov inequality family fails for the design")
    consts = design_constants(design, model, algebra)
    c = model.constants
    lam_n = algebra.lambda_n
    a, b = design.mu, consts.sigma_edge / 2.0
    coff = lam_n * consts.lambda_PBK_s - design.mu
    sup, gamma_star, any_period = _gamma_sup(a, b, coff)
    details = {"sigma": consts.sigma_edge, "lambda_PBK_s": consts.lambda_PBK_s,
               "sigma_BK": consts.sigma_BK, "gamma_star": gamma_star,
               "gamma_sup": sup if math.isfinite(sup) else -1.0}
    if any_period:
        return BoundReport(
            feasible=True, margin=math.inf, budget=float(UNBOUNDED_SCAN_LIMIT),
            witness=SearchParams(alpha=1.0, beta=1.0, gamma=gamma_star),
            unbounded=True, details=details,
            diagnostics="unbounded: the dissipation inequality is strict for "
                        "any sampling period (nonpositive penalty coefficient)")
    return _budget_report(sup, 1.0, omega, c.lambda_As, c.sigma_A,
                          lam_n * consts.sigma_BK,
                          gamma=gamma_star, extra_details=details)


def theorem3_budget(algebra: GraphAlgebra) -> BoundReport:
    """Maximum h + tau for single-integrator broadcast consensus with unit
    gain; closed-form inner optimum over gamma."""
    if not is_connected(algebra.graph):
        raise InfeasibleError("interaction graph must be connected")
    lam2, lam_n = algebra.lambda_2, algebra.lambda_n
    sigma = max(2.0 * lam2, lam_n - 2.0 * lam2)
    sup, gamma_star, any_period = _gamma_sup(lam2, sigma / 2.0, lam_n - lam2)
    if any_period:  # needs lam_n < ... ; unreachable for connected graphs
        budget = float(UNBOUNDED_SCAN_LIMIT)
    else:
        budget = math.sqrt(3.0 / (7.0 * lam_n**2) * sup)
    details = {"sigma": sigma, "gamma_star": gamma_star, "objective": sup,
               "synchronous_necessary_sufficient": 2.0 / lam_n}
    return BoundReport(
        feasible=True, margin=sup, budget=budget,
        witness=SearchParams(alpha=1.0, beta=1.0, gamma=gamma_star),
        unbounded=any_period, details=details,
        diagnostics=f"single-integrator budget {budget:.6g} "
                    f"(gamma* = {gamma_star:.6g}, objective = {sup:.6g}); "
                    f"synchronous comparison constant 2/lambda_n = {2.0 / lam_n:.6g}")


def marginally_stable(A, tol: float = 1e-8) -> bool:
    """All eigenvalues in the closed left half-plane, with those on the
    imaginary axis semisimple (so e^{At} stays bounded)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    if np.any(eig.real > tol):
        return False
    axis = eig[np.abs(eig.real) <= tol]
    for lam in axis:
        alg = int(np.sum(np.abs(eig - lam) <= 1e-7 * max(1.0, np.abs(lam))))
        geo = n - np.linalg.matrix_rank(A - lam * np.eye(n), tol=1e-9 * max(1.0, np.linalg.norm(A)))
        if geo < alg:
            return False
    return True


def max_expm_norms(A, samples: int = 10001) -> tuple[float, float]:
    """Sampled sup over s >= 0 of ||e^{As}||_2 and of the maximum row sum
    norm ||e^{As}||_inf, for marginally stable A.

    The sampling window covers one period of the slowest oscillatory mode
    and ten time constants of the slowest decaying mode; the returned values
    are sample maxima (a documented approximation).
    """
    A = np.asarray(A, dtype=float)
    eig = np.linalg.eigvals(A)
    T = 1.0
    freqs = np.abs(eig.imag)
    freqs = freqs[freqs > 1e-9]
    if freqs.size:
        T = max(T, 2.0 * math.pi / freqs.min())
    decays = -eig.real[eig.real < -1e-9]
    if decays.size:
        T = max(T, 10.0 / decays.min())
    best2 = bestinf = 0.0
    for s in np.linspace(0.0, T, samples):
        E = expm(A, s)
        best2 = max(best2, max_singular_value(E))
        bestinf = max(bestinf, float(np.abs(E).sum(axis=1).max()))
    return best2, bestinf


def delta_kappa(model: LtiModel, x0_sum, n: int, h: float,
                max_norm2: float | None = None) -> float:
    """Bound on the held-vs-true consensus-trajectory mismatch induced by
    sampling the drifting average with period at most h."""
    c = model.constants
    if max_norm2 is None:
        max_norm2, _ = max_expm_norms(model.A)
    if abs(c.lambda_As) < 1e-10:
        growth = c.sigma_A * h
    else:
        growth = c.sigma_A * (math.exp(c.lambda_As * h) - 1.0) / c.lambda_As
    return (1.0 / math.sqrt(n)) * float(np.linalg.norm(x0_sum)) * max_norm2 * growth


def theorem4_error_bound(model: LtiModel, design: GainDesign,
                         algebra: GraphAlgebra, h: float, tau: float,
                         delta_e: float, x0_sum, p: SearchParams,
                         _norms: tuple[float, float] | None = None) -> float:
    """Ultimate consensus-error bound theta * Dbar / Gamma for broadcast
    protocols on marginally stable dynamics with additive errors <= delta_e.

    Raises SetMembershipError when (alpha, beta, gamma, eta) lies outside the
    feasibility set, listing the failed conditions.
    """
    if not marginally_stable(model.A):
        raise InfeasibleError("A must be marginally stable for the broadcast bound")
    n = algebra.graph.n
    c = model.constants
    consts = design_constants(design, model, algebra)
    lam_n = algebra.lambda_n
    mu, lam_P = design.mu, design.lambda_P
    max2, maxinf = _norms if _norms is not None else max_expm_norms(model.A)

    dk = delta_kappa(model, x0_sum, n, h, max_norm2=max2)
    delta = lam_n * consts.sigma_BK * (dk + delta_e)

    sigma = theorem4_sigma(design, model, algebra, p.eta)
    decay = mu - lam_P / (2.0 * p.eta) - sigma / (2.0 * p.gamma)
    C = p.gamma * sigma / 2.0 - mu + lam_P / (2.0 * p.eta) + lam_n * consts.sigma_PB**2
    s = h + tau
    drift = ((1.0 + 1.0 / p.beta) * c.sigma_A**2
             + (1.0 + p.beta) * SEVEN_THIRDS * lam_n**2 * consts.sigma_BBtP**2)
    gamma_big = decay - C * (1.0 + p.alpha) * drift * s * s * math.exp(2.0 * c.lambda_As * s)

    failures = []
    if decay <= 0:
        failures.append("mu - lambda_P/(2 eta) - sigma/(2 gamma) > 0")
    if C < 0:
        failures.append("gamma sigma/2 - mu + lambda_P/(2 eta) + lambda_n sigma_PB^2 >= 0")
    if gamma_big <= 0:
        failures.append("Gamma(h, tau, alpha, beta, gamma, eta) > 0")
    if failures:
        raise SetMembershipError("parameters outside feasibility set: "
                                 + "; ".join(failures))

    dbar = (C * (1.0 + 1.0 / p.alpha) * maxinf**2 * n * s * s * delta**2
            + 0.5 * lam_P * p.eta * delta**2)
    return p.theta * dbar / gamma_big


def theorem4_bound_opt_beta(model: LtiModel, design: GainDesign,
                            algebra: GraphAlgebra, h: float, tau: float,
                            delta_e: float, x0_sum, alpha: float, gamma: float,
                            eta: float, theta: float = 1.0 + 1e-9):
    """Error bound with beta at its closed-form optimum (the other search
    parameters fixed); returns (bound, beta)."""
    c = model.constants
    consts = design_constants(design, model, algebra)
    denom = SEVEN_THIRDS**0.5 * algebra.lambda_n * consts.sigma_BBtP
    beta = _clamp(c.sigma_A / denom) if denom > 0 else PARAM_CEIL
    p = SearchParams(alpha=alpha, beta=beta, gamma=gamma, eta=eta, theta=theta)
    return theorem4_error_bound(model, design, algebra, h, tau, delta_e,
                                x0_sum, p), beta


def theorem4_best_bound(model: LtiModel, design: GainDesign,
                        algebra: GraphAlgebra, h: float, tau: float,
                        delta_e: float, x0_sum, grid) -> tuple[float, SearchParams]:
    """Infimum of the error bound over a supplied iterable of SearchParams;
    entries outside the feasibility set are skipped."""
    norms = max_expm_norms(model.A)
    best, best_p = math.inf, None
    for p in grid:
        try:
            val = theorem4_error_bound(model, design, algebra, h, tau, delta_e,
                                       x0_sum, p, _norms=norms)
        except SetMembershipError:
            continue
        if val < best:
            best, best_p = val, p
    if best_p is None:
        raise SetMembershipError("no grid point lies in the feasibility set")
    return best, best_p


def corollary1_budget(*args, quant_level: float):
    """Budget with a logarithmic quantizer of the given level in place of the
    multiplicative-error bound: omega = (quant_level - 1)^2.

    Accepts either a BoundQuery (abstract condition) or the
    (model, design, algebra) triple of the relative-edge pipeline.
    """
    if quant_level <= 1.0:
        raise ValueError("quantizing level must exceed 1")
    omega = (quant_level - 1.0) ** 2
    if len(args) == 1 and isinstance(args[0], BoundQuery):
        q = args[0]
        return theorem1_budget(BoundQuery(
            mu=q.mu, eps=q.eps, omega=omega, lambda_As=q.lambda_As,
            sigma_A=q.sigma_A, sigma_G=q.sigma_G, sigma_K=q.sigma_K))
    model, design, algebra = args
    return theorem2_budget(model, design, algebra, omega=omega)


def corollary2_budget(q: BoundQuery) -> BoundReport:
    """Maximum dwell time for event-triggered updates without delays; same
    formula as the abstract budget with tau forced to zero, so the reported
    budget is the dwell time h itself."""
    report = theorem1_budget(BoundQuery(
        mu=q.mu, eps=q.eps, omega=q.omega, lambda_As=q.lambda_As,
        sigma_A=q.sigma_A, sigma_G=q.sigma_G, sigma_K=q.sigma_K))
    return BoundReport(feasible=report.feasible, margin=report.margin,
                       budget=report.budget, witness=report.witness,
                       unbounded=report.unbounded, details=report.details,
                       diagnostics="max dwell time h (tau = 0): " + report.diagnostics)


def theorem5_budget(q: BoundQuery) -> BoundReport:
    """Budget with an input delay: the stability condition depends on the
    total lag h + tau + tau_in, so the certified residual budget for h + tau
    is the abstract budget minus the supplied tau_in."""
    base = theorem1_budget(q)
    if not base.feasible:
        return base
    if base.unbounded:
        return BoundReport(feasible=True, margin=base.margin, budget=base.budget,
                           witness=base.witness, unbounded=True,
                           diagnostics=base.diagnostics,
                           details={**base.details, "total_lag_budget": base.budget})
    residual = base.budget - q.tau_in
    if residual <= 0:
        return BoundReport(
            feasible=False, margin=base.margin, budget=0.0, witness=base.witness,
            diagnostics=f"infeasible: input delay {q.tau_in:.6g} consumes the "
                        f"entire certified lag budget {base.budget:.6g}",
            details={"total_lag_budget": base.budget})
    return BoundReport(
        feasible=True, margin=base.margin, budget=residual, witness=base.witness,
        diagnostics=f"residual h + tau budget {residual:.6g} after input delay "
                    f"{q.tau_in:.6g} (total lag budget {base.budget:.6g})",
        details={"total_lag_budget": base.budget})
