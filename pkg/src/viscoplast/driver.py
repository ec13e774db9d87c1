"""Scenario definitions and time marching.

Five scenario families are supported:

* ``accuracy_unimodular`` / ``accuracy_raw``: the non-proportional
  strain-controlled program interpolating between four deformation
  keyframes over 300 s, either projected to unit determinant or used raw
  (the raw variant produces finite elastic bulk strain on purpose).
* ``uniaxial``: F = diag(1 + eps, alpha, alpha) with the transverse
  stretch alpha determined from T22 = T33 = 0.  Strain-controlled ramps,
  holds (relaxation), and technical-stress-controlled segments (creep)
  are all expressed as piecewise segments.
* ``torsion``: constrained thin-walled tube, F12 = phi, F33 = alpha with
  T33 = 0; reports axial and shear technical stresses.
* ``creep_relax_uniaxial``: uniaxial variant whose schedule is stress
  controlled (ramp at a prescribed technical-stress rate, then hold).

Mixed-control unknowns (alpha, and eps under stress control) are found by
a safeguarded secant iteration with bracket expansion; tolerances are
1e-8 of the dominant stress scale.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError, SimulationError, GridMismatchError
from .integrator import DEFAULT_SETTINGS, Method, step
from .material import SQ23, cauchy_stress

ACCURACY_T_END = 300.0

_F2 = np.diag([2.0, 1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)])
_F3 = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
_F4 = np.diag([1.0 / np.sqrt(2.0), 2.0, 1.0 / np.sqrt(2.0)])
_KEYFRAMES = (np.eye(3), _F2, _F3, _F4)


def accuracy_program_F(t, variant):
    """Deformation gradient of the accuracy program at time t.

    Piecewise-linear interpolation between the four keyframes at
    t = 0, 100, 200, 300; the unimodular variant projects the interpolant
    to unit determinant, the raw variant uses it as is.
    """
    if not 0.0 <= t <= ACCURACY_T_END:
        raise ValueError(f"t = {t} outside the program interval [0, 300]")
    if variant not in ("accuracy_unimodular", "accuracy_raw"):
        raise ValueError(f"unknown accuracy variant {variant!r}")
    seg = min(int(t // 100.0), 2)
    w = t / 100.0 - seg
    F = (1.0 - w) * _KEYFRAMES[seg] + w * _KEYFRAMES[seg + 1]
    if variant == "accuracy_unimodular":
        d = np.linalg.det(F)
        F = d ** (-1.0 / 3.0) * F
    return F


# -------------------------------------------------------------- programs

@dataclass(frozen=True)
class Segment:
    """One piece of a control schedule.

    kind: 'ramp' or 'hold' drive the kinematic control variable (eps or
    phi); 'stress_ramp' / 'stress_hold' drive the axial technical stress.
    rate is d(control)/dt for ramps.
    """

    kind: str
    duration: float
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ramp", "hold", "stress_ramp", "stress_hold"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.duration <= 0.0:
            raise ValueError("segment duration must be positive")


@dataclass(frozen=True)
class LoadingProgram:
    """Declarative description of one experiment on a uniform time grid."""

    variant: str
    dt: float
    t_end: float
    segments: tuple = ()

    def __post_init__(self):
        variants = ("accuracy_unimodular", "accuracy_raw", "uniaxial",
                    "torsion", "creep_relax_uniaxial")
        if self.variant not in variants:
            raise ValueError(f"unknown scenario variant {self.variant!r}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.dt < self.t_end:
            n = round(self.t_end / self.dt)
            if n < 1 or abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
                raise ValueError("dt must divide t_end")
        # dt >= t_end degenerates to a single step (clamped to the schedule
        # end); the local solver decides whether such an increment is viable.
        if self.variant.startswith("accuracy"):
            if self.t_end > ACCURACY_T_END:
                raise ValueError("accuracy program is defined on [0, 300]")
        else:
            total = sum(s.duration for s in self.segments)
            if not self.segments or total < self.t_end - 1e-9:
                raise ValueError("segments must cover [0, t_end]")
            kinds = {s.kind for s in self.segments}
            stress = {"stress_ramp", "stress_hold"}
            if kinds & stress and kinds - stress:
                raise ValueError(
                    "stress-controlled and strain-controlled segments "
                    "cannot be mixed in one program")
            if kinds & stress and self.variant != "creep_relax_uniaxial":
                raise ValueError(
                    "stress segments require the creep_relax_uniaxial variant")

    @property
    def n_steps(self):
        return max(1, round(self.t_end / self.dt))

    def control_at(self, t):
        """(mode, value) of the schedule at time t.

        mode is 'control' (eps or phi) or 'stress' (axial technical
        stress); values accumulate ramp rates across segments.
        """
        value = 0.0
        t0 = 0.0
        for seg in self.segments:
            t1 = t0 + seg.duration
            local = min(t, t1) - t0
            if seg.kind in ("ramp", "stress_ramp"):
                value += seg.rate * local
            if t <= t1 + 1e-12:
                mode = "stress" if seg.kind.startswith("stress") else "control"
                return mode, value
            t0 = t1
        mode = "stress" if self.segments[-1].kind.startswith("stress") else "control"
        return mode, value


def accuracy_program(variant="unimodular", dt=2.5):
    name = f"accuracy_{variant}" if not variant.startswith("accuracy") else variant
    return LoadingProgram(variant=name, dt=dt, t_end=ACCURACY_T_END)


def uniaxial_ramp_program(rate=0.1, eps_max=0.05, dt=None):
    t_end = eps_max / rate
    if dt is None:
        dt = t_end / 200.0
    return LoadingProgram(variant="uniaxial", dt=dt, t_end=_snap(t_end, dt),
                          segments=(Segment("ramp", t_end, rate),))


def uniaxial_cyclic_program(rate=0.1, amplitude=0.05, half_cycles=18,
                            dt=None):
    """Triangular cycling between +/- amplitude after a first quarter ramp."""
    segs = [Segment("ramp", amplitude / rate, rate)]
    sign = -1.0
    for _ in range(half_cycles):
        segs.append(Segment("ramp", 2.0 * amplitude / rate, sign * rate))
        sign = -sign
    t_end = sum(s.duration for s in segs)
    if dt is None:
        dt = amplitude / rate / 25.0
    return LoadingProgram(variant="uniaxial", dt=dt, t_end=_snap(t_end, dt),
                          segments=tuple(segs))


def relaxation_program(levels=(0.01, 0.02, 0.03, 0.04, 0.05),
                       ramp_rate=0.01, hold=10.0, dt=0.1):
    """Strain staircase with a relaxation hold after each ramp."""
    segs = []
    prev = 0.0
    for eps in levels:
        segs.append(Segment("ramp", (eps - prev) / ramp_rate, ramp_rate))
        segs.append(Segment("hold", hold))
        prev = eps
    t_end = sum(s.duration for s in segs)
    return LoadingProgram(variant="uniaxial", dt=dt, t_end=_snap(t_end, dt),
                          segments=tuple(segs))


def creep_program(levels=(280.0, 300.0, 320.0), stress_rate=27.0,
                  hold=20.0, dt=0.2):
    """Technical-stress staircase: ramp at the given rate, hold each level."""
    segs = []
    prev = 0.0
    for sigma in levels:
        segs.append(Segment("stress_ramp", (sigma - prev) / stress_rate,
                            stress_rate))
        segs.append(Segment("stress_hold", hold))
        prev = sigma
    t_end = sum(s.duration for s in segs)
    return LoadingProgram(variant="creep_relax_uniaxial", dt=dt,
                          t_end=_snap(t_end, dt), segments=tuple(segs))


def torsion_ramp_program(rate=0.01, phi_max=0.2, dt=None):
    t_end = phi_max / rate
    if dt is None:
        dt = t_end / 200.0
    return LoadingProgram(variant="torsion", dt=dt, t_end=_snap(t_end, dt),
                          segments=(Segment("ramp", t_end, rate),))


def torsion_cyclic_program(rate=0.01, amplitude=0.2, half_cycles=4, dt=None):
    segs = [Segment("ramp", amplitude / rate, rate)]
    sign = -1.0
    for _ in range(half_cycles):
        segs.append(Segment("ramp", 2.0 * amplitude / rate, sign * rate))
        sign = -sign
    t_end = sum(s.duration for s in segs)
    if dt is None:
        dt = amplitude / rate / 25.0
    return LoadingProgram(variant="torsion", dt=dt, t_end=_snap(t_end, dt),
                          segments=tuple(segs))


def _snap(t_end, dt):
    """Largest multiple of dt inside the schedule (guards float ratios)."""
    return math.floor(t_end / dt + 1e-9) * dt


# ---------------------------------------------------------------- records

@dataclass
class HistoryRecord:
    """One grid point of a scenario run."""

    t: float
    F: np.ndarray
    T: np.ndarray
    sigma: float
    tau: float
    xi: float
    f: float
    R: float
    s: float
    s_d: float
    det_Ci: float
    det_Cii: float
    dissipation: float


@dataclass
class ScenarioStats:
    """Invariant extrema accumulated along a run."""

    max_xi: float = 0.0
    peak_cauchy: float = 0.0
    peak_sigma: float = 0.0
    peak_tau: float = 0.0
    max_det_ci_err: float = 0.0
    max_det_cii_err: float = 0.0
    max_skew: float = 0.0
    min_dissipation: float = 0.0

    def update(self, record, result):
        self.max_xi = max(self.max_xi, record.xi)
        self.peak_cauchy = max(self.peak_cauchy, float(np.abs(record.T).max()))
        self.peak_sigma = max(self.peak_sigma, abs(record.sigma))
        self.peak_tau = max(self.peak_tau, abs(record.tau))
        self.max_det_ci_err = max(self.max_det_ci_err,
                                  abs(record.det_Ci - 1.0))
        self.max_det_cii_err = max(self.max_det_cii_err,
                                   abs(record.det_Cii - 1.0))
        if result is not None:
            self.max_skew = max(self.max_skew, result.skew_i, result.skew_ii)
        self.min_dissipation = min(self.min_dissipation, record.dissipation)


@dataclass
class ScenarioRun:
    program: LoadingProgram
    method: Method
    records: list = field(default_factory=list)
    stats: ScenarioStats = field(default_factory=ScenarioStats)


# ---------------------------------------------------- scalar root finding

def _solve_scalar(fn, x0, tol_of, name, max_iter=80, expand0=1e-3):
    """Safeguarded secant with bracket expansion.

    fn(x) -> (residual, payload); convergence when |residual| <=
    tol_of(payload).  Falls back to sign-change bracketing around the best
    iterate plus scaled regula falsi when the secant leaves the trust
    region or stalls.
    """
    x, r, pay = x0, *fn(x0)
    if abs(r) <= tol_of(pay):
        return x, pay
    best = (abs(r), x, r, pay)
    lo = hi = None  # bracket endpoints (x, r) with r<0 / r>0
    if r < 0.0:
        lo = (x, r)
    else:
        hi = (x, r)
    xp, rp = x, r
    x = x0 + max(1e-7, 1e-7 * abs(x0))
    for _ in range(max_iter):
        r, pay = fn(x)
        if abs(r) <= tol_of(pay):
            return x, pay
        if abs(r) < best[0]:
            best = (abs(r), x, r, pay)
        if r < 0.0:
            if lo is None or abs(x - (hi[0] if hi else x)) < abs(lo[0] - (hi[0] if hi else lo[0])):
                lo = (x, r)
        else:
            if hi is None or abs(x - (lo[0] if lo else x)) < abs(hi[0] - (lo[0] if lo else hi[0])):
                hi = (x, r)
        if lo is not None and hi is not None:
            break
        if r == rp:
            break
        xn = x - r * (x - xp) / (r - rp)
        if not math.isfinite(xn) or abs(xn - x) > 0.5 * max(1.0, abs(x)):
            break
        xp, rp = x, r
        x = xn
    else:
        # Secant converged in x but not below tolerance.
        if best[0] <= 10.0 * tol_of(best[3]):
            return best[1], best[3]
        raise ScenarioError(f"{name}: secant iteration failed to converge")

    # Bracket expansion around the best iterate if no sign change yet.
    if lo is None or hi is None:
        xc = best[1]
        h = expand0 * max(1.0, abs(xc))
        for _ in range(60):
            for cand in (xc - h, xc + h):
                r, pay = fn(cand)
                if abs(r) <= tol_of(pay):
                    return cand, pay
                if r < 0.0 and lo is None:
                    lo = (cand, r)
                elif r > 0.0 and hi is None:
                    hi = (cand, r)
            if lo is not None and hi is not None:
                break
            h *= 2.0
        else:
            raise ScenarioError(f"{name}: no sign change found while bracketing")
    (a, fa), (b, fb) = lo, hi
    # Pegasus-scaled regula falsi on the bracket.
    for _ in range(max_iter):
        denom = fb - fa
        cmid = 0.5 * (a + b) if denom == 0.0 else b - fb * (b - a) / denom
        if not (min(a, b) < cmid < max(a, b)):
            cmid = 0.5 * (a + b)
        r, pay = fn(cmid)
        if abs(r) <= tol_of(pay):
            return cmid, pay
        if fb * r < 0.0:
            a, fa = b, fb
        else:
            fa = fa * fb / (fb + r)
        b, fb = cmid, r
        if abs(b - a) <= 1e-15 * max(1.0, abs(b)):
            break
    raise ScenarioError(f"{name}: bracketed iteration failed to converge")


def uniaxial_drive(eps, prev, dt, method, p, settings=DEFAULT_SETTINGS,
                   alpha_guess=None):
    """One uniaxial step: find alpha with T22 = 0 (= T33 by symmetry).

    F = diag(1 + eps, alpha, alpha).  Returns (alpha, StepResult).
    """
    if 1.0 + eps <= 0.0:
        raise ValueError("1 + eps must be positive")
    if alpha_guess is None:
        nu = (3.0 * p.k - 2.0 * p.mu) / (6.0 * p.k + 2.0 * p.mu)
        alpha_guess = 1.0 - nu * eps

    def fn(alpha):
        F = np.diag([1.0 + eps, alpha, alpha])
        res = step(prev, F, dt, method, p, settings)
        T = cauchy_stress(F, res.T_tilde_next)
        return T[1, 1], (res, T)

    def tol(payload):
        _, T = payload
        return 1e-8 * max(abs(T[0, 0]), p.K)

    alpha, (res, _) = _solve_scalar(fn, alpha_guess, tol, "uniaxial alpha")
    return alpha, res


def torsion_drive(phi, prev, dt, method, p, settings=DEFAULT_SETTINGS,
                  alpha_guess=None):
    """One constrained-torsion step: find alpha with T33 = 0.

    F = [[1, phi, 0], [0, 1, 0], [0, 0, alpha]].  Returns (alpha, StepResult).
    """
    if alpha_guess is None:
        alpha_guess = 1.0

    def fn(alpha):
        F = np.array([[1.0, phi, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, alpha]])
        res = step(prev, F, dt, method, p, settings)
        T = cauchy_stress(F, res.T_tilde_next)
        return T[2, 2], (res, T)

    def tol(payload):
        _, T = payload
        return 1e-8 * max(abs(T[0, 1]), p.K)

    alpha, (res, _) = _solve_scalar(fn, alpha_guess, tol, "torsion alpha")
    return alpha, res


# -------------------------------------------------------------- marching

def run_scenario(program, method, p, settings=DEFAULT_SETTINGS):
    """March a loading program; one HistoryRecord per grid point."""
    return run_scenario_full(program, method, p, settings).records


def run_scenario_full(program, method, p, settings=DEFAULT_SETTINGS):
    """As `run_scenario` but also returns the invariant extrema."""
    from .material import InternalState  # deferred to avoid cycle at import

    run = ScenarioRun(program=program, method=method)
    state = InternalState.reference()
    if program.variant.startswith("accuracy"):
        F0 = accuracy_program_F(0.0, program.variant)
    else:
        F0 = np.eye(3)
    first = HistoryRecord(t=0.0, F=F0, T=np.zeros((3, 3)), sigma=0.0,
                          tau=0.0, xi=0.0, f=-SQ23 * p.K, R=0.0, s=0.0,
                          s_d=0.0, det_Ci=1.0, det_Cii=1.0, dissipation=0.0)
    run.records.append(first)
    run.stats.update(first, None)

    alpha = 1.0
    eps = 0.0
    n = program.n_steps
    for kstep in range(1, n + 1):
        t = kstep * program.dt
        try:
            if program.variant.startswith("accuracy"):
                F = accuracy_program_F(min(t, ACCURACY_T_END), program.variant)
                res = step(state, F, program.dt, method, p, settings)
                T = cauchy_stress(F, res.T_tilde_next)
                sigma = tau = 0.0
            elif program.variant == "torsion":
                _, phi = program.control_at(t)
                alpha, res = torsion_drive(phi, state, program.dt, method, p,
                                           settings, alpha_guess=alpha)
                F = np.array([[1.0, phi, 0.0], [0.0, 1.0, 0.0],
                              [0.0, 0.0, alpha]])
                T = cauchy_stress(F, res.T_tilde_next)
                sigma = alpha * T[1, 1]
                tau = alpha * T[0, 1]
            else:
                mode, value = program.control_at(t)
                if mode == "control":
                    eps = value
                    alpha, res = uniaxial_drive(eps, state, program.dt,
                                                method, p, settings,
                                                alpha_guess=alpha)
                else:
                    eps, alpha, res = _uniaxial_stress_drive(
                        value, state, program.dt, method, p, settings,
                        eps_guess=eps, alpha_guess=alpha)
                F = np.diag([1.0 + eps, alpha, alpha])
                T = cauchy_stress(F, res.T_tilde_next)
                sigma = alpha * alpha * T[0, 0]
                tau = 0.0
        except SimulationError as exc:
            raise ScenarioError(f"{program.variant} failed at t = {t:g} s: "
                                f"{exc}", t=t) from exc
        state = res.state_next
        rec = HistoryRecord(t=t, F=F, T=T, sigma=sigma, tau=tau, xi=res.xi,
                            f=res.f_next, R=res.R_next, s=state.s,
                            s_d=state.s_d, det_Ci=res.det_Ci,
                            det_Cii=res.det_Cii,
                            dissipation=res.dissipation_increment)
        run.records.append(rec)
        run.stats.update(rec, res)
    return run


def _uniaxial_stress_drive(sigma_target, prev, dt, method, p, settings,
                           eps_guess, alpha_guess):
    """Advance one step tracking a prescribed axial technical stress.

    Outer root-find on eps wrapping the T22 = 0 solve for alpha; the
    technical stress is sigma = alpha^2 T11.
    """
    alpha_cache = [alpha_guess]

    def fn(eps):
        alpha, res = uniaxial_drive(eps, prev, dt, method, p, settings,
                                    alpha_guess=alpha_cache[0])
        alpha_cache[0] = alpha
        F = np.diag([1.0 + eps, alpha, alpha])
        T = cauchy_stress(F, res.T_tilde_next)
        sigma = alpha * alpha * T[0, 0]
        return sigma - sigma_target, (alpha, res)

    def tol(_payload):
        return 1e-8 * max(abs(sigma_target), p.K)

    eps, (alpha, res) = _solve_scalar(fn, eps_guess, tol,
                                      "uniaxial stress control")
    return eps, alpha, res


# ------------------------------------------------------------- comparison

@dataclass
class HistoryComparison:
    """Component-wise Cauchy-stress discrepancy between two histories."""

    times: np.ndarray
    error_series: np.ndarray
    max_abs_error: float
    rms_error: float
    peak_reference: float

    @property
    def max_rel_error(self):
        return self.max_abs_error / self.peak_reference \
            if self.peak_reference > 0.0 else 0.0

    @property
    def final_over_max(self):
        mx = self.error_series.max()
        return self.error_series[-1] / mx if mx > 0.0 else 0.0


def compare_histories(test, reference):
    """Interpolation-free comparison at the grid points shared in time.

    The reference grid must contain every test time (refinement); errors
    are max-over-component absolute Cauchy-stress differences per shared
    time.
    """
    ref_index = {}
    for i, rec in enumerate(reference):
        ref_index[round(rec.t * 1e9)] = i
    times = []
    errs = []
    sq = 0.0
    count = 0
    for rec in test:
        key = round(rec.t * 1e9)
        if key not in ref_index:
            raise GridMismatchError(
                f"test time t = {rec.t:g} s has no reference counterpart")
        other = reference[ref_index[key]]
        diff = np.abs(rec.T - other.T)
        times.append(rec.t)
        errs.append(float(diff.max()))
        sq += float((diff ** 2).sum())
        count += diff.size
    peak = max(float(np.abs(r.T).max()) for r in reference)
    errs = np.asarray(errs)
    return HistoryComparison(times=np.asarray(times), error_series=errs,
                             max_abs_error=float(errs.max()),
                             rms_error=math.sqrt(sq / count),
                             peak_reference=peak)


@dataclass
class ConvergenceResult:
    dts: np.ndarray
    errors: np.ndarray
    order: float
    degenerate: bool


#: Time step of the reference ("exact") solution used by the studies.
REFERENCE_DT = 0.01


def convergence_study(program, method, dts, p, settings=DEFAULT_SETTINGS,
                      reference=None):
    """Observed convergence order against a fine-step reference.

    Errors are the max-over-time Frobenius norm of the Cauchy-stress
    difference, evaluated on the grid of the coarsest requested step
    (which every finer run hits exactly); a common sample set is what
    makes the norms comparable across steps, because the loading-path
    corners produce a sharp response transient that finer grids would
    otherwise sample at ever-steeper points.  The reference is the
    exponential scheme at dt = 0.01 s unless one is supplied.  Runs whose
    errors sit at roundoff report a degenerate study instead of a slope.
    """
    dts = list(dts)
    if any(d2 >= d1 for d1, d2 in zip(dts, dts[1:])):
        raise ValueError("dts must be sorted in descending order")
    for d in dts:
        n = round(program.t_end / d)
        if abs(n * d - program.t_end) > 1e-9 * max(1.0, program.t_end):
            raise ValueError(f"dt = {d} does not divide t_end = {program.t_end}")
    if reference is None:
        ref_program = LoadingProgram(variant=program.variant, dt=REFERENCE_DT,
                                     t_end=program.t_end,
                                     segments=program.segments)
        reference = run_scenario(ref_program, Method.EM, p, settings)
    errors = []
    for d in dts:
        prog = LoadingProgram(variant=program.variant, dt=d,
                              t_end=program.t_end, segments=program.segments)
        records = run_scenario(prog, method, p, settings)
        err = _max_frobenius_error(records, reference, grid_dt=dts[0])
        errors.append(err)
    errors = np.asarray(errors)
    scale = max(float(np.abs(r.T).max()) for r in reference)
    floor = 1e-10 * max(scale, 1.0)
    usable = errors > floor
    if usable.sum() < 2:
        return ConvergenceResult(np.asarray(dts), errors, float("nan"), True)
    slope = np.polyfit(np.log(np.asarray(dts)[usable]),
                       np.log(errors[usable]), 1)[0]
    return ConvergenceResult(np.asarray(dts), errors, float(slope), False)


def _max_frobenius_error(test, reference, grid_dt=None):
    """Max Frobenius Cauchy-stress error at shared times.

    With grid_dt given, only times on that grid enter the maximum.
    """
    ref_index = {round(r.t * 1e9): r for r in reference}
    worst = 0.0
    for rec in test:
        if grid_dt is not None:
            q = rec.t / grid_dt
            if abs(q - round(q)) > 1e-9:
                continue
        key = round(rec.t * 1e9)
        if key not in ref_index:
            raise GridMismatchError(
                f"test time t = {rec.t:g} s has no reference counterpart")
        worst = max(worst, float(np.linalg.norm(rec.T - ref_index[key].T)))
    return worst
