"""Experiment orchestration: dispatch a validated config to the owning module,
write CSV curves and a JSON report, and rerun golden fixtures."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checks import CHECKS
from .config import ExperimentConfig, validate
from .lattice import LatticeBox, PotentialSpec, realize_potential
from .symbols import Bands, EnergyWindow, TorusGrid, build_kappa, build_symbol_grid, window_function

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
OUTPUT_ENV = "HEXSCATTER_OUTPUT"
FIXTURES = Path(__file__).with_name("fixtures")

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None = None
    detail: str = ""


@dataclass
class RunReport:
    kind: str
    config: dict
    checks: list[CheckResult]
    metrics: dict[str, float]
    files: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    schema_version: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)


class _Ctx:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.checks: list[CheckResult] = []
        self.metrics: dict[str, float] = {}
        self.files: list[Path] = []
        self.window = EnergyWindow(cfg.window.a, cfg.window.b)
        self.kappa = build_kappa(self.window, cfg.gap)
        self.bands = Bands(self.kappa)
        self.rng = np.random.default_rng(cfg.seed)

    def wants(self, *names: str) -> bool:
        return self.cfg.only is None or any(n in self.cfg.only for n in names)

    def check(self, name: str, passed: bool, value=None, detail: str = ""):
        if name not in CHECKS:
            raise KeyError(f"unregistered check {name!r}")
        if not self.wants(name):
            return
        v = None if value is None else float(value)
        self.checks.append(CheckResult(name, bool(passed), v, detail))
        if v is not None:
            self.metrics[name] = v

    def metric(self, name: str, value):
        self.metrics[name] = float(value)

    def csv(self, name: str, header: list[str], rows) -> None:
        path = self.out / name
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        self.files.append(path)

    @property
    def spec(self) -> PotentialSpec:
        p = self.cfg.potential
        return PotentialSpec(rho=p.rho, amp_long=p.c_long, amp_short=p.c_short, short_profile=p.short_profile,
                             wall=p.wall)


# ---------------------------------------------------------------- runners


def _run_bands(c: _Ctx):
    from .symbols import eval_p_and_critical_points

    cfg = c.cfg
    grid = TorusGrid(cfg.N)
    sg = build_symbol_grid(grid, c.window, c.kappa)
    p, rep = eval_p_and_critical_points(grid)
    i0 = grid.index_of(0.0, 0.0)
    c.check("band_max", abs(p.max() - 3) <= 1e-12 and abs(p[i0] - 3) <= 1e-12, p.max())
    expected = {(0.0, 0.0), (-np.pi, 0.0), (0.0, -np.pi), (-np.pi, -np.pi)}
    found = {tuple(round(v, 9) for v in z) for z in rep.critical_points}
    vals = sorted({round(v, 12) for v in rep.critical_values})
    c.check("critical_values", found == {tuple(round(v, 9) for v in z) for z in expected} and vals == [1.0, 3.0],
            detail=f"values {vals}")
    if cfg.N % 3 == 0:
        dmin = max(p[grid.index_of(*d)] for d in ((2 * np.pi / 3, -2 * np.pi / 3), (-2 * np.pi / 3, 2 * np.pi / 3)))
        c.check("dirac_min", dmin <= 1e-12, dmin)
    c.check("thresholds", rep.thresholds == [-3.0, -1.0, 0.0, 1.0, 3.0], detail=str(rep.thresholds))
    c.check("uprime_unitary", sg.unitarity_residual() <= 1e-12, sg.unitarity_residual())
    c.check("diagonalization", sg.diagonalization_residual() <= 1e-12, sg.diagonalization_residual())
    gap = abs(c.bands.lam(2 * np.pi / 3, -2 * np.pi / 3) - cfg.gap)
    c.check("dirac_gap", gap <= 1e-12, gap)
    far = sg.p >= c.window.delta / 2
    off = float(np.abs(sg.lambda_plus[far] - sg.p[far]).max())
    c.check("bands_off_gap", off <= 1e-12, off)
    c.check("kappa_profile", c.kappa.check() < c.window.delta**2 / 4, c.kappa.check())
    c.metric("band_min", p.min())
    c.csv("bands.csv", ["xi1", "xi2", "p", "lambda_plus"],
          zip(sg.xi1.ravel(), sg.xi2.ravel(), sg.p.ravel(), sg.lambda_plus.ravel()))


def projection_defect(bands: Bands, chi, N: int) -> float:
    from .symbols import h0_function, hprime_function

    xi1, xi2 = TorusGrid(N).mesh()
    d = h0_function(chi, xi1, xi2) - hprime_function(bands, chi, xi1, xi2)
    return float(np.sqrt((np.abs(d) ** 2).sum(axis=(-2, -1))).max())


def _run_projections(c: _Ctx):
    from .propagators import FreeOperator, PerturbedOperator, dense_matrix, free_evolve, full_evolve
    from .scattering import fastest_momentum, window_packet

    cfg = c.cfg
    chi = window_function(c.window.a, c.window.b, 0.02)
    err = projection_defect(c.bands, chi, cfg.N)
    c.check("projection_identity", err <= 1e-10, err)
    gap_chi = window_function(-0.3, 0.3, 0.1)
    fail = projection_defect(c.bands, gap_chi, cfg.N)
    c.check("projection_gap_failure", fail > 0.5, fail, "identity is expected to break inside the gap")
    other = Bands(build_kappa(c.window, 0.3 if cfg.gap != 0.3 else 0.5))
    from .symbols import hprime_function

    xi1, xi2 = TorusGrid(cfg.N).mesh()
    dg = float(np.abs(hprime_function(c.bands, chi, xi1, xi2) - hprime_function(other, chi, xi1, xi2)).max())
    c.check("projection_g_independence", dg <= 1e-6, dg)

    box = LatticeBox(4, "zero-padded")
    V = realize_potential(PotentialSpec(rho=0.7, amp_long=0.3, amp_short=0.2), box)
    H = PerturbedOperator(V)
    u = box.random_state(c.rng)
    u /= np.linalg.norm(u)
    w, Q = np.linalg.eigh(dense_matrix(H))
    exact = (Q @ (np.exp(-3j * w) * (Q.conj().T @ u.ravel()))).reshape(box.shape)
    derr = float(np.linalg.norm(full_evolve(u, 3.0, H, 1e-12) - exact))
    c.check("dense_propagator", derr <= 1e-9, derr)

    pbox = LatticeBox(cfg.L, "periodic")
    xi0 = fastest_momentum(c.bands, cfg.packet.energy)
    pk = window_packet(pbox, c.bands, c.window, xi0, sigma=min(cfg.packet.sigma, cfg.L / 6), ramp=cfg.packet.ramp)
    ferr = max(
        float(np.linalg.norm(free_evolve(pk, t, FreeOperator(pbox, c.bands, "H0"))
                             - free_evolve(pk, t, FreeOperator(pbox, c.bands, "H'0"))))
        for t in (1.0, 10.0, 100.0)
    )
    c.check("free_window_evolution", ferr <= 1e-9, ferr)


def _run_pdo(c: _Ctx):
    from .pdo import (LatticeMultiplier, PdoSymbol, apply_op, assemble_weighted_commutator, kernel_sums,
                      power_norm, telescoping_check, weighted_commutator_kernel)
    from .lattice import japanese_bracket

    cfg = c.cfg
    rho = cfg.potential.rho
    m = pdo_test_symbol
    a = PdoSymbol.multiplier(m, 0.0)
    b = LatticeMultiplier(lambda x1, x2: japanese_bracket(x1, x2, -rho), 1.0 + rho)
    p = q = (1.0 + rho) / 2
    rep = weighted_commutator_kernel(b, a, p, q, cfg.ladder, cfg.tolerances.growth)
    rr = rep.ratios(rep.rowSums) + rep.ratios(rep.colSums)
    c.check("kernel_ladder", all(r <= cfg.tolerances.growth for r in rr), max(rr, default=1.0))
    er = rep.ratios(rep.envelopes)
    c.check("kernel_envelope", all(np.isfinite(rep.envelopes)) and all(r <= cfg.tolerances.growth for r in er),
            max(er, default=1.0))
    c.metric("row_sum_max", rep.rowSumMax)
    c.metric("envelope_exponent", rep.envelopeExponent)
    c.csv("kernel_ladder.csv", ["L", "row_sum", "col_sum", "envelope"],
          zip(rep.boxLadder, rep.rowSums, rep.colSums, rep.envelopes))

    L0 = 16
    T = assemble_weighted_commutator(b.b, a, p, q, L0)
    from .pdo import schur_bound

    sb = schur_bound(T)
    nrm = power_norm(lambda v: T @ v, lambda v: T.conj().T @ v, (T.shape[0],), c.rng, cfg.tolerances.power)
    c.check("schur_dominates", sb >= nrm, sb / nrm, f"schur {sb:.4g} vs norm {nrm:.4g}")
    r0, c0, e0, _ = kernel_sums(lambda x1, x2: np.full(np.broadcast(x1, x2).shape, 2.0), a, p, q, 8)
    c.check("constant_multiplier", max(r0, c0, e0) == 0.0, max(r0, c0, e0))
    pairs = c.rng.integers(-40, 41, size=(200, 4))
    tele = telescoping_check(lambda x1, x2: japanese_bracket(x1, x2, -rho), pairs)
    c.check("telescoping", tele <= 1e-15, tele)
    u = c.rng.standard_normal((32, 32)) + 1j * c.rng.standard_normal((32, 32))
    xi = 2 * np.pi * np.fft.fftfreq(32)
    k1, k2 = np.meshgrid(xi, xi, indexing="ij")
    oracle = np.fft.ifft2(m(k1, k2) * np.fft.fft2(u))
    merr = float(np.abs(apply_op(a, u) - oracle).max())
    c.check("multiplier_oracle", merr <= 1e-10, merr)


def pdo_test_symbol(xi1, xi2):
    """Smooth periodic multiplier ``exp(cos xi1 + cos xi2 - 2)``."""
    return np.exp(np.cos(xi1) + np.cos(xi2) - 2.0)


def _run_mourre(c: _Ctx):
    from .mourre import (ConjugateOperator, c11_integrand_scan, commutator_H0prime_A, commutator_field,
                         gradient_check, mourre_constant, perturbed_mourre_check, projected_commutator_bound,
                         smooth_probe)

    cfg = c.cfg
    if c.wants("mourre_positive", "mourre_refinement", "mourre_g_independence", "projected_commutator"):
        r1 = mourre_constant(c.window, c.bands, cfg.N)
        c.metric("mourre_c", r1.c)
        c.check("mourre_positive", r1.c > 0, r1.c)
        if c.wants("mourre_refinement"):
            r2 = mourre_constant(c.window, c.bands, 3072)
            rel = abs(r1.c - r2.c) / r2.c
            c.check("mourre_refinement", rel <= 1e-4, rel)
        if c.wants("mourre_g_independence"):
            other = Bands(build_kappa(c.window, 0.3 if cfg.gap != 0.3 else 0.5))
            gi = abs(mourre_constant(c.window, other, cfg.N).c - r1.c) / r1.c
            c.check("mourre_g_independence", gi <= 1e-6, gi)
        if c.wants("projected_commutator"):
            pb = projected_commutator_bound(c.bands, c.window)
            c.check("projected_commutator", pb >= r1.c - 0.05, pb)

    if c.wants("two_route_commutator"):
        pbox = LatticeBox(64, "periodic")
        two = max(commutator_H0prime_A(smooth_probe(pbox, c.rng), pbox, c.bands).error for _ in range(3))
        c.check("two_route_commutator", two <= 1e-9, two)
    if c.wants("conjugate_symmetry"):
        sym = ConjugateOperator(LatticeBox(16, "periodic"), c.bands).symmetry_defect(c.rng)
        c.check("conjugate_symmetry", sym <= 1e-11, sym)
    if c.wants("gradient_fd"):
        g = gradient_check(c.bands, c.rng)
        c.check("gradient_fd", g <= 1e-6, g)
    if c.wants("commutator_field"):
        grid = TorusGrid(cfg.N)
        fld = commutator_field(c.bands, grid)
        cr = max(fld.plus[grid.index_of(*z)] for z in ((0.0, 0.0), (-np.pi, 0.0), (0.0, -np.pi), (-np.pi, -np.pi)))
        m = fld.min_on_window(c.window)
        ok = fld.nonnegative and cr <= 1e-24 and m > 0 and fld.band_symmetry_defect() == 0
        c.check("commutator_field", ok, m)

    spec = c.spec
    if c.wants("perturbed_ladder"):
        lad = perturbed_mourre_check(c.bands, spec, cfg.ladder, cfg.tolerances.growth, cfg.tolerances.power)
        worst = max(max(lad.ratios(k), default=1.0) for k in lad.norms)
        c.check("perturbed_ladder", lad.passed, worst, json.dumps(lad.norms))
        c.csv("perturbed_ladder.csv", ["L", *lad.norms], zip(lad.ladder, *lad.norms.values()))
    if c.wants("c11_exponent"):
        scans = [c11_integrand_scan(c.bands, spec, which, kmax=5, tol=cfg.tolerances.power) for which in ("V_l", "V_s")]
        for which, s in zip(("V_l", "V_s"), scans):
            c.metric(f"c11_exponent_{which}", s.exponent)
        c.check("c11_exponent", all(s.passed for s in scans), max(s.exponent for s in scans))


def _run_lap(c: _Ctx):
    from .mourre import eigen_count, kato_smooth_check, lap_scan

    cfg = c.cfg
    spec = c.spec
    ec = eigen_count(c.window, spec, (12, 16, 20))
    c.check("eigen_count", ec.stable, ec.count)
    cav = PotentialSpec(rho=spec.rho, wall=(3.0, 3.0, 10.0))
    if c.wants("eigen_positive_control", "lap_pole_control"):
        pc = eigen_count(c.window, cav, (12, 16, 20))
        c.check("eigen_positive_control", pc.stable and pc.count >= 1, pc.count)

    # drop energies close to a detected eigenvalue
    energies = [e for e in cfg.lap.energies
                if all(abs(e - ev) > 5 * max(cfg.lap.eps) for ev in ec.eigenvalues[-1])]
    scans = {}
    if c.wants("lap_plateau", "kato_consistent"):
        box = LatticeBox(cfg.L, "zero-padded")
        for name, sp in (("free", PotentialSpec()), ("potential", spec)):
            scans[name] = lap_scan(realize_potential(sp, box), energies, cfg.lap.eps, cfg.lap.s,
                                   tol=cfg.tolerances.power)
            scans[name].to_csv(c.out / f"lap_{name}.csv")
            c.files.append(c.out / f"lap_{name}.csv")
        var = max(s.variation(i) for s in scans.values() for i in range(len(energies)))
        c.check("lap_plateau", var <= 0.10, var)

    if c.wants("lap_pole_control"):
        lam = pc.eigenvalues[0][0]
        pole = lap_scan(realize_potential(cav, LatticeBox(12, "zero-padded")), [lam], [1e-1, 1e-2, 1e-3],
                        cfg.lap.s, honesty=0.0)
        slope = float(np.polyfit(np.log(pole.eps), np.log(pole.norms[0]), 1)[0])
        c.check("lap_pole_control", abs(slope + 1) <= 0.1, slope)

    if c.wants("kato_consistent"):
        kbox = LatticeBox(min(cfg.L, 16), "zero-padded")
        free = realize_potential(PotentialSpec(), kbox)
        ref = lap_scan(free, energies, cfg.lap.eps[:3], cfg.lap.s)
        kato = kato_smooth_check(free, c.window, energies, cfg.lap.eps[:3], cfg.lap.s, lap=ref)
        c.check("kato_consistent", kato.finite and kato.consistent, kato.sup)


def _cook_setup(cfg: ExperimentConfig, c: _Ctx):
    from .propagators import PerturbedOperator
    from .scattering import ModifierOperator, fastest_momentum, window_packet

    box = LatticeBox(cfg.L, cfg.boundary)
    xi0 = fastest_momentum(c.bands, cfg.packet.energy)
    u = window_packet(box, c.bands, c.window, xi0, sigma=cfg.packet.sigma, ramp=cfg.packet.ramp)
    H = PerturbedOperator(realize_potential(c.spec, box))
    H0 = PerturbedOperator(realize_potential(PotentialSpec(), box))
    J = None
    if cfg.modifier:
        J = ModifierOperator(PotentialSpec(rho=c.spec.rho, amp_long=c.spec.amp_long), c.window, c.bands)
    return u, H, H0, J


def _run_cook(c: _Ctx):
    from .scattering import cook_run

    cfg = c.cfg
    u, H, H0, J = _cook_setup(cfg, c)
    tm = cfg.times
    tr = cook_run(u, H, H0, J, t0=tm.t0, n_times=tm.n_times, s=tm.s, eps=tm.eps, fd_every=tm.fd_every,
                  tol=cfg.tolerances.cauchy, boundary_tol=cfg.tolerances.boundary)
    tr.to_csv(c.out / "trace.csv")
    c.files.append(c.out / "trace.csv")
    c.check("cook_finite", tr.finite)
    tol = 1e-12 if c.spec.is_zero else cfg.tolerances.cauchy
    c.check("cook_cauchy", tr.cauchy[-1] <= tol, tr.cauchy[-1])
    if not c.spec.is_zero:
        c.check("cook_intertwining", tr.decreasing_after(20.0), tr.intertwine[-1])
    c.check("cook_isometry", abs(tr.isometry[-1] - 1) <= 0.02, tr.isometry[-1])
    if tm.fd_every:
        c.check("cook_fd", tr.fd_error <= 1e-6, tr.fd_error)


def _run_phase(c: _Ctx):
    from .scattering import INCOMING, OUTGOING, build_phase

    spec = c.spec
    for d in (OUTGOING, INCOMING):
        tab = build_phase(spec, c.window, c.bands, 1, d)
        c.metric(f"decay_exponent_{d}", tab.decay_exponent)
        c.csv(f"residual_{d}.csv", ["radius", "sup_residual"], zip(tab.radii, tab.sup_residual))
        if d == OUTGOING:
            c.check("phase_decay", tab.passed, tab.decay_exponent)
    zero = build_phase(PotentialSpec(rho=spec.rho), c.window, c.bands)
    c.check("phase_trivial", float(np.abs(zero.psi).max(initial=0.0)) == 0.0)


def _run_b(c: _Ctx):
    from .scattering import b_operator_diagnostics

    cfg = c.cfg
    rep = b_operator_diagnostics(c.window, c.spec, c.bands, ladder=cfg.ladder, tol=cfg.tolerances.power,
                                 growth_tol=cfg.tolerances.growth)
    s = rep.summary()
    c.check("b1_ladder", rep.stable("b1"), max(s["b1_ratios"], default=1.0))
    c.check("b2_ladder", rep.stable("b2"), max(s["b2_ratios"], default=1.0))
    c.csv("b_norms.csv", ["L", "b1", "b2"], zip(rep.ladder, rep.b1, rep.b2))


RUNNERS = {
    "bands": _run_bands,
    "projections": _run_projections,
    "pdo": _run_pdo,
    "mourre": _run_mourre,
    "lap": _run_lap,
    "cook": _run_cook,
    "phase": _run_phase,
    "b-diagnostics": _run_b,
}


def config_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def output_dir(cfg: ExperimentConfig, root: str | Path | None = None) -> Path:
    root = Path(root or os.environ.get(OUTPUT_ENV, "runs"))
    return root / f"{cfg.kind}-{config_digest(cfg)}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: ExperimentConfig | dict, out: str | Path | None = None) -> RunReport:
    """Run one experiment, writing CSVs and ``report.json`` into ``out``."""
    if isinstance(cfg, dict):
        cfg = validate(cfg)
    out = Path(out) if out is not None else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Ctx(cfg, out)
    start = time.perf_counter()
    RUNNERS[cfg.kind](ctx)
    report = RunReport(
        cfg.kind, cfg.model_dump(mode="json"), ctx.checks, ctx.metrics,
        [{"path": p.name, "sha256": _sha256(p)} for p in ctx.files], time.perf_counter() - start,
    )
    (out / "report.json").write_text(report.to_json())
    return report


# ---------------------------------------------------------------- regression


@dataclass
class Drift:
    fixture: str
    metric: str
    expected: float
    actual: float | None
    rtol: float
    atol: float


@dataclass
class RegressSummary:
    fixtures: list[str]
    drifts: list[Drift]

    @property
    def passed(self) -> bool:
        return not self.drifts

    def to_json(self) -> str:
        return json.dumps({"fixtures": self.fixtures, "drifts": [asdict(d) for d in self.drifts],
                           "passed": self.passed}, indent=2)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def regress(fixtures: str | Path = FIXTURES, overrides: dict | None = None) -> RegressSummary:
    """Rerun every ``*.json`` fixture and compare its golden metrics.

    ``overrides`` (a config fragment) is merged into every fixture config,
    e.g. to confirm that a metric survives a change of ``gap`` or ``N``.
    """
    names, drifts = [], []
    for path in sorted(Path(fixtures).glob("*.json")):
        fx = json.loads(path.read_text())
        data = _merge(fx["config"], overrides or {})
        with tempfile.TemporaryDirectory() as tmp:
            rep = run(validate(data), tmp)
        names.append(path.stem)
        for metric, g in fx["metrics"].items():
            actual = rep.metrics.get(metric)
            rtol, atol = g.get("rtol", 0.0), g.get("atol", 0.0)
            if actual is None or not abs(actual - g["value"]) <= atol + rtol * abs(g["value"]):
                drifts.append(Drift(path.stem, metric, g["value"], actual, rtol, atol))
    return RegressSummary(names, drifts)
