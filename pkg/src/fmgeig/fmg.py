"""The two driver algorithms: one correction step (multigrid update of the
auxiliary problem followed by a small eigensolve on the augmented space) and
the full multigrid sweep over the level hierarchy, with optional per-level
contraction diagnostics against same-level direct solutions."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .eigsolve import (
    EigenPair,
    LevelSpace,
    ScfSettings,
    build_augmented_space,
    apply_sign_convention,
    scf_solve,
)
from .fem import FeFunction, ProblemSpec, a_norm
from .linalg import MgContext, WorkReport, counted_matvec, mg_solve

__all__ = [
    "FmgParams",
    "CorrectionRecord",
    "LevelTrace",
    "FmgResult",
    "FmgWorkspace",
    "build_workspace",
    "one_correction_step",
    "full_multigrid",
]


@dataclass
class FmgParams:
    """Algorithm knobs: m multigrid iterations per correction, p corrections
    per level, smoothing steps, the augmented-solve sweep cap, and the
    nonlinear stopping rules for the first-level solve."""

    m: int = 1
    p: int = 1
    pre_smooth: int = 3
    post_smooth: int = 3
    varpi: int = 3
    scf: ScfSettings = field(default_factory=ScfSettings)
    record_diagnostics: bool = False
    diagnostics_tol: float = 1e-12

    def __post_init__(self):
        if self.m < 1 or self.p < 1:
            raise ValueError("m and p must be >= 1")
        if self.varpi < 1:
            raise ValueError("varpi must be >= 1")


@dataclass
class CorrectionRecord:
    level_index: int
    lambda_before: float
    lambda_after: float
    varpi: int
    work_units: int
    err_a_before: float = np.nan
    err_a_after: float = np.nan

    @property
    def gamma_obs(self):
        if np.isnan(self.err_a_before) or self.err_a_before == 0.0:
            return np.nan
        return self.err_a_after / self.err_a_before


@dataclass
class LevelTrace:
    level_index: int
    n_elements: int
    n_dofs: int
    lam: float
    records: list
    work_units: int
    wall_seconds: float
    coefficients: np.ndarray | None = None
    direct_lambda: float = np.nan

    @property
    def varpi_max(self):
        if not self.records:
            return np.nan
        return max(r.varpi for r in self.records)

    @property
    def gamma_obs(self):
        gammas = [r.gamma_obs for r in self.records if not np.isnan(r.gamma_obs)]
        return max(gammas) if gammas else np.nan


@dataclass
class FmgResult:
    pair: EigenPair
    traces: list
    work: WorkReport

    @property
    def lambdas(self):
        return [t.lam for t in self.traces]


class FmgWorkspace:
    """Per-level matrices, the stiffness multigrid context, and the shared
    work counter for one full-multigrid run."""

    def __init__(self, hierarchy, spec: ProblemSpec, params: FmgParams, work=None):
        self.hierarchy = hierarchy
        self.spec = spec
        self.params = params
        self.work = work if work is not None else WorkReport()
        self.level_spaces = []
        self.setup_work = []
        for k, mesh in enumerate(hierarchy.levels):
            before = self.work.snapshot()
            prols = [hierarchy.interior_prolongation(j) for j in range(k)]
            self.level_spaces.append(
                LevelSpace.build(mesh, spec, work=self.work, prolongations=prols,
                                 pre_steps=params.pre_smooth, post_steps=params.post_smooth))
            self.setup_work.append(self.work.snapshot() - before)
        self.mg = MgContext(
            matrices=[ls.stiffness for ls in self.level_spaces],
            prolongations=[hierarchy.interior_prolongation(k)
                           for k in range(hierarchy.n_levels - 1)],
            pre_steps=params.pre_smooth,
            post_steps=params.post_smooth,
            work=self.work,
        )

    def augmented(self, level, u_tilde):
        return build_augmented_space(self.hierarchy, level, self.level_spaces[level],
                                     u_tilde, work=self.work)


def build_workspace(hierarchy, spec, params=None, work=None) -> FmgWorkspace:
    return FmgWorkspace(hierarchy, spec, params or FmgParams(), work)


def _aux_rhs(ws: FmgWorkspace, level, lam, u):
    """Dual vector of (lam u - W u - zeta u^(2 sigma) u, v): the right side of
    the auxiliary problem, whose bilinear form is the plain diffusion form."""
    ops = ws.level_spaces[level]
    rhs = lam * counted_matvec(ops.mass, u, ws.work)
    if ops.potential_mass is not None:
        rhs = rhs - counted_matvec(ops.potential_mass, u, ws.work)
    if ws.spec.zeta != 0.0:
        Mnl = ops.nonlinear_matrix(u, work=ws.work)
        rhs = rhs - ws.spec.zeta * counted_matvec(Mnl, u, ws.work)
    return rhs


def one_correction_step(ws: FmgWorkspace, level, lam, u):
    """One correction: m V-cycles on the auxiliary problem from the current
    iterate, then a capped nonlinear solve on coarse space + span of the
    multigrid update.  Returns (lambda, coefficients, CorrectionRecord)."""
    if level < 1 or level >= ws.hierarchy.n_levels:
        raise ValueError("corrections run on levels 1 .. n-1")
    params = ws.params
    ops = ws.level_spaces[level]
    start = ws.work.snapshot()

    rhs = _aux_rhs(ws, level, lam, u)
    u_tilde = mg_solve(ws.mg, level, rhs, u, params.m)

    aug = ws.augmented(level, u_tilde)
    aug_settings = replace(params.scf, max_iter=params.varpi)
    res = scf_solve(aug, ws.spec, aug_settings, initial=aug.initial_coeffs, work=ws.work)

    u_new = aug.to_fine(res.pair.u.coefficients)
    nrm = np.sqrt(u_new @ counted_matvec(ops.mass, u_new, ws.work))
    u_new = apply_sign_convention(u_new / nrm)
    record = CorrectionRecord(
        level_index=level,
        lambda_before=float(lam),
        lambda_after=float(res.pair.lam),
        varpi=res.iterations,
        work_units=ws.work.snapshot() - start,
    )
    return float(res.pair.lam), u_new, record


def _direct_level_solution(ws: FmgWorkspace, level, warm=None):
    settings = ScfSettings(tol_lambda=ws.params.diagnostics_tol,
                           tol_u=max(ws.params.diagnostics_tol, 1e-12),
                           max_iter=600)
    res = scf_solve(ws.level_spaces[level], ws.spec, settings, initial=warm)
    return res.pair.lam, res.pair.u.coefficients


def _err_a(ws, level, u, u_star):
    ops = ws.level_spaces[level]
    aligned = u if float(u @ (ops.mass @ u_star)) >= 0 else -u
    return a_norm(aligned - u_star, ops.stiffness)


def full_multigrid(hierarchy, spec: ProblemSpec, params: FmgParams | None = None,
                   work=None) -> FmgResult:
    """Coarse nonlinear solve, then march the levels: prolongate the previous
    pair as the initial value and apply p correction steps per level."""
    params = params or FmgParams()
    ws = build_workspace(hierarchy, spec, params, work)
    traces = []
    direct = {}

    t0 = time.perf_counter()
    mark = ws.work.snapshot()
    res1 = scf_solve(ws.level_spaces[0], spec, params.scf, work=ws.work)
    lam, u = res1.pair.lam, res1.pair.u.coefficients
    if params.record_diagnostics:
        direct[0] = _direct_level_solution(ws, 0, warm=u)
    traces.append(LevelTrace(
        level_index=0,
        n_elements=hierarchy.levels[0].n_cells,
        n_dofs=hierarchy.levels[0].n_interior,
        lam=lam,
        records=[],
        work_units=ws.work.snapshot() - mark + ws.setup_work[0],
        wall_seconds=time.perf_counter() - t0,
        coefficients=u,
        direct_lambda=direct[0][0] if params.record_diagnostics else np.nan,
    ))

    for k in range(1, hierarchy.n_levels):
        t0 = time.perf_counter()
        mark = ws.work.snapshot()
        u = counted_matvec(ws.hierarchy.interior_prolongation(k - 1), u, ws.work)
        if params.record_diagnostics:
            warm = direct.get(k - 1)
            warm_u = ws.hierarchy.interior_prolongation(k - 1) @ warm[1] if warm else u
            direct[k] = _direct_level_solution(ws, k, warm=warm_u)
        records = []
        for _ in range(params.p):
            if params.record_diagnostics:
                e_before = _err_a(ws, k, u, direct[k][1])
            lam, u, rec = one_correction_step(ws, k, lam, u)
            if params.record_diagnostics:
                rec.err_a_before = e_before
                rec.err_a_after = _err_a(ws, k, u, direct[k][1])
            records.append(rec)
        traces.append(LevelTrace(
            level_index=k,
            n_elements=hierarchy.levels[k].n_cells,
            n_dofs=hierarchy.levels[k].n_interior,
            lam=lam,
            records=records,
            work_units=ws.work.snapshot() - mark + ws.setup_work[k],
            wall_seconds=time.perf_counter() - t0,
            coefficients=u,
            direct_lambda=direct[k][0] if params.record_diagnostics else np.nan,
        ))

    finest = hierarchy.levels[-1]
    pair = EigenPair(lam=float(lam),
                     u=FeFunction(finest.level_index, u),
                     space_tag=f"level:{finest.level_index}")
    return FmgResult(pair=pair, traces=traces, work=ws.work)
