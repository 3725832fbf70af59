"""Experiment pipeline: mesh -> solve -> profile -> blow-up, plus acceptance flags."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blowup import (
    BlowupError,
    CracktipField,
    blowup_rescale,
    change_of_variable,
    change_of_variable_field,
    cracktip_distance,
    sif_coefficient,
    tip_value,
)
from .config import ExperimentConfig, resolve
from .energy import (
    CorrectionParams,
    EnergyProfile,
    arc_flux_residual,
    energy_in_ball,
    gauss_green_residual,
    monotone_check,
    profile,
    sif_estimate,
    sqrtm_spd,
)
from .fields import ConstantField, HarmonicPolynomial, LinearField, SumField
from .geometry import BallSpec, CrackSet, Rotation, make_crack, tip_rotation
from .mesh import MeshConfig, Triangulation, mesh_disk_with_crack, refine_uniform, validate
from .solver import CoefficientField, DiscreteSolution, ProblemSpec, assemble_and_solve
from .svg import LineChart

log = logging.getLogger(__name__)

# Flag name -> acceptance criterion number.
CRITERIA = {
    "sif": 1,
    "profile_constancy": 2,
    "monotonicity": 3,
    "blowup": 4,
    "null_sif": 5,
    "gauss_green": 6,
    "arc_flux": 7,
    "change_of_variable": 11,
}

DEFAULT_BLOWUP_RADII = (0.4, 0.2, 0.1, 0.05)


class PipelineError(RuntimeError):
    """Failure inside a pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# Building the problem from a config
# ---------------------------------------------------------------------------


def build_crack(cfg: ExperimentConfig) -> CrackSet:
    return make_crack(cfg.crack["generator"], **cfg.crack["params"])


def build_coefficients(cfg: ExperimentConfig, K: CrackSet) -> CoefficientField:
    c = cfg.coefficients
    if c["type"] == "identity":
        return CoefficientField.identity()
    if c["type"] == "constant":
        return CoefficientField.constant(c["matrix"])
    x0 = c.get("x0", list(K.tip))
    R = cfg.domain_radius + float(np.linalg.norm(np.asarray(x0) - np.asarray(cfg.domain_center)))
    A = CoefficientField.holder(c["delta"], c["alpha"], c["M"], x0, 0.5 * R)
    return A


def tip_frame(K: CrackSet) -> Rotation:
    """Rotation putting the crack segment at the tip on the negative first axis."""
    seg = K.segments
    tip = np.asarray(K.tip)
    d0 = np.linalg.norm(seg[:, 0] - tip, axis=1)
    d1 = np.linalg.norm(seg[:, 1] - tip, axis=1)
    lengths = np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)
    at_tip = (np.minimum(d0, d1) <= 1e-12 * max(1.0, float(lengths.max())))
    r = 0.5 * float(lengths[at_tip].min()) if np.any(at_tip) else 0.5 * float(lengths.min())
    return tip_rotation(K, tip, r)


def build_field(spec_doc: dict, K: CrackSet, A: CoefficientField):
    t = spec_doc["type"]
    if t == "zero":
        return ConstantField(0.0)
    if t == "constant":
        return ConstantField(float(spec_doc["value"]))
    if t == "linear":
        return LinearField(float(spec_doc.get("a", 0.0)), float(spec_doc.get("b", 0.0)),
                           float(spec_doc.get("c", 0.0)))
    if t == "harmonic_polynomial":
        terms = tuple((int(n), float(a), float(b)) for n, a, b in spec_doc["terms"])
        return HarmonicPolynomial(terms, tuple(spec_doc.get("center", (0.0, 0.0))))
    if t in ("cracktip_trace", "mixed"):
        C = float(spec_doc.get("C", 1.0))
        frame = Rotation(float(spec_doc["frame_angle"])) if "frame_angle" in spec_doc else tip_frame(K)
        A0 = A.at(np.asarray(K.tip))
        tipf = CracktipField(0.5 * math.pi * C * C, tuple(K.tip), frame,
                             None if np.allclose(A0, np.eye(2), atol=1e-14, rtol=0) else A0)
        if t == "cracktip_trace":
            return tipf
        lin = LinearField(float(spec_doc.get("a", 0.0)), float(spec_doc.get("b", 0.0)))
        return SumField((tipf, lin))
    raise ValueError(f"unknown field type {t!r}")


@dataclass(frozen=True)
class Problem:
    cfg: ExperimentConfig
    crack: CrackSet
    spec: ProblemSpec
    mesh_config: MeshConfig
    x0: np.ndarray


def build_problem(cfg: ExperimentConfig) -> Problem:
    K = build_crack(cfg)
    domain = BallSpec(tuple(cfg.domain_center), cfg.domain_radius)
    A = build_coefficients(cfg, K)
    g = build_field(cfg.g, K, A)
    f = None if cfg.f["type"] == "zero" else build_field(cfg.f, K, A)
    spec = ProblemSpec(domain, K, A, cfg.lam, f, g)
    m = cfg.mesh
    mc = MeshConfig(
        target_h=float(m["target_h"]),
        tip_grading_exponent=float(m["tip_grading_exponent"]),
        min_h=float(m["min_h"]) if m.get("min_h") is not None else None,
        domain=domain,
        boundary_h=float(m["boundary_h"]) if m.get("boundary_h") is not None else None,
    )
    return Problem(cfg, K, spec, mc, np.asarray(K.tip, dtype=float))


def build_meshes(problem: Problem, levels: int) -> list[Triangulation]:
    """Base mesh and its nested uniform refinements."""
    T = mesh_disk_with_crack(problem.crack, problem.mesh_config)
    out = [T]
    for _ in range(1, levels):
        out.append(refine_uniform(out[-1]))
    return out


def schedule_for(problem: Problem, tip_size: float) -> np.ndarray:
    sch = problem.cfg.schedule
    if "radii" in sch:
        return np.sort(np.asarray(sch["radii"], dtype=float))[::-1]
    dom = problem.spec.domain
    reach = dom.radius - float(np.linalg.norm(problem.x0 - np.asarray(dom.center)))
    stretch = float(np.linalg.eigvalsh(sqrtm_spd(problem.spec.A.at(problem.x0))).max())
    r_max = float(sch.get("r_max", 0.5 * reach / stretch))
    r_min = max(float(sch.get("r_min", 0.0)), 5.0 * tip_size)
    ratio = float(sch.get("ratio", 2 ** -0.5))
    out = []
    r = r_max
    while r >= r_min * (1 - 1e-12):
        out.append(r)
        r *= ratio
    return np.asarray(out)


def correction_for(problem: Problem, sol: DiscreteSolution) -> CorrectionParams:
    c = problem.cfg.correction
    mode = c["mode"]
    C = c.get("C", 0.0)
    if C == "auto":
        # harness choice: 10 max(|f|_inf, |u|_inf)
        C = 10.0 * max(problem.spec.sup_f(), float(np.abs(sol.nodal_values).max()))
    kw = {"mode": mode, "C": float(C)}
    if "alpha" in c:
        kw["alpha"] = float(c["alpha"])
    return CorrectionParams(**kw)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    name: str
    config: dict
    levels: list = field(default_factory=list)
    sif: dict = field(default_factory=dict)
    tip_value: dict | None = None
    blowup: list = field(default_factory=list)
    change_of_variable: dict | None = None
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(f["passed"] for f in self.flags.values())

    def to_dict(self) -> dict:
        return _clean({
            "name": self.name,
            "config": self.config,
            "levels": self.levels,
            "sif": self.sif,
            "tip_value": self.tip_value,
            "blowup": self.blowup,
            "change_of_variable": self.change_of_variable,
            "flags": self.flags,
            "notes": self.notes,
            "passed": self.passed,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _flag(name: str, passed: bool, **details) -> dict:
    return {"criterion": CRITERIA[name], "passed": bool(passed), **details}


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    report: RunReport
    profile: EnergyProfile
    meshes: list
    solutions: list
    blowup_fields: dict = field(default_factory=dict)


def _stage(name):
    def deco(fn):
        def wrapped(*a, **k):
            t0 = time.perf_counter()
            try:
                out = fn(*a, **k)
            except PipelineError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise PipelineError(name, exc) from exc
            log.info("%s: %.2fs", name, time.perf_counter() - t0)
            return out
        return wrapped
    return deco


def run(config, mesh_level: int | None = None, threads: int = 1) -> RunResult:
    """Execute the pipeline; ``mesh_level`` overrides the finest level index."""
    cfg = resolve(config)
    problem = _stage("build")(build_problem)(cfg)
    levels = int(cfg.mesh["levels"]) if mesh_level is None else int(mesh_level) + 1
    if levels < 1:
        raise PipelineError("build", ValueError("mesh level must be nonnegative"))
    meshes = _stage("mesh")(build_meshes)(problem, levels)
    report = RunReport(cfg.name, cfg.to_dict())
    checks = cfg.checks
    spec = problem.spec
    x0 = problem.x0

    sols, profs, gg, af = [], [], [], []
    for lev, T in enumerate(meshes):
        sol = _stage(f"solve[{lev}]")(assemble_and_solve)(spec, T)
        sch = schedule_for(problem, T.tip_size())
        corr = correction_for(problem, sol)
        prof = _stage(f"profile[{lev}]")(profile)(sol, spec, x0, sch, corr, threads)
        entry = {
            "level": lev,
            "vertices": T.n_vertices,
            "triangles": T.n_triangles,
            "tip_size": T.tip_size(),
            "min_angle_deg": float(T.min_angles().min()),
            "mesh_valid": validate(T).passed,
            "solver": dict(sol.stats),
            "correction": {"mode": corr.mode, "C": corr.C, "alpha": corr.alpha},
        }
        try:
            est = sif_estimate(prof, T.tip_size())
            entry["C0"] = est.C0
        except Exception as exc:  # noqa: BLE001
            entry["C0"] = None
            report.notes.append(f"level {lev}: no SIF estimate ({exc})")
        if "gauss_green" in checks:
            radii = checks["gauss_green"].get("radii", [0.25 * cfg.domain_radius, 0.5 * cfg.domain_radius])
            gg.append([_stage(f"gauss_green[{lev}]")(gauss_green_residual)(sol, spec, x0, r) for r in radii])
            entry["gauss_green"] = gg[-1]
        if "arc_flux" in checks:
            radii = checks["arc_flux"].get("radii", [0.25 * cfg.domain_radius, 0.5 * cfg.domain_radius])
            res = []
            for r in radii:
                arcs = _stage(f"arc_flux[{lev}]")(arc_flux_residual)(sol, spec, x0, r)
                res.append(max(a.residual for a in arcs))
            af.append(res)
            entry["arc_flux"] = af[-1]
        report.levels.append(entry)
        sols.append(sol)
        profs.append(prof)

    T, sol, prof = meshes[-1], sols[-1], profs[-1]
    est = None
    try:
        est = sif_estimate(prof, T.tip_size())
        report.sif = {
            "C0": est.C0,
            "C": sif_coefficient(max(est.C0, 0.0)),
            "lower_bound": est.lower_bound,
            "fit_window": list(est.fit_window),
            "uncertainty": est.uncertainty,
            "slope": est.slope,
            "E_R_over_R": energy_in_ball(sol, spec.A, spec.domain.center, spec.domain.radius)
            / spec.domain.radius,
        }
    except Exception as exc:  # noqa: BLE001
        report.notes.append(f"no SIF estimate at the finest level ({exc})")

    # Tip value and blow-ups.
    fields = {}
    tv = None
    try:
        tv = _stage("tip_value")(tip_value)(sol, problem.crack, x0, schedule_for(problem, T.tip_size()))
        report.tip_value = {
            "u0": tv.u0,
            "radii": tv.radii,
            "m": tv.m,
            "m_tilde": tv.m_tilde,
            "increments": tv.increments,
            "skipped": list(tv.skipped),
            "fit_exponent": tv.fit_exponent,
            "fit_constant": tv.fit_constant,
        }
    except (BlowupError, PipelineError) as exc:
        report.notes.append(f"tip value unavailable ({exc})")
    if tv is not None and est is not None and est.C0 >= 0:
        radii = checks.get("blowup", {}).get("radii", [cfg.domain_radius * s for s in DEFAULT_BLOWUP_RADII])
        reach = spec.domain.radius - float(np.linalg.norm(x0 - np.asarray(spec.domain.center)))
        for r in radii:
            if r > reach:
                report.notes.append(f"blow-up radius {r} exceeds the domain")
                continue
            try:
                u_r = _stage(f"blowup[{r}]")(blowup_rescale)(sol, x0, r, tv, problem.crack)
                ref = CracktipField(est.C0, A0=None if np.allclose(spec.A.at(x0), np.eye(2)) else spec.A.at(x0))
                d = cracktip_distance(u_r, est.C0, ref)
            except (BlowupError, PipelineError) as exc:
                report.notes.append(f"blow-up at r={r} unavailable ({exc})")
                continue
            fields[float(r)] = u_r
            report.blowup.append({
                "r": float(r), "u0": tv.u0, "C0": est.C0, "C": sif_coefficient(est.C0),
                "value_distance": d.value_distance, "gradient_distance": d.gradient_distance,
                "v0_norm": d.v0_norm, "grad_v0_norm": d.grad_v0_norm,
            })

    if "change_of_variable" in checks:
        c = checks["change_of_variable"]
        r = float(c.get("r", 0.3))
        cv = _stage("change_of_variable")(change_of_variable)(spec, sol, x0, r)
        analytic = {}
        tests = {"linear_x1": LinearField(1.0, 0.0)}
        if hasattr(spec.g, "gradient"):
            tests["boundary_field"] = spec.g
        for key, fld in tests.items():
            lhs, rhs = change_of_variable_field(fld, spec.A, x0, r)
            analytic[key] = {"lhs": lhs, "rhs": rhs, "relative_gap": abs(lhs - rhs) / max(abs(rhs), 1e-300)}
        report.change_of_variable = {
            "r": r, "S": cv.S, "fem": {"lhs": cv.lhs, "rhs": cv.rhs, "relative_gap": cv.relative_gap},
            "analytic": analytic,
        }

    _flags(report, cfg, profs, gg, af, meshes)
    return RunResult(report, prof, meshes, sols, fields)


def _geomean_contraction(series) -> float | None:
    s = np.asarray(series, dtype=float)
    if len(s) < 2 or s[-1] <= 0:
        return None
    return float((s[0] / s[-1]) ** (1.0 / (len(s) - 1)))


def _flags(report: RunReport, cfg: ExperimentConfig, profs, gg, af, meshes):
    checks = cfg.checks
    prof = profs[-1]
    T = meshes[-1]
    sif = report.sif
    if "sif" in checks:
        c = checks["sif"]
        C0x = float(c["expected_C0"])
        tol0, tolC = float(c.get("C0_rtol", 0.02)), float(c.get("C_rtol", 0.01))
        max_tip = float(c.get("max_tip_size", 1e-3))
        C0 = sif.get("C0")
        ok = C0 is not None and T.tip_size() <= max_tip
        e0 = eC = None
        if C0 is not None:
            e0 = abs(C0 - C0x) / C0x
            eC = abs(sif_coefficient(max(C0, 0.0)) - sif_coefficient(C0x)) / sif_coefficient(C0x)
            ok = ok and e0 <= tol0 and eC <= tolC
        report.flags["sif"] = _flag("sif", ok, C0=C0, expected_C0=C0x, C0_rel_error=e0, C_rel_error=eC,
                                    C0_rtol=tol0, C_rtol=tolC, tip_size=T.tip_size(), max_tip_size=max_tip)
    if "profile_constancy" in checks:
        c = checks["profile_constancy"]
        lo, hi, tol = float(c.get("r_min", 0.05)), float(c.get("r_max", 0.5)), float(c.get("tol", 0.03))
        r = prof.radii
        m = (r >= lo * (1 - 1e-12)) & (r <= hi * (1 + 1e-12))
        eo = prof.E_over_r[m]
        dev = float(np.abs(eo / eo.mean() - 1.0).max()) if m.any() else None
        report.flags["profile_constancy"] = _flag(
            "profile_constancy", dev is not None and dev <= tol, max_deviation=dev, tol=tol,
            n_radii=int(m.sum()))
    if "monotonicity" in checks:
        slack = float(checks["monotonicity"].get("slack", 0.01))
        viol = monotone_check(prof, slack)
        report.flags["monotonicity"] = _flag(
            "monotonicity", len(viol) == 0, violations=[float(prof.radii[i]) for i in viol],
            slack=slack, mode=prof.correction.mode, C=prof.correction.C)
    if "blowup" in checks:
        c = checks["blowup"]
        slack, fac = float(c.get("slack", 0.1)), float(c.get("gradient_factor", 0.1))
        want = c.get("radii", [cfg.domain_radius * s for s in DEFAULT_BLOWUP_RADII])
        rows = sorted(report.blowup, key=lambda b: -b["r"])
        ok = len(rows) == len(want) and sif.get("C0") is not None
        dec = []
        if ok:
            for key in ("value_distance", "gradient_distance"):
                v = [b[key] for b in rows]
                dec.append(all(v[k + 1] <= v[k] * (1 + slack) for k in range(len(v) - 1)))
            ok = all(dec) and rows[-1]["gradient_distance"] <= fac * math.sqrt(sif["C0"])
        report.flags["blowup"] = _flag(
            "blowup", ok, decreasing=dec, slack=slack,
            final_gradient_distance=rows[-1]["gradient_distance"] if rows else None,
            threshold=fac * math.sqrt(sif["C0"]) if sif.get("C0") is not None and sif["C0"] >= 0 else None)
    if "null_sif" in checks:
        frac = float(checks["null_sif"].get("fraction", 0.02))
        C0, ER = sif.get("C0"), sif.get("E_R_over_R")
        ok = C0 is not None and ER is not None and C0 <= frac * ER
        report.flags["null_sif"] = _flag("null_sif", ok, C0=C0, E_R_over_R=ER, fraction=frac)
    if "gauss_green" in checks:
        c = checks["gauss_green"]
        tol, con = float(c.get("tol", 0.01)), float(c.get("contraction", 1.5))
        arr = np.asarray(gg, dtype=float)
        finest = arr[-1].tolist()
        rates = [_geomean_contraction(arr[:, k]) for k in range(arr.shape[1])]
        ok = all(v <= tol for v in finest) and all(q is not None and q >= con for q in rates)
        report.flags["gauss_green"] = _flag("gauss_green", ok, finest=finest, contraction=rates,
                                            tol=tol, min_contraction=con, levels=len(gg))
    if "arc_flux" in checks:
        tol = float(checks["arc_flux"].get("tol", 0.02))
        finest = af[-1]
        report.flags["arc_flux"] = _flag("arc_flux", max(finest) <= tol, finest=finest, tol=tol)
    if "change_of_variable" in checks and report.change_of_variable is not None:
        c = checks["change_of_variable"]
        ta, tf = float(c.get("analytic_rtol", 1e-8)), float(c.get("fem_rtol", 0.005))
        cv = report.change_of_variable
        ok = all(v["relative_gap"] <= ta for v in cv["analytic"].values()) and cv["fem"]["relative_gap"] <= tf
        report.flags["change_of_variable"] = _flag("change_of_variable", ok, analytic_rtol=ta, fem_rtol=tf)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def atomic_write(path, text: str):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def profile_chart(result: RunResult) -> str:
    ch = LineChart(f"{result.report.name}: energy profile", "r", "E(r)/r")
    n = len(result.solutions)
    # every level's E/r on its own schedule is not stored; the finest profile plus C0 line
    prof = result.profile
    ch.add("E/r", prof.radii, prof.E_over_r)
    if prof.correction.mode != "harmonic":
        ch.add(f"corrected ({prof.correction.mode})", prof.radii, prof.corrected, dashed=True)
    C0 = result.report.sif.get("C0")
    if C0 is not None:
        ch.add(f"C0 fit (level {n - 1})", prof.radii, np.full(len(prof.radii), C0 * prof.det_sqrtA), dashed=True)
    return ch.to_svg()


def blowup_chart(result: RunResult) -> str:
    ch = LineChart(f"{result.report.name}: blow-up distances", "r", "L2 distance to v0", logy=True,
                   note="no blow-up data")
    rows = sorted(result.report.blowup, key=lambda b: b["r"])
    if rows:
        r = [b["r"] for b in rows]
        ch.add("value", r, [b["value_distance"] for b in rows])
        ch.add("gradient", r, [b["gradient_distance"] for b in rows])
    return ch.to_svg()


def write_artifacts(result: RunResult, out_dir, solution_out=None, mesh_out=None) -> dict:
    out_dir = Path(out_dir)
    o = resolve_outputs(result.report.config)
    paths = {k: out_dir / v for k, v in o.items()}
    atomic_write(paths["results"], result.profile.to_csv())
    atomic_write(paths["report"], result.report.to_json())
    atomic_write(paths["profile_svg"], profile_chart(result))
    atomic_write(paths["blowup_svg"], blowup_chart(result))
    if solution_out:
        ref = Path(mesh_out).name if mesh_out else None
        atomic_write(solution_out, json.dumps(_clean(result.solutions[-1].to_dict(ref)), sort_keys=True) + "\n")
    if mesh_out:
        atomic_write(mesh_out, result.meshes[-1].to_json() + "\n")
    return paths


def resolve_outputs(raw: dict) -> dict:
    from .config import DEFAULT_OUTPUTS

    return {**DEFAULT_OUTPUTS, **raw.get("outputs", {})}


def mesh_only(config, mesh_level: int | None = None) -> Triangulation:
    cfg = resolve(config)
    problem = build_problem(cfg)
    levels = int(cfg.mesh["levels"]) if mesh_level is None else int(mesh_level) + 1
    return build_meshes(problem, levels)[-1]
