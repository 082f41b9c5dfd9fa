"""Run orchestration: each verb validates its config, computes, writes
deterministic artifacts under the output directory and returns a summary.

Exit codes: 0 success, 1 check failure, 2 config error, 3 numerical abort.
The manifest is written last and atomically; together with the config echo
and the seed it is sufficient to reproduce a run bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from . import algebra as al
from . import analysis as an
from . import config as cf
from . import families as fam
from . import flow as fl
from . import grid as gr
from . import structures as st

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ABORT = 3

_FLOW_EXIT = {
    "completed": EXIT_OK,
    "stationary": EXIT_OK,
    "chart_exit": EXIT_NUMERICAL_ABORT,
    "instability": EXIT_NUMERICAL_ABORT,
    "numerical_abort": EXIT_NUMERICAL_ABORT,
}


# ---------------------------------------------------------------------------
# deterministic writers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg_echo: dict, status: str,
                   exit_code: int, start: dict, end: dict) -> dict:
    files = {}
    for p in sorted(out_dir.iterdir()):
        if p.name == "manifest.json" or not p.is_file():
            continue
        files[p.name] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
    manifest = {
        "command": command,
        "config": cfg_echo,
        "version": __version__,
        "table_checksums": al.tables().checksums(),
        "status": status,
        "exit_code": exit_code,
        "start_diagnostics": start,
        "end_diagnostics": end,
        "files": files,
    }
    tmp = out_dir / "manifest.json.tmp"
    write_json(tmp, manifest)
    os.replace(tmp, out_dir / "manifest.json")
    return manifest


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# verify: the identity suite


def _check(name, max_err, tol, detail="") -> dict:
    return {"name": name, "max_error": float(max_err), "tolerance": tol,
            "passed": bool(max_err <= tol), "detail": detail}


def verify_report(seed: int = 0, samples: int = 1000,
                  tables: al.StructureTables | None = None) -> dict:
    """Exact-table and random-sample identity checks of the whole dictionary.

    A failing tables object (e.g. a deliberately sign-flipped form) is
    reported check by check rather than raising.
    """
    t = tables if tables is not None else al.tables()
    rng = np.random.default_rng(seed)
    checks = []

    failures = al.calibration_failures(t)
    checks.append({"name": "table_calibration", "max_error": float(len(failures)),
                   "tolerance": 0, "passed": not failures,
                   "detail": "; ".join(failures)})

    gamma = t.gamma.astype(float)
    X = rng.standard_normal((samples, 7))
    Y = rng.standard_normal((samples, 7))
    S = rng.standard_normal((samples, 8))
    psibar = t.psibar.astype(float)

    def cmul(v, s):
        return np.einsum("...a,aij,...j->...i", v, gamma, s)

    twice = cmul(X, cmul(X, S))
    err = np.max(np.abs(twice + np.sum(X * X, axis=-1)[:, None] * S))
    scale = max(1.0, float(np.max(np.abs(twice))))
    checks.append(_check("clifford_relation_random", err / scale, 1e-12))

    crossXY = np.einsum("...a,...b,abc->...c", X, Y, t.cross.astype(float))
    lhs = cmul(X, cmul(Y, np.broadcast_to(psibar, (samples, 8))))
    rhs = -cmul(crossXY, np.broadcast_to(psibar, (samples, 8))) \
        - np.sum(X * Y, axis=-1)[:, None] * psibar
    checks.append(_check("cross_clifford_identity_random",
                         np.max(np.abs(lhs - rhs)) / scale, 1e-12))

    img = cmul(X, np.broadcast_to(psibar, (samples, 8)))
    err_iso = np.max(np.abs(np.sum(img * img, axis=-1) - np.sum(X * X, axis=-1)))
    err_perp = np.max(np.abs(img @ psibar))
    checks.append(_check("clifford_isometry_random", max(err_iso, err_perp) / scale, 1e-12))

    checks.append(_check("phi0_norm", abs(al.form_norm2(t.phi0.astype(float)) - 7.0), 0.0))

    contr = np.einsum("ebcd,fbcd->ef", t.star_phi0_dense.astype(np.int64),
                      t.star_phi0_dense.astype(np.int64))
    checks.append(_check("star_contraction_constant",
                         np.max(np.abs(contr - al.STAR_CONTRACTION * np.eye(7, dtype=np.int64))), 0))

    # dictionary equivalence on random unit pairs
    n = min(samples, 300)
    U = rng.standard_normal((n, 7))
    U *= (rng.uniform(0.0, 0.98, n) / np.linalg.norm(U, axis=-1))[:, None]
    u = np.sqrt(1.0 - np.sum(U * U, axis=-1)) * rng.choice([-1.0, 1.0], n)
    psi = st.pair_to_spinor(U, u)
    cubic = np.einsum("tij,...i,...j->...t", t.cubic.astype(float), psi, psi)
    explicit = st.threeform_from_pair(U, u)
    checks.append(_check("dictionary_equivalence_random",
                         np.max(np.abs(cubic - explicit)), 1e-12))

    # star(phi ^ U) = U interior star(phi)
    sw = al.star_of_wedge(t.phi0.astype(float), X[:100])
    iw = al.interior4(X[:100], t.star_phi0.astype(float))
    checks.append(_check("star_wedge_identity_random",
                         np.max(np.abs(sw - iw)) / scale, 1e-12))

    # metric calibration of the explicit pair form
    rep = st.stable_form_analysis(explicit)
    checks.append(_check("pair_metric_identity", rep.metric_deviation(), 1e-10))

    # proof-level contraction identities on random torsion fields
    T = rng.standard_normal((n, 7, 7))
    ids = an.torsion_contraction_identities(T)
    checks.append(_check("torsion_phi_contraction_random",
                         ids["max_phi_contraction"] / ids["scale"], 1e-12))
    checks.append(_check("torsion_square_symmetry_random",
                         ids["max_asymmetry"], 0.0))

    passed = all(c["passed"] for c in checks)
    return {"passed": passed, "seed": seed, "samples": samples, "checks": checks,
            "version": __version__, "table_checksums": t.checksums()}


def run_verify(seed: int = 0, out_dir=None) -> dict:
    report = verify_report(seed=seed)
    exit_code = EXIT_OK if report["passed"] else EXIT_CHECK_FAILURE
    summary = {"status": "passed" if report["passed"] else "failed",
               "exit_code": exit_code, "report": report}
    if out_dir is not None:
        out = _prepare_out(out_dir)
        write_json(out / "verify_report.json", report)
        write_manifest(out, "verify", {"run": {"seed": str(seed)}}, summary["status"],
                       exit_code, {}, {"checks": len(report["checks"])})
    return summary


# ---------------------------------------------------------------------------
# evolve


def run_evolve(cfg: cf.RunConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    seed = cfg["run"]["seed"]
    rng = np.random.default_rng(seed)
    grid = cf.build_grid(cfg)
    bg = cf.build_background(cfg, grid, rng)
    U0 = cf.build_initial(cfg, grid, rng)
    controls = cf.build_controls(cfg)

    if cfg["integrator"]["formulation"] == "spinor":
        psi0 = st.compose_pair(*fam.chart_pair(U0), bg.base_spinor())
        result = fl.evolve_spinor(grid, psi0, controls)
    else:
        result = fl.evolve(grid, U0, bg, controls)

    header = ["t", "energy", "max_U", "div_T_L2", "metric_dev", "dt"]
    write_csv(out / "series.csv", header, result.series)
    gr.save_field(out / "final_U.field", grid, result.state.U)

    exit_code = _FLOW_EXIT[result.status]
    start = result.series[0] if result.series else {}
    end = result.series[-1] if result.series else {}
    report = {"status": result.status, "message": result.message,
              "steps": result.state.step, "t_end": result.state.t,
              "energy": result.state.energy, "div_T_L2": result.state.div_l2}
    write_json(out / "report.json", report)
    manifest = write_manifest(out, "evolve", cfg.echo, result.status, exit_code,
                              {k: start.get(k) for k in ("t", "energy", "div_T_L2")},
                              {k: end.get(k) for k in ("t", "energy", "div_T_L2")})
    return {"exit_code": exit_code, "manifest": manifest, **report}


# ---------------------------------------------------------------------------
# energy (gradient-check tables)


def run_energy(cfg: cf.RunConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    opts = cfg["energy"]
    seed = cfg["run"]["seed"]
    rng = np.random.default_rng(seed)
    grid = cf.build_grid(cfg)
    bg = cf.build_background(cfg, grid, rng)
    order = int(opts["order"])

    pairs = []
    for _ in range(opts["pairs"]):
        U = fam.band_limited(grid, opts["amplitude"], opts["kmax"], rng)
        V = fam.band_limited(grid, 1.0, opts["kmax"], rng)
        pairs.append((U, V))
    rows = an.gradient_check(grid, bg, pairs, opts["eps"], order)

    table = []
    for row in rows:
        entry = {"pair": row["pair"], "first_variation": row["first_variation"]}
        for e, fd, rel in zip(opts["eps"], row["fd"], row["rel_err"]):
            entry[f"fd_eps_{e:g}"] = fd
            entry[f"rel_err_eps_{e:g}"] = rel
        table.append(entry)
    header = list(table[0].keys())
    write_csv(out / "gradient_check.csv", header, table)

    worst = max(row["rel_err"][-1] for row in rows)
    passed = worst <= opts["tol"]
    report = {
        "pairs": opts["pairs"], "eps": opts["eps"], "order": order,
        "worst_rel_err_at_smallest_eps": worst, "tolerance": opts["tol"],
        "passed": passed,
    }
    write_json(out / "report.json", report)
    status = "passed" if passed else "failed"
    exit_code = EXIT_OK if passed else EXIT_CHECK_FAILURE
    manifest = write_manifest(out, "energy", cfg.echo, status, exit_code, {},
                              {"worst_rel_err": worst})
    return {"status": status, "exit_code": exit_code, "report": report,
            "manifest": manifest}


# ---------------------------------------------------------------------------
# spectrum


def run_spectrum(cfg: cf.RunConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    opts = cfg["spectrum"]
    seed = cfg["run"]["seed"]
    rng = np.random.default_rng(seed)
    grid = cf.build_grid(cfg)
    bg = cf.build_background(cfg, grid, rng)
    order = int(opts["order"])

    try:
        report = an.deformation_report(grid, bg, k=opts["k"], order=order,
                                       seed=seed, rel_threshold=opts["rel_threshold"])
    except an.CriticalityError as exc:
        report = {"error": str(exc)}
        write_json(out / "report.json", report)
        manifest = write_manifest(out, "spectrum", cfg.echo, "refused",
                                  EXIT_CHECK_FAILURE, {}, {})
        return {"status": "refused", "exit_code": EXIT_CHECK_FAILURE,
                "message": str(exc), "manifest": manifest}

    rows = [{"index": i, "eigenvalue_full": v, "eigenvalue_bochner": b}
            for i, (v, b) in enumerate(zip(report["eigenvalues_full"],
                                           report["eigenvalues_bochner"]))]
    write_csv(out / "eigenvalues.csv", ["index", "eigenvalue_full", "eigenvalue_bochner"], rows)
    if bg.kind == "constant":
        first_nonzero = min(
            gr.second_partial_eigenvalue(grid, a, 1, order) for a in grid.active_axes)
        report["first_grid_laplacian_eigenvalue"] = first_nonzero
    write_json(out / "report.json", report)
    manifest = write_manifest(out, "spectrum", cfg.echo, "completed", EXIT_OK, {},
                              {"kernel_dim_full": report["kernel_dim_full"]})
    return {"status": "completed", "exit_code": EXIT_OK, "report": report,
            "manifest": manifest}


# ---------------------------------------------------------------------------
# symbol


def run_symbol(cfg: cf.RunConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    opts = cfg["symbol"]
    seed = cfg["run"]["seed"]
    rng = np.random.default_rng(seed)
    n = opts["samples"]

    U = rng.standard_normal((n, 7))
    U *= (rng.uniform(0.0, opts["umax"], n) / np.linalg.norm(U, axis=-1))[:, None]
    xi = rng.standard_normal((n, 7))
    xi /= np.linalg.norm(xi, axis=-1)[:, None]
    V = rng.standard_normal((n, 7))
    V /= np.linalg.norm(V, axis=-1)[:, None]
    rep = an.symbol_check(U, xi, V)

    floor = opts["coercivity_floor"]
    violations = int(np.sum(rep.coercivity_flow_printed < floor))
    violations_true = int(np.sum(rep.coercivity_flow < floor))

    # discrete linearized flow against the analytic symbol under refinement
    U0 = rng.standard_normal(7)
    U0 *= 0.5 / np.linalg.norm(U0)
    Vhat = rng.standard_normal(7)
    wave = [1, 0, 0, 0, 0, 0, 0]
    xi_vec = np.zeros(7)
    errs = []
    order = int(opts["order"])
    for nref in opts["refine"]:
        g = gr.GridShape.make([nref, 1, 1, 1, 1, 1, 1])
        xi_vec[0] = 2.0 * np.pi / g.lengths[0]
        m = an.measure_flow_symbol(g, U0, wave, Vhat, order=order)
        sym = an.symbol_check(U0, xi_vec, Vhat).symbol_flow
        errs.append(float(np.max(np.abs(m + sym))))
    slopes = [float(np.log2(errs[i] / errs[i + 1])) for i in range(len(errs) - 1)]

    passed = violations == 0 and violations_true == 0 and (
        not slopes or slopes[-1] >= 1.9 - 0.05)
    report = {
        "samples": n, "umax": opts["umax"], "coercivity_floor": floor,
        "min_coercivity_printed": float(np.min(rep.coercivity_flow_printed)),
        "min_coercivity_flow": float(np.min(rep.coercivity_flow)),
        "violations_printed": violations, "violations_flow": violations_true,
        "refine": opts["refine"], "discrete_symbol_errors": errs,
        "discrete_symbol_slopes": slopes, "passed": passed,
    }
    write_json(out / "report.json", report)
    status = "passed" if passed else "failed"
    exit_code = EXIT_OK if passed else EXIT_CHECK_FAILURE
    manifest = write_manifest(out, "symbol", cfg.echo, status, exit_code, {},
                              {"violations": violations})
    return {"status": status, "exit_code": exit_code, "report": report,
            "manifest": manifest}


# ---------------------------------------------------------------------------
# table dump


def dump_tables() -> dict:
    return al.tables().as_json_dict()
