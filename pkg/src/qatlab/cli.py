"""qat-lab: run scenario files and the standalone verification reports.

Exit codes: 0 when every check passes, 1 when a check fails or a numerical
routine raises, 2 for usage and configuration errors.
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .classical import preset, solve_basis
from .errors import ConfigParse, OutsideWindow, QatError, SupportOverflow, UnknownPreset, WindowClipped
from .operators import basic_operators, commutator_table
from .propagators import (evolve_crank_nicolson_series, evolve_qat_exact, magnus_omega6_dho,
                          matrix_exponential)
from .qat import QatContext, map_time, schrodinger_residual
from .spectra import HStarParams, eigenfunction_phi_n, eigenvalue_n, hstar_operator
from .wavegrid import (Grid, WaveFunction, derivative, gaussian, grid_wavenumber, inner,
                       plane_wave, write_csv)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMUTATOR_REL_TOL = 1e-6
COMMUTATOR_ABS_TOL = 1e-8
# near a zero of u2 the exact route dilates by a tiny factor and under-resolves
CLIP_FRACTION = 0.9


def write_table(path: Path, header, rows) -> None:
    """CSV with a header row, %.12e numbers, LF line endings."""
    def cell(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (bool, np.bool_)):
            return "1" if v else "0"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return f"{float(v):.12e}"

    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


class Reporter:
    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.failures = []

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def check(self, name: str, ok: bool, detail: str) -> None:
        if not ok:
            self.failures.append(name)
        self.say(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    @property
    def code(self) -> int:
        return EXIT_FAIL if self.failures else EXIT_OK


# ---------------------------------------------------------------- run

def _initial_state(cfg, ctx, grid) -> WaveFunction:
    st = cfg.state
    hbar = cfg.spec.hbar
    if st["kind"] == "gaussian":
        return gaussian(grid, st["x0"], st["p0"], st["sigma"], hbar)
    if st["kind"] == "plane_wave":
        return plane_wave(grid, grid_wavenumber(grid, st["k"]))
    params = HStarParams(st["omega_tilde"], st["gamma_tilde"])
    return eigenfunction_phi_n(ctx, params, st["n"], 0.0, grid)


def _clip_end(cfg, ctx, margin: float) -> float:
    """t_max, or CLIP_FRACTION of the window when u2 vanishes before t_max."""
    hi = ctx.basis.window[1]
    if hi >= cfg.t_max + margin:
        return cfg.t_max
    t_end = CLIP_FRACTION * hi - margin
    if t_end <= 0:
        raise OutsideWindow(f"validity window ends at t={hi:g}, too close to 0 for this scenario")
    warnings.warn(f"t_max={cfg.t_max:g} is past the first zero of u2 at t={hi:.6g}; "
                  f"clipped to {t_end:.6g}", WindowClipped, stacklevel=2)
    return t_end


def _evolve(cfg, ctx, psi0, times):
    if cfg.propagator == "qat_exact":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SupportOverflow)
            out = [evolve_qat_exact(ctx, psi0, float(t)) for t in times]
        hits = [w for w in caught if issubclass(w.category, SupportOverflow)]
        for w in caught:
            if w not in hits:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        if hits:
            warnings.warn(f"state mass reaches the box boundary at {len(hits)} of {len(times)} times",
                          SupportOverflow, stacklevel=2)
        return out
    order = np.argsort(times, kind="stable")
    states = evolve_crank_nicolson_series(cfg.spec, psi0, np.asarray(times)[order], cfg.cn_dt)
    out = [None] * len(times)
    for i, s in zip(order, states):
        out[i] = s
    return out


def _moment(psi: WaveFunction, weight: np.ndarray) -> float:
    return float((np.vdot(psi.amplitudes, weight * psi.amplitudes) * psi.grid.dx).real)


def _momentum(psi: WaveFunction, hbar: float) -> float:
    dpsi = derivative(psi.amplitudes, psi.grid, 1)
    return float((np.vdot(psi.amplitudes, -1j * hbar * dpsi) * psi.grid.dx).real)


def run_scenario(cfg, out_dir: Path, rep: Reporter) -> None:
    grid = Grid(cfg.x_min, cfg.x_max, cfg.n)
    h = cfg.residual_dt
    margin = 2 * h
    ctx = QatContext.build(cfg.spec, cfg.t_max + margin, -margin)
    t_end = _clip_end(cfg, ctx, margin)
    times = np.linspace(0.0, t_end, cfg.samples)
    psi0 = _initial_state(cfg, ctx, grid)
    want_res = "residuals" in cfg.outputs
    probe = np.concatenate([times - h, times, times + h]) if want_res else times
    states = _evolve(cfg, ctx, psi0, probe)
    n_t = len(times)
    main = states[n_t:2 * n_t] if want_res else states

    norms = np.array([s.norm() for s in main])
    header = ["t", "tau", "norm"]
    cols = [times, [_tau(ctx, t) for t in times], norms]
    if "expectations" in cfg.outputs:
        X, P = basic_operators(ctx)
        ex = np.array([X.expectation(s) for s in main])
        ep = np.array([P.expectation(s) for s in main])
        xm = np.array([_moment(s, s.grid.x) for s in main])
        pm = np.array([_momentum(s, cfg.spec.hbar) for s in main])
        header += ["X_re", "X_im", "P_re", "P_im", "x_mean", "p_mean"]
        cols += [ex.real, ex.imag, ep.real, ep.imag, xm, pm]
    if want_res:
        res = [schrodinger_residual(cfg.spec, [states[j], states[n_t + j], states[2 * n_t + j]])
               for j in range(n_t)]
        header.append("residual")
        cols.append(res)
    write_table(out_dir / "report.csv", header, list(zip(*cols)))
    rep.say(f"wrote {out_dir / 'report.csv'} ({n_t} rows)")

    rep.check("norm", bool(np.max(np.abs(norms - 1)) < cfg.checks["norm_tol"]),
              f"max |norm-1| = {np.max(np.abs(norms - 1)):.3e}")
    if "expectations" in cfg.outputs:
        # constancy is judged against max(|<A>(0)|, spread of the initial state)
        sig_x = math.sqrt(max(_moment(psi0, grid.x ** 2) - xm[0] ** 2, 0.0))
        dpsi = derivative(psi0.amplitudes, grid, 1)
        sig_p = math.sqrt(max(float(np.vdot(dpsi, dpsi).real * grid.dx) * cfg.spec.hbar ** 2 - pm[0] ** 2, 0.0))
        for label, vals, scale in (("X", ex, max(abs(ex[0]), sig_x)), ("P", ep, max(abs(ep[0]), sig_p))):
            drift = float(np.max(np.abs(vals - vals[0])))
            rep.check(f"<{label}> constant", drift < cfg.checks["constancy_tol"] * scale,
                      f"drift {drift:.3e} (scale {scale:.3g})")
    if want_res:
        worst = max(res)
        rep.check("schrodinger residual", worst < cfg.checks["residual_tol"], f"max {worst:.3e}")
    if "wavefunction_dump" in cfg.outputs:
        for s in main:
            write_csv(s, out_dir / f"psi_t{s.time_label:.6f}.csv")
        rep.say(f"wrote {n_t} wavefunction files")
    if "algebra_table" in cfg.outputs:
        agrid = Grid(cfg.x_min, cfg.x_max, cfg.algebra_n)
        pts = sorted({0.0, float(times[n_t // 2]), float(times[-1])})
        ok = _algebra_report(ctx, agrid, pts, out_dir / "algebra.csv", cfg.checks["algebra_tol"], rep)
        rep.check("commutator table", ok, f"{10 * len(pts)} entries at t = {', '.join(f'{t:g}' for t in pts)}")
    if "spectrum" in cfg.outputs:
        sp = cfg.spectrum
        params = HStarParams(sp["omega_tilde"], sp["gamma_tilde"])
        pts = sorted({0.0, float(times[n_t // 2]), float(times[-1])})
        ok = _spectrum_report(ctx, params, sp["n_max"], pts, grid, out_dir / "spectrum.csv",
                              cfg.checks["spectrum_tol"], rep)
        rep.check("spectrum", ok, f"n <= {sp['n_max']} at {len(pts)} times")


def _tau(ctx, t):
    return map_time(ctx, t) if ctx.basis.in_window(t) else float("nan")


# ---------------------------------------------------------------- shared reports

def _algebra_report(ctx, grid, times, path, tol, rep) -> bool:
    rows, ok = [], True
    for t in times:
        for e in commutator_table(ctx, t, grid):
            passed = e.error < (tol if e.relative else COMMUTATOR_ABS_TOL)
            ok &= passed
            rows.append((t, e.name, "relative" if e.relative else "absolute", e.error, passed))
            rep.say(f"  t={t:<6g} {e.name:<9} {'rel' if e.relative else 'abs'} {e.error:.3e}"
                    f" {'ok' if passed else 'FAIL'}")
    write_table(path, ["t", "entry", "kind", "error", "pass"], rows)
    return ok


def _spectrum_report(ctx, params, n_max, times, grid, path, tol, rep) -> bool:
    H = hstar_operator(ctx, params)
    rows, ok = [], True
    for t in times:
        for n in range(n_max + 1):
            phi = eigenfunction_phi_n(ctx, params, n, t, grid)
            h_exp = eigenvalue_n(ctx, params, n)
            hphi = H.apply(phi)
            norm2 = inner(phi, phi).real
            rayleigh = inner(phi, hphi).real / norm2
            resid = float(np.linalg.norm(hphi.amplitudes - h_exp * phi.amplitudes)
                          / np.linalg.norm(phi.amplitudes))
            rel = abs(rayleigh - h_exp) / abs(h_exp)
            passed = rel < tol and resid < tol
            ok &= passed
            rows.append((t, n, h_exp, rayleigh, rel, resid, math.sqrt(norm2), passed))
            rep.say(f"  t={t:<6g} n={n} h*={h_exp:.6f} rayleigh={rayleigh:.10f} resid={resid:.2e}"
                    f" {'ok' if passed else 'FAIL'}")
    write_table(path, ["t", "n", "expected", "rayleigh", "rel_error", "eigen_residual", "norm", "pass"], rows)
    return ok


# ---------------------------------------------------------------- verbs

def _spec_from_args(args):
    kw = {}
    for k in ("gamma", "omega", "amplitude", "drive"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    return preset(args.preset, **kw)


def cmd_run(args, rep) -> int:
    cfg = cfgmod.load(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.say(f"scenario {cfg.name} ({cfg.path})")
    try:
        run_scenario(cfg, out, rep)
    except QatError as exc:
        raise type(exc)(f"scenario {cfg.name}: {exc}") from exc
    return rep.code


def cmd_verify_algebra(args, rep) -> int:
    spec = _spec_from_args(args)
    ctx = QatContext.build(spec, max(args.t, 0.0) + 0.1)
    grid = Grid(-args.x_max, args.x_max, args.n)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = _algebra_report(ctx, grid, [args.t], out / "algebra.csv", COMMUTATOR_REL_TOL, rep)
    rep.check("commutator table", ok, f"{spec.name} at t={args.t:g}")
    return rep.code


def compare_propagators(spec, t_list, grid, psi0, cn_dt=1e-4):
    """Rows (t, d(QAT,CN), d(QAT,M6), d(CN,M6)); M6 columns are nan for forced systems."""
    ctx = QatContext.build(spec, max(t_list) + 0.01)
    order = np.argsort(t_list, kind="stable")
    cn = evolve_crank_nicolson_series(spec, psi0, np.asarray(t_list, dtype=float)[order], cn_dt)
    cn_at = {int(i): s for i, s in zip(order, cn)}
    rows = []
    for i, t in enumerate(t_list):
        q = evolve_qat_exact(ctx, psi0, float(t)).amplitudes
        c = cn_at[i].amplitudes
        if spec.forced or "gamma" not in spec.params:
            d_qm = d_cm = float("nan")
        else:
            om = magnus_omega6_dho(spec.params["gamma"], spec.params["omega"], float(t), grid,
                                   spec.mass, spec.hbar)
            mg = matrix_exponential(om) @ psi0.amplitudes
            d_qm = _dist(q, mg, grid)
            d_cm = _dist(c, mg, grid)
        rows.append((float(t), _dist(q, c, grid), d_qm, d_cm))
    return rows


def _dist(a, b, grid):
    return float(np.linalg.norm(a - b) * math.sqrt(grid.dx))


def cmd_compare(args, rep) -> int:
    spec = _spec_from_args(args)
    grid = Grid(-args.x_max, args.x_max, args.n)
    psi0 = gaussian(grid, args.x0, args.p0, args.sigma, spec.hbar)
    rows = compare_propagators(spec, args.t, grid, psi0, args.cn_dt)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "compare.csv", ["t", "d_qat_cn", "d_qat_m6", "d_cn_m6"], rows)
    for t, a, b, c in rows:
        rep.say(f"  t={t:<6g} d(QAT,CN)={a:.3e} d(QAT,M6)={b:.3e} d(CN,M6)={c:.3e}")
        rep.check(f"QAT vs CN at t={t:g}", a < args.cn_tol, f"{a:.3e} < {args.cn_tol:g}")
        if t <= args.magnus_t_max and not math.isnan(b):
            worst = max(b, c)
            rep.check(f"Magnus at t={t:g}", worst < args.magnus_tol, f"{worst:.3e} < {args.magnus_tol:g}")
    return rep.code


def cmd_spectrum(args, rep) -> int:
    spec = _spec_from_args(args)
    ctx = QatContext.build(spec, max(args.t) + 0.1)
    grid = Grid(-args.x_max, args.x_max, args.n)
    wt = args.omega_tilde if args.omega_tilde is not None else spec.params.get("omega", 1.0)
    gt = args.gamma_tilde if args.gamma_tilde is not None else spec.params.get("gamma", 0.0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = _spectrum_report(ctx, HStarParams(wt, gt), args.n_max, args.t, grid, out / "spectrum.csv",
                          args.tol, rep)
    rep.check("spectrum", ok, f"n <= {args.n_max}")
    return rep.code


def cmd_dump_basis(args, rep) -> int:
    spec = _spec_from_args(args)
    basis = solve_basis(spec, args.t_max, args.t_min)
    ts = np.linspace(args.t_min, args.t_max, args.samples)
    v = basis.values(ts)
    W = basis.wronskian(ts)
    werr = np.abs(W * np.exp(spec.f(ts)) - 1)
    tau = np.where([basis.in_window(t) for t in ts], v[0] / np.where(v[2] == 0, np.nan, v[2]), np.nan)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "basis.csv", ["t", "u1", "u1dot", "u2", "u2dot", "up", "updot", "W", "tau"],
                list(zip(ts, *v, W, tau)))
    lo, hi = basis.window
    rep.say(f"window ({lo:.10g}, {hi:.10g}); u2 zeros: {', '.join(f'{z:.10g}' for z in basis.u2_zeros) or 'none'}")
    rep.check("wronskian identity", bool(np.max(werr) < 1e-8), f"max |W e^f - 1| = {np.max(werr):.3e}")
    return rep.code


def _preset_args(p):
    p.add_argument("--preset", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--drive", type=float)


def _floats(text):
    try:
        return [float(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _power_of_two(text):
    n = int(text)
    if n < 8 or n & (n - 1):
        raise argparse.ArgumentTypeError("n must be a power of two (at least 8)")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for CSV output (default: .)")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = argparse.ArgumentParser(prog="qat-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-algebra", parents=[common], help="commutator table on grid matrices")
    _preset_args(p)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--n", type=_power_of_two, default=256)
    p.add_argument("--x-max", type=float, default=16.0)
    p.set_defaults(func=cmd_verify_algebra)

    p = sub.add_parser("compare-propagators", parents=[common], help="exact, Crank-Nicolson and Magnus routes")
    _preset_args(p)
    p.add_argument("--t", type=_floats, default=[0.0, 0.1, 0.3], help="comma separated times")
    p.add_argument("--n", type=_power_of_two, default=512)
    p.add_argument("--x-max", type=float, default=16.0)
    p.add_argument("--x0", type=float, default=0.5)
    p.add_argument("--p0", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--cn-dt", type=float, default=1e-4)
    p.add_argument("--cn-tol", type=float, default=1e-5)
    p.add_argument("--magnus-tol", type=float, default=1e-4)
    p.add_argument("--magnus-t-max", type=float, default=0.3,
                   help="Magnus distances are checked only up to this time")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("spectrum", parents=[common], help="H* eigenfunctions and Rayleigh quotients")
    _preset_args(p)
    p.add_argument("--omega-tilde", type=float)
    p.add_argument("--gamma-tilde", type=float)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--t", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--n", type=_power_of_two, default=512)
    p.add_argument("--x-max", type=float, default=16.0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("dump-basis", parents=[common], help="sample u1, u2, u_p and the Wronskian")
    _preset_args(p)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--t-min", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=201)
    p.set_defaults(func=cmd_dump_basis)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    rep = Reporter(args.quiet)
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = _show_warning
        try:
            return args.func(args, rep)
        except (ConfigParse, UnknownPreset) as exc:
            msg = exc.args[0] if isinstance(exc, UnknownPreset) else str(exc)
            print(f"qat-lab: error: {msg}", file=sys.stderr)
            return EXIT_USAGE
        except QatError as exc:
            print(f"qat-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_FAIL


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"qat-lab: warning: {category.__name__}: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
