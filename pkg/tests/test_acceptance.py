"""Acceptance gate: twelve end-to-end criteria, one test (and one printed
pass/fail line) each. Shared solves are memoized at module scope so the
suite stays inside the runtime budgets."""
import time

import numpy as np
import pytest

from einc import (
    BravaisLattice,
    CharacteristicFunction,
    IsoTensor4,
    PeriodicGrid,
    SolveOptions,
    Tensor4,
    bitter_crum,
    build_laminate,
    build_multi,
    build_single,
    check_necessary_condition,
    effective_form_numeric,
    effective_tensor_closed,
    extract_coincident,
    hs_bound,
    label_components,
    oracle_qp_solve,
    predicted_theta,
    r_matrix_Q,
    sample,
    solve_periodic,
    trace_bounds,
    tuned_omega,
    verify_einclusion,
)
from einc.einclusion import (
    center_mask,
    connected_components,
    euler_characteristic_3d,
    isoperimetric_ratio,
)

LAT2 = BravaisLattice(np.eye(2))
_CACHE = {}


def _line(num, name, ok, detail=""):
    print(f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} {name} failed: {detail}"


def _disk_solve(f, n=256):
    key = ("disk", f, n)
    if key not in _CACHE:
        grid = PeriodicGrid(LAT2, (n, n))
        phi = _CACHE.setdefault(("disk_phi", n), sample(build_single(-np.eye(2), LAT2), grid))
        opts = SolveOptions(tol_energy=1e-11, omega=tuned_omega(grid))
        _CACHE[key] = solve_periodic(grid, phi, f, opts)
    return _CACHE[key]


def _disk_mask(f, a=0.001, n=256):
    return extract_coincident(_disk_solve(f, n), a=a)


def _disk_labeling(f):
    key = ("label", f)
    if key not in _CACHE:
        sol = _disk_solve(f)
        _CACHE[key] = label_components(sol, _disk_mask(f), [-np.eye(2)])
    return _CACHE[key]


def _two_piece_solve():
    if "two_piece" not in _CACHE:
        lat = BravaisLattice(2.0 * np.eye(2))
        grid = PeriodicGrid(lat, (256, 256))
        Q1, Q2 = -np.eye(2), -np.diag([2.0, 3.0])
        d = np.array([1.0, 1.0])
        phi = sample(build_multi([(Q1, d, 0.0), (Q2, d, 0.2)], lat), grid)
        opts = SolveOptions(tol_energy=1e-11, omega=tuned_omega(grid))
        t0 = time.perf_counter()
        sol = solve_periodic(grid, phi, 14.0625, opts)
        mask = extract_coincident(sol, a=0.01)
        labeling = label_components(sol, mask, [Q1, Q2])
        _CACHE["two_piece"] = (sol, labeling, time.perf_counter() - t0)
    return _CACHE["two_piece"]


def _solve_3d():
    if "solve3d" not in _CACHE:
        lat = BravaisLattice(2.0 * np.eye(3))
        grid = PeriodicGrid(lat, (64, 64, 64))
        Q = -np.diag([3.0, 3.0, 1.0])
        t0 = time.perf_counter()
        phi = sample(build_single(Q, lat), grid)
        f = 0.37 * 7.0 / 0.63
        sol = solve_periodic(grid, phi, f, SolveOptions(tol_energy=1e-11, omega=tuned_omega(grid)))
        mask = extract_coincident(sol, a=0.01)
        labeling = label_components(sol, mask, [Q])
        _CACHE["solve3d"] = (sol, mask, labeling, time.perf_counter() - t0)
    return _CACHE["solve3d"]


# ---------------------------------------------------------------- criterion 1
def test_criterion_01_oracle_equivalence():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(50):
        if trial % 2 == 0:
            n = int(rng.integers(16, 100))
            lat = BravaisLattice(np.eye(1))
            grid = PeriodicGrid(lat, (n,))
            a = -float(rng.uniform(0.5, 3.0))
            ob = build_laminate(a, [1.0], lat)
        else:
            shape = [(8, 8), (8, 12), (10, 10), (6, 16)][trial % 4]
            grid = PeriodicGrid(LAT2, shape)
            lam = -rng.uniform(0.5, 3.0, size=2)
            ob = build_single(np.diag(lam), LAT2)
        phi = sample(ob, grid)
        f = float(rng.uniform(0.3, 3.0))
        sol = solve_periodic(grid, phi, f, SolveOptions(tol_energy=1e-14, max_iters=400_000, tol_residual=1e-10))
        ora = oracle_qp_solve(grid, phi, f)
        worst = max(worst, float(np.max(np.abs(sol.u.values - ora.u.values))))
    dt = time.perf_counter() - t0
    _line(1, "oracle equivalence", worst < 1e-8 and dt < 10.0,
          f"(max dev {worst:.2e}, {dt:.1f}s)")


# ---------------------------------------------------------------- criterion 2
def test_criterion_02_laminate_closed_form():
    n = 512
    lat = BravaisLattice(np.eye(1))
    grid = PeriodicGrid(lat, (n,))
    phi = sample(build_laminate(-1.0, [1.0], lat), grid)
    t0 = time.perf_counter()
    sol = solve_periodic(grid, phi, 1.0, SolveOptions(tol_energy=1e-15))
    dt = time.perf_counter() - t0
    mask = extract_coincident(sol, a=0.001)
    theta = float(np.mean(mask))
    # closed form: contact on [0, 1/4] u [3/4, 1): u = phi = -dist(x, Z)^2/2,
    # free on (1/4, 3/4): u = x^2/2 - x/2 + 1/16
    x = grid.cartesian_nodes()[..., 0]
    dist = np.minimum(x, 1.0 - x)
    exact = np.where((x > 0.25) & (x < 0.75), 0.5 * x * x - 0.5 * x + 1.0 / 16.0,
                     -0.5 * dist * dist)
    udev = float(np.max(np.abs(sol.u.values - exact)))
    ok = abs(theta - 0.5) <= 2.0 / n and udev < 1e-6 and dt < 5.0
    _line(2, "laminate closed form", ok,
          f"(theta {theta:.4f}, u dev {udev:.2e}, {dt:.1f}s)")


# ---------------------------------------------------------------- criterion 3
def test_criterion_03_volume_fraction_law():
    devs = {}
    for f in (0.5, 1.0, 2.0, 4.0):
        t0 = time.perf_counter()
        theta = float(np.mean(_disk_mask(f)))
        dt = time.perf_counter() - t0
        devs[f] = abs(theta - predicted_theta(-np.eye(2), f))
        assert dt < 120.0
    ok = max(devs.values()) < 0.02
    _line(3, "volume-fraction law", ok,
          "(" + ", ".join(f"f={f}: dev {d:.4f}" for f, d in devs.items()) + ")")


# ---------------------------------------------------------------- criterion 4
def test_criterion_04_hessian_constancy():
    # normalize so the prescribed interior curvature is -(1-theta) Q/|Tr Q|
    # with Q/|Tr Q| of unit trace: divide u (hence H) by f - Tr Q
    worst = 0.0
    for f in (0.5, 1.0, 2.0, 4.0):
        sol = _disk_solve(f)
        labeling = _disk_labeling(f)
        report = verify_einclusion(sol, labeling)
        scale = f - np.trace(-np.eye(2))
        for comp in report["components"]:
            worst = max(worst, comp["max_hessian_deviation"] / scale)
    bound = 0.03 * np.linalg.norm(np.eye(2) / 2.0)  # ||Q/|Tr Q|||_F
    _line(4, "hessian constancy", worst < bound,
          f"(max normalized dev {worst:.4f} < {bound:.4f})")


# ---------------------------------------------------------------- criterion 5
def test_criterion_05_vigdergauz_shapes():
    thetas = (0.06, 0.34, 0.67)
    loads = tuple(2.0 * t / (1.0 - t) for t in thetas)
    ratios = []
    for f in loads:
        mask = _disk_mask(f)
        grid = _disk_solve(f).u.grid
        ratios.append(isoperimetric_ratio(mask, grid.axis_spacings()))
    # (a) circle fit at the smallest fraction
    mask = center_mask(_disk_mask(loads[0]))
    inner = mask.copy()
    for axis in range(2):
        inner &= np.roll(mask, 1, axis) & np.roll(mask, -1, axis)
    boundary = mask & ~inner
    ii, jj = np.nonzero(boundary)
    ci, cj = np.nonzero(mask)
    r = np.hypot(ii - ci.mean(), jj - cj.mean())
    fit = float(np.mean(r))
    raddev = float(np.max(np.abs(r - fit)) / fit)
    monotone = ratios[0] > ratios[1] > ratios[2]
    ok = raddev < 0.03 and monotone
    _line(5, "vigdergauz shapes", ok,
          f"(radial dev {raddev:.3f}, isoperimetric {[round(q, 4) for q in ratios]})")


# ---------------------------------------------------------------- criterion 6
def test_criterion_06_monotone_in_f():
    m1 = _disk_mask(1.0)
    m2 = _disk_mask(2.0)
    dil = m2.copy()
    for axis in range(2):
        dil |= np.roll(m2, 1, axis) | np.roll(m2, -1, axis)
    stray = int(np.count_nonzero(m1 & ~dil))
    _line(6, "coincident-set monotonicity in f", stray == 0,
          f"({stray} nodes of mask(f=1) outside 1-cell dilation of mask(f=2))")


# ---------------------------------------------------------------- criterion 7
def test_criterion_07_bitter_crum():
    f = 2.0 * 0.34 / 0.66
    chi = CharacteristicFunction(_disk_solve(f).u.grid, _disk_mask(f))
    L0 = IsoTensor4(1.0, 0.0, 0.0, 2)
    t0 = time.perf_counter()
    res = bitter_crum(chi, L0.kappa, L0)
    dt = time.perf_counter() - t0
    ok = res["relative_error"] < 0.01 and dt < 30.0
    _line(7, "bitter-crum energy", ok,
          f"(relative error {res['relative_error']:.2e}, {dt:.1f}s)")


# ---------------------------------------------------------------- criterion 8
def test_criterion_08_q_membership():
    f = 2.0 * 0.34 / 0.66
    chi = CharacteristicFunction(_disk_solve(f).u.grid, _disk_mask(f))
    Q = r_matrix_Q(chi)
    sym = float(np.max(np.abs(Q - Q.T)))
    min_eig = float(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min())
    tr_dev = abs(np.trace(Q) - 1.0)
    ok = sym < 1e-8 and min_eig > -1e-9 and tr_dev < 1e-6
    _line(8, "Q-membership of kappa*RI", ok,
          f"(asym {sym:.1e}, min eig {min_eig:.1e}, |Tr-1| {tr_dev:.1e})")


# ---------------------------------------------------------------- criterion 9
def test_criterion_09_bound_attainment():
    # E-inclusion with Q = I/2 at theta = 1/2 comes from load f = 2
    chi = CharacteristicFunction(_disk_solve(2.0).u.grid, _disk_mask(2.0))
    theta = chi.theta
    L0 = IsoTensor4(1.0, 0.0, 0.0, 2)
    L1 = Tensor4.from_iso(IsoTensor4(2.0, 0.0, 0.0, 2))
    F = np.eye(2)
    numeric = effective_form_numeric(chi, L1, L0, F)
    lower = Tensor4.from_iso(L0).form(F) + hs_bound(L1, L0, theta, F, "lower")
    hs_gap = abs(numeric - lower) / lower

    # effective conductivity matrix from scalar probes, against trace bound 1
    e = np.eye(2)
    Ae = np.diag([effective_form_numeric(chi, L1, L0, np.outer(e[0], e[i]))
                  for i in range(2)])
    tb = trace_bounds(2.0 * np.eye(2), np.eye(2), Ae, theta)
    lhs, rhs = tb["bound1"]
    tb_gap = abs(lhs - rhs) / abs(rhs)

    Qm = r_matrix_Q(chi)
    Le = effective_tensor_closed(L1, L0, Qm, theta)
    rng = np.random.default_rng(7)
    probe_gap = 0.0
    for _ in range(5):
        P = rng.normal(size=(2, 2))
        P = P + P.T
        num = effective_form_numeric(chi, L1, L0, P)
        probe_gap = max(probe_gap, abs(Le.form(P) - num) / abs(num))
    ok = hs_gap < 0.02 and tb_gap < 0.02 and probe_gap < 0.02
    _line(9, "bound attainment", ok,
          f"(HS gap {hs_gap:.4f}, trace gap {tb_gap:.4f}, closed-vs-numeric {probe_gap:.4f})")


# --------------------------------------------------------------- criterion 10
def test_criterion_10_necessary_condition():
    results = []
    for f in (0.5, 1.0, 2.0, 4.0):
        lab = _disk_labeling(f)
        results.append(check_necessary_condition(lab.K, lab.thetas))
    _, lab2, _ = _two_piece_solve()
    results.append(check_necessary_condition(lab2.K, lab2.thetas))
    _, _, lab3, _ = _solve_3d()
    results.append(check_necessary_condition(lab3.K, lab3.thetas))
    all_pass = all(r["satisfied"] and r["min_eig"] >= -1e-10 for r in results)
    violation = check_necessary_condition([np.diag([1.0, -1.0])], [0.5])
    ok = all_pass and not violation["satisfied"]
    _line(10, "necessary condition", ok,
          f"(suite min eig {min(r['min_eig'] for r in results):.2e}, "
          f"violation min eig {violation['min_eig']:.2f})")


# --------------------------------------------------------------- criterion 11
def test_criterion_11_two_piece_components():
    sol, labeling, dt = _two_piece_solve()
    th1, th2 = labeling.thetas  # Q1 annulus, Q2 inner core
    report = verify_einclusion(sol, labeling)
    hdev = [report["components"][i]["max_hessian_deviation"]
            / np.linalg.norm(labeling.K[i]) for i in range(2)]
    ok = (abs(th1 - 0.65) <= 0.03 and abs(th2 - 0.19) <= 0.03
          and max(hdev) < 0.05 and dt < 300.0)
    _line(11, "two-piece construction", ok,
          f"(fractions ({th1:.3f}, {th2:.3f}), hessian dev {max(hdev):.3f}, {dt:.0f}s)")


# --------------------------------------------------------------- criterion 12
def test_criterion_12_three_dimensional():
    _, mask, labeling, dt = _solve_3d()
    theta = float(np.mean(mask))
    _, count = connected_components(mask)
    chi_e = euler_characteristic_3d(center_mask(mask))
    ok = abs(theta - 0.37) <= 0.03 and count == 1 and chi_e == 1 and dt < 600.0
    _line(12, "three-dimensional construction", ok,
          f"(theta {theta:.3f}, components {count}, euler {chi_e}, {dt:.0f}s)")
