"""Acceptance criteria 1-10, one PASS/FAIL line each."""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import random_smooth_map, record_criterion
from viscofree.constitutive import MaterialParams
from viscofree.diagnostics import (
    boundary_layer_indicator,
    energy_audit,
    jacobi_residual,
    layer_baseline,
    normal_system_matrix,
    q_eqn_residual,
)
from viscofree.dynamics import RunConfig, equilibrium_state, simulate, stable_dt, well_prepared_initial
from viscofree.experiments import NO_LAYER, ablation_config, default_sweep_config, layer_study, mms_order_study, viscosity_sweep
from viscofree.geometry import GeometryCache, metric_decomp_residual, piola_residual
from viscofree.grid_ops import Grid
from viscofree.io_cli import cli, parse_config, read_snapshot, write_snapshot

THREADS = min(4, os.cpu_count() or 1)
# constant in the dt + h^2 bound of criterion 5
CONSISTENCY_C = 4.0


def test_criterion_01_exact_identities():
    g = Grid(64, 33)
    rng = np.random.Generator(np.random.PCG64(1))
    p = MaterialParams()
    t0 = time.perf_counter()
    worst = dict(piola=0.0, decomp=0.0, cofactor=0.0, sym=0.0, eig=0.0)
    for _ in range(100):
        c = GeometryCache.build(random_smooth_map(g, rng), g, "second_order", j_floor=None)
        worst["piola"] = max(worst["piola"], piola_residual(c.a, g, "interior"))
        worst["decomp"] = max(worst["decomp"], metric_decomp_residual(c.a, c.grad_eta))
        prod = np.einsum("ik...,jk...->ij...", c.a, c.grad_eta)
        rel = np.abs(prod - np.eye(2)[:, :, None, None] * c.J) / np.abs(c.J)
        worst["cofactor"] = max(worst["cofactor"], float(np.max(rel)))
        N = normal_system_matrix(c, p, g)
        worst["sym"] = max(worst["sym"], float(np.max(np.abs(N.calA - N.calA.swapaxes(0, 1)))))
        ev = np.linalg.eigvalsh(np.moveaxis(N.calA, (0, 1), (-2, -1)))[..., 0]
        worst["eig"] = max(worst["eig"], float(np.max(np.abs(ev - p.rho0 * c.J) / (p.rho0 * c.J))))
    elapsed = time.perf_counter() - t0
    ok = (
        worst["piola"] <= 1e-12
        and worst["decomp"] <= 1e-13
        and worst["cofactor"] <= 1e-12
        and worst["sym"] == 0.0
        and worst["eig"] <= 1e-12
        and elapsed < 10.0
    )
    detail = "  ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"  ({elapsed:.1f} s)"
    assert record_criterion(1, ok, detail) and ok


def test_criterion_02_equilibrium_preservation():
    g = Grid(64, 33)
    t0 = time.perf_counter()
    drift = 0.0
    for sigma in (0.0, 0.05, 1.0):
        for eps in (0.0, 1e-2):
            p = MaterialParams(sigma=sigma, epsilon=eps)
            assert p.rho0 == 1.0 and p.p_e == 1.0 and p.gamma == 2.0
            fin = simulate(RunConfig(g, p, 1.0), equilibrium_state(g)).final
            drift = max(drift, float(np.max(np.abs(fin.eta - g.identity_map())) + np.max(np.abs(fin.v))))
    elapsed = time.perf_counter() - t0
    ok = drift <= 1e-12 and elapsed < 30.0
    assert record_criterion(2, ok, f"max drift {drift:.1e} over sigma in (0, 0.05, 1), eps in (0, 0.01)  ({elapsed:.1f} s)") and ok


def test_criterion_03_mms_spatial_order():
    t0 = time.perf_counter()
    study = mms_order_study([(32, 17), (64, 33), (128, 65)], t_end=0.5)
    elapsed = time.perf_counter() - t0
    ok = study.within(1.9, 2.2) and elapsed < 300.0
    local = ", ".join(f"{x:.2f}" for x in study.local_orders)
    assert record_criterion(3, ok, f"H1 order {study.order:.3f} (local {local}), status {study.status}  ({elapsed:.1f} s)") and ok


def test_criterion_04_basic_energy_audit():
    g = Grid(64, 33)
    p = MaterialParams(epsilon=1e-2, sigma=0.05)
    init = well_prepared_initial(g, p)
    dt0 = stable_dt(init, p, g, 0.5)
    t0 = time.perf_counter()
    audits = [energy_audit(RunConfig(g, p, 0.5, dt=dt0 / 2**k), init) for k in range(3)]
    elapsed = time.perf_counter() - t0
    res = [a.max_residual for a in audits]
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    min_d = min(a.min_dissipation for a in audits)
    ok = bool(np.all(rates >= 0.9)) and min_d >= 0.0 and all(a.passed for a in audits) and elapsed < 120.0
    detail = f"residuals {', '.join(f'{r:.2e}' for r in res)}  rates {', '.join(f'{r:.2f}' for r in rates)}  min D {min_d:.1e}  ({elapsed:.1f} s)"
    assert record_criterion(4, ok, detail) and ok


def test_criterion_05_jacobi_and_pressure_consistency():
    g = Grid(64, 33)
    p = MaterialParams(epsilon=1e-2, sigma=0.05)
    init = well_prepared_initial(g, p)
    dt0 = stable_dt(init, p, g, 0.5)
    h2 = max(g.h1, g.h2) ** 2
    t0 = time.perf_counter()
    jr, qr, bound = [], [], []
    for k in range(3):
        dt = dt0 / 2**k
        traj = simulate(RunConfig(g, p, 0.5, dt=dt, output_interval=0.05), init)
        jr.append(max(jacobi_residual(s.history, g) for s in traj.snapshots[1:]))
        qr.append(max(q_eqn_residual(s.history, p, g) for s in traj.snapshots[1:]))
        bound.append(CONSISTENCY_C * (dt + h2))
    elapsed = time.perf_counter() - t0
    rj = np.log2(np.array(jr[:-1]) / np.array(jr[1:]))
    rq = np.log2(np.array(qr[:-1]) / np.array(qr[1:]))
    ok = (
        all(j <= b and q <= b for j, q, b in zip(jr, qr, bound))
        and bool(np.all(rj >= 0.8) and np.all(rq >= 0.8))
        and elapsed < 120.0
    )
    detail = (
        f"jacobi {', '.join(f'{x:.2e}' for x in jr)} (rates {', '.join(f'{x:.2f}' for x in rj)})  "
        f"q {', '.join(f'{x:.2e}' for x in qr)} (rates {', '.join(f'{x:.2f}' for x in rq)})  "
        f"C = {CONSISTENCY_C:g}  ({elapsed:.1f} s)"
    )
    assert record_criterion(5, ok, detail) and ok


@pytest.fixture(scope="module")
def default_sweeps():
    cfg = default_sweep_config(threads=THREADS)
    t0 = time.perf_counter()
    ve = viscosity_sweep(cfg)
    t1 = time.perf_counter()
    abl = viscosity_sweep(ablation_config(cfg))
    t2 = time.perf_counter()
    return ve, abl, t1 - t0, t2 - t1


def test_criterion_06_vanishing_viscosity_rate(default_sweeps):
    ve, _, elapsed, _ = default_sweeps
    fit = ve.fit
    ok = ve.ok and ve.rate_verdict() and elapsed < 900.0
    if fit is None:
        detail = f"status {ve.status}"
    else:
        errs = ", ".join(f"{e:.2e}" for e in ve.e_H1)
        detail = f"e_H1 {errs}  monotone {ve.monotone()}  alpha {fit.slope:.3f}  R2 {fit.r2:.4f}  ({elapsed:.1f} s, threads={THREADS})"
    assert record_criterion(6, ok, detail) and ok


def test_criterion_07_uniform_energy(default_sweeps):
    ve = default_sweeps[0]
    ratio = ve.uniform_energy_ratio() if ve.ok else math.nan
    ok = ve.ok and ve.uniform_energy_verdict(2.0)
    assert record_criterion(7, ok, f"sup E over eps / E at eps_max = {ratio:.3f} (limit 2)") and ok


def test_criterion_08_no_boundary_layer(default_sweeps):
    ve, abl, t_ve, t_abl = default_sweeps
    if not (ve.ok and abl.ok):
        assert record_criterion(8, False, f"sweep status {ve.status}, ablation status {abl.status}") and False
    lv, la = layer_study(ve, 0.1), layer_study(abl, 0.1)
    ok = lv.verdict == NO_LAYER and lv.growth <= 3.0 and la.growth > lv.growth and t_ve + t_abl < 1200.0
    detail = (
        f"viscoelastic {lv.verdict} growth {lv.growth:.3f}  "
        f"ablation {la.verdict} growth {la.growth:.3f}  ({t_ve + t_abl:.1f} s)"
    )
    assert record_criterion(8, ok, detail) and ok


def test_criterion_09_layer_detector_calibration():
    t0 = time.perf_counter()
    delta = 0.1
    ell = delta / 4
    ratios = {}
    for n2 in (65, 129):
        g = Grid(16, n2)
        _, X2 = g.mesh()
        prof = np.exp(-X2 / ell) + np.exp(-(1 - X2) / ell)
        ratios[n2] = boundary_layer_indicator(np.stack([prof, 0 * prof]), g, delta) / layer_baseline(g, delta)
    elapsed = time.perf_counter() - t0
    ok = min(ratios.values()) >= 5.0 and elapsed < 1.0
    detail = "  ".join(f"n2={n}: {r:.1f}x baseline" for n, r in ratios.items()) + f"  ({elapsed * 1e3:.0f} ms)"
    assert record_criterion(9, ok, detail) and ok


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    cfg_path = tmp_path / "repro.toml"
    cfg_path.write_text(
        "[grid]\nn1 = 32\nn2 = 17\n\n[run]\nt_end = 0.2\n\n"
        "[experiment]\ninitial = \"well_prepared\"\namplitude = 0.002\nseed = 3\n"
        "eps_list = [1e-2, 1e-3, 1e-4, 0.0]\nablation = false\n"
    )
    first = tmp_path / "first"
    cli(["sweep", str(cfg_path), "--output-dir", str(first), "--threads", str(THREADS)])
    manifest = first / "manifest.json"
    shas, csvs = [], []
    for k in range(2):
        out = tmp_path / f"replay{k}"
        cli(["sweep", str(manifest), "--output-dir", str(out), "--threads", str(THREADS)])
        shas.append(json.loads((out / "manifest.json").read_text())["results"]["viscoelastic"]["result_sha256"])
        csvs.append((out / "sweep_viscoelastic.csv").read_bytes())
    shas.append(json.loads(manifest.read_text())["results"]["viscoelastic"]["result_sha256"])
    sc = parse_config(manifest).sweep_config(THREADS)
    direct = [viscosity_sweep(sc).to_bytes() for _ in range(2)]
    sweep_ok = len(set(shas)) == 1 and csvs[0] == csvs[1] and direct[0] == direct[1]

    g = sc.grid
    p = sc.params
    fin = simulate(RunConfig(g, p, 0.1), sc.initial_state()).final
    a, b = tmp_path / "a.vfs", tmp_path / "b.vfs"
    write_snapshot(a, fin, g)
    back, g2, _ = read_snapshot(a)
    write_snapshot(b, back, g2)
    snap_ok = (
        g2 == g
        and back.t == fin.t
        and np.array_equal(back.eta, fin.eta)
        and np.array_equal(back.v, fin.v)
        and a.read_bytes() == b.read_bytes()
    )
    elapsed = time.perf_counter() - t0
    ok = sweep_ok and snap_ok and elapsed < 60.0
    detail = f"sweep sha {shas[0][:12]} x{len(shas)} identical {sweep_ok}  snapshot roundtrip bit-exact {snap_ok}  ({elapsed:.1f} s)"
    assert record_criterion(10, ok, detail) and ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
