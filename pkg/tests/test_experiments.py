import dataclasses
import math

import numpy as np
import pytest

from linxfer import theory
from linxfer.estimators import fit_ridge
from linxfer.experiments import (BiasVarConfig, SweepConfig, bias_variance,
                                 default_gamma_grid, run_factor_tuning,
                                 run_sweep, tune_alpha)
from linxfer.taskmodel import CovarianceSpec, RelationSpec


def _records_equal(a, b):
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for fa, fb in zip(dataclasses.astuple(ra), dataclasses.astuple(rb)):
            if isinstance(fa, float) and math.isnan(fa):
                if not (isinstance(fb, float) and math.isnan(fb)):
                    return False
            elif fa != fb:
                return False
    return True


def _small_sweep(**kw):
    base = dict(gamma_tgt=2.0, m_list=(1, 2), d=16, gamma_src_grid=(0.5, 2.0),
                runs_per_point=8, val_size=200, test_size=200, master_seed=7)
    base.update(kw)
    return SweepConfig(**base)


def test_default_gamma_grid_shape():
    grid = default_gamma_grid()
    assert len(grid) == 25
    assert np.all(np.diff(grid) > 0)
    assert grid[0] == pytest.approx(0.1)
    assert grid[-1] == pytest.approx(5.1)
    assert 1.0 not in grid  # the interpolation threshold itself is excluded
    assert np.all(grid > 0)


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        _small_sweep(mode="nope")
    with pytest.raises(ValueError):
        _small_sweep(m_list=())
    with pytest.raises(ValueError):
        _small_sweep(sigma_eps_sq=-0.1)
    with pytest.raises(ValueError):
        _small_sweep(gamma_src_grid=(0.5, -1.0))
    with pytest.raises(ValueError):
        _small_sweep(runs_per_point=0)
    with pytest.raises(ValueError):
        _small_sweep(gamma_tgt=-2.0)


def test_run_sweep_structure_and_baselines():
    cfg = _small_sweep()
    records = run_sweep(cfg)
    # per gamma: one row per m, then the four no-transfer baselines
    assert len(records) == 2 * (2 + 4)
    for gi, gamma in enumerate(cfg.gamma_src_grid):
        block = records[gi * 6:(gi + 1) * 6]
        assert [r.gamma_src for r in block] == [gamma] * 6
        assert [r.method for r in block] == [
            "transfer_identity", "transfer_identity", "min_norm",
            "ridge_tuned", "ridge_formula", "null"]
        assert [r.m for r in block] == [1, 2, 0, 0, 0, 0]
        assert all(r.n_runs == 8 for r in block)
        assert all(r.mean_error > 0 and r.stderr >= 0 for r in block)
        for r in block:
            if r.method in ("transfer_identity", "ridge_tuned", "ridge_formula"):
                assert r.mean_alpha > 0
            else:
                assert math.isnan(r.mean_alpha)
            assert math.isnan(r.mean_rho)  # no factor tuning in this mode


def test_run_sweep_null_baseline_level():
    cfg = _small_sweep(runs_per_point=40)
    records = run_sweep(cfg, threads=2)
    nulls = [r for r in records if r.method == "null"]
    expected = cfg.sigma_eps_sq + cfg.b  # signal energy plus label noise
    for r in nulls:
        assert abs(r.mean_error - expected) < 5 * r.stderr + 0.05 * expected


def test_run_sweep_thread_determinism():
    cfg = _small_sweep()
    assert _records_equal(run_sweep(cfg, threads=1), run_sweep(cfg, threads=3))


def test_run_sweep_seed_sensitivity():
    a = run_sweep(_small_sweep())
    b = run_sweep(_small_sweep(master_seed=8))
    assert not _records_equal(a, b)


def test_run_sweep_rejects_tiny_sample_counts():
    with pytest.raises(ValueError):
        run_sweep(_small_sweep(gamma_src_grid=(100.0,)))  # n_tilde would hit 0


def test_run_sweep_debias_tuned_reports_rho():
    cfg = _small_sweep(mode="debias_tuned", gamma_src_grid=(2.0,), m_list=(2,),
                       runs_per_point=4, rho_grid=(0.25, 0.5, 1.0))
    rec = run_sweep(cfg)[0]
    assert rec.method == "transfer_debias_tuned"
    assert 0.25 <= rec.mean_rho <= 1.0
    assert rec.mean_alpha > 0


def test_run_sweep_scaled_true_h_factor_rule():
    # explicit factor and the n_tilde/d default rule are both accepted
    run_sweep(_small_sweep(mode="scaled_true_h", gamma_src_grid=(2.0,),
                           m_list=(1,), runs_per_point=2, scale_factor=0.5))
    run_sweep(_small_sweep(mode="scaled_true_h", gamma_src_grid=(2.0,),
                           m_list=(1,), runs_per_point=2))


def test_tune_alpha_matches_brute_force_and_breaks_ties_low():
    rng = np.random.default_rng(3)
    n, d = 24, 8
    beta = rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    y = X @ beta + 0.3 * rng.standard_normal(n)
    Xv = rng.standard_normal((40, d))
    yv = Xv @ beta + 0.3 * rng.standard_normal(40)
    grid = (0.01, 0.1, 1.0, 10.0)

    def fit(X_, y_, a):
        return fit_ridge(X_, y_, a, n)

    alpha = tune_alpha((X, y), (Xv, yv), fit, grid)
    losses = [float(np.mean((yv - Xv @ fit(X, y, a)) ** 2)) for a in grid]
    assert alpha == grid[int(np.argmin(losses))]

    # constant objective -> smallest grid value wins
    alpha_tie = tune_alpha((X, y), (np.zeros((5, d)), np.zeros(5)),
                           lambda X_, y_, a: np.zeros(d), grid)
    assert alpha_tie == grid[0]
    with pytest.raises(ValueError):
        tune_alpha((X, y), (Xv, yv), fit, (1.0, 0.5))


def _small_biasvar(**kw):
    base = dict(gamma_tgt=2.0, m_list=(2,), gamma_src_grid=(0.5,), d=16,
                main_runs=10, sub_runs=6, master_seed=11)
    base.update(kw)
    return BiasVarConfig(**base)


def test_bias_variance_identity_holds_exactly():
    records = bias_variance(_small_biasvar())
    assert len(records) == 1
    r = records[0]
    assert r.method == "transfer_identity"
    assert r.decomposition_residual < 1e-12
    assert r.bias_sq + r.variance == pytest.approx(
        r.total_error - 0.1, abs=1e-12)
    assert r.variance > 0
    assert r.bias_sq_stderr > 0 and r.variance_stderr > 0


def test_bias_variance_formula_alpha_matches_direct_formula():
    cfg = _small_biasvar(gamma_src_grid=(0.5, 4.0), m_list=(3,))
    records = bias_variance(cfg, threads=2)
    # the resolved weight is not part of the record; re-run with the value
    # the formula gives and demand identical output
    from linxfer.taskmodel import SourceTaskParams
    for gi, (rec, gamma) in enumerate(zip(records, cfg.gamma_src_grid)):
        n = int(cfg.d / cfg.gamma_tgt)
        nt = int(cfg.d / gamma)
        alpha, _ = theory.optimal_alpha_nonasym(
            [SourceTaskParams(n_tilde=nt, sigma_xi_sq=cfg.sigma_xi_sq,
                              sigma_eta_sq=cfg.sigma_eta_sq)] * 3,
            n, cfg.d, cfg.b, cfg.sigma_eps_sq)
        # random streams are keyed by grid position, so rerun the full grid
        # with the fixed weight and compare the matching row
        manual = bias_variance(_small_biasvar(gamma_src_grid=cfg.gamma_src_grid,
                                              m_list=(3,), alpha=float(alpha)))
        assert _records_equal([rec], [manual[gi]])


def test_bias_variance_config_validation():
    with pytest.raises(ValueError):
        _small_biasvar(mode="debias_tuned")
    with pytest.raises(ValueError):
        _small_biasvar(alpha=-1.0)
    with pytest.raises(ValueError):
        _small_biasvar(alpha="formula",
                       relation=RelationSpec(kind="subspace", r=4))
    with pytest.raises(ValueError):
        _small_biasvar(main_runs=1)
    # the formula weight is undefined on the interpolation band
    with pytest.raises(ValueError):
        bias_variance(_small_biasvar(gamma_src_grid=(1.0,)))


def test_run_factor_tuning_reports_baseline_factor():
    cfg = _small_sweep(gamma_src_grid=(2.0, 4.0), m_list=(2,),
                       runs_per_point=4)
    records = run_factor_tuning(cfg)
    assert len(records) == 2
    for rec, gamma in zip(records, (2.0, 4.0)):
        nt = int(cfg.d / gamma)
        assert rec.gamma_src == gamma
        assert rec.m == 2
        assert rec.rho_inv_gamma == pytest.approx(theory.rho(nt, cfg.d))
        assert rec.n_runs == 4
        assert rec.mean_rho > 0


def test_run_factor_tuning_deterministic():
    cfg = _small_sweep(gamma_src_grid=(2.0,), m_list=(2,), runs_per_point=4)
    assert _records_equal(run_factor_tuning(cfg, threads=2),
                          run_factor_tuning(cfg))


def test_expdecay_target_inputs_accepted():
    cfg = _small_sweep(gamma_src_grid=(0.5,), m_list=(1,), runs_per_point=3,
                       cov_x=CovarianceSpec(kind="expdecay", rate=0.5))
    records = run_sweep(cfg)
    assert all(np.isfinite(r.mean_error) for r in records)
