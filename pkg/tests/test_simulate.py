import math

import numpy as np
import pytest
from scipy import stats

from delaysurv.exceptions import SchemaError
from delaysurv.hazards import ConstantHazard
from delaysurv.numeric import RngStream
from delaysurv.simulate import (
    AccidentRecords,
    CompleteRecords,
    SimulationConfig,
    assemble_semi_synthetic,
    hidden_truth,
    observe,
    read_accident_csv,
    read_dataset_csv,
    semi_synthetic,
    simulate,
    simulate_complete,
    write_accident_csv,
    write_dataset_csv,
)


def _records(t1, t2, c):
    n = len(t1)
    return CompleteRecords(np.zeros((n, 0)), np.array(t1, float), np.array(t2, float), np.array(c, float))


def _cfg(**kw):
    base = dict(n=2000, accident=ConstantHazard(1.0), delay=ConstantHazard(5.0), censor=ConstantHazard(1.0),
                covariate_dim=1, seed=RngStream(5))
    base.update(kw)
    return SimulationConfig(**base)


def test_reproducible():
    a, b = simulate_complete(_cfg()), simulate_complete(_cfg())
    for f in ("x", "t1", "t2", "c"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_lln_mean():
    rec = simulate_complete(_cfg(n=100_000, accident=ConstantHazard(2.0)))
    assert rec.t1.mean() == pytest.approx(0.5, abs=0.01)


def test_covariate_support():
    rec = simulate_complete(_cfg())
    assert rec.x.shape == (2000, 1) and np.all(np.abs(rec.x) <= 1)


def test_external_covariates():
    law = np.linspace(-2, 2, 20).reshape(10, 2)
    rec = simulate_complete(_cfg(n=10, covariate_dim=2, covariate_law=law))
    np.testing.assert_array_equal(rec.x, law)


@pytest.mark.parametrize("t1,t2,c,tau,obs,hidden", [
    (0.3, 0.1, 5.0, 0.75, (0.4, 1, 0.3), (0.3, 1)),
    (0.3, 1.0, 5.0, 0.75, (0.75, 0, None), (0.3, 1)),
    (2.0, 1.0, 0.5, None, (0.5, 0, None), (0.5, 0)),
])
def test_observe_patterns(t1, t2, c, tau, obs, hidden):
    rec = _records([t1], [t2], [c])
    ds = observe(rec, tau)
    truth = hidden_truth(rec, tau)
    assert (ds.y[0], ds.v[0]) == pytest.approx(obs[:2])
    if obs[2] is None:
        assert np.isnan(ds.z[0])
    else:
        assert ds.z[0] == pytest.approx(obs[2])
    assert (truth.z[0], truth.w[0]) == pytest.approx(hidden)


def test_tie_resolves_to_accident():
    truth = hidden_truth(_records([0.5], [1.0], [0.5]))
    assert truth.w[0] == 1


def test_masking_invariants():
    ds, truth = simulate(_cfg(tau=0.75))
    rep = ds.v == 1
    assert np.all(truth.w[rep] == 1) and np.all(ds.z[rep] <= ds.y[rep]) and np.all(ds.y <= 0.75)
    assert np.all(np.isnan(ds.z[~rep])) and not np.any(np.isnan(ds.z[rep]))
    np.testing.assert_array_equal(ds.z[rep], truth.z[rep])


@pytest.mark.parametrize("wp,zp,r,c,expect", [
    (0, 1.0, 0.3, 2.0, (1.0, 1.0, 0, 0)),
    (1, 0.5, 0.1, 2.0, (0.5, 0.6, 1, 1)),
    (1, 0.5, 5.0, 2.0, (0.5, 2.0, 1, 0)),
])
def test_semi_synthetic_examples(wp, zp, r, c, expect):
    rec = AccidentRecords(np.zeros((1, 1)), np.array([zp]), np.array([wp]))
    draw = assemble_semi_synthetic(rec, [c], [r])
    z, y, w, v = expect
    assert draw.dataset.y[0] == pytest.approx(y) and draw.dataset.v[0] == v
    assert draw.truth.z[0] == pytest.approx(z) and draw.truth.w[0] == w


def test_semi_synthetic_draws_and_tau():
    rec = AccidentRecords(np.zeros((500, 1)), np.linspace(0.01, 3, 500), np.ones(500, dtype=int))
    draw = semi_synthetic(rec, 5.0, 1.0, RngStream(2), tau=0.75)
    assert np.all(draw.dataset.y <= 0.75)
    assert draw.dataset.tau == 0.75


def test_standardize():
    rec = AccidentRecords(np.zeros((3, 1)), np.array([1.0, 2.0, 4.0]), np.array([1, 0, 1]))
    np.testing.assert_allclose(rec.standardized().time, [0.5, 1.0, 2.0])


def test_admin_atom_frequency():
    from delaysurv.joint import ModelPair, admin_atom_probability
    cfg = _cfg(n=100_000, covariate_dim=0, tau=0.75)
    ds, _ = simulate(cfg)
    p = float(np.ravel(admin_atom_probability(ModelPair(cfg.accident, cfg.delay), cfg.censor, 0.75))[0])
    freq = np.mean((ds.y == 0.75) & (ds.v == 0))
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / ds.n)


def test_accident_csv_roundtrip(tmp_path):
    rec = AccidentRecords(np.array([[0.1, 2.0], [0.3, -1.0]]), np.array([1.5, 0.2]), np.array([1, 0], dtype=np.int8))
    path = tmp_path / "acc.csv"
    write_accident_csv(rec, path)
    back = read_accident_csv(path)
    np.testing.assert_array_equal(back.x, rec.x)
    np.testing.assert_array_equal(back.time, rec.time)
    np.testing.assert_array_equal(back.event, rec.event)


@pytest.mark.parametrize("text", ["", "a,b\n1,2\n", "x_1,time,event\n1,2\n", "x_1,time,event\n1,-2,1\n",
                                  "x_1,time,event\n1,2,3\n", "x_2,time,event\n1,2,1\n", "x_1,time,event\n"])
def test_accident_csv_schema_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(SchemaError):
        read_accident_csv(path)


def test_dataset_csv_roundtrip(tmp_path):
    ds, truth = simulate(_cfg(n=50, tau=0.75))
    path = tmp_path / "ds.csv"
    write_dataset_csv(ds, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x_1,y,v,z,w"
    unrep = [ln for ln in lines[1:] if ln.split(",")[2] == "0"]
    assert all(ln.endswith(",,") for ln in unrep)
    back = read_dataset_csv(path, tau=0.75)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.v, ds.v)
    write_dataset_csv(ds, tmp_path / "truth.csv", truth=truth)
    assert not any(ln.endswith(",,") for ln in (tmp_path / "truth.csv").read_text().splitlines())


def test_joint_law_chi_square():
    # binned (z, y) on reported rows against f1(z) f2(y - z) S_c(y)
    l1, l2, lc = 1.0, 2.0, 0.5
    cfg = _cfg(n=100_000, covariate_dim=0, accident=ConstantHazard(l1), delay=ConstantHazard(l2),
               censor=ConstantHazard(lc))
    ds, _ = simulate(cfg)
    rep = ds.v == 1
    edges = np.array([0.0, 0.3, 0.7, 1.2, 2.0, np.inf])
    counts, _, _ = np.histogram2d(ds.z[rep], ds.y[rep], bins=[edges, edges])

    # P(z in Zi, y in Yj, v=1) by the closed-form joint density, via product integration
    def g(z, y):
        return l1 * np.exp(-l1 * z) * l2 * np.exp(-l2 * (y - z)) * np.exp(-lc * y) * (y >= z)

    zz = np.linspace(0, 12, 2401)
    dz = zz[1] - zz[0]
    mid = zz[:-1] + dz / 2
    Z, Y = np.meshgrid(mid, mid, indexing="ij")
    dens = g(Z, Y) * dz * dz
    zi = np.digitize(mid, edges) - 1
    probs = np.zeros((5, 5))
    for a in range(5):
        for b in range(5):
            probs[a, b] = dens[np.ix_(zi == a, zi == b)].sum()
    keep = probs.ravel() > 1e-4
    expected = probs.ravel()[keep] / probs.ravel()[keep].sum() * counts.ravel()[keep].sum()
    chi2 = np.sum((counts.ravel()[keep] - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3
