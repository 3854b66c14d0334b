import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochapprox import finprob as fp
from stochapprox import process as pe
from stochapprox.algorithms import Linear, RMTransform, rm_spec, RootFindingProblem
from stochapprox.errors import MeasurabilityError, PreconditionError, SizeGuardError
from stochapprox.series import builtin

BINARY = (np.array([1.0, -1.0]), np.array([0.5, 0.5]))


def rm_linear(sigma=1.0, x0=0.0):
    p = RootFindingProblem.from_map(Linear(2.0, 1.0), 0.0, pe.NoiseModel.gaussian(sigma))
    return rm_spec(p, builtin("harmonic1"), x0)


# -- noise ---------------------------------------------------------------------

def test_discrete_noise_is_recentered():
    nm = pe.NoiseModel.discrete([0.0, 1.0, 5.0], [0.5, 0.25, 0.25])
    assert abs(np.dot(nm.probs, nm.values)) < 1e-15
    with pytest.raises(ValueError):
        pe.NoiseModel.discrete([1.0, 2.0], [0.5, 0.6])


def test_closed_form_variances():
    assert pe.NoiseModel.gaussian(2.0).variance(3) == 4.0
    assert pe.NoiseModel.uniform(3.0).variance(1) == pytest.approx(3.0)
    disc = pe.NoiseModel.discrete([-1.0, 2.0], [2 / 3, 1 / 3])
    assert disc.variance(1) == pytest.approx(2.0)
    paired = pe.NoiseModel.gaussian(1.0).rescaled(builtin("inv_n"), paired=True)
    assert paired.variance(4) == pytest.approx(2.0 / 16)


@pytest.mark.parametrize(
    "noise",
    [
        pe.NoiseModel.gaussian(builtin("harmonic1")),
        pe.NoiseModel.uniform(0.5),
        pe.NoiseModel.discrete([0.0, 1.0, 3.0], [0.2, 0.5, 0.3], scale=builtin("inv_sqrt")),
        pe.NoiseModel.uniform(1.0).rescaled(builtin("inv_n"), paired=True),
    ],
)
def test_closed_form_variance_matches_exact_second_moment(noise):
    ep = pe.build_exact(noise.alphabet, pe.Identity(), 0.0, 4)
    for n in range(1, 5):
        m2 = fp.expectation(ep.space, ep.W(n) ** 2)
        assert abs(m2 - noise.variance(n)) < 1e-12


def test_binary_alphabet_matches_variance():
    nm = pe.NoiseModel.uniform(2.0)
    v, p = nm.binary_alphabet(3)
    assert np.dot(p, v) == 0.0
    assert np.dot(p, v * v) == pytest.approx(nm.variance(3), rel=1e-15)


def test_draws_have_the_declared_law():
    nm = pe.NoiseModel.gaussian(2.0)
    w = np.concatenate([nm.draw(s, 2000) for s in range(50)])
    assert abs(w.mean()) < 0.05
    assert w.var() == pytest.approx(4.0, rel=0.03)
    u = pe.NoiseModel.uniform(1.0).draw(0, 10_000)
    assert u.min() >= -1.0 and u.max() <= 1.0
    d = pe.NoiseModel.discrete([0.0, 1.0], [0.25, 0.75]).draw(0, 10_000)
    assert set(np.unique(d)) <= {-0.75, 0.25}
    assert np.mean(d == 0.25) == pytest.approx(0.75, abs=0.02)


# -- simulation ----------------------------------------------------------------

def test_identity_with_zero_noise_is_constant():
    spec = pe.ProcessSpec(pe.Identity(), pe.NoiseModel.zero(), 3.0, 3.0)
    tr = pe.simulate(spec, 0, 50)
    np.testing.assert_array_equal(tr.xs, np.full(50, 3.0))


def test_noiseless_rm_telescopes():
    p = RootFindingProblem.from_map(Linear(1.0, 0.0), 0.0, None)
    tr = pe.simulate(rm_spec(p, builtin("harmonic1"), 7.0), 0, 1000)
    N = np.arange(1, 1001)
    np.testing.assert_allclose(tr.xs, 7.0 / N, rtol=1e-12)


def test_recurrence_is_exact_as_stored():
    tr = pe.simulate(rm_linear(), 4, 5000)
    np.testing.assert_array_equal(tr.xs[1:], tr.ts + tr.ws)
    assert tr.xs.size == 5000 and tr.ts.size == 4999


def test_determinism_and_batch_independence():
    spec = rm_linear()
    a = pe.simulate(spec, 11, 2000)
    b = pe.simulate(spec, 11, 2000)
    c = pe.simulate_batch(spec, [3, 11, 20], 2000)[1]
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.xs, c.xs)
    assert not np.array_equal(a.xs, pe.simulate(spec, 12, 2000).xs)


def test_horizon_one():
    tr = pe.simulate(rm_linear(x0=2.0), 0, 1)
    np.testing.assert_array_equal(tr.xs, [2.0])
    assert tr.ts.size == 0
    with pytest.raises(PreconditionError):
        pe.simulate(rm_linear(), 0, 0)


def test_divergence_is_flagged_at_first_offending_value():
    spec = pe.ProcessSpec(pe.AffineStep(2.0, 0.0), pe.NoiseModel.zero(), 0.0, 1.0)
    tr = pe.simulate(spec, 0, 100)
    # x_n = 2^(n-1); 2^40 is the first power above 1e12
    assert tr.diverged_at == 41
    assert tr.xs.size == 41 and tr.xs[-1] == 2.0**40


def test_general_transform_sees_full_history():
    def running_mean(n, hist, aux):
        return float(np.mean(hist))

    spec = pe.ProcessSpec(running_mean, pe.NoiseModel.gaussian(0.1), 0.0, 1.0)
    tr = pe.simulate(spec, 2, 30)
    for n in range(1, 30):
        assert tr.ts[n - 1] == np.mean(tr.xs[:n])
    np.testing.assert_array_equal(tr.xs[1:], tr.ts + tr.ws)


class NoisyGain(pe.MarkovTransform):
    def step(self, n, x, aux=None):
        return x * (0.5 + 0.1 * aux)


def test_adapted_transform_does_not_shift_noise():
    noise = pe.NoiseModel.gaussian(1.0)
    plain = pe.simulate(pe.ProcessSpec(pe.AffineStep(0.5, 0.0), noise, 0.0, 1.0), 9, 200)
    adapted = pe.simulate(pe.ProcessSpec(NoisyGain(), noise, 0.0, 1.0, "adapted"), 9, 200)
    np.testing.assert_array_equal(plain.ws, adapted.ws)
    assert not np.array_equal(plain.ts, adapted.ts)


def test_trajectory_csv():
    spec = pe.ProcessSpec(pe.Identity(), pe.NoiseModel.zero(), 0.0, 1.5)
    buf = io.StringIO()
    pe.simulate(spec, 0, 3).write_csv(buf)
    assert buf.getvalue() == "n,x,t,w\n1,1.5,1.5,0.0\n2,1.5,1.5,0.0\n3,1.5,,\n"


# -- exact mode ------------------------------------------------------------------

def test_exact_structure_counts():
    ep = pe.build_exact(BINARY, pe.Identity(), 0.0, 2)
    assert ep.space.size == 4
    assert [lvl.block_count for lvl in ep.filtration.levels] == [1, 2, 4]


def test_exact_single_outcome():
    ep = pe.build_exact((np.array([0.3]), np.array([1.0])), pe.AffineStep(0.5, 1.0), 0.0, 5)
    assert ep.space.size == 1
    x = 0.0
    for n in range(1, 6):
        x = 0.5 * x + 1.0 + 0.3
        assert ep.X(n + 1)[0] == pytest.approx(x)


def test_exact_4096_outcomes():
    ep = pe.build_exact(BINARY, pe.Identity(), 0.0, 12)
    assert ep.space.size == 4096
    assert abs(ep.space.weights.sum() - 1.0) < 1e-12


def test_size_guard():
    with pytest.raises(SizeGuardError):
        pe.build_exact(BINARY, pe.Identity(), 0.0, 21)
    with pytest.raises(SizeGuardError):
        pe.build_exact(BINARY, pe.Identity(), 0.0, 5, max_outcomes=16)


def test_exact_recurrence_on_every_outcome():
    ep = pe.build_exact(BINARY, pe.AffineStep(0.9, 0.1), 1.0, 6)
    for n in range(1, 7):
        np.testing.assert_array_equal(ep.X(n + 1), ep.T(n) + ep.W(n))
        assert fp.is_measurable(ep.T(n), ep.sigma_field(n))
        assert fp.is_measurable(ep.X(n), ep.sigma_field(n))
        assert fp.is_measurable(ep.W(n), ep.sigma_field(n + 1))
        assert not fp.is_measurable(ep.W(n), ep.sigma_field(n))


def test_decompose_zero_noise():
    ep = pe.build_exact((np.array([0.0]), np.array([1.0])), pe.AffineStep(0.5, 0.0), 4.0, 3)
    d = pe.decompose(ep, 2)
    np.testing.assert_array_equal(d.w_hat, 0.0)
    with pytest.raises(PreconditionError):
        pe.decompose(ep, 4)


def test_decompose_recovers_rm_transform():
    spec = rm_linear(x0=1.0)
    ep = pe.build_exact(spec.noise.binary_alphabet, spec.transform, 1.0, 10)
    a = builtin("harmonic1")
    for n in range(1, 11):
        d = pe.decompose(ep, n)
        x = ep.X(n)
        closed = x + a(n) * (0.0 - (2.0 * x + 1.0))
        assert np.max(np.abs(d.t_hat - closed)) < 1e-12
        assert d.t_residual < 1e-12 and d.w_residual < 1e-12


@settings(max_examples=100, deadline=None)
@given(
    coef=st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    vals=st.lists(st.floats(-2, 2), min_size=2, max_size=3, unique=True),
    horizon=st.integers(1, 6),
)
def test_decompose_random_adapted_transform(coef, vals, horizon):
    def transform(n, hist, aux):
        return coef[0] * hist[-1] + coef[1] * np.sin(hist.sum()) + coef[2] * aux

    v = np.array(vals) - np.mean(vals)
    ep = pe.build_exact((v, np.full(v.size, 1.0 / v.size)), transform, 0.5, horizon, "adapted")
    for n in range(1, horizon + 1):
        d = pe.decompose(ep, n)
        assert d.t_residual < 1e-12 and d.w_residual < 1e-12


def test_martingale_increment():
    ep = pe.build_exact(BINARY, pe.AffineStep(0.7, 0.2), 0.0, 12)
    assert pe.check_martingale_increment(ep) < 1e-12
    biased = (np.array([1.1, -0.9]), np.array([0.5, 0.5]))
    ep = pe.build_exact(biased, pe.Identity(), 0.0, 8)
    assert pe.check_martingale_increment(ep) == pytest.approx(0.1, abs=1e-15)
    ep = pe.build_exact((np.array([0.0]), np.array([1.0])), pe.Identity(), 0.0, 5)
    assert pe.check_martingale_increment(ep) == 0.0


def test_loeve_orthogonality_and_diagonal():
    spec = rm_linear(x0=1.0)
    ep = pe.build_exact(spec.noise.binary_alphabet, spec.transform, 1.0, 12)
    ones = [np.ones(ep.space.size)] * 12
    assert pe.loeve_orthogonality(ep, ones) < 1e-12
    assert pe.loeve_orthogonality(ep, pe.sign_of_t(ep)) < 1e-12
    diag = pe.z_second_moments(ep, ones)
    np.testing.assert_allclose(diag, spec.noise.variance_values(12), rtol=1e-12)
    assert np.all(diag > 0)


def test_loeve_rejects_non_measurable_signs():
    ep = pe.build_exact(BINARY, pe.Identity(), 0.0, 3)
    signs = [np.ones(8), ep.W(2), np.ones(8)]
    with pytest.raises(MeasurabilityError):
        pe.loeve_orthogonality(ep, signs)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loeve_random_measurable_signs(seed):
    rng = np.random.default_rng(seed)
    ep = pe.build_exact((np.array([2.0, -1.0]), np.array([1 / 3, 2 / 3])), pe.AffineStep(0.9, 0.0), 1.0, 8)
    signs = []
    for n in range(1, 9):
        part = ep.sigma_field(n)
        signs.append(rng.choice([-1.0, 0.0, 1.0], part.block_count)[part.block_of])
    assert pe.loeve_orthogonality(ep, signs) < 1e-12


# -- Monte Carlo -----------------------------------------------------------------

def test_zero_noise_contraction_converges_for_every_seed():
    spec = pe.ProcessSpec(pe.AffineStep(0.5, 0.0), pe.NoiseModel.zero(), 0.0, 10.0)
    rep = pe.monte_carlo_convergence(spec, range(5), 100, 1e-6)
    assert rep.fraction_converged == 1.0


def test_huge_eps_counts_only_divergence():
    spec = pe.ProcessSpec(pe.AffineStep(1.2, 0.0), pe.NoiseModel.gaussian(1.0), 0.0, 0.0)
    rep = pe.monte_carlo_convergence(spec, range(10), 200, 1e18)
    assert rep.diverged_count == 10
    assert rep.fraction_converged == 1.0 - rep.diverged_count / 10
    d = json.loads(rep.to_json())
    assert all(s["terminal_error"] is None for s in d["per_seed"])


def _inverted_cdf(x, q):
    s = np.sort(x)
    return s[max(math.ceil(q * s.size) - 1, 0)]


def test_checkpoint_quantiles_match_independent_computation():
    spec = rm_linear()
    seeds = range(40, 73)
    rep = pe.monte_carlo_convergence(spec, seeds, 300, 0.1, checkpoints=(1, 10, 300))
    errs = {n: [] for n in (1, 10, 300)}
    for s in seeds:
        tr = pe.simulate(spec, s, 300)
        for n in errs:
            errs[n].append(abs(tr.xs[n - 1] + 0.5))
    for cp in rep.checkpoints:
        e = np.array(errs[cp.n])
        assert cp.median_err == _inverted_cdf(e, 0.5)
        assert cp.p90_err == _inverted_cdf(e, 0.9)
    np.testing.assert_array_equal(rep.terminal_errors, errs[300])


def test_report_is_invariant_under_jobs_and_seed_order():
    spec = rm_linear()
    a = pe.monte_carlo_convergence(spec, range(150), 500, 0.05, (100, 500), jobs=1)
    b = pe.monte_carlo_convergence(spec, reversed(range(150)), 500, 0.05, (100, 500), jobs=3)
    assert a.to_json() == b.to_json()


def test_report_schema():
    rep = pe.monte_carlo_convergence(rm_linear(), range(3, 6), 100, 0.5, (50,))
    d = json.loads(rep.to_json(timestamp="t"))
    assert d["schema_version"] == 1
    assert d["seeds"] == {"first": 3, "last": 5, "count": 3}
    assert {"spec_id", "horizon", "eps", "fraction_converged", "diverged_count", "checkpoints"} <= set(d)
    assert d["timestamp"] == "t"
    assert "timestamp" not in json.loads(rep.to_json())


def test_monte_carlo_preconditions():
    with pytest.raises(PreconditionError):
        pe.monte_carlo_convergence(rm_linear(), range(3), 10, 0.0)
    with pytest.raises(PreconditionError):
        pe.monte_carlo_convergence(rm_linear(), [], 10, 0.1)
    with pytest.raises(PreconditionError):
        pe.monte_carlo_convergence(rm_linear(), range(3), 10, 0.1, (11,))


def test_general_transform_monte_carlo_matches_simulate():
    def damp(n, hist, aux):
        return 0.5 * hist[-1]

    spec = pe.ProcessSpec(damp, pe.NoiseModel.gaussian(0.01), 0.0, 1.0)
    rep = pe.monte_carlo_convergence(spec, range(4), 50, 0.1, (5,))
    for s, e in zip(range(4), rep.terminal_errors):
        assert e == abs(pe.simulate(spec, s, 50).xs[-1])


def test_markov_and_general_paths_agree():
    class Half(pe.MarkovTransform):
        def step(self, n, x, aux=None):
            return 0.5 * x + 1.0 / n

    noise = pe.NoiseModel.gaussian(0.3)
    a = pe.simulate(pe.ProcessSpec(Half(), noise, 0.0, 1.0), 5, 100)
    b = pe.simulate(pe.ProcessSpec(lambda n, h, aux: 0.5 * h[-1] + 1.0 / n, noise, 0.0, 1.0), 5, 100)
    np.testing.assert_array_equal(a.xs, b.xs)


def test_rm_transform_vectorizes_over_steps():
    t = RMTransform(Linear(2.0, 1.0), 0.0, builtin("harmonic1"))
    n = np.array([1, 2, 3])
    np.testing.assert_allclose(t.step(n, np.zeros(3)), -1.0 / (n + 1))
