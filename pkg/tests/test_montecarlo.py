import math
from dataclasses import replace

import numpy as np
import pytest

from equivtest.critical import EquivalenceSpec, exact_power
from equivtest.errors import DomainError
from equivtest.montecarlo import (
    ReferenceSource,
    ReplicateStreams,
    SimConfig,
    _run_block,
    boundary_size_sweep,
    compare_procedures,
    estimate_rejection,
    power_curve,
    simulate_outcomes,
)


def ump_config(**kw):
    base = dict(procedure="ump_known_sigma", theta=(0.05, 1.0), n=400, replications=2000, seed=99, delta=1.0)
    base.update(kw)
    return SimConfig(**base)


class TestStreams:
    def test_matches_fresh_philox(self):
        streams = ReplicateStreams(2**63 + 5)
        for i in (0, 1, 17, 10**9):
            fresh = np.random.Generator(np.random.Philox(key=2**63 + 5, counter=[0, i, 0, 0]))
            assert np.array_equal(streams(i).standard_normal(50), fresh.standard_normal(50))

    def test_independent_of_call_order(self):
        streams = ReplicateStreams(1)
        a = streams(3).random(5)
        streams(4).random(1000)
        assert np.array_equal(streams(3).random(5), a)

    def test_distinct_seeds_and_indices_differ(self):
        s1, s2 = ReplicateStreams(1), ReplicateStreams(2)
        assert not np.array_equal(s1(0).random(4), s1(1).random(4))
        assert not np.array_equal(s1(0).random(4), s2(0).random(4))


class TestDeterminism:
    def test_same_seed_same_report(self):
        cfg = SimConfig(procedure="plugin", n=100, replications=500, seed=3)
        assert estimate_rejection(cfg) == estimate_rejection(cfg)

    def test_different_seed_different_outcomes(self):
        a, _ = simulate_outcomes(ump_config(seed=1))
        b, _ = simulate_outcomes(ump_config(seed=2))
        assert not np.array_equal(a, b)

    def test_worker_count_does_not_matter(self):
        cfg = SimConfig(procedure="tost", n=50, replications=600, seed=11, delta=3.0)
        one, _ = simulate_outcomes(cfg, workers=1)
        three, _ = simulate_outcomes(cfg, workers=3)
        assert np.array_equal(one, three)
        assert estimate_rejection(cfg, workers=1) == estimate_rejection(cfg, workers=2)

    def test_any_partition_gives_the_same_outcomes(self):
        cfg = [SimConfig(procedure="plugin", n=30, replications=50, seed=5)]
        whole, _ = _run_block(cfg, 0, 50)
        rng = np.random.default_rng(0)
        for _ in range(5):
            cuts = np.sort(rng.choice(np.arange(1, 50), size=4, replace=False))
            edges = [0, *cuts.tolist(), 50]
            parts = [_run_block(cfg, a, b)[0] for a, b in zip(edges[:-1], edges[1:])]
            assert np.array_equal(np.concatenate(parts, axis=1), whole)


class TestAccounting:
    def test_counts_add_up_and_se_formula(self):
        r = estimate_rejection(ump_config())
        assert r.n_reject + r.n_accept + r.n_error == r.replications
        done = r.n_reject + r.n_accept
        assert r.mc_standard_error**2 * done == pytest.approx(r.rejection_rate * (1 - r.rejection_rate), rel=1e-14)
        assert 0.0 <= r.ci95[0] <= r.rejection_rate <= r.ci95[1] <= 1.0

    def test_failed_replicates_are_counted(self):
        # three observations split at random: a group is often empty
        cfg = SimConfig(procedure="plugin", model="two_sample_normal", theta=(0, 0, 1), n=3, replications=400, seed=1)
        r = estimate_rejection(cfg)
        assert 0 < r.n_error < r.replications
        assert r.n_reject + r.n_accept + r.n_error == r.replications
        assert r.rejection_rate == r.n_reject / (r.n_reject + r.n_accept)
        assert sum(c for _, c in r.errors) == r.n_error
        assert all("DegenerateDataError" in m for m, _ in r.errors)

    def test_all_replicates_failing(self):
        r = estimate_rejection(SimConfig(procedure="tost", n=1, replications=20, seed=0))
        assert r.n_error == 20
        assert math.isnan(r.rejection_rate)
        assert r.z_discrepancy is None

    def test_ci_is_clamped(self):
        r = estimate_rejection(SimConfig(procedure="tost", n=400, replications=300, seed=0, delta=1.0))
        assert r.rejection_rate == 0.0
        assert r.ci95 == (0.0, 0.0)


class TestReferences:
    def test_sources(self):
        cases = {
            "ump_known_sigma": ReferenceSource.EXACT_POWER,
            "tost": ReferenceSource.TOST_LIMIT_EQ15,
            "plugin": ReferenceSource.BOUND_EQ9,
        }
        for proc, source in cases.items():
            r = estimate_rejection(SimConfig(procedure=proc, theta=(0.0, 1.0), n=50, replications=50, seed=0))
            assert r.reference_source is source
        r = estimate_rejection(
            SimConfig(
                procedure="ump_linear_gaussian",
                model="gaussian_mean",
                theta=(0.0, 0.0),
                n=1,
                replications=50,
                seed=0,
                model_options={"Sigma": [[1.0, 0.0], [0.0, 1.0]], "a": [1.0, 1.0]},
            )
        )
        assert r.reference_source is ReferenceSource.EXACT_POWER
        r = estimate_rejection(ump_config(reference="none", replications=10))
        assert r.reference_source is ReferenceSource.NONE and r.reference_value is None
        r = estimate_rejection(ump_config(reference="onesided", theta=(0.0, 1.0), replications=10))
        assert r.reference_source is ReferenceSource.ONESIDED_BOUND

    def test_z_discrepancy(self):
        r = estimate_rejection(ump_config())
        assert r.z_discrepancy == pytest.approx((r.rejection_rate - r.reference_value) / r.mc_standard_error)

    def test_local_alternative_by_shift_and_by_h(self):
        by_shift = SimConfig(procedure="plugin", theta=(0.0, 2.0), n=400, replications=10, seed=0, shift=0.5)
        by_h = SimConfig(procedure="plugin", theta=(0.0, 2.0), n=400, replications=10, seed=0, h=(0.5, 0.0))
        a, b = estimate_rejection(by_shift), estimate_rejection(by_h)
        assert a.theta == pytest.approx((0.025, 2.0))
        assert a.theta == b.theta
        # the envelope is evaluated at theta0, where sigma = 2
        assert a.reference_value == pytest.approx(exact_power(0.5, EquivalenceSpec(0.05, 1.0, 2.0)), rel=1e-14)


class TestSweeps:
    def test_ump_power_curve_matches_exact_power(self):
        cfg = SimConfig(procedure="ump_known_sigma", theta=(0.0, 1.0), n=25, replications=4000, seed=8, delta=2.0)
        reports = power_curve(cfg, [0.0, 0.5, 1.0, 1.5, 2.0])
        assert [r.grid_value for r in reports] == [0.0, 0.5, 1.0, 1.5, 2.0]
        for r in reports:
            assert abs(r.z_discrepancy) <= 3.0
        assert reports[-1].reference_value == pytest.approx(0.05, abs=1e-12)

    def test_power_curve_validation(self):
        with pytest.raises(DomainError):
            power_curve(ump_config(), [])
        with pytest.raises(DomainError):
            power_curve(ump_config(), [0.1, -0.2])

    def test_compare_on_identical_streams(self):
        cfg = SimConfig(procedure="plugin", theta=(0.0, 1.0), n=500, replications=3000, seed=4, delta=1.0)
        reports = compare_procedures(cfg, ["tost", "plugin"])
        assert reports["tost"].rejection_rate < 0.01
        assert reports["plugin"].rejection_rate > 0.06
        multi = power_curve(cfg, [0.0, 0.5], procedures=["tost", "plugin"])
        assert [(r.procedure, r.grid_value) for r in multi] == [("tost", 0.0), ("plugin", 0.0), ("tost", 0.5), ("plugin", 0.5)]
        assert multi[1] == replace(reports["plugin"], grid_value=0.0)

    def test_compare_requires_shared_stream(self):
        with pytest.raises(DomainError):
            simulate_outcomes([ump_config(seed=1), ump_config(seed=2)])

    def test_boundary_symmetry(self):
        cfg = ump_config(replications=4000)
        plus, minus = boundary_size_sweep(cfg, [(0.05, 1.0), (-0.05, 1.0)])
        se = math.hypot(plus.mc_standard_error, minus.mc_standard_error)
        assert abs(plus.rejection_rate - minus.rejection_rate) <= 3 * se
        assert plus.theta == (0.05, 1.0) and minus.theta == (-0.05, 1.0)

    def test_boundary_points_are_checked(self):
        with pytest.raises(DomainError):
            boundary_size_sweep(ump_config(), [(0.06, 1.0)])
        with pytest.raises(DomainError):
            boundary_size_sweep(ump_config(), [])

    @pytest.mark.slow
    def test_plugin_size_improves_with_n(self):
        gaps = []
        for n in (100, 400, 1600):
            cfg = SimConfig(procedure="plugin", theta=(1.0 / math.sqrt(n), 1.0), n=n, replications=20000, seed=21, delta=1.0)
            r = estimate_rejection(cfg)
            gaps.append((abs(r.rejection_rate - 0.05), r.mc_standard_error))
        for (g0, s0), (g1, s1) in zip(gaps, gaps[1:]):
            assert g1 <= g0 + 2 * math.hypot(s0, s1)

    def test_bernoulli_plugin_near_bound_at_large_n(self):
        cfg = SimConfig(procedure="plugin", model="bernoulli", theta=(0.5,), n=10_000, replications=2000, seed=2, delta=1.0)
        r = estimate_rejection(cfg)
        assert r.reference_value == pytest.approx(0.329302011495749, rel=1e-12)
        assert r.within(tol_abs=0.02, n_se=3.0)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(procedure="bogus"),
            dict(procedure="plugin", n=0),
            dict(procedure="plugin", replications=0),
            dict(procedure="plugin", seed=-1),
            dict(procedure="plugin", seed=2**64),
            dict(procedure="plugin", alpha=1.0),
            dict(procedure="plugin", delta=0.0),
            dict(procedure="plugin", shift=0.5, h=(0.1, 0.0)),
            dict(procedure="plugin", sigma_estimator="mad"),
            dict(procedure="plugin", theta=(0.0, -1.0)),
            dict(procedure="tost", model="bernoulli", theta=(0.5,)),
            dict(procedure="ump_linear_gaussian"),
            dict(procedure="plugin", model="bernoulli", theta=(0.5,), sigma_estimator="unbiased"),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(DomainError):
            SimConfig(**kw)

    def test_unbiased_scale_option(self):
        # delta / sigma is large here, where C shrinks as the scale estimate grows
        cfg = SimConfig(procedure="plugin", n=10, replications=400, seed=1, delta=4.0, sigma_estimator="unbiased")
        unbiased = estimate_rejection(cfg)
        mle = estimate_rejection(SimConfig(procedure="plugin", n=10, replications=400, seed=1, delta=4.0))
        assert unbiased.n_error == mle.n_error == 0
        assert unbiased.n_reject < mle.n_reject

    def test_to_dict_round_trip(self):
        cfg = ump_config(h=(0.1, 0.0))
        assert SimConfig(**{**cfg.to_dict(), "theta": tuple(cfg.theta), "h": cfg.h}) == cfg
