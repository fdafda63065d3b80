import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spnsurrogate.covariates import BasisDaily, MigrationKernelParams, compute_basis, synthetic_covariates
from spnsurrogate.errors import ConfigurationError
from spnsurrogate.model import (PARAM_NAMES, CoefficientBounds, CoefficientVector, FixedParams, ModelConfig,
                                RateRange, build_two_patch_net, compute_migration_rates, compute_mortality_rate,
                                compute_transmission_rates, constant_rate_schedule, human_places,
                                make_rate_schedule, mosquito_places, sample_coefficients)
from spnsurrogate.petri import simulate_horizon

B = CoefficientBounds()


def theta_from(**kw):
    v = np.zeros(len(PARAM_NAMES))
    for k, x in kw.items():
        v[PARAM_NAMES.index(k)] = x
    return CoefficientVector(v)


def flat_basis(T, Bb=0.3, Bm=0.03, E=0.002, L=0.4):
    return BasisDaily(*(np.full(T, x) for x in (Bb, Bm, E, L)))


class TestBounds:
    def test_gains(self):
        assert B.MH.gain == pytest.approx(0.79)
        assert B.HM.gain == pytest.approx(0.568)
        assert B.mu.gain == pytest.approx(0.28)

    def test_gain_vector_order(self):
        g = B.gains()
        assert g.shape == (13,)
        assert g[PARAM_NAMES.index("lambda_1")] == pytest.approx(0.79)
        assert g[PARAM_NAMES.index("eta_2")] == pytest.approx(0.568)
        assert g[PARAM_NAMES.index("rho_1")] == pytest.approx(0.28)

    def test_intercepts_are_minima(self):
        assert B.intercepts() == {"lambda_0": 0.01, "delta_0": 0.01, "gamma_0": 0.072, "eta_0": 0.072,
                                  "rho_0": 0.05}

    def test_empty_range_rejected(self):
        with pytest.raises(ConfigurationError):
            RateRange(0.5, 0.1)


class TestSampling:
    def test_ranges(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_coefficients(B, rng).values for _ in range(10_000)])
        assert np.all(draws >= 0)
        assert np.all(draws <= B.gains())

    def test_degenerate_bounds(self):
        z = CoefficientBounds(RateRange(0.1, 0.1), RateRange(0.2, 0.2), RateRange(0.3, 0.3))
        assert np.all(sample_coefficients(z, np.random.default_rng(1)).values == 0)

    def test_deterministic(self):
        a = sample_coefficients(B, np.random.default_rng(42))
        b = sample_coefficients(B, np.random.default_rng(42))
        assert np.array_equal(a.values, b.values)


class TestRates:
    def test_intercept_only(self):
        r = compute_transmission_rates(theta_from(lambda_1=0.5), 0.0, 0.0, 0.0, 0.0)
        assert r["beta_MH_ii"] == pytest.approx(0.01)
        assert r["beta_HM_ii"] == pytest.approx(0.072)

    def test_hand_evaluation(self):
        th = theta_from(lambda_1=0.2, lambda_2=0.1, lambda_3=0.05)
        r = compute_transmission_rates(th, 0.5, 0.5, 0.0, 0.0)
        assert r["beta_MH_ii"] == pytest.approx(0.1725, abs=1e-12)

    def test_clamped_to_max(self):
        th = CoefficientVector(B.gains())
        r = compute_transmission_rates(th, 1.0, 1.0, 1.0, 1.0)
        assert r["beta_MH_ii"] == pytest.approx(0.80)
        assert r["beta_HM_ij"] == pytest.approx(0.64)

    def test_between_uses_remote_covariates(self):
        th = CoefficientVector(B.gains() * 0.3)
        base = compute_transmission_rates(th, 0.2, 0.2, 0.2, 0.2)
        moved = compute_transmission_rates(th, 0.2, 0.2, 0.6, 0.6)
        assert moved["beta_MH_ii"] == base["beta_MH_ii"] and moved["beta_HM_ii"] == base["beta_HM_ii"]
        assert moved["beta_MH_ij"] > base["beta_MH_ij"] and moved["beta_HM_ij"] > base["beta_HM_ij"]

    @pytest.mark.parametrize("rho,E,expected", [(0.2, 0.0, 0.05), (0.28, 1.0, 0.33), (0.1, 0.5, 0.10)])
    def test_mortality(self, rho, E, expected):
        assert compute_mortality_rate(theta_from(rho_1=rho), E) == pytest.approx(expected)

    def test_migration(self):
        k = MigrationKernelParams()
        assert compute_migration_rates(k, 0.0, 0.5, 0.0) == (0.0, 0.0)
        a_s, _ = compute_migration_rates(k, 0.2, 0.5, 0.0)
        assert a_s == pytest.approx(0.1)
        assert compute_migration_rates(k, 0.2, 0.5, 4.0) == (0.0, 0.0)


class TestNet:
    def test_shape(self):
        net = build_two_patch_net()
        assert len(net.places) == 14
        assert len(net.transitions) == 30

    def test_place_groups(self):
        assert len(human_places()) == 8 and len(mosquito_places()) == 6
        assert set(human_places()) | set(mosquito_places()) == set(build_two_patch_net().places)

    def test_initial_totals(self):
        net = build_two_patch_net()
        v = net.initial_vector()
        h = [net.places.index(p) for p in human_places()]
        m = [net.places.index(p) for p in mosquito_places()]
        assert v[h].sum() == 8080 and v[m].sum() == 4020

    def test_every_transition_conserves_species(self):
        net = build_two_patch_net()
        h = [net.places.index(p) for p in human_places()]
        m = [net.places.index(p) for p in mosquito_places()]
        assert np.all(net.delta[:, h].sum(axis=1) == 0)
        assert np.all(net.delta[:, m].sum(axis=1) == 0)

    def test_no_infection_means_ih_never_increases(self):
        T = 40
        cfg = ModelConfig()
        net = build_two_patch_net()
        th = CoefficientVector(np.zeros(13), CoefficientBounds(RateRange(0.0, 0.0), RateRange(0.0, 0.0), B.mu))
        sched = make_rate_schedule(th, [flat_basis(T), flat_basis(T)], cfg, T)
        traj = simulate_horizon(net, sched.for_net(net), np.random.default_rng(0))
        total_ih = traj.column("I_H_1") + traj.column("I_H_2")
        assert np.all(np.diff(np.concatenate([[40], total_ih])) <= 0)

    def test_mass_action_switch(self):
        net = build_two_patch_net(incidence="mass_action")
        t = next(t for t in net.transitions if t.id == "infect_H_within_1")
        assert t.hazard.normalizer == ()
        with pytest.raises(ConfigurationError):
            ModelConfig(incidence="bogus")

    def test_between_mosquito_infection_normalizer_is_remote(self):
        net = build_two_patch_net()
        t = next(t for t in net.transitions if t.id == "infect_M_between_1")
        assert t.hazard.normalizer == ("S_H_2", "I_H_2", "R_H_2")


class TestSchedule:
    def test_constant_basis_constant_rows(self):
        T = 5
        s = make_rate_schedule(sample_coefficients(B, np.random.default_rng(0)), [flat_basis(T), flat_basis(T)],
                               ModelConfig(), T)
        assert len(s) == T
        assert np.all(s.values == s.values[0])

    def test_bounds_over_synthetic_year(self):
        basis = [compute_basis(x) for x in synthetic_covariates(3)]
        rng = np.random.default_rng(4)
        for _ in range(20):
            s = make_rate_schedule(sample_coefficients(B, rng), basis)
            for name in s.names:
                col = s.series(name)
                if name.startswith("beta_MH"):
                    assert col.min() >= 0.01 and col.max() <= 0.80
                elif name.startswith("beta_HM"):
                    assert col.min() >= 0.072 and col.max() <= 0.64
                elif name.startswith("mu_M"):
                    assert col.min() >= 0.05 and col.max() <= 0.33

    def test_for_net_matches_rate_names(self):
        net = build_two_patch_net()
        s = constant_rate_schedule(FixedParams(), 3)
        arr = s.for_net(net)
        assert arr.shape == (3, 30)
        k = net.transition_ids.index("recover_1")
        assert np.all(arr[:, k] == 0.10)

    def test_wrong_patch_count(self):
        with pytest.raises(ConfigurationError):
            make_rate_schedule(CoefficientVector(np.zeros(13)), [flat_basis(3)])


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(incidence="mass_action", kernel=MigrationKernelParams(c_S=2.0))
        p = tmp_path / "m.json"
        cfg.save(p)
        assert ModelConfig.load(p) == cfg
        assert json.loads(p.read_text())["kernel"]["c_S"] == 2.0


unit = st.floats(0, 1)


@given(st.lists(st.floats(0, 1), min_size=13, max_size=13), unit, unit, unit, unit, unit)
def test_rates_within_family_bounds(frac, bb_i, l_i, bb_j, l_j, E):
    th = CoefficientVector(np.array(frac) * B.gains())
    r = compute_transmission_rates(th, bb_i, l_i, bb_j, l_j)
    assert 0.01 <= r["beta_MH_ii"] <= 0.80 and 0.01 <= r["beta_MH_ij"] <= 0.80
    assert 0.072 <= r["beta_HM_ii"] <= 0.64 and 0.072 <= r["beta_HM_ij"] <= 0.64
    assert 0.05 <= compute_mortality_rate(th, E) <= 0.33


@given(st.lists(st.floats(0, 1), min_size=13, max_size=13), unit, unit, st.floats(0, 0.5))
def test_rates_monotone_in_basis(frac, bb, l, d):
    th = CoefficientVector(np.array(frac) * B.gains())
    lo = compute_transmission_rates(th, bb, l, bb, l)
    hi = compute_transmission_rates(th, min(bb + d, 1.0), min(l + d, 1.0), min(bb + d, 1.0), min(l + d, 1.0))
    assert all(hi[k] >= lo[k] for k in lo)
