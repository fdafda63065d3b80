import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spnsurrogate.errors import ValidationError
from spnsurrogate.model import PARAM_NAMES, CoefficientBounds
from spnsurrogate.nn.resnet import ResNet1D, ResNetConfig
from spnsurrogate.report import (calibration_svg, distribution_svg, read_predictions_csv, scatter_svg,
                                 write_predictions_csv, write_report)
from spnsurrogate.uq import (UQConfig, calibration_curve, compute_metrics, denormalize_report,
                             mc_dropout_predict, normal_quantile, predictive_moments, rank_parameters,
                             read_calibration_csv, read_metrics_csv, read_posterior_samples,
                             write_calibration_csv, write_metrics_csv, write_posterior_samples)

CFG = ResNetConfig(F=8, k=3, B=1, p=0.2, d_in=3, d_out=13, T=6)


def two_pass_var(s):
    mean = sum(s) / len(s)
    return sum((v - mean) ** 2 for v in s) / len(s)


class TestMoments:
    def test_no_dropout_zero_std(self, rng):
        m = ResNet1D(ResNetConfig(F=8, k=3, B=1, p=0.0, d_in=3, d_out=13, T=6), rng=rng)
        post = mc_dropout_predict(m, rng.standard_normal((4, 6, 3)), UQConfig(M=10))
        assert np.all(post.std == 0)

    def test_mc_flag_off_zero_std(self, rng):
        m = ResNet1D(CFG, rng=rng)
        post = mc_dropout_predict(m, rng.standard_normal((4, 6, 3)), UQConfig(M=5, mc_dropout=False))
        assert np.all(post.std == 0)

    def test_mean_is_sample_mean(self, rng):
        m = ResNet1D(CFG, rng=rng)
        post = mc_dropout_predict(m, rng.standard_normal((3, 6, 3)), UQConfig(M=7))
        assert post.samples.shape == (3, 7, 13)
        assert np.allclose(post.mean, post.samples.astype(np.float64).mean(axis=1), atol=1e-15)
        assert np.all(post.std > 0)

    def test_seeded(self, rng):
        m = ResNet1D(CFG, rng=rng)
        x = rng.standard_normal((2, 6, 3))
        a = mc_dropout_predict(m, x, UQConfig(M=4), seed=3)
        b = mc_dropout_predict(m, x, UQConfig(M=4), seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_variance_matches_two_pass(self, rng):
        s = 0.6 + 1e-4 * rng.standard_normal((20, 50, 1))
        _, var = predictive_moments(s)
        ref = np.array([[two_pass_var(list(s[i, :, 0]))] for i in range(20)])
        assert np.allclose(var, ref, rtol=0, atol=1e-10)

    def test_tau_inv_added(self):
        s = np.array([[[0.2], [0.4]]])
        _, var = predictive_moments(s, tau_inv=0.5)
        assert var[0, 0] == pytest.approx(0.5 + 0.01)

    def test_bad_M(self):
        with pytest.raises(ValidationError):
            UQConfig(M=0)
        with pytest.raises(ValidationError):
            UQConfig(tau_inv=-1)

    def test_bad_shape(self, rng):
        with pytest.raises(ValidationError):
            mc_dropout_predict(ResNet1D(CFG, rng=rng), np.zeros((2, 5, 3)))

    @given(arrays(np.float64, (3, 8, 2), elements=st.floats(0, 1)))
    def test_variance_non_negative(self, s):
        mean, var = predictive_moments(s)
        assert np.all(var >= 0)
        assert np.allclose(var, s.var(axis=1), atol=1e-12)


class TestMetrics:
    def test_constructed_example(self):
        truth = np.full((4, 1), 0.5)
        mean = truth + np.array([[0.1], [-0.1], [0.1], [-0.1]])
        r = compute_metrics(mean, np.full((4, 1), 0.1), truth, ["a"])
        assert r.bias[0] == pytest.approx(0.0, abs=1e-15)
        assert r.rmse[0] == pytest.approx(0.1)
        assert r.avg_std[0] == pytest.approx(0.1)
        assert r.coverage[0] == 1.0

    def test_perfect(self, rng):
        t = rng.uniform(size=(10, 13))
        r = compute_metrics(t, np.zeros_like(t), t)
        assert np.all(r.rmse == 0) and np.all(r.coverage == 1) and r.overall_rmse == 0

    def test_bias_is_absolute(self):
        r = compute_metrics(np.array([[0.2], [0.4]]), np.ones((2, 1)), np.array([[0.5], [0.5]]), ["a"])
        assert r.bias[0] == pytest.approx(0.2)

    def test_format_row(self):
        r = compute_metrics(np.array([[0.6]]), np.array([[0.2]]), np.array([[0.5]]), ["lam"])
        assert r.format_row("lam") == "lam: 0.100, 0.100, 0.200, 100.0%"

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            compute_metrics(np.zeros((2, 13)), np.zeros((2, 12)), np.zeros((2, 13)))
        with pytest.raises(ValidationError):
            compute_metrics(np.zeros((0, 13)), np.zeros((0, 13)), np.zeros((0, 13)))

    def test_uniform_baseline(self, rng):
        # predicting 0.5 for uniform targets gives RMSE 1/sqrt(12)
        t = rng.uniform(size=(200_000, 1))
        r = compute_metrics(np.full_like(t, 0.5), np.zeros_like(t), t, ["a"])
        assert r.rmse[0] == pytest.approx(1 / math.sqrt(12), abs=2e-3)


class TestCalibration:
    @pytest.mark.parametrize("level, z", [(0.5, 0.6745), (0.68, 0.9945), (0.9, 1.6449), (0.95, 1.9600)])
    def test_quantiles(self, level, z):
        assert normal_quantile(level) == pytest.approx(z, abs=5e-5)

    def test_gaussian_is_calibrated(self):
        rng = np.random.default_rng(0)
        n = 10_000
        std = rng.uniform(0.05, 0.2, (n, 1))
        truth = rng.uniform(size=(n, 1))
        mean = truth + std * rng.standard_normal((n, 1))
        for nominal, empirical in calibration_curve(mean, std, truth, names=["a"])["a"]:
            assert abs(empirical - nominal) <= 0.02

    def test_zero_std(self):
        t = np.array([[0.1], [0.2]])
        curve = calibration_curve(t + 0.01, np.zeros_like(t), t, names=["a"])["a"]
        assert all(e == 0.0 for _, e in curve)


class TestRanking:
    def test_ratio_example(self):
        r = compute_metrics(np.zeros((1, 1)) + 0.047, np.array([[0.043]]), np.zeros((1, 1)), ["a"])
        assert r.ratio[0] == pytest.approx(0.047 / 0.043) and round(r.ratio[0], 2) == 1.09

    def test_ties_and_inf(self):
        truth = np.zeros((1, 4))
        mean = np.array([[0.1, 0.2, 0.1, 0.3]])
        std = np.array([[0.1, 0.2, 0.1, 0.0]])
        r = compute_metrics(mean, std, truth, ["a", "b", "c", "d"])
        assert r.ratio[3] == math.inf
        assert [row["parameter"] for row in rank_parameters(r)] == ["a", "b", "c", "d"]
        assert r.rank.tolist() == [1, 2, 3, 4]

    @given(st.permutations(list(range(5))))
    def test_rank_is_permutation(self, perm):
        rmse = np.array([0.1, 0.2, 0.3, 0.4, 0.5])[perm]
        r = compute_metrics(rmse[None, :], np.full((1, 5), 0.1), np.zeros((1, 5)), list("abcde"))
        assert sorted(r.rank.tolist()) == [1, 2, 3, 4, 5]
        assert r.rank[np.argmin(rmse)] == 1


class TestDenormalize:
    def test_linear_in_gain(self, rng):
        m, s, t = rng.uniform(size=(3, 20, 13))
        r = compute_metrics(m, s, t)
        g = CoefficientBounds().gains()
        d = denormalize_report(r, g)
        assert np.allclose(d.rmse, r.rmse * g) and np.allclose(d.avg_std, r.avg_std * g)
        assert np.array_equal(d.coverage, r.coverage) and np.allclose(d.ratio, r.ratio)

    def test_matches_metrics_on_raw_scale(self, rng):
        m, s, t = rng.uniform(size=(3, 20, 13))
        g = CoefficientBounds().gains()
        direct = compute_metrics(m * g, s * g, t * g)
        via = denormalize_report(compute_metrics(m, s, t), g)
        assert np.allclose(direct.rmse, via.rmse) and np.allclose(direct.bias, via.bias)


class TestFiles:
    def test_metrics_csv(self, tmp_path, rng):
        m, s, t = rng.uniform(size=(3, 9, 13))
        r = compute_metrics(m, s, t)
        write_metrics_csv(tmp_path / "m.csv", r)
        rows, overall = read_metrics_csv(tmp_path / "m.csv")
        assert overall == r.overall_rmse
        assert [x["parameter"] for x in rows] == list(PARAM_NAMES)
        assert rows[0]["rmse"] == r.rmse[0] and rows[0]["rank"] == r.rank[0]

    def test_calibration_csv(self, tmp_path):
        curves = {"a": [(0.5, 0.4), (0.9, 0.95)], "b": [(0.5, 0.5)]}
        write_calibration_csv(tmp_path / "c.csv", curves)
        assert read_calibration_csv(tmp_path / "c.csv") == curves

    def test_posterior_samples(self, tmp_path, rng):
        s = rng.uniform(size=(4, 5, 13)).astype(np.float32)
        write_posterior_samples(tmp_path / "p.bin", s)
        assert (tmp_path / "p.bin").stat().st_size == 4 * 5 * 13 * 4
        assert np.array_equal(read_posterior_samples(tmp_path / "p.bin", 5), s)
        with pytest.raises(ValidationError):
            read_posterior_samples(tmp_path / "p.bin", 7)


class TestReport:
    def _data(self, n=6, d=3):
        rng = np.random.default_rng(1)
        t = rng.uniform(size=(n, d))
        return ["a", "b c", "d<e"], t, t + 0.05 * rng.standard_normal((n, d)), np.full((n, d), 0.05)

    def test_calibration_svg(self):
        root = ET.fromstring(calibration_svg("lam", [(0.5, 0.4), (0.9, 0.8)]))
        classes = [e.get("class") for e in root.iter()]
        assert "diagonal" in classes and classes.count("level") == 2 and "curve" in classes

    def test_scatter_one_marker_per_sample(self):
        names, t, m, s = self._data()
        root = ET.fromstring(scatter_svg("x", t[:, 0], m[:, 0], s[:, 0]))
        classes = [e.get("class") for e in root.iter()]
        assert classes.count("marker") == 6 and classes.count("errorbar") == 6

    def test_distribution_svg(self):
        names, t, m, _ = self._data()
        root = ET.fromstring(distribution_svg(names, t, m))
        classes = [e.get("class") for e in root.iter()]
        assert classes.count("box-true") == 3 and classes.count("box-pred") == 3

    def test_write_report(self, tmp_path):
        names, t, m, s = self._data()
        curves = calibration_curve(m, s, t, names=names)
        paths = write_report(tmp_path, names, t, m, s, curves, compute_metrics(m, s, t, names))
        assert len(paths) == 2 * 3 + 2
        for p in paths:
            if p.suffix == ".svg":
                ET.parse(p)
        assert (tmp_path / "calibration_d_e.svg").exists()
        assert (tmp_path / "ranking.csv").read_text().splitlines()[0] == "rank,parameter,rmse,avg_std,ratio"

    def test_predictions_round_trip(self, tmp_path):
        names, t, m, s = self._data()
        write_predictions_csv(tmp_path / "p.csv", names, t, m, s, sample_ids=[10, 11, 12, 13, 14, 15])
        n2, t2, m2, s2 = read_predictions_csv(tmp_path / "p.csv")
        assert n2 == names and np.array_equal(t2, t) and np.array_equal(m2, m) and np.array_equal(s2, s)

    def test_predictions_missing_column(self, tmp_path):
        (tmp_path / "p.csv").write_text("sample,parameter,truth,mean\n0,a,0.1,0.2\n")
        with pytest.raises(ValidationError):
            read_predictions_csv(tmp_path / "p.csv")
