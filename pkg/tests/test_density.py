import math

import numpy as np
import pytest
from scipy import integrate, stats

from wishart_em.density import (
    MarginalParams,
    PairParams,
    coupling_scale,
    log_bivariate_pdf,
    log_wishart_pdf,
)
from wishart_em.errors import DimensionMismatch, DomainError, RhoOutOfRange


def random_spd(rng, p):
    m = rng.normal(size=(p, p))
    return m @ m.T / p + 0.5 * np.eye(p)


class TestMarginal:
    @pytest.mark.parametrize("p,dof", [(1, 3.0), (2, 4.5), (3, 5.0), (3, 20.0)])
    def test_matches_scipy_scaled_wishart(self, p, dof):
        rng = np.random.default_rng(p)
        sigma = random_spd(rng, p)
        a = random_spd(rng, p)
        # mean parameterization: W_p(Sigma, M) = Wishart(df=M, scale=Sigma/M)
        expect = stats.wishart(df=dof, scale=sigma / dof).logpdf(a)
        got = log_wishart_pdf(a, MarginalParams(sigma, dof))
        np.testing.assert_allclose(got, expect, rtol=1e-10)

    def test_dof_domain(self):
        with pytest.raises(DomainError):
            MarginalParams(np.eye(3), 2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            log_wishart_pdf(np.eye(2), MarginalParams(np.eye(3), 5.0))


class TestPair:
    def test_factorizes_at_zero_rho(self):
        rng = np.random.default_rng(7)
        for p in (1, 2, 3):
            for dof in (4.0, 7.5, 20.0):
                st_, ss = random_spd(rng, p), random_spd(rng, p)
                at, as_ = random_spd(rng, p), random_spd(rng, p)
                joint = log_bivariate_pdf(at, as_, PairParams(st_, ss, dof, 0.0))
                split = log_wishart_pdf(at, MarginalParams(st_, dof)) + log_wishart_pdf(
                    as_, MarginalParams(ss, dof)
                )
                assert abs(joint - split) < 1e-8

    def test_symmetric_in_slots(self):
        rng = np.random.default_rng(8)
        st_, ss = random_spd(rng, 3), random_spd(rng, 3)
        at, as_ = random_spd(rng, 3), random_spd(rng, 3)
        one = log_bivariate_pdf(at, as_, PairParams(st_, ss, 6.0, 0.4))
        two = log_bivariate_pdf(as_, at, PairParams(ss, st_, 6.0, 0.4))
        np.testing.assert_allclose(one, two, atol=1e-10)

    @pytest.mark.parametrize("rho", [0.3, 0.7])
    def test_scalar_pair_integrates_to_one(self, rho):
        dof, st_, ss = 6.0, 1.3, 0.8
        params = PairParams(np.array([[st_]]), np.array([[ss]]), dof, rho)

        def f(y, x):
            return math.exp(log_bivariate_pdf(np.array([[x]]), np.array([[y]]), params))

        mass, _ = integrate.dblquad(f, 1e-9, 8.0, 1e-9, 8.0, epsabs=1e-8)
        np.testing.assert_allclose(mass, 1.0, atol=1e-5)

    def test_scalar_pair_has_wishart_marginal(self):
        dof, rho = 5.0, 0.6
        params = PairParams(np.array([[1.0]]), np.array([[2.0]]), dof, rho)
        x = 0.7

        def f(y):
            return math.exp(log_bivariate_pdf(np.array([[x]]), np.array([[y]]), params))

        marginal, _ = integrate.quad(f, 1e-12, 40.0, limit=200)
        expect = math.exp(log_wishart_pdf(np.array([[x]]), MarginalParams(np.array([[1.0]]), dof)))
        np.testing.assert_allclose(marginal, expect, rtol=1e-6)

    def test_rho_limits(self):
        with pytest.raises(RhoOutOfRange):
            log_bivariate_pdf(np.eye(2), np.eye(2), PairParams(np.eye(2), np.eye(2), 4.0, 1 - 1e-7))
        with pytest.raises(RhoOutOfRange):
            PairParams(np.eye(2), np.eye(2), 4.0, -0.1)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            PairParams(np.eye(2), np.eye(3), 4.0, 0.2)
        with pytest.raises(DimensionMismatch):
            log_bivariate_pdf(np.eye(3), np.eye(3), PairParams(np.eye(2), np.eye(2), 4.0, 0.2))

    def test_coupling_scale(self):
        np.testing.assert_allclose(coupling_scale(0.5, 4.0), 0.25 * (4 * 0.5 / 0.75) ** 2)
        assert coupling_scale(0.0, 4.0) == 0.0
