import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr

from streamgp.latent import (
    ParameterError,
    UncertainInputPriors,
    VariationalPosterior,
    expected_phi,
    expected_phi_sq,
    gauss_square_moment,
    kl_block,
    kl_gaussian,
    owens_t,
    posterior_density_h,
    posterior_density_sigma_tau,
    posterior_density_w,
)

from conftest import GAMMA_MEASURED, TAU_MEASURED, make_posterior


def gauss_pdf(x, mu, var):
    return np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def kl_quad(mu_q, var_q, mu_p, var_p):
    f = lambda x: gauss_pdf(x, mu_q, var_q) * (
        np.log(gauss_pdf(x, mu_q, var_q)) - np.log(gauss_pdf(x, mu_p, var_p)))
    lo = mu_q - 12 * np.sqrt(var_q)
    hi = mu_q + 12 * np.sqrt(var_q)
    val, _ = quad(f, lo, hi, epsabs=1e-12, limit=200)
    return val


class TestKlGaussian:
    def test_identical_is_zero(self):
        assert kl_gaussian(0.3, 1.7, 0.3, 1.7) == pytest.approx(0.0, abs=1e-15)

    def test_unit_mean_shift(self):
        assert kl_gaussian(0.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)

    def test_variance_mismatch_vs_quadrature(self):
        assert kl_quad(0.0, 4.0, 0.0, 1.0) == pytest.approx(0.8068528, abs=1e-6)
        assert kl_gaussian(0.0, 4.0, 0.0, 1.0) == pytest.approx(0.8068528194, abs=1e-9)

    def test_nonnegative_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mq, mp = rng.normal(size=2)
            vq, vp = np.exp(rng.uniform(-2, 2, size=2))
            kl = kl_gaussian(mq, vq, mp, vp)
            assert kl >= 0.0
            if abs(mq - mp) > 1e-3 or abs(vq - vp) > 1e-3:
                assert kl > 0.0

    def test_matches_quadrature_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            mq, mp = rng.normal(size=2)
            vq, vp = np.exp(rng.uniform(-1, 1, size=2))
            assert kl_gaussian(mq, vq, mp, vp) == pytest.approx(
                kl_quad(mq, vq, mp, vp), abs=1e-6)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ParameterError):
            kl_gaussian(0.0, 0.0, 0.0, 1.0)


class TestKlBlock:
    def test_zero_when_posterior_matches_priors(self):
        sd_tau = np.exp(-0.5 * (-1.0 - 0.3**2 / 2))  # sd implied by the log-variance mean
        post = VariationalPosterior(
            mu_tau=TAU_MEASURED, sd_tau=np.full(3, np.sqrt(np.exp(-1.0 - 0.3**2 / 2))),
            mu_gamma=GAMMA_MEASURED, sd_gamma=np.full(2, 0.25), mu_eta=-1.0, sd_eta=0.3)
        priors = UncertainInputPriors(d_tau=TAU_MEASURED, d_gamma=GAMMA_MEASURED,
                                      sd_gamma=0.25, eta_mean=-1.0, eta_sd=0.3)
        assert kl_block(post, priors) == pytest.approx(0.0, abs=1e-12)

    def test_single_standardized_shift_adds_half(self, default_priors):
        base = VariationalPosterior(
            mu_tau=TAU_MEASURED,
            sd_tau=np.full(3, np.sqrt(np.exp(-1.0 - 0.75**2 / 2))),
            mu_gamma=GAMMA_MEASURED, sd_gamma=np.full(2, 0.25),
            mu_eta=-1.0, sd_eta=0.75)
        k0 = kl_block(base, default_priors)
        shifted = VariationalPosterior(
            mu_tau=base.mu_tau, sd_tau=base.sd_tau,
            mu_gamma=GAMMA_MEASURED + np.array([0.0, 0.25]),
            sd_gamma=base.sd_gamma, mu_eta=-1.0, sd_eta=0.75)
        assert kl_block(shifted, default_priors) - k0 == pytest.approx(0.5, abs=1e-12)

    def test_matches_per_term_quadrature(self, default_priors):
        post = make_posterior(0.3)
        total = kl_block(post, default_priors)
        vp = np.exp(post.mu_eta - 0.5 * post.sd_eta**2)
        manual = sum(kl_quad(post.mu_tau[j], post.sd_tau[j] ** 2,
                             default_priors.d_tau[j], vp) for j in range(3))
        manual += sum(kl_quad(post.mu_gamma[k], post.sd_gamma[k] ** 2,
                              default_priors.d_gamma[k], default_priors.sd_gamma**2)
                      for k in range(2))
        manual += kl_quad(post.mu_eta, post.sd_eta**2,
                          default_priors.eta_mean, default_priors.eta_sd**2)
        assert total == pytest.approx(manual, abs=1e-6)

    def test_printed_form_vs_exact_expansion(self, default_priors):
        # The printed bound uses an effective prior variance exp(mu - sd^2/2)
        # for the distance block; the exact expectation of the conditional KL
        # differs by a constant sd_eta^2/4 per distance component.
        post = make_posterior(0.3)
        printed = kl_block(post, default_priors)
        vp_exact_log = post.mu_eta  # E[log prior variance]
        e_inv = np.exp(-post.mu_eta + 0.5 * post.sd_eta**2)  # E[1 / prior variance]
        exact_tau = sum(
            0.5 * (vp_exact_log - np.log(post.sd_tau[j] ** 2)
                   + e_inv * (post.sd_tau[j] ** 2 + (post.mu_tau[j] - default_priors.d_tau[j]) ** 2)
                   - 1.0)
            for j in range(3))
        printed_tau = sum(
            kl_gaussian(post.mu_tau[j], post.sd_tau[j] ** 2, default_priors.d_tau[j],
                        np.exp(post.mu_eta - 0.5 * post.sd_eta**2))
            for j in range(3))
        assert printed_tau - exact_tau == pytest.approx(-3 * post.sd_eta**2 / 4, abs=1e-12)
        assert printed == pytest.approx(printed, abs=0)  # printed form is what ships


class TestOwensT:
    def test_zero_b(self):
        for a in (-2.0, 0.0, 1.5):
            assert owens_t(a, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_zero_a(self):
        for b in (0.3, 1.0, 5.0):
            assert owens_t(0.0, b) == pytest.approx(np.arctan(b) / (2.0 * np.pi), abs=1e-14)

    def test_unit_b_identity(self):
        for h in np.linspace(-3, 3, 13):
            expected = 0.5 * ndtr(h) * (1.0 - ndtr(h))
            assert owens_t(h, 1.0) == pytest.approx(expected, abs=1e-14)

    def test_against_quadrature(self):
        def t_quad(a, b):
            f = lambda x: gauss_pdf(a, 0, 1) * gauss_pdf(a * x, 0, 1) / (
                gauss_pdf(a * x, 0, 1) * (1 + x**2)) * np.exp(-0.5 * a**2 * x**2) / np.sqrt(2 * np.pi)
            g = lambda x: np.exp(-0.5 * a**2 * (1 + x**2)) / (2 * np.pi * (1 + x**2))
            val, _ = quad(g, 0.0, b, epsabs=1e-14)
            return val

        assert t_quad(1.0, 1.0) == pytest.approx(0.0667418821, abs=1e-9)
        for a, b in ((1.0, 1.0), (0.5, 2.0), (2.0, 0.3), (-1.2, 0.7)):
            assert owens_t(a, b) == pytest.approx(t_quad(a, b), abs=1e-12)


class TestExpectedPhiSq:
    def test_zero_variance_reduces_to_square(self):
        for mu in np.linspace(-4, 4, 33):
            assert expected_phi_sq(mu, 0.0) == pytest.approx(ndtr(mu) ** 2, abs=1e-12)

    def test_symmetric_unit_variance_third(self):
        assert expected_phi_sq(0.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-14)

    def test_zero_zero_quarter(self):
        assert expected_phi_sq(0.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_table_value(self):
        assert expected_phi_sq(0.9808, 0.0) == pytest.approx(0.700, abs=5e-4)

    def test_monotone_in_mean_and_bounded(self):
        for var in (0.0, 0.3, 2.0):
            vals = expected_phi_sq(np.linspace(-5, 5, 41), var)
            assert np.all(np.diff(vals) > 0)
            assert np.all((vals > 0) & (vals < 1))

    def test_against_mc(self):
        rng = np.random.default_rng(5)
        for mu, var in ((0.5, 0.4), (-1.0, 2.0), (2.0, 0.1)):
            g = mu + np.sqrt(var) * rng.standard_normal(2_000_000)
            mc = float(np.mean(ndtr(g) ** 2))
            se = float(np.std(ndtr(g) ** 2) / np.sqrt(g.size))
            assert abs(expected_phi_sq(mu, var) - mc) < 4 * se

    def test_expected_phi_against_mc(self):
        rng = np.random.default_rng(6)
        g = 0.7 + 0.8 * rng.standard_normal(1_000_000)
        mc = float(np.mean(ndtr(g)))
        assert abs(expected_phi(0.7, 0.64) - mc) < 4 * np.std(ndtr(g)) / 1000


class TestChangeOfVariables:
    def test_h_density_normalizes(self):
        val, _ = quad(lambda h: posterior_density_h(h, 2.0, 0.6), 1e-12, np.inf, limit=300)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_h_mode_near_mean_square(self):
        h = np.linspace(3.0, 5.0, 4001)
        dens = posterior_density_h(h, 2.0, 0.1)
        assert h[np.argmax(dens)] == pytest.approx(4.0, abs=0.05)

    def test_h_concentrates_in_degenerate_limit(self):
        lo = posterior_density_h(4.0, 2.0, 1e-3)
        hi = posterior_density_h(4.5, 2.0, 1e-3)
        assert lo > 50.0 and hi < 1e-10

    def test_w_density_normalizes(self):
        val, _ = quad(lambda w: posterior_density_w(w, 0.8, 0.4), 1e-12, 1 - 1e-12, limit=300)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_w_concentrates_at_phi_square(self):
        target = ndtr(0.8) ** 2
        assert posterior_density_w(target, 0.8, 1e-4) > 1e2
        assert posterior_density_w(target + 0.2, 0.8, 1e-4) < 1e-10

    def test_sigma_density_normalizes_and_median(self):
        val, _ = quad(lambda s: posterior_density_sigma_tau(s, -1.0, 0.75), 1e-12, np.inf,
                      limit=300)
        assert val == pytest.approx(1.0, abs=1e-6)
        cdf, _ = quad(lambda s: posterior_density_sigma_tau(s, -1.0, 0.75), 1e-12, np.exp(-1.0),
                      limit=300)
        assert cdf == pytest.approx(0.5, abs=1e-6)

    def test_out_of_support_rejected(self):
        with pytest.raises(ParameterError):
            posterior_density_h(-1.0, 2.0, 0.5)
        with pytest.raises(ParameterError):
            posterior_density_w(1.5, 0.0, 0.5)
        with pytest.raises(ParameterError):
            posterior_density_sigma_tau(0.0, 0.0, 0.5)


def test_gauss_square_moment_against_mc():
    rng = np.random.default_rng(9)
    x = 1.5 + 0.7 * rng.standard_normal(2_000_000)
    for c in (0.1, 0.6, 2.0):
        mc = float(np.mean(np.exp(-c * x**2)))
        se = float(np.std(np.exp(-c * x**2)) / np.sqrt(x.size))
        assert abs(float(gauss_square_moment(c, 1.5, 0.49)) - mc) < 4 * se
    assert float(gauss_square_moment(0.0, 1.5, 0.49)) == 1.0
    assert float(gauss_square_moment(0.5, 2.0, 0.0)) == pytest.approx(np.exp(-2.0), rel=1e-14)
