import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from lpnest.dist import (
    LpNestedDistribution,
    RadialParams,
    generalized_gaussian,
    kurtosis_to_p,
    log_radial_density,
    log_surface_area,
    surface_area,
    p_to_kurtosis,
)
from lpnest.tree import Leaf, LpTree, Node, eval_f, flat_tree, make_isa_tree


def two_level(p0, p1):
    return LpTree(Node(p0, (Leaf(0), Node(p1, (Leaf(1), Leaf(2))))))


def std_normal_logpdf(z):
    z = np.atleast_2d(z)
    return stats.multivariate_normal(np.zeros(z.shape[1]), np.eye(z.shape[1])).logpdf(z)


class TestSurfaceArea:
    def test_circle(self):
        assert surface_area(flat_tree(2, 2.0)) == pytest.approx(2 * math.pi, abs=1e-12)

    def test_sphere(self):
        assert surface_area(flat_tree(3, 2.0)) == pytest.approx(4 * math.pi, abs=1e-12)

    def test_l1_diamond(self):
        assert surface_area(flat_tree(2, 1.0)) == pytest.approx(4.0, abs=1e-12)

    def test_radius_scaling(self):
        t = two_level(1.7, 0.9)
        assert log_surface_area(t, 3.0) == pytest.approx(log_surface_area(t) + 2 * math.log(3.0), abs=1e-12)

    def test_l2_matches_ball_formula(self):
        # area of the unit (n-1)-sphere: 2 pi^(n/2) / Gamma(n/2)
        for n in (1, 2, 5, 17, 300):
            expected = math.log(2) + n / 2 * math.log(math.pi) - math.lgamma(n / 2)
            assert log_surface_area(flat_tree(n, 2.0)) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_large_n_finite(self):
        for n in (170, 171, 300, 500):
            assert math.isfinite(log_surface_area(make_isa_tree([n // 2, n - n // 2], 2.1, [1.3, 2.7])))

    def test_matches_derivative_of_volume(self):
        # S_f(R) = dV/dR; V(1) by Monte Carlo would be noisy, so check the
        # density instead: integral of p over the plane equals 1 (see below).
        tree = flat_tree(2, 0.7)
        # L^p ball area in 2-D: 4 Gamma(1+1/p)^2 / Gamma(1+2/p); S = dV/dR at R=1 = 2 V(1)
        V = 4 * math.gamma(1 + 1 / 0.7) ** 2 / math.gamma(1 + 2 / 0.7)
        assert surface_area(tree) == pytest.approx(2 * V, rel=1e-12)


class TestRadial:
    def test_half_normal_at_zero(self):
        assert log_radial_density(0.0, RadialParams(2.0, 2.0, 1)) == pytest.approx(0.5 * math.log(2 / math.pi), abs=1e-12)

    def test_rayleigh(self):
        assert log_radial_density(1.0, RadialParams(2.0, 2.0, 2)) == pytest.approx(-0.5, abs=1e-12)

    @pytest.mark.parametrize("p0,s,n", [(2.0, 2.0, 3), (0.8, 1.3, 2), (4.5, 0.5, 7), (1.0, 3.0, 1)])
    def test_normalised(self, p0, s, n):
        rp = RadialParams(p0, s, n)
        val, err = integrate.quad(lambda v: math.exp(log_radial_density(v, rp)), 0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_power_is_gamma(self):
        rp = RadialParams(1.7, 2.5, 4)
        v = np.linspace(0.1, 4, 20)
        # change of variables u = v^p0 ~ Gamma(n/p0, scale s)
        lhs = log_radial_density(v, rp)
        rhs = stats.gamma(4 / 1.7, scale=2.5).logpdf(v**1.7) + math.log(1.7) + 0.7 * np.log(v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            log_radial_density(-1.0, RadialParams(2.0, 2.0, 2))
        with pytest.raises(ValueError):
            RadialParams(0.0, 2.0, 2)
        with pytest.raises(ValueError):
            RadialParams(2.0, -1.0, 2)
        with pytest.raises(ValueError):
            RadialParams(2.0, 1.0, 0)


class TestLogDensity:
    def test_bivariate_normal_origin(self):
        d = LpNestedDistribution(flat_tree(2, 2.0), 2.0)
        assert d.log_density([0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_bivariate_normal_off_origin(self):
        d = LpNestedDistribution(flat_tree(2, 2.0), 2.0)
        assert d.log_density([1.0, 0.0]) == pytest.approx(-math.log(2 * math.pi) - 0.5, abs=1e-12)

    def test_nested_l2_trivariate(self):
        d = LpNestedDistribution(two_level(2.0, 2.0), 2.0)
        assert d.log_density([1.0, 1.0, 1.0]) == pytest.approx(-1.5 * math.log(2 * math.pi) - 1.5, abs=1e-12)

    @pytest.mark.parametrize("tree", [flat_tree(3, 0.7), two_level(2.4, 1.1), make_isa_tree([2, 3], 2.1, [1.9, 3.0])])
    def test_finite_at_origin(self, tree):
        assert math.isfinite(LpNestedDistribution(tree).log_density(np.zeros(tree.n)))

    @given(st.integers(0, 10_000))
    def test_sign_symmetry(self, seed):
        r = np.random.default_rng(seed)
        d = LpNestedDistribution(two_level(*r.uniform(0.6, 4.0, 2)), r.uniform(0.5, 3.0))
        z = r.normal(size=3)
        flips = r.choice([-1.0, 1.0], 3)
        assert d.log_density(z * flips) == d.log_density(z)

    @given(st.integers(0, 10_000))
    def test_gaussian_reduction(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 8))
        sizes = []
        while sum(sizes) < n:
            sizes.append(int(r.integers(1, n - sum(sizes) + 1)))
        d = LpNestedDistribution(make_isa_tree(sizes, 2.0, [2.0] * len(sizes)), 2.0)
        z = r.normal(size=(5, n)) * 2
        np.testing.assert_allclose(d.log_density(z), std_normal_logpdf(z), atol=1e-10)

    def test_generalized_gaussian_laplace(self):
        d = generalized_gaussian(1, 1.0, tau=1.0)
        z = np.linspace(-4, 4, 9)[:, None]
        np.testing.assert_allclose(d.log_density(z), stats.laplace.logpdf(z[:, 0]), atol=1e-12)

    def test_generalized_gaussian_factorises(self):
        d3 = generalized_gaussian(3, 1.4, tau=0.7)
        d1 = generalized_gaussian(1, 1.4, tau=0.7)
        z = np.array([[0.3, -1.2, 2.0]])
        total = sum(d1.log_density(z[:, [j]]) for j in range(3))
        np.testing.assert_allclose(d3.log_density(z), total, atol=1e-12)

    @pytest.mark.parametrize(
        "dist",
        [
            LpNestedDistribution(flat_tree(1, 0.9), 1.5),
            LpNestedDistribution(flat_tree(2, 1.3), 2.0),
            LpNestedDistribution(make_isa_tree([1, 1], 2.5, [1.0, 1.0]), 0.8),
        ],
    )
    def test_normalisation_by_quadrature(self, dist):
        if dist.n == 1:
            val, _ = integrate.quad(lambda z: math.exp(dist.log_density([z])), -np.inf, np.inf)
        else:
            g = np.linspace(-15, 15, 1501)
            Z = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
            val = np.exp(dist.log_density(Z)).sum() * (g[1] - g[0]) ** 2
        assert val == pytest.approx(1.0, abs=1e-3)

    def test_normalisation_3d(self):
        d = LpNestedDistribution(two_level(2.3, 1.4), 2.0)
        g = np.linspace(-7, 7, 141)
        Z = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        val = np.exp(d.log_density(Z)).sum() * (g[1] - g[0]) ** 3
        assert val == pytest.approx(1.0, abs=1e-3)

    def test_exponent_gradients(self, rng):
        d = LpNestedDistribution(make_isa_tree([2, 3, 1], 2.1, [1.6, 2.7, 1.2]), 1.7)
        z = rng.normal(size=(6, 6))
        _, dz, dp = d.log_density_with_grads(z)
        ex = d.tree.exponents
        h = 1e-6
        for i in range(len(ex)):
            e = np.zeros(len(ex))
            e[i] = h
            fd = (d.with_exponents(ex + e).log_density(z) - d.with_exponents(ex - e).log_density(z)) / (2 * h)
            np.testing.assert_allclose(dp[:, i], fd, rtol=1e-4, atol=1e-7)
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            fd = (d.log_density(z + e) - d.log_density(z - e)) / (2 * h)
            np.testing.assert_allclose(dz[:, j], fd, rtol=1e-5, atol=1e-7)

    def test_round_trip(self):
        d = LpNestedDistribution(make_isa_tree([2, 2], 2.1, [2.2, 1.9]), 1.25)
        back = LpNestedDistribution.from_dict(d.to_dict())
        assert back.tree == d.tree
        assert back.s == d.s


class TestSampler:
    def test_l2_chi_square_mean(self):
        d = LpNestedDistribution(flat_tree(4, 2.0), 2.0)
        z = d.sample(np.random.default_rng(0), 100_000)
        m = np.mean(np.sum(z**2, axis=1))
        assert abs(m - 4.0) < 3 * math.sqrt(8 / 100_000)

    @pytest.mark.parametrize(
        "tree,s",
        [(two_level(1.3, 0.7), 1.0), (make_isa_tree([2, 2, 1], 2.1, [2.2, 1.5, 1.0]), 2.0), (flat_tree(3, 5.0), 0.3)],
    )
    def test_radius_moment(self, tree, s):
        d = LpNestedDistribution(tree, s)
        z = d.sample(np.random.default_rng(3), 100_000)
        v = eval_f(tree, z) ** tree.p0
        k = tree.n / tree.p0
        assert abs(v.mean() - s * k) < 3 * s * math.sqrt(k) / math.sqrt(len(v))

    def test_laplace_mean_abs(self):
        d = LpNestedDistribution(flat_tree(1, 1.0), 1.0)
        z = d.sample(np.random.default_rng(5), 100_000)[:, 0]
        assert abs(np.abs(z).mean() - 1.0) < 3 / math.sqrt(len(z))
        assert stats.kstest(z, stats.laplace.cdf).pvalue > 1e-3

    def test_histogram_matches_density(self):
        d = LpNestedDistribution(make_isa_tree([1, 1], 1.6, [1.0, 1.0]), 1.5)
        n = 1_000_000
        z = d.sample(np.random.default_rng(11), n)
        edges = np.linspace(-3, 3, 25)
        counts, _, _ = np.histogram2d(z[:, 0], z[:, 1], bins=[edges, edges])
        # cell probabilities by 2-D Gauss-Legendre on each cell
        t, w = np.polynomial.legendre.leggauss(8)
        h = edges[1] - edges[0]
        mids = (edges[:-1] + edges[1:]) / 2
        pts = (mids[:, None] + h / 2 * t[None, :]).reshape(-1)
        X, Y = np.meshgrid(pts, pts, indexing="ij")
        dens = np.exp(d.log_density(np.stack([X.ravel(), Y.ravel()], 1))).reshape(len(mids), 8, len(mids), 8)
        probs = np.einsum("aibj,i,j->ab", dens, w, w) * (h / 2) ** 2
        expected = probs * n
        mask = expected > 5
        chi2 = np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask])
        # outside cells pooled into one bin
        out_obs = n - counts[mask].sum()
        out_exp = n - expected[mask].sum()
        chi2 += (out_obs - out_exp) ** 2 / out_exp
        dof = mask.sum()
        assert chi2 < stats.chi2.ppf(0.999, dof)

    def test_fast_path_agrees(self):
        d = LpNestedDistribution(make_isa_tree([2, 3], 2.1, [1.4, 2.6]), 2.0)
        a = d.sample(np.random.default_rng(1), 50_000, verbatim=True)
        b = d.sample(np.random.default_rng(2), 50_000, verbatim=False)
        for j in range(5):
            assert stats.ks_2samp(a[:, j], b[:, j]).pvalue > 1e-3

    def test_subspace_radii_uncorrelated(self):
        tree = make_isa_tree([2, 2], 2.1, [1.5, 2.8])
        z = LpNestedDistribution(tree, 2.0).sample(np.random.default_rng(4), 100_000)
        r1 = np.sum(np.abs(z[:, :2]) ** 1.5, 1) ** (1 / 1.5)
        r2 = np.sum(np.abs(z[:, 2:]) ** 2.8, 1) ** (1 / 2.8)
        rho = np.corrcoef(r1, r2)[0, 1]
        assert abs(rho) < 3 / math.sqrt(len(z))

    def test_deterministic_seed(self):
        d = LpNestedDistribution(two_level(2.1, 1.3), 2.0)
        a = d.sample(np.random.default_rng(42), 200)
        b = d.sample(np.random.default_rng(42), 200)
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("count", [0, -3, 1.5])
    def test_bad_count(self, count):
        with pytest.raises(ValueError, match="count must be positive"):
            LpNestedDistribution(flat_tree(2, 2.0)).sample(np.random.default_rng(0), count)


class TestKurtosis:
    def test_values(self):
        assert kurtosis_to_p(0.0) == 2.0
        assert kurtosis_to_p(1.0) == 1.0
        assert kurtosis_to_p(-1 / 6) == pytest.approx(2.4, abs=1e-12)

    def test_rejects(self):
        with pytest.raises(ValueError):
            kurtosis_to_p(-1.0)

    @given(st.floats(min_value=-0.99, max_value=50))
    def test_inverse(self, k):
        assert p_to_kurtosis(kurtosis_to_p(k)) == pytest.approx(k, rel=1e-12, abs=1e-12)
