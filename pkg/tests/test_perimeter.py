import math

import numpy as np
import pytest
from scipy.special import gammainc, ndtr

from gauss_bubbles import (
    AffinePartition,
    ConfigError,
    DegeneratePairError,
    DomainError,
    IntegrationConfig,
    PartitionCell,
    PreconditionError,
    RoundCylinder,
    cylinder_closed_forms,
    facet_perimeter,
    half_space_pair,
    interface_facets,
    minkowski_partition_perimeter,
    minkowski_perimeter,
    perturb,
    propeller_partition,
    simplicial_cone_partition,
    symmetric_scan,
    tail_perimeter_check,
)
from gauss_bubbles.special import chi_square_cdf, regularized_gamma_p, sphere_surface_measure

import oracles

GAMMA1_0 = 1.0 / math.sqrt(2.0 * math.pi)
GAMMA1_1 = GAMMA1_0 * math.exp(-0.5)
PROPELLER_PERIMETER = 3.0 / (2.0 * math.sqrt(2.0 * math.pi))


def cfg(d, samples=400_000, seed=7, antithetic=False):
    return IntegrationConfig(sample_count=samples, seed=seed, dimension=d,
                             chunk_size=50_000, antithetic=antithetic)


class TestFacetPerimeter:
    def test_halfspaces_through_origin(self):
        # m=2: the whole hyperplane is the interface, so the in-plane
        # fraction is exactly 1 and the mass is exactly gamma_1(0)
        report = facet_perimeter(half_space_pair(2, 0.0), cfg(2))
        assert report.total == pytest.approx(GAMMA1_0, rel=1e-12)
        assert report.total_stderr == 0.0

    def test_split_at_one(self):
        report = facet_perimeter(half_space_pair(3, 1.0), cfg(3))
        assert report.total == pytest.approx(GAMMA1_1, rel=1e-12)
        assert report.total == pytest.approx(0.24197072451914337, rel=1e-9)

    def test_propeller_total_and_pairs(self):
        # d=2 facets evaluate their interval measure in closed form
        report = facet_perimeter(propeller_partition(), cfg(2, samples=1_000_000))
        assert report.total == pytest.approx(PROPELLER_PERIMETER, rel=1e-12)
        each = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))
        for (i, j), (mass, err) in report.masses.items():
            assert mass == pytest.approx(each, abs=3.0 * err + 1e-12)

    def test_in_plane_sampler_agrees_with_closed_form_in_3d(self):
        # embed the propeller in R^3: facets are 2-D, so the in-plane
        # fraction is sampled; totals must agree with the d=2 closed form
        prop = propeller_partition()
        directions = np.zeros((3, 3))
        directions[:, :2] = prop.directions
        embedded = AffinePartition(directions, prop.offsets.copy(), np.zeros(3))
        report = facet_perimeter(embedded, cfg(3, samples=400_000))
        assert report.total_stderr > 0.0
        assert report.total == pytest.approx(PROPELLER_PERIMETER,
                                             abs=3.0 * report.total_stderr)

    def test_rotation_invariance_with_sampled_facets(self):
        # d=3 exercises the in-plane Monte Carlo path on both sides
        part = simplicial_cone_partition(4)
        rng = np.random.default_rng(5)
        rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(rot) < 0:
            rot[:, 0] = -rot[:, 0]
        base = facet_perimeter(part, cfg(3, samples=200_000))
        rotated = facet_perimeter(part.rotated(rot), cfg(3, samples=200_000, seed=8))
        tol = 3.0 * math.hypot(base.total_stderr, rotated.total_stderr)
        assert abs(base.total - rotated.total) <= tol

    def test_sampled_facet_points_lie_on_their_hyperplane(self):
        part = simplicial_cone_partition(4, [0.2, -0.1, 0.3])
        rng = np.random.default_rng(6)
        for facet in interface_facets(part):
            from gauss_bubbles.perimeter import _hyperplane_basis
            basis = _hyperplane_basis(facet.normal)
            xi = rng.standard_normal((100, basis.shape[1]))
            points = facet.offset * facet.normal[None, :] + xi @ basis.T
            assert np.all(facet.on_hyperplane(points, tol=1e-9))

    def test_parallel_pair_reports_zero(self):
        part = AffinePartition(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]),
                               np.array([0.0, -1.0, 0.0]), np.zeros(2))
        report = facet_perimeter(part, cfg(2, samples=100_000))
        assert (0, 1) not in report.masses  # parallel, empty interface
        assert report.masses[(0, 2)][0] > 0.0

    def test_identical_pair_raises(self):
        part = AffinePartition(np.array([[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]),
                               np.array([0.0, 0.0, 0.0]), np.zeros(2))
        with pytest.raises(DegeneratePairError):
            interface_facets(part)

    def test_rotation_invariance(self):
        theta = 1.234
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        base = facet_perimeter(propeller_partition(), cfg(2))
        rotated = facet_perimeter(propeller_partition().rotated(rot), cfg(2))
        tol = 3.0 * math.hypot(base.total_stderr, rotated.total_stderr)
        assert abs(base.total - rotated.total) <= tol

    def test_facet_normals_point_between_cells(self):
        part = propeller_partition()
        for facet in interface_facets(part):
            z = part.directions
            expected = (z[facet.j] - z[facet.i])
            expected /= np.linalg.norm(expected)
            assert np.allclose(facet.normal, expected, atol=1e-12)
            # stepping along the normal from the hyperplane enters cell j
            anchor = facet.offset * facet.normal
            assert part.classify(anchor + 1e-6 * facet.normal) == facet.j
            assert part.classify(anchor - 1e-6 * facet.normal) == facet.i


class TestMinkowski:
    def test_halfspace_collar_matches_facet(self):
        cell = PartitionCell(half_space_pair(2, 0.0), 0)
        report = minkowski_perimeter(cell, [0.1, 0.05, 0.025], cfg(2, samples=1_000_000))
        assert report.estimate == pytest.approx(GAMMA1_0, rel=0.02)

    def test_propeller_cell_collar(self):
        cell = PartitionCell(propeller_partition(), 0)
        report = minkowski_perimeter(
            cell, [0.08, 0.04, 0.02],
            cfg(2, samples=1_000_000, antithetic=True))
        assert report.estimate == pytest.approx(2.0 / (2.0 * math.sqrt(2.0 * math.pi)), rel=0.02)

    def test_full_space_has_no_collar(self):
        part = AffinePartition(np.array([[1.0, 0.0], [1.0, 0.0]]),
                               np.array([0.0, -1.0]), np.zeros(2))
        report = minkowski_perimeter(PartitionCell(part, 0), [0.2, 0.1, 0.05],
                                     cfg(2, samples=50_000))
        assert report.estimate == 0.0
        assert all(row[1] == 0.0 for row in report.table)

    def test_partition_total_collar(self):
        report = minkowski_partition_perimeter(
            propeller_partition(), [0.08, 0.04, 0.02], cfg(2, samples=500_000))
        assert report.estimate == pytest.approx(PROPELLER_PERIMETER, rel=0.02)

    def test_schedule_validation(self):
        cell = PartitionCell(half_space_pair(2, 0.0), 0)
        with pytest.raises(ConfigError):
            minkowski_perimeter(cell, [0.1, 0.05], cfg(2, samples=50_000))
        with pytest.raises(ConfigError):
            minkowski_perimeter(cell, [0.05, 0.1, 0.2], cfg(2, samples=50_000))


class TestCylinderClosedForms:
    def test_two_hyperplanes(self):
        perim, vol = cylinder_closed_forms(RoundCylinder(k=0, r=1.0, ambient=4))
        assert perim == pytest.approx(2.0 * GAMMA1_1, rel=1e-12)
        assert vol == pytest.approx(2.0 * ndtr(1.0) - 1.0, rel=1e-10)

    def test_circle_in_plane(self):
        perim, vol = cylinder_closed_forms(RoundCylinder(k=1, r=1.0, ambient=2))
        assert perim == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert vol == pytest.approx(1.0 - math.exp(-0.5), rel=1e-12)

    def test_sphere_in_three_space(self):
        perim, vol = cylinder_closed_forms(RoundCylinder(k=2, r=1.0, ambient=3))
        expected = 4.0 * math.pi * (2.0 * math.pi) ** -1.5 * math.exp(-0.5)
        assert perim == pytest.approx(expected, rel=1e-12)
        assert vol == pytest.approx(float(gammainc(1.5, 0.5)), rel=1e-10)

    def test_outside_orientation_complements_volume(self):
        inside = cylinder_closed_forms(RoundCylinder(k=1, r=0.8, ambient=5))
        outside = cylinder_closed_forms(RoundCylinder(k=1, r=0.8, ambient=5,
                                                      orientation="outside"))
        assert inside[0] == outside[0]
        assert inside[1] + outside[1] == pytest.approx(1.0, rel=1e-12)

    def test_closed_forms_match_monte_carlo(self):
        cyl = RoundCylinder(k=1, r=1.0, ambient=3)
        perim, vol = cylinder_closed_forms(cyl)
        config = cfg(3, samples=1_000_000)
        vol_mc = np.mean([
            float(cyl.contains(x).mean())
            for x in __import__("gauss_bubbles").montecarlo.sample_standard_normal(config)
        ])
        assert vol_mc == pytest.approx(vol, rel=0.01)
        collar = minkowski_perimeter(cyl, [0.08, 0.04, 0.02], config)
        assert collar.estimate == pytest.approx(perim, rel=0.02)

    def test_perimeter_peaks_at_sqrt_k(self):
        for k in (1, 2, 3):
            radii = np.linspace(0.2, 3.0, 141)
            values = [cylinder_closed_forms(RoundCylinder(k=k, r=float(r), ambient=k + 1))[0]
                      for r in radii]
            diffs = np.sign(np.diff(values))
            flips = np.flatnonzero(np.diff(diffs) != 0)
            assert len(flips) == 1  # unique interior max
            peak = radii[flips[0] + 1]
            assert peak == pytest.approx(math.sqrt(k), abs=0.05)


class TestSpecialFunctions:
    @pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 2.0, 7.5, 30.0])
    @pytest.mark.parametrize("x", [1e-6, 0.3, 1.0, 4.0, 25.0, 80.0])
    def test_regularized_gamma_against_scipy(self, a, x):
        assert regularized_gamma_p(a, x) == pytest.approx(float(gammainc(a, x)), abs=1e-10)

    def test_chi_square_edge_cases(self):
        assert chi_square_cdf(3, 0.0) == 0.0
        assert chi_square_cdf(1, 1.0) == pytest.approx(2.0 * ndtr(1.0) - 1.0, abs=1e-10)
        with pytest.raises(DomainError):
            regularized_gamma_p(-1.0, 2.0)
        with pytest.raises(DomainError):
            regularized_gamma_p(1.0, -2.0)

    def test_sphere_surface_measures(self):
        assert sphere_surface_measure(0) == pytest.approx(2.0)
        assert sphere_surface_measure(1) == pytest.approx(2.0 * math.pi)
        assert sphere_surface_measure(2) == pytest.approx(4.0 * math.pi)
        assert sphere_surface_measure(3) == pytest.approx(2.0 * math.pi**2)


class TestSymmetricScan:
    def test_recovers_unit_circle(self):
        result = symmetric_scan(1.0 - math.exp(-0.5), 1, "inside")
        row = [r for r in result.rows if r.k == 1][0]
        assert row.r == pytest.approx(1.0, abs=1e-6)
        assert row.perimeter == pytest.approx(math.exp(-0.5), rel=1e-6)

    def test_recovers_unit_slab(self):
        result = symmetric_scan(2.0 * ndtr(1.0) - 1.0, 0, "inside")
        row = result.rows[0]
        assert row.r == pytest.approx(1.0, abs=1e-6)
        assert row.perimeter == pytest.approx(2.0 * GAMMA1_1, rel=1e-6)

    def test_volume_near_one_kills_perimeter(self):
        result = symmetric_scan(0.9999, 3, "inside")
        assert all(row.perimeter < 0.005 for row in result.rows)
        assert all(row.r > 3.0 for row in result.rows)

    def test_both_orientations(self):
        result = symmetric_scan(0.3, 2, "both")
        assert len(result.rows) == 6
        assert {row.orientation for row in result.rows} == {"inside", "outside"}

    def test_domain_validation(self):
        with pytest.raises(DomainError):
            symmetric_scan(0.0, 2)
        with pytest.raises(DomainError):
            symmetric_scan(0.5, -1)


class TestTailDecay:
    def test_propeller_tail_beyond_two(self):
        # oracle: radial quadrature along the three boundary rays
        expected = oracles.propeller_tail_mass(2.0)
        assert expected == pytest.approx(0.02722797, abs=1e-7)
        report = tail_perimeter_check(propeller_partition(), 2.0, None,
                                      cfg(2, samples=1_000_000))
        assert report.tail_mass == pytest.approx(expected, abs=3.0 * report.stderr)
        assert report.passed
        assert report.bound == pytest.approx(18.0 * math.exp(-2.0), rel=1e-12)
        assert report.bound_alt == pytest.approx(12.0 * math.exp(-2.0), rel=1e-12)

    def test_halfspace_tail_matches_line_oracle(self):
        expected = oracles.radial_line_tail(0.0, 3.0)
        report = tail_perimeter_check(half_space_pair(2, 0.0), 3.0, None,
                                      cfg(2, samples=1_000_000))
        assert report.tail_mass == pytest.approx(expected, abs=3.0 * report.stderr + 1e-5)
        assert report.passed

    def test_large_radius_vanishes(self):
        report = tail_perimeter_check(propeller_partition(), 6.0, None,
                                      cfg(2, samples=200_000))
        assert report.tail_mass <= 1e-4
        assert report.passed

    def test_hypothesis_threshold(self):
        with pytest.raises(PreconditionError):
            tail_perimeter_check(propeller_partition(), 1.2, None, cfg(2, samples=50_000))
        with pytest.raises(PreconditionError):
            tail_perimeter_check(propeller_partition(), 2.0, [1.0, 0.0],
                                 cfg(2, samples=50_000))


class TestEstimatorAgreement:
    def test_facet_vs_collar_on_calibrated_random_partition(self):
        from gauss_bubbles import calibrate_offsets_to_volumes
        config = cfg(2, samples=500_000, seed=12)
        part = calibrate_offsets_to_volumes(
            perturb(propeller_partition(), 0.2, 9), (0.4, 0.35, 0.25), config)
        facet = facet_perimeter(part, config)
        collar = minkowski_partition_perimeter(part, [0.08, 0.04, 0.02], config)
        tol = max(0.02 * facet.total, 3.0 * math.hypot(facet.total_stderr, collar.stderr))
        assert abs(facet.total - collar.estimate) <= tol

    def test_perturbation_moves_perimeter_linearly(self):
        config = cfg(2, samples=400_000, seed=4)
        base = facet_perimeter(propeller_partition(), config).total
        for magnitude in (0.01, 0.02, 0.05):
            moved = facet_perimeter(perturb(propeller_partition(), magnitude, 3),
                                    config).total
            assert abs(moved - base) <= 10.0 * magnitude * base
