"""Gaussian surface area by independent estimators.

For affine partitions the boundary between cells i and j is a flat piece of
hyperplane, so its Gaussian mass factorizes exactly: gamma_1(b) (the density
of the hyperplane offset) times the (d-1)-dimensional standard Gaussian
measure, within the hyperplane, of the set where i and j are the joint
argmax. The in-plane measure is evaluated in closed form where the
hyperplane geometry allows it (a point in d=1, an interval of a 1-D
Gaussian in d=2) and by in-plane Monte Carlo beyond that. The second
estimator uses the outer epsilon-collar definition of surface area and
extrapolates the collar mass to epsilon -> 0; for affine cells and round
cylinders the collar test uses exact distances. Round cylinders also get
closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import (
    ConfigError,
    DegeneratePairError,
    DomainError,
    PreconditionError,
)
from .montecarlo import (
    COLLAR_SUBSTREAM,
    FACET_SUBSTREAM,
    IntegrationConfig,
    MeanResult,
    gaussian_density,
    mc_mean,
)
from .partitions import AffinePartition, RoundCylinder
from .special import chi_square_cdf, sphere_surface_measure

# Band on the top-two score gap when testing joint-argmax membership;
# exact ties have measure zero but floating point needs slack.
_JOINT_ARGMAX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class InterfaceFacet:
    """Flat interface piece between cells i < j of an affine partition.

    ``normal`` is the unit normal pointing from cell i into cell j (the
    direction along which the advantage of functional j grows), and points
    x of the hyperplane satisfy <x, normal> = offset.
    """

    i: int
    j: int
    normal: np.ndarray
    offset: float
    ordinal: int

    def on_hyperplane(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.abs(pts @ self.normal - self.offset) <= tol


def interface_facets(partition: AffinePartition) -> list[InterfaceFacet]:
    """All candidate facets (i, j), i < j, with distinct directions.

    Pairs with equal directions but different offsets are parallel and have
    an empty interface: they are skipped (mass 0). Pairs with identical
    functionals are a degenerate construction and raise.
    """
    facets = []
    ordinal = 0
    z, c = partition.directions, partition.offsets
    for i in range(partition.m):
        for j in range(i + 1, partition.m):
            gap = z[j] - z[i]
            norm = np.linalg.norm(gap)
            if norm == 0.0:
                if c[i] == c[j]:
                    raise DegeneratePairError(
                        f"cells {i} and {j} carry identical affine functionals"
                    )
                ordinal += 1
                continue
            normal = gap / norm
            offset = float((c[i] - c[j]) / norm)
            facets.append(
                InterfaceFacet(i=i, j=j, normal=normal, offset=offset, ordinal=ordinal)
            )
            ordinal += 1
    return facets


def _hyperplane_basis(normal: np.ndarray) -> np.ndarray:
    """Orthonormal basis (d, d-1) of the hyperplane orthogonal to ``normal``."""
    basis = null_space(normal[None, :])
    return basis


def _facet_membership_fraction(
    partition: AffinePartition,
    facet: InterfaceFacet,
    cfg: IntegrationConfig,
    extra_mask=None,
) -> MeanResult:
    """In-hyperplane Gaussian fraction of the joint-argmax region of (i, j).

    The region is cut out of the hyperplane by the linear conditions "cells
    i and j beat cell k". In ambient dimension 1 it is a point and in
    dimension 2 an interval of a 1-D Gaussian coordinate, both evaluated in
    closed form. From dimension 3 on, the fraction is estimated by sampling
    d-1 standard Gaussian coordinates in an orthonormal basis of the
    hyperplane and testing joint-argmax membership within the tie
    tolerance. ``extra_mask`` may further restrict the region (e.g. a
    radial cut) acting on ambient points; it forces the sampling path.
    """
    d = partition.d
    anchor = facet.offset * facet.normal

    if d == 1:
        # The hyperplane is a single point; membership is deterministic.
        point = anchor[None, :]
        member = _joint_argmax_mask(partition, facet, point)
        if extra_mask is not None:
            member &= extra_mask(point)
        value = float(member[0])
        return MeanResult(mean=np.array([value]), stderr=np.array([0.0]), n_observations=1)

    if d == 2 and extra_mask is None:
        fraction = _line_facet_fraction(partition, facet, anchor)
        return MeanResult(mean=np.array([fraction]), stderr=np.array([0.0]), n_observations=1)

    basis = _hyperplane_basis(facet.normal)
    plane_cfg = IntegrationConfig(
        sample_count=cfg.sample_count,
        seed=cfg.seed,
        dimension=d - 1,
        chunk_size=cfg.chunk_size,
        antithetic=cfg.antithetic,
    )

    def values(xi):
        pts = anchor[None, :] + xi @ basis.T
        member = _joint_argmax_mask(partition, facet, pts)
        if extra_mask is not None:
            member &= extra_mask(pts)
        return member.astype(float)

    return mc_mean(plane_cfg, values, substream=FACET_SUBSTREAM + facet.ordinal)


def _line_facet_fraction(partition: AffinePartition, facet: InterfaceFacet, anchor) -> float:
    """Exact in-plane fraction when the facet hyperplane is a line (d = 2).

    Each third cell k imposes a linear condition on the line coordinate xi,
    so the joint-argmax region is an interval and its standard Gaussian
    measure is a difference of normal CDFs.
    """
    from .special import normal_cdf

    basis = _hyperplane_basis(facet.normal)[:, 0]
    z, c = partition.directions, partition.offsets
    lo, hi = -math.inf, math.inf
    for k in range(partition.m):
        if k in (facet.i, facet.j):
            continue
        alpha = float((anchor @ (z[facet.i] - z[k])) + c[facet.i] - c[k])
        beta = float(basis @ (z[facet.i] - z[k]))
        if abs(beta) <= 1e-15:
            if alpha < -_JOINT_ARGMAX_TOL:
                return 0.0
            continue
        bound = -alpha / beta
        if beta > 0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    if hi <= lo:
        return 0.0
    upper = 1.0 if math.isinf(hi) else normal_cdf(hi)
    lower = 0.0 if math.isinf(lo) else normal_cdf(lo)
    return max(upper - lower, 0.0)


def _joint_argmax_mask(partition, facet, points) -> np.ndarray:
    scores = partition.scores(points)
    pair_score = np.minimum(scores[:, facet.i], scores[:, facet.j])
    others = np.delete(scores, [facet.i, facet.j], axis=1)
    if others.shape[1] == 0:
        return np.ones(points.shape[0], dtype=bool)
    return pair_score >= others.max(axis=1) - _JOINT_ARGMAX_TOL


def facet_mass(
    partition: AffinePartition,
    facet: InterfaceFacet,
    cfg: IntegrationConfig,
    extra_mask=None,
) -> tuple[float, float]:
    """Gaussian mass of one facet: gamma_1(offset) * in-plane fraction."""
    res = _facet_membership_fraction(partition, facet, cfg, extra_mask=extra_mask)
    density = gaussian_density([facet.offset], 1)
    return density * float(res.mean[0]), density * float(res.stderr[0])


@dataclass(frozen=True)
class PerimeterReport:
    """Pairwise interface masses and the total Gaussian perimeter."""

    masses: dict
    total: float
    total_stderr: float
    method: str

    def rows(self):
        """(i, j, mass, stderr, method) per pair, sorted."""
        for (i, j) in sorted(self.masses):
            mass, err = self.masses[(i, j)]
            yield i, j, mass, err, self.method


def facet_perimeter(partition: AffinePartition, cfg: IntegrationConfig) -> PerimeterReport:
    """Total Gaussian surface area of an affine partition, facet by facet.

    Each facet gets its own deterministic substream, so facet masses are
    independent and the total standard error combines in quadrature.
    """
    masses = {}
    total = 0.0
    var = 0.0
    for facet in interface_facets(partition):
        mass, err = facet_mass(partition, facet, cfg)
        masses[(facet.i, facet.j)] = (mass, err)
        total += mass
        var += err * err
    return PerimeterReport(
        masses=masses, total=total, total_stderr=math.sqrt(var), method="facet"
    )


@dataclass(frozen=True)
class MinkowskiReport:
    """Collar-based surface area estimate with its extrapolation table."""

    estimate: float
    stderr: float
    table: list  # (epsilon, value, stderr) rows
    slope: float
    method: str = "minkowski"


def minkowski_perimeter(
    region, eps_schedule, cfg: IntegrationConfig, substream: int = COLLAR_SUBSTREAM
) -> MinkowskiReport:
    """Surface area from the outer collar: (1/eps) * gamma({x not in region,
    dist(x, region) < eps}), extrapolated to eps -> 0.

    ``region`` needs ``contains`` and an exact ``distance`` oracle (both are
    provided by PartitionCell and RoundCylinder). All epsilon values share
    one sample stream, so the table is smooth in epsilon; the bias of the
    collar is first order in epsilon, and a weighted linear fit returns the
    intercept.
    """
    eps = [float(e) for e in eps_schedule]
    if len(eps) < 3:
        raise ConfigError("the epsilon schedule needs at least 3 values")
    if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("the epsilon schedule must be strictly decreasing and positive")
    if not hasattr(region, "contains") or not hasattr(region, "distance"):
        raise ConfigError("region must provide contains() and distance()")

    eps_arr = np.array(eps)

    def values(x):
        outside = ~region.contains(x)
        dist = region.distance(x)
        collar = outside[:, None] & (dist[:, None] < eps_arr[None, :])
        return collar.astype(float) / eps_arr[None, :]

    res = mc_mean(cfg, values, substream=substream)
    table = [(eps[k], float(res.mean[k]), float(res.stderr[k])) for k in range(len(eps))]

    # Weighted least squares of value против epsilon; intercept is the estimate.
    y = res.mean
    sig = np.maximum(res.stderr, 1e-15)
    w = 1.0 / sig**2
    sw, sx, sy = w.sum(), (w * eps_arr).sum(), (w * y).sum()
    sxx, sxy = (w * eps_arr * eps_arr).sum(), (w * eps_arr * y).sum()
    det = sw * sxx - sx * sx
    intercept = (sxx * sy - sx * sxy) / det
    slope = (sw * sxy - sx * sy) / det
    intercept_err = math.sqrt(max(sxx / det, 0.0))
    return MinkowskiReport(
        estimate=float(intercept),
        stderr=float(intercept_err),
        table=table,
        slope=float(slope),
    )


def minkowski_partition_perimeter(
    partition: AffinePartition, eps_schedule, cfg: IntegrationConfig
) -> MinkowskiReport:
    """Collar estimate of the total partition perimeter.

    Sums the collar perimeters of every cell and divides by two, because
    each interface is the boundary of exactly two cells. Cells use disjoint
    substreams so their errors combine in quadrature.
    """
    from .partitions import PartitionCell

    total = 0.0
    var = 0.0
    tables = []
    slope = 0.0
    for i in range(partition.m):
        rep = minkowski_perimeter(
            PartitionCell(partition, i), eps_schedule, cfg, substream=COLLAR_SUBSTREAM + 10 + i
        )
        total += 0.5 * rep.estimate
        var += (0.5 * rep.stderr) ** 2
        slope += 0.5 * rep.slope
        tables.extend((i,) + row for row in rep.table)
    return MinkowskiReport(
        estimate=total, stderr=math.sqrt(var), table=tables, slope=slope
    )


def cylinder_closed_forms(cylinder: RoundCylinder) -> tuple[float, float]:
    """(perimeter, volume) of a round cylinder, in closed form.

    The boundary r S^k x R^{n-k} has Gaussian surface area
    omega_k r^k (2 pi)^{-(k+1)/2} exp(-r^2/2), independent of the ambient
    dimension; the inside volume is the chi-square CDF P(chi^2_{k+1} <= r^2).
    """
    k, r = cylinder.k, cylinder.r
    perimeter = (
        sphere_surface_measure(k)
        * r**k
        * (2.0 * math.pi) ** (-(k + 1) / 2.0)
        * math.exp(-0.5 * r * r)
    )
    inside = chi_square_cdf(k + 1, r * r)
    volume = inside if cylinder.orientation == "inside" else 1.0 - inside
    return perimeter, volume


def _solve_cylinder_radius(k: int, orientation: str, a: float) -> float | None:
    """Radius with cylinder volume a, by bisection on the monotone CDF."""
    target = a if orientation == "inside" else 1.0 - a

    def cdf(r: float) -> float:
        return chi_square_cdf(k + 1, r * r)

    lo, hi = 0.0, 1.0
    grow = 0
    while cdf(hi) < target:
        hi *= 2.0
        grow += 1
        if grow > 60:
            return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ScanRow:
    k: int
    orientation: str
    r: float
    perimeter: float
    feasible: bool


@dataclass(frozen=True)
class SymmetricScanResult:
    rows: list
    best: ScanRow


def symmetric_scan(a: float, k_max: int, orientation: str = "inside") -> SymmetricScanResult:
    """Scan round-cylinder candidates of volume a over k = 0..k_max.

    For each k (and each requested orientation) the volume equation is
    solved for r by bisection and the closed-form perimeter evaluated. The
    minimizing row breaks ties toward smaller k.
    """
    if not 0.0 < a < 1.0:
        raise DomainError("volume a must lie strictly between 0 and 1")
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    if orientation not in ("inside", "outside", "both"):
        raise DomainError("orientation must be 'inside', 'outside' or 'both'")
    orients = ["inside", "outside"] if orientation == "both" else [orientation]

    rows = []
    for k in range(k_max + 1):
        for orient in orients:
            r = _solve_cylinder_radius(k, orient, a)
            if r is None:
                rows.append(ScanRow(k=k, orientation=orient, r=math.nan, perimeter=math.inf, feasible=False))
                continue
            perim, _ = cylinder_closed_forms(RoundCylinder(k=k, r=r, ambient=k + 1, orientation=orient))
            rows.append(ScanRow(k=k, orientation=orient, r=r, perimeter=perim, feasible=True))
    feasible = [row for row in rows if row.feasible]
    if not feasible:
        raise DomainError(f"no cylinder of any k <= {k_max} achieves volume {a}")
    best = min(feasible, key=lambda row: (row.perimeter, row.k))
    return SymmetricScanResult(rows=rows, best=best)


@dataclass(frozen=True)
class TailReport:
    """Facet mass beyond radius r around w, against the spherical-cut bound."""

    tail_mass: float
    stderr: float
    bound: float
    bound_alt: float
    passed: bool
    margin: float
    margin_alt: float


def tail_perimeter_check(
    partition: AffinePartition, r: float, w, cfg: IntegrationConfig
) -> TailReport:
    """Check the surface-area decay bound outside the ball |x - w| > r.

    The bound is 3m * gamma_{d-1}({|x| = r}); the alternative 2m variant is
    reported alongside (see the notes in the repository ledger). Requires
    r > sqrt(d) + |w|.
    """
    d = partition.d
    w = np.zeros(d) if w is None else np.asarray(w, dtype=float).reshape(-1)
    w_norm = float(np.linalg.norm(w))
    if not r > math.sqrt(d) + w_norm:
        raise PreconditionError(
            f"radial cut r={r} must exceed sqrt(d) + |w| = {math.sqrt(d) + w_norm:.6f}"
        )

    def radial_mask(points):
        return np.linalg.norm(points - w[None, :], axis=1) > r

    tail = 0.0
    var = 0.0
    for facet in interface_facets(partition):
        mass, err = facet_mass(partition, facet, cfg, extra_mask=radial_mask)
        tail += mass
        var += err * err
    stderr = math.sqrt(var)

    sphere_mass = (
        sphere_surface_measure(d - 1)
        * r ** (d - 1)
        * (2.0 * math.pi) ** (-d / 2.0)
        * math.exp(-0.5 * r * r)
    )
    bound = 3.0 * partition.m * sphere_mass
    bound_alt = 2.0 * partition.m * sphere_mass
    return TailReport(
        tail_mass=tail,
        stderr=stderr,
        bound=bound,
        bound_alt=bound_alt,
        passed=tail <= bound + 3.0 * stderr,
        margin=bound - tail,
        margin_alt=bound_alt - tail,
    )
