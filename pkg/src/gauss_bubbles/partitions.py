"""Partition families of R^d: regular-simplex cones, affine argmax cells,
round cylinders, volume calibration, perturbation, and rotation alignment.

An affine partition assigns a point x to the cell whose affine functional
<x, z_i> + c_i is largest, ties broken to the lowest index. Simplicial-cone
partitions use the vertices of a regular simplex as directions; the shift w
enters through the offsets c_i = -<w, z_i>, which re-apexes the cones at w.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    CalibrationError,
    ContractViolationError,
    DomainError,
)
from .montecarlo import ALIGN_SUBSTREAM, IntegrationConfig, mc_mean, mc_volumes

_SIMPLEX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RegularSimplexVertices:
    """Unit vectors z_1..z_m in R^{m-1} with pairwise inner product -1/(m-1)."""

    m: int
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices.setflags(write=False)


def regular_simplex(m: int) -> RegularSimplexVertices:
    """Vertices of the regular simplex centered at the origin in R^{m-1}.

    Built recursively in a canonical orientation: z_1 = e_1, and each later
    block reuses the (m-1)-vertex construction scaled into the remaining
    coordinates. Deterministic, and exact up to float rounding.
    """
    if m < 2:
        raise DomainError(f"regular simplex needs m >= 2, got {m}")
    vertices = np.array([[1.0], [-1.0]])
    for k in range(3, m + 1):
        prev = vertices  # (k-1, k-2)
        out = np.zeros((k, k - 1))
        out[0, 0] = 1.0
        out[1:, 0] = -1.0 / (k - 1)
        out[1:, 1:] = math.sqrt(1.0 - 1.0 / (k - 1) ** 2) * prev
        vertices = out
    return RegularSimplexVertices(m=m, vertices=vertices)


@dataclass(frozen=True, eq=False)
class AffinePartition:
    """Partition of R^d into m cells by argmax of affine functionals.

    ``directions`` has one row z_i per cell and ``offsets`` holds the c_i.
    ``shift`` is metadata recording the cone apex w when the partition was
    built as simplicial cones (offsets then satisfy c_i = -<w, z_i>).
    """

    directions: np.ndarray
    offsets: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        shift = np.asarray(self.shift, dtype=float).reshape(-1)
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "shift", shift)
        m, d = directions.shape
        if m < 2:
            raise ContractViolationError("an affine partition needs at least 2 cells")
        if offsets.size != m:
            raise ContractViolationError("offsets length must match directions rows")
        if shift.size != d:
            raise ContractViolationError("shift length must match the ambient dimension")
        if not np.all(np.isfinite(directions)) or not np.all(np.isfinite(offsets)):
            raise ContractViolationError("directions and offsets must be finite")
        same = np.all(directions == directions[0], axis=1) & (offsets == offsets[0])
        if same.all():
            raise ContractViolationError("all affine functionals are identical")
        directions.setflags(write=False)
        offsets.setflags(write=False)
        shift.setflags(write=False)

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    def scores(self, points: np.ndarray) -> np.ndarray:
        """Affine scores <x, z_i> + c_i, one column per cell."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.directions.T + self.offsets[None, :]

    def classify_points(self, points: np.ndarray) -> np.ndarray:
        """Cell index per row; argmax takes the lowest index on exact ties."""
        return np.argmax(self.scores(points), axis=1)

    def classify(self, point) -> int:
        return int(self.classify_points(np.asarray(point, dtype=float)[None, :])[0])

    def with_offsets(self, offsets) -> "AffinePartition":
        return AffinePartition(self.directions.copy(), np.asarray(offsets, float), self.shift.copy())

    def rotated(self, rotation: np.ndarray) -> "AffinePartition":
        """The image partition under x -> R x (directions become R z_i)."""
        rot = np.asarray(rotation, dtype=float)
        return AffinePartition(self.directions @ rot.T, self.offsets.copy(), rot @ self.shift)

    def relabeled(self, order) -> "AffinePartition":
        """Reorder cells so new cell i is old cell order[i]."""
        idx = np.asarray(order, dtype=int)
        return AffinePartition(self.directions[idx], self.offsets[idx], self.shift.copy())

    def cell_constraints(self, cell: int):
        """Half-space description A x >= b of one (convex) cell.

        Rows with z_i == z_j are dropped when always satisfied; an
        unsatisfiable parallel row makes the cell empty, reported via an
        infeasible marker row of zeros with b = +inf.
        """
        z = self.directions
        c = self.offsets
        rows, rhs = [], []
        for j in range(self.m):
            if j == cell:
                continue
            a = z[cell] - z[j]
            b = c[j] - c[cell]
            if np.all(a == 0.0):
                if b > 0.0:
                    return np.zeros((1, self.d)), np.array([np.inf])
                continue
            rows.append(a)
            rhs.append(b)
        if not rows:
            return np.zeros((0, self.d)), np.zeros(0)
        return np.array(rows), np.array(rhs)

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "directions": [float(v) for v in self.directions.reshape(-1)],
            "offsets": [float(v) for v in self.offsets],
            "w": [float(v) for v in self.shift],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "AffinePartition":
        m, d = int(data["m"]), int(data["d"])
        directions = np.asarray(data["directions"], dtype=float).reshape(m, d)
        return cls(directions, np.asarray(data["offsets"], float), np.asarray(data["w"], float))

    @classmethod
    def from_json(cls, text: str) -> "AffinePartition":
        return cls.from_json_dict(json.loads(text))


def simplicial_cone_partition(m: int, w=None) -> AffinePartition:
    """Cones over the regular simplex, re-apexed at w (in R^{m-1})."""
    simplex = regular_simplex(m)
    d = m - 1
    w = np.zeros(d) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if w.size != d:
        raise ContractViolationError(f"w has size {w.size}, expected {d}")
    if not np.all(np.isfinite(w)):
        raise ContractViolationError("w must be finite")
    offsets = -simplex.vertices @ w
    return AffinePartition(simplex.vertices.copy(), offsets, w)


def propeller_partition() -> AffinePartition:
    """Three 120-degree sectors of the plane meeting at the origin."""
    return simplicial_cone_partition(3)


def half_space_pair(d: int = 1, threshold: float = 0.0) -> AffinePartition:
    """Two half-spaces split by the hyperplane x_1 = threshold.

    Cell 0 is the side where x_1 >= threshold. This is the m=2 cone family
    with apex w = threshold * e_1 embedded in R^d.
    """
    if d < 1:
        raise DomainError("ambient dimension must be at least 1")
    directions = np.zeros((2, d))
    directions[0, 0] = 1.0
    directions[1, 0] = -1.0
    w = np.zeros(d)
    w[0] = threshold
    return AffinePartition(directions, np.array([-threshold, threshold]), w)


def classify(partition: AffinePartition, x) -> int:
    """Cell index of a single point (lowest index wins any tie)."""
    return partition.classify(x)


def perturb(partition: AffinePartition, magnitude: float, seed: int) -> AffinePartition:
    """Add Gaussian noise of the given size to directions and offsets.

    Directions are renormalized to unit length afterwards. Magnitude 0
    returns an identical partition; the result is deterministic in seed.
    """
    if magnitude < 0:
        raise DomainError("perturbation magnitude must be nonnegative")
    if magnitude == 0:
        return AffinePartition(
            partition.directions.copy(), partition.offsets.copy(), partition.shift.copy()
        )
    rng = np.random.default_rng(seed)
    directions = partition.directions + magnitude * rng.standard_normal(partition.directions.shape)
    norms = np.linalg.norm(directions, axis=1)
    if np.any(norms < 1e-12):
        raise DomainError("perturbation collapsed a direction to zero")
    directions /= norms[:, None]
    offsets = partition.offsets + magnitude * rng.standard_normal(partition.m)
    return AffinePartition(directions, offsets, partition.shift.copy())


def _volume_slopes(partition: AffinePartition, cfg: IntegrationConfig) -> np.ndarray:
    """d(volume_i)/d(offset_i): each facet sweeps mass/|z_i - z_j| per unit c_i."""
    from . import perimeter  # local import; perimeter builds on montecarlo

    report = perimeter.facet_perimeter(partition, cfg)
    slopes = np.zeros(partition.m)
    for (i, j), (mass, _) in report.masses.items():
        gap = np.linalg.norm(partition.directions[i] - partition.directions[j])
        if gap > 0:
            slopes[i] += mass / gap
            slopes[j] += mass / gap
    return slopes


def calibrate_offsets_to_volumes(
    partition: AffinePartition,
    targets,
    cfg: IntegrationConfig,
    tol: float = 1e-3,
    max_iters: int = 40,
    damping: float = 0.5,
) -> AffinePartition:
    """Adjust offsets until Monte Carlo volumes match the targets within tol.

    Runs a damped multiplicative fixed point c_i += damping * log(a_i/a_hat_i)
    and switches to coordinate Newton steps (slopes from the facet masses)
    once the residual is small. Offsets are normalized to sum to zero. The
    same config (hence the same sample stream) is used for every iterate, so
    the iteration is deterministic.
    """
    a = np.asarray(targets, dtype=float).reshape(-1)
    if a.size != partition.m:
        raise ContractViolationError("target volume count must match the cell count")
    if np.any(a <= 0.0) or abs(a.sum() - 1.0) > 1e-9:
        raise DomainError("target volumes must be positive and sum to 1")

    floor = 1.0 / (2.0 * cfg.sample_count)
    current = partition
    residual = np.inf
    best_residual = np.inf
    last_improvement = 0
    slopes = None
    slopes_age = 0
    # Per-cell trust radius: stiff wedge cells flip their volume across the
    # target on steps that are harmless for round cells, so the step cap
    # shrinks on every sign flip of a cell's residual and relaxes slowly.
    cap = np.full(partition.m, 1.0)
    prev_sign = np.zeros(partition.m)
    for it in range(max_iters):
        est = mc_volumes(current, cfg).volumes
        residual = float(np.max(np.abs(est - a)))
        if residual <= tol:
            offsets = current.offsets - current.offsets.mean()
            return current.with_offsets(offsets)
        if residual < 0.9 * best_residual:
            best_residual = residual
            last_improvement = it
        elif it - last_improvement >= 10:
            # The fixed stream's volume map is a step function of the
            # offsets; once steps stop improving, the target is unreachable
            # at this sampling resolution.
            break
        sign = np.sign(a - est)
        cap = np.where(sign * prev_sign < 0, 0.4 * cap, np.minimum(1.3 * cap, 1.0))
        prev_sign = sign
        # Clipped so an empty cell does not take a log(1/floor)-sized jump
        # straight to dominance.
        log_step = damping * np.log(a / np.maximum(est, floor))
        if it < 2:
            step = log_step
        else:
            # Damped diagonal Newton with facet-mass slopes where the cell
            # has measurable volume; empty cells have no usable slope and
            # keep the log step. Slopes drift slowly, refresh sparingly.
            if slopes is None or slopes_age >= 3:
                slopes = np.maximum(_volume_slopes(current, cfg), 1e-6)
                slopes_age = 0
            slopes_age += 1
            newton = damping * (a - est) / slopes
            step = np.where(est > 1e-4, newton, log_step)
        step = np.clip(step, -cap, cap)
        offsets = current.offsets + step
        current = current.with_offsets(offsets - offsets.mean())
    raise CalibrationError(
        f"volume calibration did not reach tol={tol} in {max_iters} iterations "
        f"(residual {residual:.3e})",
        partition=current,
        residual=residual,
    )


def _skew_matrix(theta: np.ndarray, d: int) -> np.ndarray:
    s = np.zeros((d, d))
    k = 0
    for i in range(d):
        for j in range(i + 1, d):
            s[i, j] = theta[k]
            s[j, i] = -theta[k]
            k += 1
    return s


def _greedy_direction_match(reference: AffinePartition, candidate: AffinePartition) -> np.ndarray:
    """Greedy assignment on direction inner products; perm[i] = candidate cell
    matched to reference cell i."""
    sims = reference.directions @ candidate.directions.T
    perm = np.full(reference.m, -1, dtype=int)
    open_ref = set(range(reference.m))
    open_cand = set(range(candidate.m))
    order = np.argsort(sims, axis=None)[::-1]
    for flat in order:
        i, j = divmod(int(flat), candidate.m)
        if i in open_ref and j in open_cand:
            perm[i] = j
            open_ref.discard(i)
            open_cand.discard(j)
            if not open_ref:
                break
    return perm


def _procrustes_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotation R in SO(d) minimizing sum |R s_i - t_i|^2 (Kabsch)."""
    h = source.T @ target
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = source.shape[1]
    fix = np.eye(d)
    fix[-1, -1] = sign if sign != 0 else 1.0
    return vt.T @ fix @ u.T


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    misalignment: float
    stderr: float
    permutation: np.ndarray


def align_rotation(
    reference: AffinePartition,
    candidate: AffinePartition,
    cfg: IntegrationConfig,
    refine_iters: int = 80,
) -> AlignmentResult:
    """Rotation approximately minimizing the symmetric-difference measure.

    Cells are first matched by greedy assignment on direction inner
    products (labels are not canonical), then orthogonal Procrustes fits a
    rotation of the candidate onto the reference directions, followed by a
    small-angle simplex refinement of the Monte Carlo misalignment
    sum_i gamma(R C_i \\ R_i) + gamma(R_i \\ R C_i).
    """
    if reference.m != candidate.m or reference.d != candidate.d:
        raise ContractViolationError("partitions must share m and d for alignment")
    d = reference.d
    perm = _greedy_direction_match(reference, candidate)
    matched = candidate.relabeled(perm)
    base_rot = _procrustes_rotation(matched.directions, reference.directions)

    def misalignment_of(rot: np.ndarray):
        rotated = matched.rotated(rot)

        def values(x):
            return (reference.classify_points(x) != rotated.classify_points(x)).astype(float)

        res = mc_mean(cfg, values, substream=ALIGN_SUBSTREAM)
        return 2.0 * float(res.mean[0]), 2.0 * float(res.stderr[0])

    best_rot = base_rot
    best_val, best_err = misalignment_of(base_rot)
    n_params = d * (d - 1) // 2
    # Procrustes is already optimal when the direction sets match exactly;
    # only burn refinement evaluations on a significantly nonzero residual.
    if n_params > 0 and refine_iters > 0 and best_val > 3.0 * best_err:
        from scipy.linalg import expm
        from scipy.optimize import minimize

        def objective(theta):
            return misalignment_of(expm(_skew_matrix(theta, d)) @ base_rot)[0]

        res = minimize(
            objective,
            np.zeros(n_params),
            method="Nelder-Mead",
            options={"maxfev": refine_iters, "xatol": 1e-4, "fatol": 0.0},
        )
        refined = expm(_skew_matrix(res.x, d)) @ base_rot
        val, err = misalignment_of(refined)
        if val < best_val:
            best_rot, best_val, best_err = refined, val, err
    return AlignmentResult(
        rotation=best_rot, misalignment=best_val, stderr=best_err, permutation=perm
    )


class PartitionCell:
    """One cell of an affine partition viewed as a region of R^d.

    Provides the membership test and the exact Euclidean distance to the
    (convex) cell, computed by projecting onto every active-set candidate of
    the cell's half-space description.
    """

    def __init__(self, partition: AffinePartition, cell: int):
        if not 0 <= cell < partition.m:
            raise ContractViolationError(f"cell index {cell} out of range")
        self.partition = partition
        self.cell = cell
        self._a, self._b = partition.cell_constraints(cell)
        self._projectors = self._build_projectors()

    @property
    def d(self) -> int:
        return self.partition.d

    def _build_projectors(self):
        a, _ = self._a, self._b
        rows = a.shape[0]
        projectors = []
        max_size = min(rows, self.d)
        for size in range(1, max_size + 1):
            for subset in itertools.combinations(range(rows), size):
                sub = a[list(subset)]
                gram = sub @ sub.T
                # Skip rank-deficient subsets; their projections are covered
                # by smaller subsets.
                if np.linalg.matrix_rank(gram, tol=1e-12) < size:
                    continue
                projectors.append((np.array(subset), sub, np.linalg.inv(gram)))
        return projectors

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.partition.classify_points(pts) == self.cell

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Exact distance from each point to the cell (0 inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        if self._a.shape[0] == 0:
            return np.zeros(n)
        if np.any(np.isinf(self._b)):  # empty cell
            return np.full(n, np.inf)
        slack = pts @ self._a.T - self._b[None, :]
        best = np.where(np.all(slack >= -1e-12, axis=1), 0.0, np.inf)
        for subset, sub, gram_inv in self._projectors:
            viol = pts @ sub.T - self._b[subset][None, :]
            proj = pts - (viol @ gram_inv) @ sub
            feasible = np.all(proj @ self._a.T - self._b[None, :] >= -1e-9, axis=1)
            dist = np.linalg.norm(pts - proj, axis=1)
            better = feasible & (dist < best)
            best = np.where(better, dist, best)
        return best


@dataclass(frozen=True)
class RoundCylinder:
    """Region bounded by r S^k x R^{n-k} inside R^{n+1} (ambient = n+1).

    ``orientation`` picks which side is the region: "inside" is the solid
    tube {|x_{1..k+1}| <= r}, "outside" its complement. Both are centrally
    symmetric.
    """

    k: int
    r: float
    ambient: int
    orientation: str = "inside"

    def __post_init__(self):
        if self.ambient < 1:
            raise DomainError("ambient dimension must be at least 1")
        if not 0 <= self.k <= self.ambient - 1:
            raise DomainError(f"k must lie in [0, {self.ambient - 1}], got {self.k}")
        if not self.r > 0:
            raise DomainError("radius must be positive")
        if self.orientation not in ("inside", "outside"):
            raise DomainError("orientation must be 'inside' or 'outside'")

    @property
    def d(self) -> int:
        return self.ambient

    def _core_norm(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts[:, : self.k + 1], axis=1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        s = self._core_norm(points)
        return s <= self.r if self.orientation == "inside" else s >= self.r

    def distance(self, points: np.ndarray) -> np.ndarray:
        s = self._core_norm(points)
        gap = s - self.r if self.orientation == "inside" else self.r - s
        return np.maximum(gap, 0.0)

    def complement(self) -> "RoundCylinder":
        flip = "outside" if self.orientation == "inside" else "inside"
        return replace(self, orientation=flip)
