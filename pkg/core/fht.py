# File: core/fht.py
# Functional hierarchical tensor density estimation by sketching

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import pinv, svd

from core.basis import BasisSpec, build_basis, eval_ortho, eval_ortho_and_deriv, quadrature
from models.core_models import BasisConfig, FhtConfig
from models.errors import DegenerateFitError, InsufficientSamplesError, InvalidArgumentError

logger = logging.getLogger(__name__)

# Relative singular-value cutoff for ranks and pseudo-inverses
RANK_CUTOFF = 1e-10
CHUNK = 8192
MAX_DENSE_ENTRIES = 10_000_000


# Dimension tree
@dataclass(frozen=True)
class TreeNode:
    index: int
    coords: Tuple[int, ...]
    parent: Optional[int]
    left: Optional[int] = None
    right: Optional[int] = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class DimensionTree:
    """Balanced binary tree over the CV coordinates.

    Nodes are stored in pre-order, so the root is node 0 and every parent
    precedes its children. Iterating indices in reverse visits children first.
    """

    def __init__(self, nodes: List[TreeNode]):
        self.nodes = nodes
        self.m = len(nodes[0].coords)
        self._validate()

    @classmethod
    def balanced(cls, m: Optional[int] = None, leaf_order: Optional[Sequence[int]] = None) -> "DimensionTree":
        if leaf_order is None:
            if m is None or m < 1:
                raise InvalidArgumentError("tree needs m >= 1 or an explicit leaf order")
            leaf_order = range(m)
        order = tuple(int(c) for c in leaf_order)
        if sorted(order) != list(range(len(order))):
            raise InvalidArgumentError(f"leaf order {order} is not a permutation of 0..{len(order) - 1}")

        nodes: List[TreeNode] = []

        def build(coords: Tuple[int, ...], parent: Optional[int], depth: int) -> int:
            index = len(nodes)
            nodes.append(TreeNode(index=index, coords=coords, parent=parent, depth=depth))
            if len(coords) > 1:
                half = (len(coords) + 1) // 2
                left = build(coords[:half], index, depth + 1)
                right = build(coords[half:], index, depth + 1)
                nodes[index] = replace(nodes[index], left=left, right=right)
            return index

        build(order, None, 0)
        return cls(nodes)

    def _validate(self) -> None:
        if sorted(self.root.coords) != list(range(self.m)):
            raise InvalidArgumentError("tree root must cover every coordinate exactly once")
        for node in self.nodes:
            if node.is_leaf:
                if len(node.coords) != 1:
                    raise InvalidArgumentError(f"leaf {node.index} is not a singleton")
                continue
            children = self.nodes[node.left].coords + self.nodes[node.right].coords
            if children != node.coords:
                raise InvalidArgumentError(f"children of node {node.index} do not partition it")

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def leaves(self) -> List[TreeNode]:
        return [node for node in self.nodes if node.is_leaf]

    @property
    def leaf_order(self) -> Tuple[int, ...]:
        return self.root.coords

    def sibling(self, index: int) -> int:
        parent = self.nodes[self.nodes[index].parent]
        return parent.right if parent.left == index else parent.left

    def name(self, index: int) -> str:
        node = self.nodes[index]
        if node.is_leaf:
            return f"leaf z{node.coords[0]}"
        return f"node {index} {list(node.coords)}"

    def to_dict(self) -> dict:
        return {"leaf_order": list(self.leaf_order)}

    @classmethod
    def from_dict(cls, data: dict) -> "DimensionTree":
        return cls.balanced(leaf_order=data["leaf_order"])


# Sketch functions
@dataclass(frozen=True, eq=False)
class SketchFunction:
    """Linear combinations of tensor-product basis functions on a coordinate group.

    A leaf applies ``matrix`` to the basis vector of one coordinate; an internal
    sketch applies ``matrix`` to the row-wise Kronecker product of two child
    sketches; the constant sketch (no coordinates) is identically 1.
    """
    coords: Tuple[int, ...]
    matrix: Optional[np.ndarray] = None
    left: Optional["SketchFunction"] = None
    right: Optional["SketchFunction"] = None

    @property
    def width(self) -> int:
        return 1 if self.matrix is None else self.matrix.shape[1]

    @property
    def is_constant(self) -> bool:
        return not self.coords


def constant_sketch() -> SketchFunction:
    return SketchFunction(coords=())


def leaf_sketch(coord: int, matrix: np.ndarray) -> SketchFunction:
    return SketchFunction(coords=(int(coord),), matrix=np.asarray(matrix, dtype=float))


def kron_sketch(left: SketchFunction, right: SketchFunction, matrix: np.ndarray) -> SketchFunction:
    matrix = np.asarray(matrix, dtype=float)
    if set(left.coords) & set(right.coords):
        raise InvalidArgumentError("combined sketches must act on disjoint coordinates")
    if matrix.shape[0] != left.width * right.width:
        raise InvalidArgumentError(f"combination matrix needs {left.width * right.width} rows")
    return SketchFunction(coords=left.coords + right.coords, matrix=matrix, left=left, right=right)


@dataclass(frozen=True)
class SketchSpec:
    """Seeded sketch family with output width rank + oversampling"""
    rank: int = 15
    oversampling: int = 5
    seed: int = 0

    @property
    def width(self) -> int:
        return self.rank + self.oversampling

    @classmethod
    def from_config(cls, config: FhtConfig) -> "SketchSpec":
        return cls(rank=config.rank, oversampling=config.oversampling, seed=config.sketch_seed)


def draw_sketches(tree: DimensionTree, dims: Sequence[int],
                  spec: SketchSpec) -> Tuple[Dict[int, SketchFunction], Dict[int, SketchFunction]]:
    """Group sketches s_n and complement sketches o_n for every node.

    Matrices are drawn in tree-structural order, so relabeling coordinates
    together with the leaf order reproduces the same sketches.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    k = spec.width
    group: Dict[int, SketchFunction] = {}
    for index in reversed(range(1, len(tree.nodes))):
        node = tree.nodes[index]
        if node.is_leaf:
            n = dims[node.coords[0]]
            group[index] = leaf_sketch(node.coords[0], rng.standard_normal((n, k)) / np.sqrt(n))
        else:
            a, b = group[node.left], group[node.right]
            rows = a.width * b.width
            group[index] = kron_sketch(a, b, rng.standard_normal((rows, k)) / np.sqrt(rows))

    outer: Dict[int, SketchFunction] = {0: constant_sketch()}
    for node in tree.nodes[1:]:
        sibling = group[tree.sibling(node.index)]
        above = outer[node.parent]
        if above.is_constant:
            outer[node.index] = sibling
        else:
            rows = sibling.width * above.width
            outer[node.index] = kron_sketch(sibling, above, rng.standard_normal((rows, k)) / np.sqrt(rows))
    return group, outer


# Moment sources
class MomentSource:
    """Expectations E[s_1 x s_2 x ...] of sketch outputs under some density"""

    n_samples: Optional[int] = None

    def moment(self, sketches: Sequence[SketchFunction]) -> np.ndarray:
        raise NotImplementedError


def _rowkron_apply(left: np.ndarray, right: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    combo = matrix.reshape(left.shape[1], right.shape[1], matrix.shape[1])
    out = np.empty((left.shape[0], matrix.shape[1]))
    for start in range(0, left.shape[0], CHUNK):
        stop = start + CHUNK
        out[start:stop] = np.einsum("nu,nv,uvk->nk", left[start:stop], right[start:stop], combo, optimize=True)
    return out


class SampleMoments(MomentSource):
    """Weighted empirical moments over rescaled samples"""

    def __init__(self, samples: np.ndarray, weights: Optional[np.ndarray], bases: Sequence[BasisSpec]):
        self.samples = np.asarray(samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(bases):
            raise InvalidArgumentError(f"samples of shape {self.samples.shape} do not match {len(bases)} bases")
        n = self.samples.shape[0]
        if n == 0:
            raise InsufficientSamplesError("no samples to estimate moments from")
        self.weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        self.bases = list(bases)
        self.n_samples = n
        self._features: Dict[int, np.ndarray] = {}
        self._cache: Dict[int, Tuple[SketchFunction, np.ndarray]] = {}

    def features(self, coord: int) -> np.ndarray:
        if coord not in self._features:
            self._features[coord] = eval_ortho(self.bases[coord], self.samples[:, coord])
        return self._features[coord]

    def evaluate(self, sketch: SketchFunction) -> np.ndarray:
        key = id(sketch)
        if key in self._cache:
            return self._cache[key][1]
        if sketch.is_constant:
            out = np.ones((self.n_samples, 1))
        elif sketch.left is None:
            out = self.features(sketch.coords[0]) @ sketch.matrix
        else:
            out = _rowkron_apply(self.evaluate(sketch.left), self.evaluate(sketch.right), sketch.matrix)
        # the sketch is held so its id stays unique while cached
        self._cache[key] = (sketch, out)
        return out

    def moment(self, sketches: Sequence[SketchFunction]) -> np.ndarray:
        outs = [self.evaluate(s) for s in sketches]
        w = self.weights
        if len(outs) == 1:
            return w @ outs[0]
        if len(outs) == 2:
            return (outs[0] * w[:, None]).T @ outs[1]
        if len(outs) == 3:
            total = np.zeros(tuple(o.shape[1] for o in outs))
            for start in range(0, self.n_samples, CHUNK):
                stop = start + CHUNK
                total += np.einsum("n,ni,nj,nl->ijl", w[start:stop], outs[0][start:stop],
                                   outs[1][start:stop], outs[2][start:stop], optimize=True)
            return total
        raise InvalidArgumentError(f"moments of {len(outs)} sketches are not supported")


class TensorMoments(MomentSource):
    """Exact moments of a density given by its coefficient tensor in an orthonormal basis.

    With orthonormal features E[prod of basis functions] is the coefficient
    itself, so every moment over a full partition of the coordinates is a
    contraction of the tensor with dense sketch matrices.
    """

    def __init__(self, coefficients: np.ndarray):
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.dims = self.coefficients.shape
        self._cache: Dict[int, Tuple[SketchFunction, np.ndarray]] = {}

    def dense(self, sketch: SketchFunction) -> np.ndarray:
        """Sketch as a matrix over the group's tensor-product basis"""
        key = id(sketch)
        if key in self._cache:
            return self._cache[key][1]
        if sketch.is_constant:
            out = np.ones((1, 1))
        elif sketch.left is None:
            out = sketch.matrix
        else:
            out = np.kron(self.dense(sketch.left), self.dense(sketch.right)) @ sketch.matrix
        self._cache[key] = (sketch, out)
        return out

    def moment(self, sketches: Sequence[SketchFunction]) -> np.ndarray:
        coords = [c for s in sketches for c in s.coords]
        if sorted(coords) != list(range(len(self.dims))):
            raise InvalidArgumentError("exact moments need sketches partitioning every coordinate")
        shape = [int(np.prod([self.dims[c] for c in s.coords])) for s in sketches]
        result = self.coefficients.transpose(coords).reshape(shape)
        for sketch in sketches:
            result = np.tensordot(result, self.dense(sketch), axes=([0], [0]))
        return result


def estimate_moment(source: MomentSource, sketch_left: SketchFunction, sketch_right: SketchFunction) -> np.ndarray:
    """Z(r, u) = sum_l w_l s_left(z_l, r) s_right(z_l, u)"""
    return source.moment([sketch_left, sketch_right])


def estimate_b(source: MomentSource, s_a: SketchFunction, s_b: SketchFunction,
               s_f: Optional[SketchFunction] = None) -> np.ndarray:
    """Three-way sketched moment; an absent complement group is the constant 1"""
    if s_f is None or s_f.is_constant:
        return source.moment([s_a, s_b])
    return source.moment([s_a, s_b, s_f])


# Model
@dataclass(frozen=True, eq=False)
class FhtModel:
    """Leaf factors in the orthonormal basis plus one core per internal node"""
    tree: DimensionTree
    bases: Tuple[BasisSpec, ...]
    factors: Dict[int, np.ndarray]
    cores: Dict[int, np.ndarray]
    sketch: SketchSpec

    @property
    def m(self) -> int:
        return self.tree.m

    @property
    def ranks(self) -> List[int]:
        """Output rank of every node in pre-order"""
        ranks = []
        for node in self.tree.nodes:
            if node.is_leaf:
                ranks.append(int(self.factors[node.coords[0]].shape[1]))
            else:
                ranks.append(int(self.cores[node.index].shape[2]))
        return ranks

    def scaled(self, factor: float) -> "FhtModel":
        """Same model with the root scaled by a constant"""
        root = self.tree.root
        if root.is_leaf:
            factors = dict(self.factors)
            factors[root.coords[0]] = factors[root.coords[0]] * factor
            return replace(self, factors=factors)
        cores = dict(self.cores)
        cores[root.index] = cores[root.index] * factor
        return replace(self, cores=cores)

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.to_dict(),
            "bases": [basis.to_dict() for basis in self.bases],
            "factors": {str(c): f.tolist() for c, f in sorted(self.factors.items())},
            "cores": {str(i): core.tolist() for i, core in sorted(self.cores.items())},
            "sketch": {"rank": self.sketch.rank, "oversampling": self.sketch.oversampling,
                       "seed": self.sketch.seed},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FhtModel":
        return cls(
            tree=DimensionTree.from_dict(data["tree"]),
            bases=tuple(BasisSpec.from_dict(b) for b in data["bases"]),
            factors={int(c): np.ascontiguousarray(f, dtype=float) for c, f in data["factors"].items()},
            cores={int(i): np.ascontiguousarray(core, dtype=float) for i, core in data["cores"].items()},
            sketch=SketchSpec(**data["sketch"]),
        )


def make_bases(m: int, periodic_mask: Sequence[bool], config: BasisConfig) -> Tuple[BasisSpec, ...]:
    """Orthonormalized basis for every coordinate, shared between equal domains"""
    built: Dict[bool, BasisSpec] = {}
    bases = []
    for k in range(m):
        periodic = bool(periodic_mask[k])
        if periodic not in built:
            built[periodic] = build_basis(config.p, config.delta, periodic)
        bases.append(built[periodic])
    return tuple(bases)


def _truncate(z: np.ndarray, rank: int, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(z)):
        raise DegenerateFitError(name, "non-finite sketched moment")
    u, s, vt = svd(z, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise DegenerateFitError(name, "sketched moment vanishes")
    r = min(rank, int(np.sum(s > RANK_CUTOFF * s[0])))
    logger.debug(f"{name}: rank {r}, leading singular values {np.round(s[:r + 1], 6).tolist()}")
    return u[:, :r], s[:r], vt[:r].T


def fit(source: MomentSource, tree: DimensionTree, bases: Sequence[BasisSpec], sketch: SketchSpec,
        rank: Optional[int] = None) -> FhtModel:
    """Bottom-up sketched fit of the FHT cores.

    Leaves take a range basis from the complement-sketched moment; internal
    nodes solve their core from the three-way moment through the children's
    sketched interfaces; the root uses the constant complement.
    """
    rank = sketch.rank if rank is None else int(rank)
    if rank < 1:
        raise InvalidArgumentError(f"rank cap must be positive, got {rank}")
    if len(bases) != tree.m:
        raise InvalidArgumentError(f"tree over {tree.m} coordinates needs {tree.m} bases, got {len(bases)}")
    if source.n_samples is not None and source.n_samples < sketch.width:
        raise InsufficientSamplesError(
            f"{source.n_samples} samples cannot support sketches of width {sketch.width}"
        )
    dims = [basis.size for basis in bases]
    group, outer = draw_sketches(tree, dims, sketch)

    factors: Dict[int, np.ndarray] = {}
    cores: Dict[int, np.ndarray] = {}
    interface: Dict[int, np.ndarray] = {}
    for index in reversed(range(len(tree.nodes))):
        node = tree.nodes[index]
        name = tree.name(index)
        if node.is_leaf:
            coord = node.coords[0]
            y = source.moment([leaf_sketch(coord, np.eye(dims[coord])), outer[index]])
            if node.parent is None:
                factors[coord] = np.ascontiguousarray(y)
                continue
            p_mat, sigma, q_mat = _truncate(group[index].matrix.T @ y, rank, name)
            factors[coord] = np.ascontiguousarray(y @ q_mat)
            interface[index] = p_mat * sigma
            continue

        if node.parent is None:
            b_tensor = estimate_b(source, group[node.left], group[node.right])[..., None]
        else:
            _, _, q_mat = _truncate(estimate_moment(source, group[index], outer[index]), rank, name)
            b_full = estimate_b(source, group[node.left], group[node.right], outer[index])
            b_tensor = np.einsum("ijo,or->ijr", b_full, q_mat)
        a_left, a_right = interface[node.left], interface[node.right]
        core = np.einsum("ai,bj,ijr->abr", pinv(a_left, atol=0.0, rtol=RANK_CUTOFF),
                         pinv(a_right, atol=0.0, rtol=RANK_CUTOFF), b_tensor, optimize=True)
        if not np.any(core):
            raise DegenerateFitError(name, "core solve returned zero")
        # einsum may hand back a strided view; stored arrays are C-ordered like reloaded ones
        core = np.ascontiguousarray(core)
        cores[index] = core
        if node.parent is not None:
            ra, rb, r = core.shape
            interface[index] = group[index].matrix.T @ (np.kron(a_left, a_right) @ core.reshape(ra * rb, r))

    model = FhtModel(tree=tree, bases=tuple(bases), factors=factors, cores=cores, sketch=sketch)
    logger.debug(f"FHT fit ranks {model.ranks}")
    return model


def fit_samples(samples_hat: np.ndarray, weights: Optional[np.ndarray], bases: Sequence[BasisSpec],
                config: FhtConfig, tree: Optional[DimensionTree] = None) -> FhtModel:
    """Fit from samples already mapped into the basis domain"""
    samples_hat = np.asarray(samples_hat, dtype=float)
    tree = tree or DimensionTree.balanced(samples_hat.shape[1])
    return fit(SampleMoments(samples_hat, weights, bases), tree, bases, SketchSpec.from_config(config))


# Evaluation
def _contract(core: np.ndarray, u_left: np.ndarray, u_right: np.ndarray) -> np.ndarray:
    return np.einsum("ijl,ni,nj->nl", core, u_left, u_right, optimize=True)


def _as_rows(model: FhtModel, z: np.ndarray) -> Tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = z[None, :] if single else z
    if z.ndim != 2 or z.shape[1] != model.m:
        raise InvalidArgumentError(f"expected points with {model.m} coordinates, got shape {z.shape}")
    return z, single


def _forward(model: FhtModel, z: np.ndarray, with_deriv: bool):
    outputs: Dict[int, np.ndarray] = {}
    slopes: Dict[int, np.ndarray] = {}
    for index in reversed(range(len(model.tree.nodes))):
        node = model.tree.nodes[index]
        if node.is_leaf:
            coord = node.coords[0]
            factor = model.factors[coord]
            if with_deriv:
                values, derivs = eval_ortho_and_deriv(model.bases[coord], z[:, coord])
                slopes[index] = derivs @ factor
            else:
                values = eval_ortho(model.bases[coord], z[:, coord])
            outputs[index] = values @ factor
        else:
            outputs[index] = _contract(model.cores[index], outputs[node.left], outputs[node.right])
    return outputs, slopes


def evaluate(model: FhtModel, z: np.ndarray):
    """rho_FHT at rescaled points by leaf-to-root contraction"""
    rows, single = _as_rows(model, z)
    values = _forward(model, rows, with_deriv=False)[0][0][:, 0]
    return float(values[0]) if single else values


def evaluate_with_gradient(model: FhtModel, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values and gradients, the gradient by one reverse sweep over the tree"""
    rows, single = _as_rows(model, z)
    outputs, slopes = _forward(model, rows, with_deriv=True)
    adjoint = {0: np.ones((rows.shape[0], 1))}
    grad = np.zeros_like(rows)
    for node in model.tree.nodes:
        bar = adjoint.pop(node.index)
        if node.is_leaf:
            grad[:, node.coords[0]] = np.einsum("nr,nr->n", slopes[node.index], bar)
            continue
        core = model.cores[node.index]
        adjoint[node.left] = np.einsum("ijl,nj,nl->ni", core, outputs[node.right], bar, optimize=True)
        adjoint[node.right] = np.einsum("ijl,ni,nl->nj", core, outputs[node.left], bar, optimize=True)
    values = outputs[0][:, 0]
    if single:
        return float(values[0]), grad[0]
    return values, grad


def evaluate_gradient(model: FhtModel, z: np.ndarray) -> np.ndarray:
    return evaluate_with_gradient(model, z)[1]


def out_of_domain(model: FhtModel, z: np.ndarray) -> int:
    """Rows with a non-periodic coordinate outside [-1, 1]"""
    rows, _ = _as_rows(model, z)
    bounded = np.array([not basis.periodic for basis in model.bases])
    if not bounded.any():
        return 0
    return int(np.any(np.abs(rows[:, bounded]) > 1.0, axis=1).sum())


def assemble_dense(model: FhtModel) -> np.ndarray:
    """Full coefficient tensor, axes in coordinate order"""
    dims = [basis.size for basis in model.bases]
    if np.prod(dims, dtype=float) > MAX_DENSE_ENTRIES:
        raise InvalidArgumentError(f"dense tensor of shape {dims} is too large to assemble")
    dense: Dict[int, np.ndarray] = {}
    for index in reversed(range(len(model.tree.nodes))):
        node = model.tree.nodes[index]
        if node.is_leaf:
            dense[index] = model.factors[node.coords[0]]
            continue
        core = model.cores[index]
        block = np.einsum("xi,yj,ijl->xyl", dense[node.left], dense[node.right], core, optimize=True)
        dense[index] = block.reshape(-1, core.shape[2])
    order = model.tree.leaf_order
    tensor = dense[0][:, 0].reshape([dims[c] for c in order])
    return np.transpose(tensor, np.argsort(order))


def evaluate_expansion(coefficients: np.ndarray, bases: Sequence[BasisSpec], z: np.ndarray) -> np.ndarray:
    """Dense tensor-product expansion sum_C C prod_k psi_k(z_k)"""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    result = np.broadcast_to(coefficients, (z.shape[0],) + coefficients.shape)
    for k, basis in enumerate(bases):
        features = eval_ortho(basis, z[:, k])
        result = np.einsum("ni,ni...->n...", features, result)
    return result


def density_integral(model: FhtModel) -> float:
    """Integral of rho_FHT over the basis domain, exact per tensor-product quadrature"""
    outputs: Dict[int, np.ndarray] = {}
    for index in reversed(range(len(model.tree.nodes))):
        node = model.tree.nodes[index]
        if node.is_leaf:
            coord = node.coords[0]
            nodes, weights = quadrature(model.bases[coord])
            outputs[index] = (weights @ eval_ortho(model.bases[coord], nodes))[None, :] @ model.factors[coord]
        else:
            outputs[index] = _contract(model.cores[index], outputs[node.left], outputs[node.right])
    return float(outputs[0][0, 0])
