"""Declarative construction of total Hamiltonians H = H_sys + H_int + H_env.

A model is a small system (arbitrary Hermitian matrix) coupled to a spin-1/2
chain environment through a sum of product terms.  Assembly always rotates
into the product eigenbasis: row index = alpha * d_env + i with alpha, i each
ascending in energy, so coefficient extraction downstream is a plain reshape.

All spec objects are frozen dataclasses; assembled matrices are never mutated
after construction and are safe to share across threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrumError, DimensionCapError

PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "y": np.array([[0.0, -1.0j], [0.0 + 1.0j, 0.0]]),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]]),
}

HERMITICITY_ATOL = 1e-12
DENSE_CAP_DEFAULT = 16384

# Standard nonintegrable chain parameters: tilted-field Ising couplings known
# to satisfy ETH at chain lengths reachable by dense diagonalization.
DEFECT_CHAIN_J = 1.0
DEFECT_CHAIN_G = 0.9045
DEFECT_CHAIN_H = 0.8090
DEFECT_CHAIN_BOOST = 0.11


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def hermiticity_defect(m) -> float:
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def require_hermitian(m, name="matrix", atol=HERMITICITY_ATOL):
    defect = hermiticity_defect(m)
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
    if defect > atol * scale:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3e})")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Spin-1/2 chain environment, or an explicit Hermitian matrix.

    The chain Hamiltonian is
        H_env = sum_k J_k sz_k sz_{k+1} + sum_k (g_k sx_k + h_k sz_k)
    with open boundaries.  ``matrix`` overrides the chain entirely (used for
    synthetic environments with engineered spectra).
    """

    n_sites: int
    transverse_field: tuple = ()
    longitudinal_field: tuple = ()
    ising_coupling: tuple = ()
    local_dimension: int = 2
    disorder_seed: int | None = None
    disorder_strength: float = 0.0
    matrix: np.ndarray | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        if self.matrix is not None:
            return _as_matrix(self.matrix).shape[0]
        return self.local_dimension**self.n_sites

    def site_fields(self):
        """Per-site (transverse, longitudinal) field arrays after disorder."""
        g = np.broadcast_to(np.asarray(self.transverse_field, float), (self.n_sites,)).copy()
        h = np.broadcast_to(np.asarray(self.longitudinal_field, float), (self.n_sites,)).copy()
        if self.disorder_seed is not None and self.disorder_strength > 0.0:
            rng = np.random.default_rng(self.disorder_seed)
            h = h + rng.uniform(-self.disorder_strength, self.disorder_strength, self.n_sites)
        return g, h

    def build(self) -> np.ndarray:
        if self.matrix is not None:
            m = _as_matrix(self.matrix)
            require_hermitian(m, "environment matrix")
            return m
        if self.local_dimension != 2:
            raise ValueError("chain construction supports local_dimension=2 only")
        g, h = self.site_fields()
        j = np.broadcast_to(np.asarray(self.ising_coupling, float), (max(self.n_sites - 1, 0),))
        dim = self.dim
        ham = np.zeros((dim, dim))
        for k in range(self.n_sites):
            ham += g[k] * site_operator(PAULI["x"], k, self.n_sites)
            ham += h[k] * site_operator(PAULI["z"], k, self.n_sites)
        for k in range(self.n_sites - 1):
            sz_k = site_operator(PAULI["z"], k, self.n_sites)
            sz_k1 = site_operator(PAULI["z"], k + 1, self.n_sites)
            ham += j[k] * (sz_k @ sz_k1)
        return ham


def site_operator(op, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator into the chain; site 0 is the leftmost
    (most significant) tensor factor."""
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} outside chain of {n_sites} sites")
    op = _as_matrix(op)
    d = op.shape[0]
    left = np.eye(d**site)
    right = np.eye(d ** (n_sites - site - 1))
    return np.kron(np.kron(left, op), right)


def defect_chain(
    n_sites: int,
    j: float = DEFECT_CHAIN_J,
    g: float = DEFECT_CHAIN_G,
    h: float = DEFECT_CHAIN_H,
    defect_site: int = 0,
    defect_boost: float = DEFECT_CHAIN_BOOST,
    disorder_seed: int | None = None,
    disorder_strength: float = 0.0,
) -> EnvironmentSpec:
    """Tilted-field Ising chain with one boosted longitudinal field."""
    hs = np.full(n_sites, h)
    hs[defect_site] += defect_boost
    return EnvironmentSpec(
        n_sites=n_sites,
        transverse_field=(g,) * n_sites,
        longitudinal_field=tuple(hs),
        ising_coupling=(j,) * max(n_sites - 1, 0),
        disorder_seed=disorder_seed,
        disorder_strength=disorder_strength,
    )


def synthetic_environment(levels) -> EnvironmentSpec:
    """Diagonal environment with a prescribed spectrum (for synthetic-DOS tests)."""
    levels = np.sort(np.asarray(levels, float))
    return EnvironmentSpec(n_sites=0, matrix=np.diag(levels))


@dataclass(frozen=True)
class EnvOperatorSpec:
    """Environment factor of one interaction term.

    Either a single-site Pauli (``site`` + ``axis``), the identity
    (``axis="identity"``), or an explicit Hermitian matrix for non-local tests.
    """

    site: int | None = None
    axis: str | None = None
    matrix: np.ndarray | None = field(default=None, compare=False)

    def build(self, env: EnvironmentSpec) -> np.ndarray:
        if self.matrix is not None:
            m = _as_matrix(self.matrix)
            require_hermitian(m, "environment operator")
            if m.shape[0] != env.dim:
                raise ValueError("explicit environment operator has wrong dimension")
            return m
        if self.axis == "identity":
            return np.eye(env.dim)
        if self.axis not in PAULI:
            raise ValueError(f"unknown pauli axis {self.axis!r}")
        if self.site is None:
            raise ValueError("site required for a single-site operator")
        if env.matrix is not None:
            raise ValueError("site operators need a chain environment")
        return site_operator(PAULI[self.axis], self.site, env.n_sites)

    def is_identity(self, env: EnvironmentSpec) -> bool:
        if self.axis == "identity":
            return True
        if self.matrix is not None:
            m = _as_matrix(self.matrix)
            return bool(np.allclose(m, np.eye(m.shape[0]), atol=1e-12))
        return False


@dataclass(frozen=True)
class ModelSpec:
    """Full description of H = H_sys + coupling * sum_nu S_nu (x) E_nu + H_env."""

    system_hamiltonian: np.ndarray = field(compare=False)
    environment: EnvironmentSpec = field(default_factory=lambda: defect_chain(4))
    interaction_terms: tuple = ()
    coupling: float = 0.0
    label: str = "model"
    gap_tolerance: float = 1e-9
    dimension_cap: int = DENSE_CAP_DEFAULT

    @property
    def d_sys(self) -> int:
        return _as_matrix(self.system_hamiltonian).shape[0]

    @property
    def d_env(self) -> int:
        return self.environment.dim

    @property
    def dim(self) -> int:
        return self.d_sys * self.d_env

    def with_coupling(self, coupling: float) -> "ModelSpec":
        return dataclasses.replace(self, coupling=float(coupling))

    def validate(self):
        h_sys = _as_matrix(self.system_hamiltonian)
        require_hermitian(h_sys, "system Hamiltonian")
        if self.d_sys < 2:
            raise ValueError("system dimension must be at least 2")
        if self.coupling < 0:
            raise ValueError("coupling must be nonnegative")
        if self.dim > self.dimension_cap:
            raise DimensionCapError(
                f"total dimension {self.dim} exceeds cap {self.dimension_cap}"
            )
        check_nondegenerate(np.linalg.eigvalsh(h_sys), self.gap_tolerance)
        for sys_op, env_op in self.interaction_terms:
            sys_op = _as_matrix(sys_op)
            if sys_op.shape[0] != self.d_sys:
                raise ValueError("interaction system operator has wrong dimension")
            require_hermitian(sys_op, "interaction system operator")
            if env_op.site is not None and env_op.matrix is None:
                if not 0 <= env_op.site < self.environment.n_sites:
                    raise ValueError(
                        f"interaction site {env_op.site} outside environment chain"
                    )


def check_nondegenerate(energies, rel_tolerance):
    """Raise unless all level gaps exceed rel_tolerance * spectral norm."""
    energies = np.sort(np.asarray(energies, float))
    norm = float(np.max(np.abs(energies))) if energies.size else 0.0
    tol = rel_tolerance * max(norm, 1e-300)
    if energies.size > 1:
        gap = float(np.min(np.diff(energies)))
        if gap <= tol:
            raise DegenerateSpectrumError(gap, tol)


def _eigenbasis(h):
    """Ascending eigendecomposition with phases fixed so the largest-modulus
    component of each column is real positive."""
    energies, vectors = np.linalg.eigh(h)
    vectors = fix_phases(vectors)
    return energies, vectors


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    idx = np.argmax(np.abs(vectors), axis=0)
    lead = vectors[idx, np.arange(vectors.shape[1])]
    if np.iscomplexobj(vectors):
        phase = lead / np.where(np.abs(lead) == 0.0, 1.0, np.abs(lead))
        vectors /= np.where(phase == 0.0, 1.0, phase)
    else:
        vectors *= np.where(lead < 0.0, -1.0, 1.0)
    return vectors


@dataclass(frozen=True)
class AssembledModel:
    """A model rotated into its product eigenbasis, ready to diagonalize.

    ``total`` is H in the basis |alpha i> (alpha major, i minor); ``sys_ops``
    and ``env_ops`` are the interaction factors in the respective eigenbases,
    already including nothing of the coupling (apply ``spec.coupling`` when
    summing).
    """

    spec: ModelSpec
    sys_energies: np.ndarray
    sys_transform: np.ndarray
    env_energies: np.ndarray
    env_transform: np.ndarray
    sys_ops: tuple
    env_ops: tuple
    total: np.ndarray | None

    @property
    def d_sys(self) -> int:
        return self.sys_energies.size

    @property
    def d_env(self) -> int:
        return self.env_energies.size

    def uncoupled(self) -> np.ndarray:
        return np.diag(self.uncoupled_diagonal())

    def uncoupled_diagonal(self) -> np.ndarray:
        return (self.sys_energies[:, None] + self.env_energies[None, :]).ravel()

    def _dtype(self):
        if self.total is not None:
            return self.total.dtype
        ops = [*self.sys_ops, *self.env_ops]
        return np.complex128 if any(np.iscomplexobj(m) for m in ops) else np.float64

    def interaction(self) -> np.ndarray:
        """coupling * sum_nu S_nu (x) E_nu in the product eigenbasis."""
        dim = self.d_sys * self.d_env
        dtype = self._dtype()
        out = np.zeros((dim, dim), dtype=dtype)
        for s_op, e_op in zip(self.sys_ops, self.env_ops):
            out += np.kron(s_op, e_op).astype(dtype, copy=False)
        out *= self.spec.coupling
        return out


def assemble(spec: ModelSpec) -> AssembledModel:
    """Validate and rotate a model into its product eigenbasis."""
    spec.validate()
    h_sys = _as_matrix(spec.system_hamiltonian)
    h_env = spec.environment.build()

    sys_e, sys_u = _eigenbasis(h_sys)
    env_e, env_u = _eigenbasis(h_env)

    sys_ops = []
    env_ops = []
    for s_op, e_spec in spec.interaction_terms:
        s_rot = sys_u.conj().T @ _as_matrix(s_op) @ sys_u
        e_rot = env_u.conj().T @ e_spec.build(spec.environment) @ env_u
        sys_ops.append(s_rot)
        env_ops.append(e_rot)

    real = not any(
        np.iscomplexobj(m) and np.abs(m.imag).max() > 0.0
        for m in [sys_u, env_u, *sys_ops, *env_ops]
    )
    dtype = np.float64 if real else np.complex128
    dim = spec.dim
    total = np.zeros((dim, dim), dtype=dtype)
    flat = np.arange(dim)
    total[flat, flat] = (sys_e[:, None] + env_e[None, :]).ravel()
    for s_rot, e_rot in zip(sys_ops, env_ops):
        total += spec.coupling * np.kron(s_rot, e_rot).astype(dtype, copy=False)

    return AssembledModel(
        spec=spec,
        sys_energies=sys_e,
        sys_transform=sys_u,
        env_energies=env_e,
        env_transform=env_u,
        sys_ops=tuple(np.ascontiguousarray(m.astype(dtype, copy=False)) for m in sys_ops),
        env_ops=tuple(np.ascontiguousarray(m.astype(dtype, copy=False)) for m in env_ops),
        total=total,
    )


def assemble_total(spec: ModelSpec) -> np.ndarray:
    """H in the product eigenbasis, row index alpha * d_env + i."""
    return assemble(spec).total


def assemble_uncoupled(spec: ModelSpec) -> np.ndarray:
    """H_sys + H_env without interaction (diagonal in the product eigenbasis)."""
    return assemble(spec.with_coupling(0.0)).total


@dataclass(frozen=True)
class Reformulation:
    """Regrouped total Hamiltonian: H = (H_sys + O) + (H_int - O (x) 1) + H_env.

    ``renormalized_spec`` carries the regrouped terms with coupling 1 so that
    assembling it diagonalizes the shifted system Hamiltonian; ``assemble_in_base_basis``
    reproduces the original total matrix element-wise for the invariance check.
    """

    base: ModelSpec
    shift: np.ndarray
    renormalized_system: np.ndarray
    renormalized_spec: ModelSpec

    def assemble_in_base_basis(self) -> np.ndarray:
        parts = assemble(self.base)
        u_sys = parts.sys_transform
        shift_rot = u_sys.conj().T @ self.shift @ u_sys
        dim = parts.d_sys * parts.d_env
        dtype = (
            np.complex128
            if np.iscomplexobj(parts.total) or np.iscomplexobj(shift_rot)
            else np.float64
        )
        total = np.zeros((dim, dim), dtype=dtype)
        flat = np.arange(dim)
        total[flat, flat] = parts.uncoupled_diagonal()
        total += np.kron(shift_rot, np.eye(parts.d_env)).astype(dtype, copy=False)
        total += parts.interaction().astype(dtype, copy=False)
        total -= np.kron(shift_rot, np.eye(parts.d_env)).astype(dtype, copy=False)
        return total


def reformulate(spec: ModelSpec, shift) -> Reformulation:
    """Absorb a Hermitian system operator into the self-Hamiltonian.

    The shift is expressed in the same basis as ``spec.system_hamiltonian``.
    Raises DegenerateSpectrumError if the shifted system spectrum is degenerate.
    """
    shift = _as_matrix(shift)
    require_hermitian(shift, "renormalization operator")
    h_sys = _as_matrix(spec.system_hamiltonian)
    if shift.shape != h_sys.shape:
        raise ValueError("renormalization operator has wrong dimension")
    renorm_sys = h_sys + shift
    check_nondegenerate(np.linalg.eigvalsh(renorm_sys), spec.gap_tolerance)

    scaled_terms = [
        (spec.coupling * _as_matrix(s_op), e_spec)
        for s_op, e_spec in spec.interaction_terms
    ]
    scaled_terms.append((-shift, EnvOperatorSpec(axis="identity")))
    renorm_spec = dataclasses.replace(
        spec,
        system_hamiltonian=renorm_sys,
        interaction_terms=tuple(scaled_terms),
        coupling=1.0,
        label=spec.label,
    )
    return Reformulation(
        base=spec,
        shift=shift,
        renormalized_system=renorm_sys,
        renormalized_spec=renorm_spec,
    )


def index_of_pair(alpha: int, i: int, d_env: int) -> int:
    return alpha * d_env + i


def pair_of_index(row: int, d_env: int):
    return divmod(row, d_env)
