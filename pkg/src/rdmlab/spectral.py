"""Exact diagonalization, eigenfunction bookkeeping, and density-of-states fits.

Everything here is a pure function over immutable inputs; diagonalization may
use BLAS-internal parallelism but independent jobs are safe to run concurrently.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AssembledModel, ModelSpec, assemble, fix_phases, require_hermitian

RESIDUAL_RTOL = 1e-9
UNITARITY_ATOL = 1e-10


@dataclass(frozen=True)
class Eigensystem:
    """Ascending eigenvalues and phase-fixed eigenvector columns."""

    energies: np.ndarray
    states: np.ndarray

    @property
    def dim(self) -> int:
        return self.energies.size

    def residuals(self, h, columns=None) -> np.ndarray:
        """2-norms of H|n> - E_n|n> for the requested columns (all by default)."""
        cols = np.arange(self.dim) if columns is None else np.asarray(columns)
        v = self.states[:, cols]
        r = h @ v - v * self.energies[cols]
        return np.linalg.norm(r, axis=0)


def diagonalize(h, validate: str = "spot", cache: "SpectralCache | None" = None) -> Eigensystem:
    """Full eigendecomposition of a Hermitian matrix.

    Deterministic for identical input: LAPACK ordering plus a phase rule
    (largest-modulus component real positive).  ``validate`` is "spot"
    (a few sampled residual columns), "full", or "none".
    """
    h = np.asarray(h)
    require_hermitian(h, "matrix to diagonalize")
    if cache is not None:
        hit = cache.load(h)
        if hit is not None:
            return hit
    diag = np.diag(h)
    if np.count_nonzero(h - np.diag(diag)) == 0:
        # already diagonal (synthetic environments): sort directly
        energies = np.real(diag)
        order = np.argsort(energies, kind="stable")
        energies = energies[order]
        states = np.eye(h.shape[0], dtype=h.dtype)[:, order]
    else:
        energies, states = np.linalg.eigh(h)
        states = fix_phases(states)
    eig = Eigensystem(energies=energies, states=states)

    if validate != "none" and h.size:
        scale = max(float(np.max(np.abs(energies))), 1e-300)
        if validate == "full":
            cols = None
        else:
            cols = np.unique(np.linspace(0, eig.dim - 1, min(8, eig.dim)).astype(int))
        worst = float(np.max(eig.residuals(h, cols)))
        if worst > RESIDUAL_RTOL * scale:
            raise ArithmeticError(
                f"eigensolver residual {worst:.3e} exceeds {RESIDUAL_RTOL:.0e} * |H|"
            )
    if cache is not None:
        cache.store(h, eig)
    return eig


@dataclass(frozen=True)
class SpectralData:
    """Eigen-data of an assembled model plus the r <-> (alpha, i) bookkeeping.

    ``states`` columns live in the product basis |alpha i> (alpha major), so
    the coefficient matrix of state n is ``states[:, n].reshape(d_sys, d_env)``.
    ``uncoupled_order[r]`` is the flat product index of the r-th uncoupled
    level; ties in E_r are broken by ascending (alpha, i).
    """

    model: AssembledModel
    energies: np.ndarray
    states: np.ndarray
    uncoupled_energies: np.ndarray
    uncoupled_order: np.ndarray

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def d_sys(self) -> int:
        return self.model.d_sys

    @property
    def d_env(self) -> int:
        return self.model.d_env

    @property
    def sys_energies(self) -> np.ndarray:
        return self.model.sys_energies

    @property
    def env_energies(self) -> np.ndarray:
        return self.model.env_energies

    def coefficients(self, n: int) -> np.ndarray:
        """C^n as a (d_sys, d_env) matrix; rows are system levels."""
        if not 0 <= n < self.dim:
            raise IndexError(f"eigenstate index {n} out of range")
        return self.states[:, n].reshape(self.d_sys, self.d_env)

    def coefficient_slab(self, members) -> np.ndarray:
        """Coefficients of several eigenstates, shape (d_sys, d_env, len(members))."""
        cols = self.states[:, np.asarray(members)]
        return cols.reshape(self.d_sys, self.d_env, -1)

    def overlaps_r(self, members=None) -> np.ndarray:
        """<E_r|n> matrix with rows in r order (columns restricted to ``members``)."""
        cols = self.states if members is None else self.states[:, np.asarray(members)]
        return cols[self.uncoupled_order, :]

    def pair_of_rank(self, r: int):
        flat = int(self.uncoupled_order[r])
        return divmod(flat, self.d_env)

    def rank_of_pair(self, alpha: int, i: int) -> int:
        flat = alpha * self.d_env + i
        return int(self._rank_lookup()[flat])

    def _rank_lookup(self) -> np.ndarray:
        inv = np.empty(self.dim, dtype=np.int64)
        inv[self.uncoupled_order] = np.arange(self.dim)
        return inv

    @classmethod
    def from_model(
        cls,
        spec_or_assembled,
        validate: str = "spot",
        cache: "SpectralCache | None" = None,
    ) -> "SpectralData":
        parts = (
            spec_or_assembled
            if isinstance(spec_or_assembled, AssembledModel)
            else assemble(spec_or_assembled)
        )
        eig = diagonalize(parts.total, validate=validate, cache=cache)
        flat_e = parts.uncoupled_diagonal()
        alpha_idx, i_idx = np.divmod(np.arange(flat_e.size), parts.d_env)
        order = np.lexsort((i_idx, alpha_idx, flat_e))
        return cls(
            model=parts,
            energies=eig.energies,
            states=eig.states,
            uncoupled_energies=flat_e[order],
            uncoupled_order=order,
        )

    def with_rotated_system(self, parts: AssembledModel, rotation) -> "SpectralData":
        """Same eigenstates re-expressed against a rotated system eigenbasis.

        ``rotation[alpha, alpha~] = <alpha|alpha~>`` and ``parts`` describes
        the new decomposition (renormalized system diagonal in its basis).
        No re-diagonalization of the total Hamiltonian happens here.
        """
        rotation = np.asarray(rotation)
        d_s, d_e = self.d_sys, self.d_env
        slab = self.states.reshape(d_s, d_e * self.dim)
        rotated = np.ascontiguousarray(
            (rotation.conj().T @ slab).reshape(d_s * d_e, self.dim)
        )
        flat_e = (parts.sys_energies[:, None] + parts.env_energies[None, :]).ravel()
        alpha_idx, i_idx = np.divmod(np.arange(flat_e.size), d_e)
        order = np.lexsort((i_idx, alpha_idx, flat_e))
        return SpectralData(
            model=parts,
            energies=self.energies,
            states=rotated,
            uncoupled_energies=flat_e[order],
            uncoupled_order=order,
        )


# ---------------------------------------------------------------------------
# Density of states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DosEstimate:
    """Binned and kernel-smoothed density of a level sequence."""

    bin_edges: np.ndarray
    counts: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def gaussian_kde(levels, grid, bandwidth) -> np.ndarray:
    """Normalized Gaussian-kernel density of the levels evaluated on the grid."""
    levels = np.asarray(levels, float)
    grid = np.asarray(grid, float)
    z = (grid[:, None] - levels[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (levels.size * bandwidth * np.sqrt(2 * np.pi))


def kde_bandwidth(levels) -> float:
    """3x the mean level spacing: stable beta fits at desk-scale spectra."""
    levels = np.sort(np.asarray(levels, float))
    if levels.size < 2:
        return 1.0
    spacing = (levels[-1] - levels[0]) / (levels.size - 1)
    return 3.0 * max(spacing, 1e-300)


def dos_estimate(levels, bins=64, grid_points=201) -> DosEstimate:
    levels = np.sort(np.asarray(levels, float))
    counts, edges = np.histogram(levels, bins=bins)
    bw = kde_bandwidth(levels)
    grid = np.linspace(levels[0], levels[-1], grid_points)
    return DosEstimate(
        bin_edges=edges,
        counts=counts,
        grid=grid,
        density=gaussian_kde(levels, grid, bw),
        bandwidth=bw,
    )


def dos_compare(coupled_energies, uncoupled_energies, bins=64, align: str = "union"):
    """Compare two level densities; returns (DosEstimate, DosEstimate, L1, warn).

    The L1 distance is between normalized histogram masses (range [0, 2]).
    ``align="own"`` bins each spectrum on its own range (shift-invariant);
    the default shares one edge grid over the union range.
    """
    a = np.sort(np.asarray(coupled_energies, float))
    b = np.sort(np.asarray(uncoupled_energies, float))
    if a.size != b.size:
        raise ValueError("spectra have different total dimension")
    if np.isscalar(bins) and bins < 4:
        raise ValueError("need at least 4 bins")
    if align == "own":
        edges_a = np.histogram_bin_edges(a, bins=bins)
        edges_b = np.histogram_bin_edges(b, bins=bins)
    elif align == "union":
        lo = min(a[0], b[0])
        hi = max(a[-1], b[-1])
        edges_a = edges_b = np.histogram_bin_edges(np.array([lo, hi]), bins=bins)
    else:
        raise ValueError(f"unknown alignment {align!r}")
    counts_a, _ = np.histogram(a, bins=edges_a)
    counts_b, _ = np.histogram(b, bins=edges_b)
    l1 = float(np.abs(counts_a / a.size - counts_b / b.size).sum())
    est_a = dos_estimate(a, bins=edges_a)
    est_b = dos_estimate(b, bins=edges_b)
    return est_a, est_b, l1, l1 > 0.05


@dataclass(frozen=True)
class BetaFit:
    beta: float
    r_squared: float
    grid: np.ndarray
    log_density: np.ndarray
    window: tuple


def fit_env_beta(env_energies, window, grid_points: int = 41) -> BetaFit:
    """Inverse-temperature estimate from the log density of environment levels.

    Least-squares slope of log rho(e) over the window, with rho a Gaussian-kernel
    density of the full spectrum (bandwidth 3x the in-window mean spacing):
    a density growing like exp(beta * e) yields beta.
    """
    levels = np.sort(np.asarray(env_energies, float))
    lo, hi = float(window[0]), float(window[1])
    inside = levels[(levels >= lo) & (levels <= hi)]
    if inside.size < 50:
        raise ValueError(f"window holds {inside.size} levels; need at least 50")
    bw = kde_bandwidth(inside)
    grid = np.linspace(lo, hi, grid_points)
    density = gaussian_kde(levels, grid, bw)
    logd = np.log(density)
    design = np.column_stack([grid, np.ones_like(grid)])
    coef, *_ = np.linalg.lstsq(design, logd, rcond=None)
    fitted = design @ coef
    ss_res = float(np.sum((logd - fitted) ** 2))
    ss_tot = float(np.sum((logd - logd.mean()) ** 2))
    r2 = 1.0 if ss_tot < 1e-30 else 1.0 - ss_res / ss_tot
    return BetaFit(
        beta=float(coef[0]),
        r_squared=r2,
        grid=grid,
        log_density=logd,
        window=(lo, hi),
    )


# ---------------------------------------------------------------------------
# On-disk eigendecomposition cache
# ---------------------------------------------------------------------------


class SpectralCache:
    """Content-addressed cache of eigendecompositions.

    Layout per entry: little-endian float64 arrays ``<key>.energies.f64`` and
    ``<key>.states.f64`` (complex matrices store ``.states_re.f64`` /
    ``.states_im.f64``) plus a JSON sidecar ``<key>.json`` recording shapes,
    dtype, and file names.
    """

    FORMAT = 1

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(h) -> str:
        h = np.ascontiguousarray(h)
        digest = hashlib.sha256()
        digest.update(str(h.shape).encode())
        digest.update(str(h.dtype).encode())
        digest.update(h.tobytes())
        return digest.hexdigest()

    def _paths(self, key):
        return self.directory / f"{key}.json"

    def load(self, h) -> Eigensystem | None:
        manifest_path = self._paths(self.key(h))
        if not manifest_path.exists():
            return None
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format") != self.FORMAT:
            return None
        dim = manifest["dim"]
        energies = np.fromfile(self.directory / manifest["energies"], dtype="<f8")
        if manifest["complex"]:
            re = np.fromfile(self.directory / manifest["states_re"], dtype="<f8")
            im = np.fromfile(self.directory / manifest["states_im"], dtype="<f8")
            states = (re + 1j * im).reshape(dim, dim)
        else:
            states = np.fromfile(self.directory / manifest["states"], dtype="<f8").reshape(
                dim, dim
            )
        return Eigensystem(energies=energies, states=states)

    def store(self, h, eig: Eigensystem):
        key = self.key(h)
        dim = eig.dim
        manifest = {
            "format": self.FORMAT,
            "dim": dim,
            "complex": bool(np.iscomplexobj(eig.states)),
            "energies": f"{key}.energies.f64",
        }
        eig.energies.astype("<f8").tofile(self.directory / manifest["energies"])
        if manifest["complex"]:
            manifest["states_re"] = f"{key}.states_re.f64"
            manifest["states_im"] = f"{key}.states_im.f64"
            eig.states.real.astype("<f8").tofile(self.directory / manifest["states_re"])
            eig.states.imag.astype("<f8").tofile(self.directory / manifest["states_im"])
        else:
            manifest["states"] = f"{key}.states.f64"
            eig.states.astype("<f8").tofile(self.directory / manifest["states"])
        self._paths(key).write_text(json.dumps(manifest, sort_keys=True))
