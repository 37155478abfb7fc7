"""Random pure states in a shell subspace and their reduced density matrices.

Sampling is counter-based (Philox keyed by seed and sample index), so samples
are order-independent and safe to draw in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mc_ensemble import EnergyShell, Rdm, rdm_microcanonical, region_masks, trace_distance
from .spectral import SpectralData


def _rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed % 2**64, index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TypicalSample:
    """One random shell vector: raw Gaussian coefficients and its system state."""

    seed: int
    index: int
    coefficients: np.ndarray
    norm_sq: float
    rho: Rdm

    @property
    def d_gamma(self) -> int:
        return self.coefficients.size


def sample_typical(
    spec_data: SpectralData,
    shell: EnergyShell,
    seed: int,
    index: int = 0,
    coefficients=None,
) -> TypicalSample:
    """Draw |Psi> with complex coefficients whose real and imaginary parts are
    independent zero-mean Gaussians of variance 1/2, normalize, and trace out
    the environment.  Passing ``coefficients`` overrides the draw (used for
    deterministic checks)."""
    if shell.d_gamma == 0:
        raise ValueError("empty shell")
    if coefficients is None:
        z = _rng(seed, index).standard_normal((shell.d_gamma, 2)) * np.sqrt(0.5)
        coefficients = z[:, 0] + 1j * z[:, 1]
    else:
        coefficients = np.asarray(coefficients, dtype=complex)
        if coefficients.shape != (shell.d_gamma,):
            raise ValueError("coefficient vector must match the shell dimension")
    norm_sq = float(np.sum(np.abs(coefficients) ** 2))
    psi = spec_data.states[:, shell.members] @ (coefficients / np.sqrt(norm_sq))
    psi_mat = psi.reshape(spec_data.d_sys, spec_data.d_env)
    rho = psi_mat @ psi_mat.conj().T
    return TypicalSample(
        seed=seed,
        index=index,
        coefficients=coefficients,
        norm_sq=norm_sq,
        rho=Rdm(matrix=np.ascontiguousarray(rho.astype(np.complex128))),
    )


@dataclass(frozen=True)
class KSample:
    """Overlap split of one sample: same-state part, cross-state part, and the
    cross-state part of each diagonal element resolved by spectral region."""

    index: int
    norm_sq: float
    k1: np.ndarray  # (d_sys, d_sys), entry [beta, alpha]
    k2: np.ndarray
    overlap_direct: np.ndarray  # independent route via environment vectors
    region_splits: np.ndarray | None  # (d_sys, 4) cross-state diagonal parts
    b_values: np.ndarray  # (d_sys, d_gamma) per-state diagonal weights


def overlap_grams(spec_data: SpectralData, shell: EnergyShell) -> np.ndarray:
    """Cross-state coefficient overlaps sum_i conj(c^n[beta,i]) c^n'[alpha,i],
    shape (d_sys, d_sys, m, m).  Sample-independent; compute once per shell."""
    slab = spec_data.coefficient_slab(shell.members)
    d_s, _, m = slab.shape
    grams = np.empty((d_s, d_s, m, m), dtype=complex)
    for beta in range(d_s):
        for alpha in range(d_s):
            grams[beta, alpha] = slab[beta].conj().T @ slab[alpha]
    return grams


def k_decompose(
    sample: TypicalSample,
    spec_data: SpectralData,
    shell: EnergyShell,
    decomps=None,
    grams=None,
) -> KSample:
    """Split every overlap <Phi_beta|Phi_alpha> into its same-state and
    cross-state sums, checking them against a directly contracted overlap.

    ``decomps`` (per-alpha region decompositions) enables the per-region split
    of the diagonal cross-state parts; ``grams`` short-circuits the
    sample-independent contraction when decomposing many samples.
    """
    d_s = spec_data.d_sys
    slab = spec_data.coefficient_slab(shell.members)  # (d_s, d_e, m)
    coeff = sample.coefficients
    abs_sq = np.abs(coeff) ** 2
    if grams is None:
        grams = overlap_grams(spec_data, shell)

    b_values = np.sum(np.abs(slab) ** 2, axis=1)  # (d_s, m)

    k1 = np.zeros((d_s, d_s), dtype=complex)
    k2 = np.zeros((d_s, d_s), dtype=complex)
    overlap_direct = np.zeros((d_s, d_s), dtype=complex)
    phi = np.einsum("aim,m->ai", slab, coeff)  # environment vectors per level
    for beta in range(d_s):
        for alpha in range(d_s):
            gram = grams[beta, alpha]
            same = np.sum(abs_sq * np.diag(gram))
            full = coeff.conj() @ gram @ coeff
            k1[beta, alpha] = same
            k2[beta, alpha] = full - same
            overlap_direct[beta, alpha] = np.vdot(phi[beta], phi[alpha])

    splits = None
    if decomps is not None:
        splits = np.zeros((d_s, 4), dtype=complex)
        env = spec_data.env_energies
        for alpha in range(d_s):
            j_alpha = np.abs(phi[alpha]) ** 2 - np.einsum(
                "m,im->i", abs_sq, np.abs(slab[alpha]) ** 2
            )
            masks = region_masks(env, decomps[alpha].boundaries)
            for kappa, mask in enumerate(masks):
                splits[alpha, kappa] = j_alpha[mask].sum()

    return KSample(
        index=sample.index,
        norm_sq=sample.norm_sq,
        k1=k1,
        k2=k2,
        overlap_direct=overlap_direct,
        region_splits=splits,
        b_values=b_values,
    )


@dataclass(frozen=True)
class KReport:
    """Sample statistics of the overlap split over an ensemble."""

    n_samples: int
    d_gamma: int
    k1_mean: np.ndarray
    k1_std: np.ndarray
    k2_mean: np.ndarray
    k2_std: np.ndarray
    k2_region_rms: np.ndarray | None  # (d_sys, 4)
    region_counts: np.ndarray | None  # (d_sys, 4) level counts
    k1_diag_residual_rms: np.ndarray  # rms of K1_aa - d_gamma rho_aa
    rho_diag: np.ndarray
    split_check: float  # worst |k1 + k2 - overlap_direct|
    b_mean_residual: float  # worst |mean_n B_an - rho_aa|


def k_report(
    spec_data: SpectralData,
    shell: EnergyShell,
    n_samples: int,
    seed: int,
    decomps=None,
) -> KReport:
    rho = rdm_microcanonical(spec_data, shell)
    rho_diag = np.real(np.diag(rho.matrix))
    d_s = spec_data.d_sys
    grams = overlap_grams(spec_data, shell)

    k1_all = np.zeros((n_samples, d_s, d_s), dtype=complex)
    k2_all = np.zeros_like(k1_all)
    splits_all = np.zeros((n_samples, d_s, 4), dtype=complex) if decomps is not None else None
    split_check = 0.0
    b_resid = 0.0
    for m in range(n_samples):
        sample = sample_typical(spec_data, shell, seed, index=m)
        ks = k_decompose(sample, spec_data, shell, decomps=decomps, grams=grams)
        k1_all[m] = ks.k1
        k2_all[m] = ks.k2
        if splits_all is not None:
            splits_all[m] = ks.region_splits
        split_check = max(
            split_check, float(np.max(np.abs(ks.k1 + ks.k2 - ks.overlap_direct)))
        )
        b_resid = max(b_resid, float(np.max(np.abs(ks.b_values.mean(axis=1) - rho_diag))))

    k1_resid = np.abs(
        np.array([k1_all[:, a, a] - shell.d_gamma * rho_diag[a] for a in range(d_s)])
    )
    region_rms = None
    region_counts = None
    if splits_all is not None:
        region_rms = np.sqrt(np.mean(np.abs(splits_all) ** 2, axis=0))
        region_counts = np.array([decomps[a].counts for a in range(d_s)])

    return KReport(
        n_samples=n_samples,
        d_gamma=shell.d_gamma,
        k1_mean=k1_all.mean(axis=0),
        k1_std=k1_all.std(axis=0),
        k2_mean=k2_all.mean(axis=0),
        k2_std=k2_all.std(axis=0),
        k2_region_rms=region_rms,
        region_counts=region_counts,
        k1_diag_residual_rms=np.sqrt(np.mean(k1_resid**2, axis=1)),
        rho_diag=rho_diag,
        split_check=split_check,
        b_mean_residual=b_resid,
    )


@dataclass(frozen=True)
class TypicalityStats:
    n_samples: int
    d_gamma: int
    distances: np.ndarray
    mean_distance: float
    standard_error: float
    bound: float
    mean_rho: np.ndarray
    element_std: np.ndarray  # std of per-eigenstate elements across the shell


def typicality_stats(
    spec_data: SpectralData,
    shell: EnergyShell,
    n_samples: int,
    seed: int,
) -> TypicalityStats:
    """Monte-Carlo trace distances of sampled states from the shell average,
    against the concentration bound (1/2) sqrt(d_sys^2 / d_gamma)."""
    if n_samples < 30:
        raise ValueError("need at least 30 samples")
    rho = rdm_microcanonical(spec_data, shell)
    d_s = spec_data.d_sys

    distances = np.zeros(n_samples)
    mean_rho = np.zeros((d_s, d_s), dtype=complex)
    for m in range(n_samples):
        sample = sample_typical(spec_data, shell, seed, index=m)
        distances[m] = trace_distance(sample.rho, rho)
        mean_rho += sample.rho.matrix
    mean_rho /= n_samples

    slab = spec_data.coefficient_slab(shell.members)
    per_state = np.einsum("aim,bim->abm", slab, slab.conj())
    element_std = np.std(per_state, axis=2)

    bound = 0.5 * np.sqrt(d_s**2 / shell.d_gamma)
    return TypicalityStats(
        n_samples=n_samples,
        d_gamma=shell.d_gamma,
        distances=distances,
        mean_distance=float(distances.mean()),
        standard_error=float(distances.std(ddof=1) / np.sqrt(n_samples)),
        bound=float(bound),
        mean_rho=mean_rho,
        element_std=element_std,
    )
