"""Microcanonical shells, reduced density matrices, and diagonal-difference bounds.

The shell is a closed energy interval [E_start, E_start + width]; membership
ties at the boundary are included.  Shells are required to sit away from the
spectral edges (shell center inside the middle fraction of the span,
default 60%).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralData

RDM_HERMITICITY_ATOL = 1e-10
RDM_TRACE_ATOL = 1e-10
RDM_EIGENVALUE_FLOOR = -1e-10
THIN_SHELL_WARNING = 50
LINEARITY_R2_GATE = 0.98
UNIFORM_ENV_GATE = 0.1


class ThinShellWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EnergyShell:
    start: float
    width: float
    members: np.ndarray

    @property
    def d_gamma(self) -> int:
        return self.members.size

    @property
    def stop(self) -> float:
        return self.start + self.width

    @property
    def center(self) -> float:
        return self.start + 0.5 * self.width


@dataclass(frozen=True)
class EnvShell:
    """Environment levels compatible with one system level inside the shell."""

    alpha: int
    lo: float
    hi: float
    members: np.ndarray

    @property
    def count(self) -> int:
        return self.members.size


@dataclass(frozen=True)
class UncoupledShell:
    start: float
    width: float
    env_shells: tuple

    @property
    def d_gamma0(self) -> int:
        return sum(shell.count for shell in self.env_shells)

    def env_counts(self) -> np.ndarray:
        return np.array([shell.count for shell in self.env_shells])


def _check_center(energies, start, width, center_fraction):
    span_lo = float(energies[0])
    span_hi = float(energies[-1])
    span = span_hi - span_lo
    if span <= 0:
        raise ValueError("spectrum has no extent")
    margin = 0.5 * (1.0 - center_fraction)
    center = start + 0.5 * width
    lo_ok = span_lo + margin * span
    hi_ok = span_hi - margin * span
    if not lo_ok <= center <= hi_ok:
        raise ValueError(
            f"shell center {center:.6g} outside the middle {center_fraction:.0%} "
            f"of the spectrum [{lo_ok:.6g}, {hi_ok:.6g}]"
        )


def make_shell(
    spec_data: SpectralData,
    start: float,
    width: float,
    center_fraction: float = 0.6,
) -> EnergyShell:
    """Closed-interval shell on the coupled spectrum."""
    if width <= 0:
        raise ValueError("shell width must be positive")
    energies = spec_data.energies
    _check_center(energies, start, width, center_fraction)
    members = np.nonzero((energies >= start) & (energies <= start + width))[0]
    if members.size == 0:
        raise ValueError("shell contains no eigenstates")
    if members.size < THIN_SHELL_WARNING:
        warnings.warn(
            f"shell holds only {members.size} states; statistics will be thin",
            ThinShellWarning,
            stacklevel=2,
        )
    return EnergyShell(start=float(start), width=float(width), members=members)


def make_uncoupled_shell(
    spec_data: SpectralData,
    start: float,
    width: float,
) -> UncoupledShell:
    """Same interval on the uncoupled system, organized per system level.

    Membership is decided on the environment levels so the per-level shells
    partition the uncoupled shell exactly.
    """
    if width <= 0:
        raise ValueError("shell width must be positive")
    env = spec_data.env_energies
    stop = start + width
    shells = []
    for alpha, e_sys in enumerate(spec_data.sys_energies):
        # membership is decided on the summed level, exactly as for the total
        # system, so the per-level shells partition the uncoupled shell even
        # when a level sits on the boundary
        total = e_sys + env
        members = np.nonzero((total >= start) & (total <= stop))[0]
        shells.append(
            EnvShell(
                alpha=alpha, lo=float(start - e_sys), hi=float(stop - e_sys), members=members
            )
        )
    ushell = UncoupledShell(start=float(start), width=float(width), env_shells=tuple(shells))
    if ushell.d_gamma0 == 0:
        raise ValueError("uncoupled shell contains no levels")
    return ushell


def shell_by_count(spec_data: SpectralData, count: int, center_fraction: float = 0.5):
    """(start, width) of a shell holding about ``count`` states around a
    fractional position in the coupled spectrum.

    Boundaries land on gap midpoints, so membership is insensitive to
    last-ulp differences when levels are recomputed along another route.
    """
    energies = spec_data.energies
    center_energy = energies[0] + center_fraction * (energies[-1] - energies[0])
    center_idx = int(np.searchsorted(energies, center_energy))
    half = count // 2
    lo = max(center_idx - half, 0)
    hi = min(lo + count - 1, energies.size - 1)
    below = 0.5 * (energies[lo] - energies[lo - 1]) if lo > 0 else 1e-9
    above = 0.5 * (energies[hi + 1] - energies[hi]) if hi + 1 < energies.size else 1e-9
    start = float(energies[lo] - below)
    stop = float(energies[hi] + above)
    return start, stop - start


# ---------------------------------------------------------------------------
# Reduced density matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rdm:
    """System-space density matrix with its basis label."""

    matrix: np.ndarray
    basis: str = "system"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self, atol=RDM_HERMITICITY_ATOL):
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > atol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > RDM_TRACE_ATOL or abs(np.trace(m).imag) > RDM_TRACE_ATOL:
            raise ValueError("density matrix trace differs from 1")
        if np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))) < RDM_EIGENVALUE_FLOOR:
            raise ValueError("density matrix has a negative eigenvalue")
        return self


def rdm_microcanonical(spec_data: SpectralData, shell: EnergyShell, basis="system") -> Rdm:
    """Equal-weight shell average of the per-eigenstate reduced density matrices."""
    if shell.d_gamma == 0:
        raise ValueError("empty shell")
    slab = spec_data.coefficient_slab(shell.members)
    rho = np.einsum("aik,bik->ab", slab, slab.conj()) / shell.d_gamma
    return Rdm(matrix=np.ascontiguousarray(rho.astype(np.complex128)), basis=basis)


def rdm_per_state(spec_data: SpectralData, n: int, basis="system") -> Rdm:
    c = spec_data.coefficients(n)
    rho = c @ c.conj().T
    return Rdm(matrix=np.ascontiguousarray(rho.astype(np.complex128)), basis=basis)


def rdm_uncoupled(ushell: UncoupledShell, basis="system") -> Rdm:
    """Diagonal by construction: populations are per-level shell counts."""
    counts = ushell.env_counts()
    if counts.sum() == 0:
        raise ValueError("empty uncoupled shell")
    rho = np.diag(counts / counts.sum()).astype(np.complex128)
    return Rdm(matrix=rho, basis=basis)


def partial_trace_env(rho_total, d_sys: int, d_env: int) -> np.ndarray:
    """Trace out the environment of a (d_sys*d_env) x (d_sys*d_env) matrix."""
    rho = np.asarray(rho_total).reshape(d_sys, d_env, d_sys, d_env)
    return np.trace(rho, axis1=1, axis2=3)


def gibbs_state(h_sys, beta: float, basis="system") -> Rdm:
    """exp(-beta H) / tr exp(-beta H), computed through the eigenbasis with a
    max-shift so the exponentials never overflow."""
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    h_sys = np.asarray(h_sys)
    energies, vectors = np.linalg.eigh(h_sys)
    logits = -beta * (energies - energies.min() if beta >= 0 else energies - energies.max())
    weights = np.exp(logits)
    weights /= weights.sum()
    rho = (vectors * weights) @ vectors.conj().T
    return Rdm(matrix=rho.astype(np.complex128), basis=basis)


def trace_distance(a, b) -> float:
    """Half the sum of singular values of the difference."""
    ma = a.matrix if isinstance(a, Rdm) else np.asarray(a)
    mb = b.matrix if isinstance(b, Rdm) else np.asarray(b)
    if ma.shape != mb.shape:
        raise ValueError("dimension mismatch")
    return float(0.5 * np.linalg.svd(ma - mb, compute_uv=False).sum())


# ---------------------------------------------------------------------------
# Spectral region decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionDecomposition:
    """Environment spectrum split into border/core/outside regions for one
    system level, with the shell weights gathered per region."""

    alpha: int
    regime: str  # "wide" when width > 2 w_m else "narrow"
    boundaries: tuple  # (eps1, eps2, eps3, eps4)
    counts: np.ndarray  # levels per region, kappa = 0..3
    f_values: np.ndarray  # summed shell weight per region
    local_densities: np.ndarray  # levels per unit energy in regions 1..3 (index 0 nan)
    linearity_r2: float
    env_shell_count: int
    rho_alpha: float  # d_gamma^-1 sum_kappa F


def region_masks(env_energies, boundaries):
    e1, e2, e3, e4 = boundaries
    env = np.asarray(env_energies)
    in1 = (env >= e1) & (env < e2)
    in2 = (env >= e2) & (env < e3)
    in3 = (env >= e3) & (env <= e4)
    in0 = ~(in1 | in2 | in3)
    return in0, in1, in2, in3


def region_decomposition(
    spec_data: SpectralData,
    shell: EnergyShell,
    alpha: int,
    w_m: float,
    env_shell: EnvShell | None = None,
    shell_weights=None,
) -> RegionDecomposition:
    """Region boundaries, level counts, and shell weights for one system level.

    ``shell_weights`` may carry the precomputed (d_sys, d_env) matrix of
    summed |C|^2 over the shell to avoid recomputation across alpha.
    """
    if w_m < 0:
        raise ValueError("w_m must be nonnegative")
    e_sys = float(spec_data.sys_energies[alpha])
    start, width = shell.start, shell.width
    anchor = start - e_sys
    if width > 2 * w_m:
        regime = "wide"
        e1 = anchor - w_m
        e2 = e1 + 2 * w_m
        e3 = e1 + width
        e4 = e2 + width
    else:
        regime = "narrow"
        e1 = anchor - w_m
        e2 = e3 = anchor + 0.5 * width
        e4 = anchor + width + w_m
    boundaries = (e1, e2, e3, e4)

    env = spec_data.env_energies
    masks = region_masks(env, boundaries)
    counts = np.array([int(m.sum()) for m in masks])

    if shell_weights is None:
        slab = spec_data.coefficient_slab(shell.members)
        shell_weights = np.sum(np.abs(slab) ** 2, axis=2)
    row = shell_weights[alpha]
    f_values = np.array([float(row[m].sum()) for m in masks])

    widths_123 = np.array(
        [
            e2 - e1,
            e3 - e2,
            e4 - e3,
        ]
    )
    local = np.full(4, np.nan)
    for k, w in zip((1, 2, 3), widths_123):
        local[k] = counts[k] / w if w > 0 else np.nan

    lin_lo = anchor - 2 * w_m
    lin_hi = anchor + width + 2 * w_m
    r2 = _linear_dos_r2(env, lin_lo, lin_hi)

    if env_shell is not None:
        env_count = env_shell.count
    else:
        total = e_sys + env
        env_count = int(np.sum((total >= start) & (total <= start + width)))

    return RegionDecomposition(
        alpha=alpha,
        regime=regime,
        boundaries=boundaries,
        counts=counts,
        f_values=f_values,
        local_densities=local,
        linearity_r2=r2,
        env_shell_count=env_count,
        rho_alpha=float(f_values.sum()) / shell.d_gamma,
    )


def _linear_dos_r2(env_energies, lo, hi, bins: int = 10) -> float:
    """R^2 of a straight-line fit to binned level counts over [lo, hi]."""
    env = np.asarray(env_energies)
    inside = env[(env >= lo) & (env <= hi)]
    if inside.size < 2 * bins:
        return float("nan")
    counts, edges = np.histogram(inside, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    design = np.column_stack([centers, np.ones_like(centers)])
    coef, *_ = np.linalg.lstsq(design, counts, rcond=None)
    fitted = design @ coef
    ss_res = float(np.sum((counts - fitted) ** 2))
    ss_tot = float(np.sum((counts - counts.mean()) ** 2))
    if ss_tot < 1e-30:
        return 1.0
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Diagonal difference bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaBound:
    alpha: int
    rho_aa: float
    rho0_aa: float
    diff: float
    bounds: dict
    applicable: dict
    ratios: dict
    flags: dict


@dataclass(frozen=True)
class BoundReport:
    label: str
    shell_start: float
    shell_width: float
    d_gamma: int
    d_gamma0: int
    epsilon: float
    w_m: float
    regime: str
    uniform_env_gate: bool
    per_alpha: tuple
    q1: float
    q0: float
    a13_diagnostic: float

    @property
    def worst_ratio(self) -> float:
        worst = 0.0
        for entry in self.per_alpha:
            for name, ratio in entry.ratios.items():
                if entry.applicable[name]:
                    worst = max(worst, ratio)
        return worst


def diagonal_bound_report(
    spec_data: SpectralData,
    shell: EnergyShell,
    ushell: UncoupledShell,
    w_m: float,
    epsilon: float,
    decomps=None,
    label: str = "",
) -> BoundReport:
    """Measured diagonal differences against every applicable width bound.

    Gate logic: the plain and system-resolved width bounds need the linear
    local-density approximation (R^2 >= 0.98 over the widened window); the
    system-resolved variant additionally needs near-uniform per-level shell
    counts (relative spread < 10%); otherwise, in the wide regime, the
    local-density form applies.
    """
    rho = rdm_microcanonical(spec_data, shell)
    rho0 = rdm_uncoupled(ushell)
    d_sys = spec_data.d_sys
    d_gamma = shell.d_gamma
    width = shell.width

    if decomps is None:
        slab = spec_data.coefficient_slab(shell.members)
        shell_weights = np.sum(np.abs(slab) ** 2, axis=2)
        decomps = [
            region_decomposition(
                spec_data,
                shell,
                alpha,
                w_m,
                env_shell=ushell.env_shells[alpha],
                shell_weights=shell_weights,
            )
            for alpha in range(d_sys)
        ]

    counts = ushell.env_counts()
    uniform_gate = bool(
        np.max(np.abs(d_gamma - d_sys * counts)) / max(d_gamma, 1) < UNIFORM_ENV_GATE
    )
    regime = "wide" if width > 2 * w_m else "narrow"

    entries = []
    diffs_signed = np.zeros(d_sys)
    x_values = np.zeros(d_sys)
    for alpha in range(d_sys):
        dec = decomps[alpha]
        rho_aa = float(rho.matrix[alpha, alpha].real)
        rho0_aa = float(rho0.matrix[alpha, alpha].real)
        diff = abs(rho_aa - rho0_aa)
        diffs_signed[alpha] = rho_aa - rho0_aa
        x_values[alpha] = (w_m / width) * (dec.env_shell_count / d_gamma)

        linear = bool(np.isfinite(dec.linearity_r2) and dec.linearity_r2 >= LINEARITY_R2_GATE)
        bounds = {
            "width_over_shell": 2.0 * w_m / width + epsilon,
            "system_resolved": 2.0 * w_m / (d_sys * width) + epsilon,
            "local_density": (
                (dec.local_densities[1] + dec.local_densities[3]) / d_gamma * w_m + epsilon
                if np.isfinite(dec.local_densities[1]) and np.isfinite(dec.local_densities[3])
                else float("nan")
            ),
            "narrow_linear": 2.0 * w_m / width * (dec.env_shell_count / d_gamma) + epsilon,
        }
        applicable = {
            "width_over_shell": linear,
            "system_resolved": linear and uniform_gate,
            "local_density": (not linear) and regime == "wide" and np.isfinite(bounds["local_density"]),
            "narrow_linear": linear and regime == "narrow",
        }
        ratios = {
            name: (diff / value if np.isfinite(value) and value > 0 else float("nan"))
            for name, value in bounds.items()
        }
        entries.append(
            AlphaBound(
                alpha=alpha,
                rho_aa=rho_aa,
                rho0_aa=rho0_aa,
                diff=diff,
                bounds=bounds,
                applicable=applicable,
                ratios=ratios,
                flags={
                    "linear": linear,
                    "linearity_r2": dec.linearity_r2,
                    "regime": dec.regime,
                    "env_shell_count": dec.env_shell_count,
                },
            )
        )

    q1, q0 = _fit_q_parameters(diffs_signed, x_values, epsilon)
    return BoundReport(
        label=label,
        shell_start=shell.start,
        shell_width=width,
        d_gamma=d_gamma,
        d_gamma0=ushell.d_gamma0,
        epsilon=epsilon,
        w_m=w_m,
        regime=regime,
        uniform_env_gate=uniform_gate,
        per_alpha=tuple(entries),
        q1=q1,
        q0=q0,
        a13_diagnostic=(q1 + 2.0) / 2.0,
    )


def _fit_q_parameters(diffs_signed, x_values, epsilon):
    """Least squares of the signed differences on (x_alpha, epsilon)."""
    design = np.column_stack([x_values, np.full_like(x_values, epsilon)])
    coef, *_ = np.linalg.lstsq(design, diffs_signed, rcond=None)
    return float(coef[0]), float(coef[1])
