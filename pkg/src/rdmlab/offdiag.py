"""Off-diagonal structure of the reduced density matrix.

The central object is the commutator expectation
    q^n(beta, alpha) = <n| [ |beta><alpha| (x) 1,  H_int ] |n>
which, divided by the system level spacing, reproduces the off-diagonal
element of the per-state reduced density matrix exactly — the sharpest
check in this package.  The commutator route below never uses that identity;
it contracts matrix elements of H_int directly so the two sides stay
independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mc_ensemble import EnergyShell, Rdm, rdm_per_state
from .spectral import SpectralData

DEGENERATE_PAIR_RTOL = 1e-9
RELATIVE_RESIDUAL_FLOOR_FACTOR = 1e-8


@dataclass(frozen=True)
class QData:
    """Commutator expectations for every nondegenerate ordered level pair.

    ``per_state[k, m]`` is q^n for pair k and the m-th shell member;
    ``averages`` are the shell means; ``spacings[k]`` is e_beta - e_alpha
    for pair k = (alpha, beta).
    """

    pairs: tuple
    spacings: np.ndarray
    per_state: np.ndarray
    averages: np.ndarray
    members: np.ndarray
    skipped: tuple

    def pair_index(self, alpha: int, beta: int) -> int:
        return self.pairs.index((alpha, beta))

    def average(self, alpha: int, beta: int) -> complex:
        return complex(self.averages[self.pair_index(alpha, beta)])


def q_values(
    spec_data: SpectralData,
    shell: EnergyShell,
    interaction=None,
) -> QData:
    """Shell expectations of the rearranged-interaction commutators.

    For each member |n>, forms g^n = H_int|n> once and contracts
        q^n(beta, alpha) = sum_i [ conj(c^n[beta,i]) g^n[alpha,i]
                                   - conj(g^n[beta,i]) c^n[alpha,i] ].
    Pairs with a system gap below tolerance are skipped and reported.
    """
    if interaction is None:
        interaction = spec_data.model.interaction()
    members = shell.members
    d_s, d_e = spec_data.d_sys, spec_data.d_env

    vectors = spec_data.states[:, members]
    g = interaction @ vectors
    c_slab = vectors.reshape(d_s, d_e, members.size)
    g_slab = g.reshape(d_s, d_e, members.size)

    # cross[b, a, m] = sum_i conj(c[b,i,m]) g[a,i,m]
    cross = np.einsum("bim,aim->bam", c_slab.conj(), g_slab)

    sys_e = spec_data.sys_energies
    norm = max(float(np.max(np.abs(sys_e))), 1e-300)
    tol = DEGENERATE_PAIR_RTOL * norm

    pairs = []
    skipped = []
    rows = []
    spacings = []
    for alpha in range(d_s):
        for beta in range(d_s):
            if alpha == beta:
                continue
            gap = sys_e[beta] - sys_e[alpha]
            if abs(gap) < tol:
                skipped.append((alpha, beta))
                continue
            pairs.append((alpha, beta))
            spacings.append(gap)
            rows.append(cross[beta, alpha, :] - cross[alpha, beta, :].conj())
    per_state = np.array(rows) if rows else np.zeros((0, members.size), dtype=complex)
    averages = per_state.mean(axis=1) if rows else np.zeros(0, dtype=complex)
    return QData(
        pairs=tuple(pairs),
        spacings=np.array(spacings),
        per_state=per_state,
        averages=averages,
        members=members,
        skipped=tuple(skipped),
    )


def verify_identity(rho: Rdm, qdata: QData) -> np.ndarray:
    """Residual rho[alpha, beta] - q(beta, alpha) / (e_beta - e_alpha).

    An exact algebraic consequence of the eigenvalue equation; entries for
    skipped (degenerate) pairs and the diagonal are NaN.
    """
    d = rho.dim
    residual = np.full((d, d), np.nan + 0j)
    for k, (alpha, beta) in enumerate(qdata.pairs):
        predicted = qdata.averages[k] / qdata.spacings[k]
        residual[alpha, beta] = rho.matrix[alpha, beta] - predicted
    return residual


def max_identity_residual(rho: Rdm, qdata: QData) -> float:
    residual = verify_identity(rho, qdata)
    finite = residual[~np.isnan(residual)]
    return float(np.max(np.abs(finite))) if finite.size else 0.0


def per_state_identity_residual(spec_data: SpectralData, qdata: QData) -> float:
    """Max residual of the identity applied state by state over the shell."""
    worst = 0.0
    for m, n in enumerate(qdata.members):
        rho_n = rdm_per_state(spec_data, int(n))
        for k, (alpha, beta) in enumerate(qdata.pairs):
            predicted = qdata.per_state[k, m] / qdata.spacings[k]
            worst = max(worst, abs(rho_n.matrix[alpha, beta] - predicted))
    return float(worst)


# ---------------------------------------------------------------------------
# ETH statistics of environment operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EthStats:
    """Smooth-diagonal fit and off-diagonal magnitude statistics of an
    environment operator in the environment eigenbasis."""

    window: tuple
    level_energies: np.ndarray  # env levels inside the window
    diagonal: np.ndarray  # <i|O|i> on those levels
    fit_grid: np.ndarray
    fit_values: np.ndarray  # local-linear smooth of the diagonal
    h_center: float
    offdiag_bin_centers: np.ndarray
    offdiag_rms: np.ndarray  # rms magnitude vs mean energy bin
    offdiag_rms_window: float  # rms over all in-window off-diagonal pairs
    n_sites: int | None = None

    def h_at(self, energy: float) -> float:
        return float(np.interp(energy, self.fit_grid, self.fit_values))

    def mean_diagonal(self, lo: float, hi: float) -> float:
        """Raw diagonal mean over levels in [lo, hi] (the h0 extraction rule)."""
        mask = (self.level_energies >= lo) & (self.level_energies <= hi)
        if not np.any(mask):
            raise ValueError("no diagonal samples in the requested range")
        return float(np.mean(self.diagonal[mask]))

    def flatness(self) -> float:
        """Relative variation of the smooth diagonal across the window."""
        lo, hi = float(np.min(self.fit_values)), float(np.max(self.fit_values))
        scale = max(abs(lo), abs(hi), 1e-12)
        return (hi - lo) / scale


def local_linear_fit(x, y, grid, bandwidth) -> np.ndarray:
    """Gaussian-weighted local linear regression evaluated on the grid."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = np.empty(len(grid))
    for k, g in enumerate(np.asarray(grid, float)):
        w = np.exp(-0.5 * ((x - g) / bandwidth) ** 2)
        sw = w.sum()
        xm = (w * x).sum() / sw
        ym = (w * y).sum() / sw
        sxx = (w * (x - xm) ** 2).sum()
        slope = 0.0 if sxx < 1e-30 else (w * (x - xm) * (y - ym)).sum() / sxx
        out[k] = ym + slope * (g - xm)
    return out


def eth_stats(
    env_energies,
    op_eigenbasis,
    window,
    n_sites: int | None = None,
    grid_points: int = 33,
    offdiag_bins: int = 12,
) -> EthStats:
    """Diagonal smoothness and off-diagonal suppression of one operator.

    ``op_eigenbasis`` must already be expressed in the environment eigenbasis
    (ascending energies).  Requires at least 50 diagonal samples in the window.
    """
    env = np.asarray(env_energies, float)
    op = np.asarray(op_eigenbasis)
    if np.max(np.abs(op - op.conj().T)) > 1e-10 * max(1.0, float(np.max(np.abs(op)))):
        raise ValueError("operator must be Hermitian in the environment eigenbasis")
    lo, hi = float(window[0]), float(window[1])
    idx = np.nonzero((env >= lo) & (env <= hi))[0]
    if idx.size < 50:
        raise ValueError(f"window holds {idx.size} diagonal samples; need at least 50")

    levels = env[idx]
    diag = np.real(np.diag(op)[idx])
    bandwidth = max((hi - lo) / 10.0, 1e-12)
    grid = np.linspace(lo, hi, grid_points)
    fit = local_linear_fit(levels, diag, grid, bandwidth)
    h_center = float(np.interp(0.5 * (lo + hi), grid, fit))

    block = op[np.ix_(idx, idx)]
    pair_mean = 0.5 * (levels[:, None] + levels[None, :])
    mags_sq = np.abs(block) ** 2
    off_mask = ~np.eye(idx.size, dtype=bool)
    edges = np.linspace(lo, hi, offdiag_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rms = np.full(offdiag_bins, np.nan)
    means = pair_mean[off_mask]
    sq = mags_sq[off_mask]
    for k in range(offdiag_bins):
        sel = (means >= edges[k]) & (means < edges[k + 1])
        if np.any(sel):
            rms[k] = np.sqrt(np.mean(sq[sel]))
    rms_window = float(np.sqrt(np.mean(sq))) if sq.size else 0.0

    return EthStats(
        window=(lo, hi),
        level_energies=levels,
        diagonal=diag,
        fit_grid=grid,
        fit_values=fit,
        h_center=h_center,
        offdiag_bin_centers=centers,
        offdiag_rms=rms,
        offdiag_rms_window=rms_window,
        n_sites=n_sites,
    )


def eth_size_scaling(stats_list):
    """Slope of log off-diagonal RMS versus chain length (entropy proxy).

    Takes EthStats records carrying ``n_sites``; returns (slope, sizes, rms).
    """
    stats = [s for s in stats_list if s.n_sites is not None]
    if len(stats) < 2:
        raise ValueError("need at least two sizes")
    sizes = np.array([s.n_sites for s in stats], float)
    rms = np.array([s.offdiag_rms_window for s in stats])
    design = np.column_stack([sizes, np.ones_like(sizes)])
    coef, *_ = np.linalg.lstsq(design, np.log(rms), rcond=None)
    return float(coef[0]), sizes, rms


# ---------------------------------------------------------------------------
# Qubit + chaotic environment prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EthPrediction:
    predicted: complex
    measured: complex
    residual: float
    relative_residual: float
    h0: float
    per_state_relative_residuals: np.ndarray
    smooth_term_scale: float
    fluctuation_term_scale: float
    warnings: tuple


def qubit_eth_prediction(
    rho: Rdm,
    spec_data: SpectralData,
    shell: EnergyShell,
    eth_per_term,
    qdata: QData | None = None,
) -> EthPrediction:
    """Off-diagonal element from the smooth ETH diagonal alone.

    Valid for a two-level system whose interaction system factors are
    off-diagonal in the system eigenbasis and whose environment diagonals are
    nearly constant over the relevant window; violated gates produce warning
    flags, never an error.
    """
    if spec_data.d_sys != 2:
        raise ValueError("prediction targets a two-level system")
    parts = spec_data.model
    lam = parts.spec.coupling
    flags = []

    sys_e = spec_data.sys_energies
    gap = float(sys_e[1] - sys_e[0])

    h0_terms = []
    coupling_01 = 0.0 + 0.0j
    for term_idx, (s_op, eth) in enumerate(zip(parts.sys_ops, eth_per_term)):
        if max(abs(s_op[0, 0]), abs(s_op[1, 1])) > 1e-10 * max(1.0, np.max(np.abs(s_op))):
            flags.append(f"term {term_idx}: system factor has diagonal elements")
        lo = shell.start - float(sys_e.max())
        hi = shell.start + shell.width - float(sys_e.min())
        h0 = eth.mean_diagonal(lo, hi)
        h0_terms.append(h0)
        if eth.flatness() > 0.10:
            flags.append(
                f"term {term_idx}: diagonal varies {eth.flatness():.1%} over the window"
            )
        coupling_01 += lam * s_op[0, 1] * h0

    rho_00 = float(rho.matrix[0, 0].real)
    rho_11 = float(rho.matrix[1, 1].real)
    # element (0,1): prefactor uses the (alpha=0, beta=1) matrix element and
    # the population difference rho_11 - rho_00 over the gap e_1 - e_0
    predicted = coupling_01 / gap * (rho_11 - rho_00)
    measured = complex(rho.matrix[0, 1])
    floor = RELATIVE_RESIDUAL_FLOOR_FACTOR * max(float(np.max(np.abs(rho.matrix))), 1e-300)
    residual = abs(measured - predicted)
    rel = residual / max(abs(measured), floor)

    per_state = np.zeros(shell.d_gamma)
    if qdata is not None and (0, 1) in qdata.pairs:
        k = qdata.pair_index(0, 1)
        for m, n in enumerate(shell.members):
            rho_n = rdm_per_state(spec_data, int(n))
            pred_n = (
                coupling_01
                / gap
                * (rho_n.matrix[1, 1].real - rho_n.matrix[0, 0].real)
            )
            meas_n = complex(rho_n.matrix[0, 1])
            per_state[m] = abs(meas_n - pred_n) / max(abs(meas_n), floor)
        smooth_scale = abs(predicted)
        fluct_scale = abs(qdata.averages[k] / qdata.spacings[k] - predicted)
    else:
        smooth_scale = abs(predicted)
        fluct_scale = float("nan")

    h0_rep = float(np.real(h0_terms[0])) if h0_terms else 0.0
    return EthPrediction(
        predicted=predicted,
        measured=measured,
        residual=residual,
        relative_residual=rel,
        h0=h0_rep,
        per_state_relative_residuals=per_state,
        smooth_term_scale=smooth_scale,
        fluctuation_term_scale=fluct_scale,
        warnings=tuple(flags),
    )


def interaction_sup_norm(spec_data: SpectralData, iterations: int = 60) -> float:
    """Largest singular value of the interaction (power iteration, fixed start)."""
    h_int = spec_data.model.interaction()
    dim = h_int.shape[0]
    if dim <= 512:
        return float(np.linalg.norm(h_int, ord=2))
    rng = np.random.default_rng(7)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iterations):
        w = h_int @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        if abs(norm - last) < 1e-12 * max(norm, 1.0):
            break
        last = norm
    return float(norm)


def reference_trace_bound(sup_norm: float, shell_width: float) -> float:
    """Literature comparison number 4 sqrt(|H_int| / width); diagnostic only."""
    return 4.0 * np.sqrt(sup_norm / shell_width)
