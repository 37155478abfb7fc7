"""Main-body regions of eigenfunctions and local spectral densities.

An eigenfunction's "main body" is the smallest contiguous index window that
keeps all but a fraction epsilon of its weight, with both endpoints essential.
The module measures the maximum energy widths of those windows (for
eigenfunctions, for the reverse local densities of states, and their maximum)
and fits averaged profiles to a Lorentzian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

# Slack for >= comparisons against 1 - epsilon; matches the 1e-9 normalization
# tolerance of the incoming weights.
CAPTURE_SLACK = 1e-9


@dataclass(frozen=True)
class MainBodyRegion:
    kind: str  # "EF" or "LDOS"
    owner: int
    lo: int
    hi: int
    captured_weight: float
    epsilon: float

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


def main_body(weights, epsilon: float, kind: str = "EF", owner: int = -1) -> MainBodyRegion:
    """Trim endpoints greedily until no endpoint can go without dropping the
    captured weight below 1 - epsilon.

    At each step the endpoint with the smaller weight is deleted (ties delete
    the lower index); deletion happens only while the remainder stays at or
    above 1 - epsilon (within CAPTURE_SLACK).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie strictly between 0 and 1")
    w = np.asarray(weights, float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if np.any(w < -CAPTURE_SLACK):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {total!r})")

    target = 1.0 - epsilon
    lo, hi = 0, w.size - 1
    captured = total
    while lo < hi:
        end = lo if w[lo] <= w[hi] else hi
        remainder = captured - w[end]
        if remainder < target - CAPTURE_SLACK:
            break
        captured = remainder
        if end == lo:
            lo += 1
        else:
            hi -= 1
    return MainBodyRegion(
        kind=kind, owner=owner, lo=lo, hi=hi, captured_weight=captured, epsilon=epsilon
    )


@dataclass(frozen=True)
class WidthReport:
    """Per-state main-body widths over a window of relevance, plus their maxima."""

    epsilon: float
    window: tuple
    w_e: float
    w_l: float
    ef_regions: tuple
    ldos_regions: tuple
    ef_widths: np.ndarray
    ldos_widths: np.ndarray
    containment_violations: int

    @property
    def w_m(self) -> float:
        return max(self.w_e, self.w_l)


def width_report(spec_data, window, epsilon: float) -> WidthReport:
    """Main-body widths of all eigenfunctions and local densities owned inside
    the energy window.

    Eigenfunction weights of |n> run over the uncoupled levels in r order;
    the reverse expansion of an uncoupled level runs over n.  Containment of
    each main body inside owner-energy +/- w_M is checked and counted.
    """
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError("window must have positive extent")
    e_n = spec_data.energies
    e_r = spec_data.uncoupled_energies
    owners_n = np.nonzero((e_n >= lo) & (e_n <= hi))[0]
    owners_r = np.nonzero((e_r >= lo) & (e_r <= hi))[0]
    if owners_n.size == 0 and owners_r.size == 0:
        raise ValueError("window contains no states")

    ef_regions = []
    ef_widths = np.zeros(owners_n.size)
    if owners_n.size:
        overlaps = spec_data.overlaps_r(owners_n)  # rows r, columns the owners
        weights = np.abs(overlaps) ** 2
        for k, n in enumerate(owners_n):
            region = main_body(weights[:, k], epsilon, kind="EF", owner=int(n))
            ef_regions.append(region)
            ef_widths[k] = e_r[region.hi] - e_r[region.lo]

    ldos_regions = []
    ldos_widths = np.zeros(owners_r.size)
    if owners_r.size:
        rows = spec_data.states[spec_data.uncoupled_order[owners_r], :]
        weights = np.abs(rows) ** 2
        for k, r in enumerate(owners_r):
            region = main_body(weights[k, :], epsilon, kind="LDOS", owner=int(r))
            ldos_regions.append(region)
            ldos_widths[k] = e_n[region.hi] - e_n[region.lo]

    w_e = float(ef_widths.max()) if ef_widths.size else 0.0
    w_l = float(ldos_widths.max()) if ldos_widths.size else 0.0
    w_m = max(w_e, w_l)

    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    violations = 0
    for region in ef_regions:
        center = e_n[region.owner]
        if e_r[region.lo] < center - w_m - slack or e_r[region.hi] > center + w_m + slack:
            violations += 1
    for region in ldos_regions:
        center = e_r[region.owner]
        if e_n[region.lo] < center - w_m - slack or e_n[region.hi] > center + w_m + slack:
            violations += 1

    return WidthReport(
        epsilon=epsilon,
        window=(lo, hi),
        w_e=w_e,
        w_l=w_l,
        ef_regions=tuple(ef_regions),
        ldos_regions=tuple(ldos_regions),
        ef_widths=ef_widths,
        ldos_widths=ldos_widths,
        containment_violations=violations,
    )


def write_widths_csv(report: WidthReport, spec_data, path):
    """Per-state width table: kind, owner, E_owner, lo, hi, width, captured_weight."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "owner", "E_owner", "lo", "hi", "width", "captured_weight"])
        for region, width in zip(report.ef_regions, report.ef_widths):
            writer.writerow(
                [
                    region.kind,
                    region.owner,
                    f"{spec_data.energies[region.owner]:.17g}",
                    region.lo,
                    region.hi,
                    f"{width:.17g}",
                    f"{region.captured_weight:.17g}",
                ]
            )
        for region, width in zip(report.ldos_regions, report.ldos_widths):
            writer.writerow(
                [
                    region.kind,
                    region.owner,
                    f"{spec_data.uncoupled_energies[region.owner]:.17g}",
                    region.lo,
                    region.hi,
                    f"{width:.17g}",
                    f"{region.captured_weight:.17g}",
                ]
            )


# ---------------------------------------------------------------------------
# Breit-Wigner profile
# ---------------------------------------------------------------------------


def lorentzian(x, amplitude, center, width):
    return amplitude * (width / (2 * np.pi)) / ((x - center) ** 2 + (width / 2) ** 2)


@dataclass(frozen=True)
class BreitWignerFit:
    width: float
    center: float
    amplitude: float
    residual: float
    converged: bool
    born_estimate: float | None = None

    def predicted_main_body_width(self, epsilon: float) -> float:
        """Window keeping 1 - epsilon of a Lorentzian of this width."""
        return 2.0 * self.width / (np.pi * epsilon)


def breit_wigner_fit(centers, values, born_estimate=None) -> BreitWignerFit:
    """Nonlinear least-squares Lorentzian fit of an averaged profile.

    Falls back to a half-width-at-half-maximum estimate when the optimizer
    does not converge (converged=False in that case).
    """
    x = np.asarray(centers, float)
    y = np.asarray(values, float)
    if x.size < 11:
        raise ValueError("profile needs at least 11 bins")
    mass = float(np.trapezoid(y, x))
    peak_idx = int(np.argmax(y))
    c0 = x[peak_idx]
    w0 = max(_hwhm(x, y) * 2.0, (x[1] - x[0]))
    a0 = max(mass, 1e-12)
    try:
        popt, _ = curve_fit(
            lorentzian,
            x,
            y,
            p0=[a0, c0, w0],
            maxfev=20000,
        )
        amplitude, center, width = popt
        width = abs(float(width))
        fitted = lorentzian(x, *popt)
        residual = float(np.sqrt(np.mean((fitted - y) ** 2)))
        return BreitWignerFit(
            width=width,
            center=float(center),
            amplitude=float(amplitude),
            residual=residual,
            converged=True,
            born_estimate=born_estimate,
        )
    except RuntimeError:
        width = 2.0 * _hwhm(x, y)
        return BreitWignerFit(
            width=width,
            center=c0,
            amplitude=a0,
            residual=float("nan"),
            converged=False,
            born_estimate=born_estimate,
        )


def _hwhm(x, y):
    """Half width at half maximum by linear interpolation around the peak."""
    peak_idx = int(np.argmax(y))
    half = y[peak_idx] / 2.0
    left = x[0]
    for k in range(peak_idx, 0, -1):
        if y[k - 1] < half:
            frac = (y[k] - half) / max(y[k] - y[k - 1], 1e-300)
            left = x[k] - frac * (x[k] - x[k - 1])
            break
    right = x[-1]
    for k in range(peak_idx, x.size - 1):
        if y[k + 1] < half:
            frac = (y[k] - half) / max(y[k] - y[k + 1], 1e-300)
            right = x[k] + frac * (x[k + 1] - x[k])
            break
    return max((right - left) / 2.0, 1e-300)


def mean_ef_profile(spec_data, owners, half_range: float, bins: int = 61):
    """Average eigenfunction density versus E_r - E_n over the given owners.

    Returns (bin centers, density per unit energy averaged over owners).
    """
    owners = np.asarray(owners)
    if owners.size == 0:
        raise ValueError("no owner states supplied")
    edges = np.linspace(-half_range, half_range, bins + 1)
    accum = np.zeros(bins)
    e_r = spec_data.uncoupled_energies
    overlaps = spec_data.overlaps_r(owners)
    weights = np.abs(overlaps) ** 2
    for k, n in enumerate(owners):
        offsets = e_r - spec_data.energies[n]
        hist, _ = np.histogram(offsets, bins=edges, weights=weights[:, k])
        accum += hist
    bin_width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, accum / (owners.size * bin_width)


def interaction_born_width(spec_data, window) -> float:
    """First-principles Lorentzian-width estimate
    2 pi * mean |<E_r|H_int|E_r'>|^2 * rho_dos over uncoupled levels in the window."""
    lo, hi = float(window[0]), float(window[1])
    e_r = spec_data.uncoupled_energies
    inside = np.nonzero((e_r >= lo) & (e_r <= hi))[0]
    if inside.size < 2:
        raise ValueError("window contains fewer than 2 uncoupled levels")
    h_int = spec_data.model.interaction()
    rows = spec_data.uncoupled_order[inside]
    block = h_int[np.ix_(rows, rows)]
    off = block - np.diag(np.diag(block))
    m = inside.size
    mean_sq = float(np.sum(np.abs(off) ** 2)) / (m * (m - 1))
    rho = (m - 1) / (e_r[inside[-1]] - e_r[inside[0]])
    return 2.0 * np.pi * mean_sq * rho
