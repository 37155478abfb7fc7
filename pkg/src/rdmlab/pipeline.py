"""Stage driver: spectrum -> widths -> shell ensembles -> off-diagonal checks
-> renormalization -> typical-state sampling, with deterministic report files.

Exit-code contract: 0 on success (bound violations are findings, reported in
files), 2 when an exact algebraic identity fails beyond tolerance (a bug),
3 on configuration errors.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import mc_ensemble as mc
from . import offdiag, renorm, typical, widths
from .config import RunConfig
from .errors import ConfigError, IdentityViolation
from .model import EnvOperatorSpec, defect_chain, reformulate
from .serialize import file_sha256, write_csv, write_json
from .spectral import SpectralData, dos_compare, fit_env_beta

IDENTITY_TOL = 1e-10
RESUMMATION_TOL = 1e-10
ORACLE_TOL = 1e-12
ORACLE_DIM_CAP = 2048


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def shell_bounds(spec_data, analysis, width):
    if analysis.shell_start is not None:
        return analysis.shell_start
    energies = spec_data.energies
    center = energies[0] + analysis.shell_center_fraction * (energies[-1] - energies[0])
    return center - 0.5 * width


def make_shells(spec_data, analysis, width):
    start = shell_bounds(spec_data, analysis, width)
    shell = mc.make_shell(spec_data, start, width, center_fraction=analysis.center_gate)
    ushell = mc.make_uncoupled_shell(spec_data, start, width)
    return shell, ushell


def env_window_for_shell(spec_data, shell, min_levels: int = 60):
    """Environment energy window reachable from the shell, widened until it
    holds enough levels for density fits."""
    sys_e = spec_data.sys_energies
    env = spec_data.env_energies
    lo = shell.start - float(sys_e.max())
    hi = shell.stop - float(sys_e.min())
    span_lo, span_hi = float(env[0]), float(env[-1])
    for _ in range(64):
        count = int(np.sum((env >= lo) & (env <= hi)))
        if count >= min_levels or (lo <= span_lo and hi >= span_hi):
            break
        pad = 0.25 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    return max(lo, span_lo), min(hi, span_hi)


def env_beta_for_shell(spec_data, shell):
    window = env_window_for_shell(spec_data, shell)
    return fit_env_beta(spec_data.env_energies, window)


def eth_stats_per_term(spec_data, shell):
    window = env_window_for_shell(spec_data, shell)
    parts = spec_data.model
    stats = []
    for env_op in parts.env_ops:
        stats.append(
            offdiag.eth_stats(
                parts.env_energies,
                env_op,
                window,
                n_sites=parts.spec.environment.n_sites or None,
            )
        )
    return stats


def _resized_chain(env_spec, n_sites):
    """Rebuild a defect chain at a new length from its per-site parameters."""
    if env_spec.matrix is not None:
        raise ConfigError("env_size sweeps need a chain environment")
    g = env_spec.transverse_field[0]
    h_bulk = env_spec.longitudinal_field[-1]
    boost = env_spec.longitudinal_field[0] - h_bulk
    j = env_spec.ising_coupling[0] if env_spec.ising_coupling else 1.0
    return defect_chain(
        n_sites,
        j=j,
        g=g,
        h=h_bulk,
        defect_site=0,
        defect_boost=boost,
        disorder_seed=env_spec.disorder_seed,
        disorder_strength=env_spec.disorder_strength,
    )


# ---------------------------------------------------------------------------
# report builders
# ---------------------------------------------------------------------------


def bounds_payload(report: mc.BoundReport):
    return {
        "model_label": report.label,
        "shell": {
            "E_s": report.shell_start,
            "Delta": report.shell_width,
            "d_Gamma": report.d_gamma,
            "d_Gamma0": report.d_gamma0,
        },
        "epsilon": report.epsilon,
        "w_M": report.w_m,
        "regime": report.regime,
        "uniform_env_gate": report.uniform_env_gate,
        "per_alpha": [
            {
                "alpha": entry.alpha,
                "rho_aa": entry.rho_aa,
                "rho0_aa": entry.rho0_aa,
                "diff": entry.diff,
                "bounds": entry.bounds,
                "applicable": entry.applicable,
                "ratios": entry.ratios,
                "flags": {
                    "linear": entry.flags["linear"],
                    "linearity_r2": entry.flags["linearity_r2"],
                    "regime": entry.flags["regime"],
                    "env_shell_count": entry.flags["env_shell_count"],
                },
            }
            for entry in report.per_alpha
        ],
        "q1": report.q1,
        "q0": report.q0,
        "a13_diagnostic": report.a13_diagnostic,
    }


def bounds_csv_rows(report: mc.BoundReport):
    rows = []
    for entry in report.per_alpha:
        for name in sorted(entry.bounds):
            rows.append(
                [
                    report.label,
                    report.shell_start,
                    report.shell_width,
                    report.epsilon,
                    entry.alpha,
                    entry.rho_aa,
                    entry.rho0_aa,
                    entry.diff,
                    name,
                    entry.bounds[name],
                    int(entry.applicable[name]),
                    entry.ratios[name],
                ]
            )
    return rows


BOUNDS_CSV_HEADER = [
    "label",
    "E_s",
    "Delta",
    "epsilon",
    "alpha",
    "rho_aa",
    "rho0_aa",
    "diff",
    "bound",
    "value",
    "applicable",
    "ratio",
]


def offdiag_payload(rho, qdata, prediction=None):
    pairs = []
    for k, (alpha, beta) in enumerate(qdata.pairs):
        q = qdata.averages[k]
        measured = rho.matrix[alpha, beta]
        residual = abs(measured - q / qdata.spacings[k])
        entry = {
            "alpha": alpha,
            "beta": beta,
            "delta_s": float(qdata.spacings[k]),
            "Q_re": float(q.real),
            "Q_im": float(q.imag),
            "rho_ab_re": float(measured.real),
            "rho_ab_im": float(measured.imag),
            "identity_residual": float(residual),
        }
        if prediction is not None and (alpha, beta) == (0, 1):
            entry["eth_prediction"] = {
                "re": float(prediction.predicted.real),
                "im": float(prediction.predicted.imag),
            }
            entry["eth_residual"] = float(prediction.residual)
            entry["eth_relative_residual"] = float(prediction.relative_residual)
        pairs.append(entry)
    payload = {"pairs": pairs, "skipped_pairs": [list(p) for p in qdata.skipped]}
    if prediction is not None:
        payload["eth_h0"] = prediction.h0
        payload["eth_warnings"] = list(prediction.warnings)
    return payload


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


class _Writer:
    def __init__(self, directory, formats):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.formats = formats
        self.artifacts = []

    def json(self, name, payload):
        if "json" in self.formats:
            path = write_json(self.directory / name, payload)
            self.artifacts.append(path)

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            path = write_csv(self.directory / name, header, rows)
            self.artifacts.append(path)

    def manifest(self, label, config_text):
        import hashlib

        entries = [
            {"path": p.name, "sha256": file_sha256(p)}
            for p in sorted(self.artifacts, key=lambda p: p.name)
        ]
        payload = {
            "label": label,
            "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
            "artifacts": entries,
        }
        write_json(self.directory / f"{label}.manifest.json", payload)


def run_pipeline(config: RunConfig, out_dir=None, cache=None) -> int:
    analysis = config.analysis
    writer = _Writer(out_dir or config.output.directory, config.output.formats)
    label = config.label

    for li, lam in enumerate(analysis.lambdas):
        spec = config.model.with_coupling(lam)
        sd = SpectralData.from_model(spec, cache=cache)
        _, _, l1, warn = dos_compare(sd.energies, sd.uncoupled_energies)
        writer.json(
            f"{label}.L{li}.spectrum.json",
            {
                "lambda": lam,
                "dim": sd.dim,
                "dos_l1_distance": l1,
                "dos_warning": warn,
            },
        )

        for wi, width in enumerate(analysis.shell_widths):
            shell, ushell = make_shells(sd, analysis, width)
            beta_fit = env_beta_for_shell(sd, shell)

            rho = mc.rdm_microcanonical(sd, shell)
            qdata = offdiag.q_values(sd, shell)
            identity_max = offdiag.max_identity_residual(rho, qdata)
            per_state_max = offdiag.per_state_identity_residual(sd, qdata)
            if max(identity_max, per_state_max) > IDENTITY_TOL:
                raise IdentityViolation(
                    f"off-diagonal identity residual "
                    f"{max(identity_max, per_state_max):.3e} at lambda={lam}"
                )

            prediction = None
            eth_terms = []
            if sd.d_sys == 2 and spec.interaction_terms:
                eth_terms = eth_stats_per_term(sd, shell)
                prediction = offdiag.qubit_eth_prediction(
                    rho, sd, shell, eth_terms, qdata=qdata
                )
            payload = offdiag_payload(rho, qdata, prediction)
            payload["identity_residual_max"] = identity_max
            payload["identity_residual_per_state_max"] = per_state_max
            payload["dreg_reference"] = offdiag.reference_trace_bound(
                offdiag.interaction_sup_norm(sd), shell.width
            )
            writer.json(f"{label}.L{li}.W{wi}.offdiag.json", payload)

            first_eps_decomps = None
            for ei, epsilon in enumerate(analysis.epsilons):
                window = (shell.start - width, shell.stop + width)
                wrep = widths.width_report(sd, window, epsilon)
                if "csv" in config.output.formats:
                    path = writer.directory / f"{label}.L{li}.W{wi}.E{ei}.widths.csv"
                    widths.write_widths_csv(wrep, sd, path)
                    writer.artifacts.append(path)

                slab = sd.coefficient_slab(shell.members)
                shell_weights = np.sum(np.abs(slab) ** 2, axis=2)
                decomps = [
                    mc.region_decomposition(
                        sd,
                        shell,
                        alpha,
                        wrep.w_m,
                        env_shell=ushell.env_shells[alpha],
                        shell_weights=shell_weights,
                    )
                    for alpha in range(sd.d_sys)
                ]
                if first_eps_decomps is None:
                    first_eps_decomps = decomps
                resum = max(
                    abs(dec.rho_alpha - float(rho.matrix[a, a].real))
                    for a, dec in enumerate(decomps)
                )
                if resum > RESUMMATION_TOL:
                    raise IdentityViolation(
                        f"region resummation residual {resum:.3e} at lambda={lam}"
                    )

                report = mc.diagonal_bound_report(
                    sd, shell, ushell, wrep.w_m, epsilon, decomps=decomps, label=label
                )
                payload = bounds_payload(report)
                payload["widths"] = {
                    "w_E": wrep.w_e,
                    "w_L": wrep.w_l,
                    "w_M": wrep.w_m,
                    "containment_violations": wrep.containment_violations,
                }
                payload["resummation_residual"] = resum
                payload["env_beta_fit"] = {
                    "beta": beta_fit.beta,
                    "r_squared": beta_fit.r_squared,
                }
                writer.json(f"{label}.L{li}.W{wi}.E{ei}.bounds.json", payload)
                writer.csv(
                    f"{label}.L{li}.W{wi}.E{ei}.bounds.csv",
                    BOUNDS_CSV_HEADER,
                    bounds_csv_rows(report),
                )

                if spec.interaction_terms and eth_terms:
                    candidate = renorm.candidate_eth_mean(sd, shell, eth_terms, epsilon)
                else:
                    candidate = renorm.candidate_zero(sd, shell, epsilon)
                verdict = renorm.evaluate_condition(
                    sd,
                    candidate,
                    beta_fit.beta,
                    tau_small_width=analysis.tau_small_width,
                    tau_small_q=analysis.tau_small_q,
                )
                writer.json(
                    f"{label}.L{li}.W{wi}.E{ei}.renorm.json",
                    {
                        "candidate": candidate.tag,
                        "c_sw": verdict.c_small_width,
                        "c_sQ": verdict.c_small_q,
                        "tau_sw": verdict.tau_small_width,
                        "tau_sQ": verdict.tau_small_q,
                        "in_S_sw": verdict.in_small_width,
                        "in_S_sQ": verdict.in_small_q,
                        "condition_passes": verdict.passes,
                        "beta": verdict.beta,
                        "D_gibbs": verdict.distance_gibbs,
                        "D_renorm_gibbs": verdict.distance_renormalized_gibbs,
                        "w_M_tilde": candidate.w_m_tilde,
                    },
                )

            if analysis.samples > 0:
                stats = typical.typicality_stats(
                    sd, shell, analysis.samples, analysis.seed
                )
                kreport = typical.k_report(
                    sd, shell, analysis.samples, analysis.seed, decomps=first_eps_decomps
                )
                if kreport.split_check > 1e-8 * max(shell.d_gamma, 1):
                    raise IdentityViolation(
                        f"overlap split residual {kreport.split_check:.3e}"
                    )
                writer.json(
                    f"{label}.L{li}.W{wi}.typical.json",
                    {
                        "d_Gamma": shell.d_gamma,
                        "M": analysis.samples,
                        "mean_distance": stats.mean_distance,
                        "standard_error": stats.standard_error,
                        "bound": stats.bound,
                        "k2_rms_by_region": (
                            kreport.k2_region_rms.tolist()
                            if kreport.k2_region_rms is not None
                            else None
                        ),
                        "region_counts": (
                            kreport.region_counts.tolist()
                            if kreport.region_counts is not None
                            else None
                        ),
                        "k1_diag_residual_rms": kreport.k1_diag_residual_rms.tolist(),
                        "split_check": kreport.split_check,
                    },
                )
                writer.csv(
                    f"{label}.L{li}.W{wi}.typical.csv",
                    ["sample", "trace_distance"],
                    [[m, d] for m, d in enumerate(stats.distances)],
                )

    writer.manifest(label, config.source_text)
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_AXES = ("lambda", "delta", "epsilon", "env_size")

SWEEP_HEADER = [
    "axis",
    "value",
    "lambda",
    "Delta",
    "epsilon",
    "d_Gamma",
    "w_E",
    "w_L",
    "w_M",
    "max_diag_diff",
    "worst_bound_ratio",
    "q1",
    "q0",
    "identity_residual",
    "offdiag_01_abs",
    "c_sw",
    "c_sQ",
    "D_gibbs",
    "D_renorm_gibbs",
    "dreg_reference",
    "mean_typical_distance",
    "psw_bound",
]


def _sweep_point(config, sd, width, epsilon, samples):
    analysis = config.analysis
    shell, ushell = make_shells(sd, analysis, width)
    window = (shell.start - width, shell.stop + width)
    wrep = widths.width_report(sd, window, epsilon)
    report = mc.diagonal_bound_report(sd, shell, ushell, wrep.w_m, epsilon, label=config.label)
    rho = mc.rdm_microcanonical(sd, shell)
    qdata = offdiag.q_values(sd, shell)
    identity_max = offdiag.max_identity_residual(rho, qdata)

    beta_fit = env_beta_for_shell(sd, shell)
    if sd.spec.interaction_terms:
        eth_terms = eth_stats_per_term(sd, shell)
        candidate = renorm.candidate_eth_mean(sd, shell, eth_terms, epsilon)
    else:
        candidate = renorm.candidate_zero(sd, shell, epsilon)
    verdict = renorm.evaluate_condition(
        sd,
        candidate,
        beta_fit.beta,
        tau_small_width=analysis.tau_small_width,
        tau_small_q=analysis.tau_small_q,
    )

    mean_d = float("nan")
    psw = float("nan")
    if samples > 0:
        stats = typical.typicality_stats(sd, shell, samples, analysis.seed)
        mean_d = stats.mean_distance
        psw = stats.bound

    off_01 = abs(rho.matrix[0, 1]) if sd.d_sys >= 2 else float("nan")
    return {
        "lambda": sd.spec.coupling,
        "Delta": width,
        "epsilon": epsilon,
        "d_Gamma": shell.d_gamma,
        "w_E": wrep.w_e,
        "w_L": wrep.w_l,
        "w_M": wrep.w_m,
        "max_diag_diff": max(e.diff for e in report.per_alpha),
        "worst_bound_ratio": report.worst_ratio,
        "q1": report.q1,
        "q0": report.q0,
        "identity_residual": identity_max,
        "offdiag_01_abs": off_01,
        "c_sw": verdict.c_small_width,
        "c_sQ": verdict.c_small_q,
        "D_gibbs": verdict.distance_gibbs,
        "D_renorm_gibbs": verdict.distance_renormalized_gibbs,
        "dreg_reference": offdiag.reference_trace_bound(
            offdiag.interaction_sup_norm(sd), width
        ),
        "mean_typical_distance": mean_d,
        "psw_bound": psw,
    }


def run_sweep(config: RunConfig, axis: str, out_dir=None, cache=None) -> int:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    analysis = config.analysis
    writer = _Writer(out_dir or config.output.directory, config.output.formats)

    base_lambda = analysis.lambdas[0]
    base_width = analysis.shell_widths[0]
    base_eps = analysis.epsilons[0]
    samples = analysis.samples

    rows = []
    if axis == "lambda":
        for lam in analysis.lambdas:
            sd = SpectralData.from_model(config.model.with_coupling(lam), cache=cache)
            point = _sweep_point(config, sd, base_width, base_eps, samples)
            rows.append((lam, point))
    elif axis == "delta":
        sd = SpectralData.from_model(config.model.with_coupling(base_lambda), cache=cache)
        for width in analysis.shell_widths:
            point = _sweep_point(config, sd, width, base_eps, samples)
            rows.append((width, point))
    elif axis == "epsilon":
        sd = SpectralData.from_model(config.model.with_coupling(base_lambda), cache=cache)
        for eps in analysis.epsilons:
            point = _sweep_point(config, sd, base_width, eps, samples)
            rows.append((eps, point))
    else:  # env_size
        if not analysis.env_sizes:
            raise ConfigError("missing required field analysis.env_sizes for axis env_size")
        for n in analysis.env_sizes:
            env = _resized_chain(config.model.environment, n)
            spec = dataclasses.replace(
                config.model, environment=env, coupling=base_lambda
            )
            sd = SpectralData.from_model(spec, cache=cache)
            point = _sweep_point(config, sd, base_width, base_eps, samples)
            rows.append((n, point))

    csv_rows = [
        [axis, value] + [point[key] for key in SWEEP_HEADER[2:]] for value, point in rows
    ]
    writer.csv(f"{config.label}.sweep_{axis}.csv", SWEEP_HEADER, csv_rows)
    writer.json(
        f"{config.label}.sweep_{axis}.json",
        {"axis": axis, "points": [dict(point, value=value) for value, point in rows]},
    )
    writer.manifest(config.label, config.source_text)
    return 0


# ---------------------------------------------------------------------------
# verify: exact identities only
# ---------------------------------------------------------------------------


def run_verify(config: RunConfig, out_dir=None, cache=None) -> int:
    analysis = config.analysis
    writer = _Writer(out_dir or config.output.directory, config.output.formats)
    label = config.label
    width = analysis.shell_widths[0]
    epsilon = analysis.epsilons[0]
    seed = analysis.seed if analysis.seed is not None else 0

    checks = []
    failed = False
    for li, lam in enumerate(analysis.lambdas):
        spec = config.model.with_coupling(lam)
        sd = SpectralData.from_model(spec, cache=cache)
        shell, ushell = make_shells(sd, analysis, width)
        rho = mc.rdm_microcanonical(sd, shell)

        qdata = offdiag.q_values(sd, shell)
        identity_max = offdiag.max_identity_residual(rho, qdata)
        per_state_max = offdiag.per_state_identity_residual(sd, qdata)

        window = (shell.start - width, shell.stop + width)
        wrep = widths.width_report(sd, window, epsilon)
        decomps = [
            mc.region_decomposition(
                sd, shell, alpha, wrep.w_m, env_shell=ushell.env_shells[alpha]
            )
            for alpha in range(sd.d_sys)
        ]
        resummation = max(
            abs(dec.rho_alpha - float(rho.matrix[a, a].real))
            for a, dec in enumerate(decomps)
        )

        oracle = None
        if sd.dim <= ORACLE_DIM_CAP:
            members = shell.members
            v = sd.states[:, members]
            rho_total = (v @ v.conj().T) / shell.d_gamma
            traced = mc.partial_trace_env(rho_total, sd.d_sys, sd.d_env)
            oracle = float(np.max(np.abs(traced - rho.matrix)))

        rng = np.random.default_rng(0)
        h = rng.standard_normal((sd.d_sys, sd.d_sys))
        shift = (h + h.T) / 2
        ref = reformulate(spec, shift)
        rebuilt = ref.assemble_in_base_basis()
        original = sd.model.total
        scale = max(1.0, float(np.max(np.abs(original))))
        reformulation_max = float(np.max(np.abs(rebuilt - original))) / scale

        sample = typical.sample_typical(sd, shell, seed, index=0)
        ks = typical.k_decompose(sample, sd, shell, decomps=decomps)
        split_max = float(np.max(np.abs(ks.k1 + ks.k2 - ks.overlap_direct)))
        split_tol = 1e-10 * max(shell.d_gamma, 1)

        entry = {
            "lambda": lam,
            "d_Gamma": shell.d_gamma,
            "identity_residual_max": identity_max,
            "identity_residual_per_state_max": per_state_max,
            "resummation_residual": resummation,
            "partial_trace_oracle": oracle,
            "reformulation_invariance": reformulation_max,
            "overlap_split_residual": split_max,
            "pass": bool(
                identity_max <= IDENTITY_TOL
                and per_state_max <= IDENTITY_TOL
                and resummation <= RESUMMATION_TOL
                and (oracle is None or oracle <= ORACLE_TOL)
                and reformulation_max <= 1e-12
                and split_max <= split_tol
            ),
        }
        checks.append(entry)
        failed = failed or not entry["pass"]

    writer.json(f"{label}.verify.json", {"checks": checks, "pass": not failed})
    writer.manifest(label, config.source_text)
    return 2 if failed else 0
