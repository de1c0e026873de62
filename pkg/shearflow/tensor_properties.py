"""
Property suite for the pointwise tensor calculus
shearflow/tensor_properties.py

Evaluates monotonicity, nonexpansiveness, Jacobian positivity and bounds,
regularization consistency and difference-quotient oracles on seeded random
samples in 2x2 and 3x3. Backs the `verify-properties` command.
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.logger import get_logger

logger = get_logger(__name__)

JACOBIAN_BOUND = 3.0
KINK_DISTANCE = 0.1
JACOBIAN_REDUCTION_PER_DECADE = 5.0


@dataclass
class CheckResult:
    """One property evaluated over all samples"""

    name: str
    worst: float
    threshold: float
    samples: int
    passed: bool
    sense: str = "min"  # "min": worst >= threshold required; "max": worst <= threshold


@dataclass
class PropertyReport:
    seed: int
    n_samples: int
    g: float
    deltas: List[float]
    checks: List[CheckResult] = field(default_factory=list)
    consistency_constant: float = 0.0
    jacobian_bound: float = 0.0
    jacobian_convergence: List[Dict[str, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "g": self.g,
            "deltas": list(self.deltas),
            "passed": self.passed,
            "consistency_constant": self.consistency_constant,
            "jacobian_bound": self.jacobian_bound,
            "jacobian_convergence": self.jacobian_convergence,
            "checks": [asdict(c) for c in self.checks],
        }

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(c) for c in self.checks])


# ============================================================================
# SAMPLING
# ============================================================================

def random_symmetric(rng: np.random.Generator, count: int, n: int, radii: np.ndarray = None) -> np.ndarray:
    """Random symmetric matrices; unit Frobenius norm scaled by `radii` if given"""
    A = rng.standard_normal((count, n, n))
    S = 0.5 * (A + np.swapaxes(A, -1, -2))
    S /= tc.frobenius(S)[:, None, None]
    if radii is not None:
        S *= radii[:, None, None]
    return S


def sample_strains(rng: np.random.Generator, count: int, n: int, g: float) -> np.ndarray:
    """Radii spread over [0, 3g] with a quarter of the samples packed near the kink"""
    radii = rng.uniform(0.0, 3.0 * g, count)
    near = rng.random(count) < 0.25
    radii[near] = g + rng.uniform(-0.05 * g, 0.05 * g, near.sum())
    return random_symmetric(rng, count, n, radii)


def _check(name, values, threshold, sense="min") -> CheckResult:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return CheckResult(name, 0.0, threshold, 0, True, sense)
    worst = float(values.min() if sense == "min" else values.max())
    passed = worst >= threshold if sense == "min" else worst <= threshold
    return CheckResult(name, worst, threshold, int(values.size), bool(passed), sense)


# ============================================================================
# SUITE
# ============================================================================

def _jacobian_gap(E: np.ndarray, g: float, delta: float) -> np.ndarray:
    """
    Operator norm of m_delta'(E) - m'(E) on symmetric matrices.
    Both maps are a I + b n(x)n, so the norm is max(|da|, |da + db|).
    """
    a_d, b_d, _ = tc.m_delta_jac_coefficients(E, g, delta)
    a, b, _ = tc.m_dir_linear_coefficients(E, g)
    da, db = a_d - a, b_d - b
    return np.maximum(np.abs(da), np.abs(da + db))


def run_property_suite(
    n_samples: int = 100_000,
    seed: int = 42,
    g: float = 0.5,
    deltas: Sequence[float] = None,
    dims: Sequence[int] = (2, 3),
) -> PropertyReport:
    """
    Evaluate every tensor_core invariant on seeded random samples.

    Args:
        n_samples: number of random (E, D, H) triples per dimension
        seed: seed of numpy's default_rng
        g: threshold
        deltas: regularization widths, each < g
        dims: matrix sizes

    Returns:
        PropertyReport with per-check worst cases
    """
    if deltas is None:
        deltas = [0.4 * g, 0.2 * g, 0.04 * g, 0.004 * g]
    deltas = [float(d) for d in deltas]
    for d in deltas:
        tc.RegParam(d).check_against(g)

    tol_num = config.tol.TOL_NUM
    rng = np.random.default_rng(seed)
    report = PropertyReport(seed=seed, n_samples=n_samples, g=g, deltas=deltas)
    logger.info(f"Property suite: {n_samples} samples per dimension, dims={list(dims)}, seed={seed}")

    collected: Dict[str, List[np.ndarray]] = {}

    def add(key, values):
        collected.setdefault(key, []).append(np.ravel(values))

    ratios, bounds = [], []
    gaps = {d: [] for d in deltas}

    for n in dims:
        E = sample_strains(rng, n_samples, n, g)
        D = sample_strains(rng, n_samples, n, g)
        H = random_symmetric(rng, n_samples, n)
        K = random_symmetric(rng, n_samples, n)

        mE, mD = tc.m_array(E, g), tc.m_array(D, g)
        add("m_monotone", tc.ddot(mE - mD, E - D))
        add("m_nonexpansive", tc.frobenius(mE - mD) - tc.frobenius(E - D))

        # m is the gradient of the plastic potential
        t = 1e-6
        grad_fd = (tc.plastic_potential_array(E + t * H, g) - tc.plastic_potential_array(E - t * H, g)) / (2 * t)
        add("m_is_potential_gradient", np.abs(grad_fd - tc.ddot(mE, H)))

        off_kink = np.abs(tc.frobenius(E) - g) > KINK_DISTANCE
        Eo, Ho = E[off_kink], H[off_kink]
        t = 1e-7
        fd = (tc.m_array(Eo + t * Ho, g) - tc.m_array(Eo, g)) / t
        add("m_dir_difference_quotient", tc.frobenius(fd - tc.m_dir_array(Eo, Ho, g)))

        c = rng.uniform(0.1, 10.0, (n_samples, 1, 1))
        add("m_dir_positive_homogeneity",
            tc.frobenius(tc.m_dir_array(E, c * H, g) - c * tc.m_dir_array(E, H, g)) / c[:, 0, 0])

        for delta in deltas:
            mdE, mdD = tc.m_delta_array(E, g, delta), tc.m_delta_array(D, g, delta)
            add("m_delta_monotone", tc.ddot(mdE - mdD, E - D))

            JH = tc.m_delta_jac_apply_array(E, H, g, delta)
            JK = tc.m_delta_jac_apply_array(E, K, g, delta)
            add("jacobian_psd", tc.ddot(JH, H))
            bounds.append(tc.frobenius(JH) / tc.frobenius(H))
            add("jacobian_symmetric", np.abs(tc.ddot(JH, K) - tc.ddot(JK, H)))

            t = 1e-6
            fd = (tc.m_delta_array(E + t * H, g, delta) - tc.m_delta_array(E - t * H, g, delta)) / (2 * t)
            # second derivative of the radial profile jumps by 3/(2 delta) at the branch ends
            add("jacobian_difference_quotient", tc.frobenius(fd - JH) / (1.0 + 2.0 / delta))

            diff = tc.frobenius(mdE - mE)
            exact = np.abs(tc.frobenius(E) - g) > delta
            add("m_delta_exact_off_band", diff[exact])
            ratios.append(diff / delta)

            gaps[delta].append(_jacobian_gap(Eo, g, delta))

    report.consistency_constant = float(max(r.max() for r in ratios))
    report.jacobian_bound = float(max(b.max() for b in bounds))

    def joined(key):
        return np.concatenate(collected[key])

    report.checks = [
        _check("m_monotone", joined("m_monotone"), -tol_num),
        _check("m_nonexpansive", joined("m_nonexpansive"), 1e-12, "max"),
        _check("m_is_potential_gradient", joined("m_is_potential_gradient"), 1e-5, "max"),
        _check("m_dir_difference_quotient", joined("m_dir_difference_quotient"), 1e-5, "max"),
        _check("m_dir_positive_homogeneity", joined("m_dir_positive_homogeneity"), 1e-12, "max"),
        _check("m_delta_monotone", joined("m_delta_monotone"), -tol_num),
        _check("jacobian_psd", joined("jacobian_psd"), -tol_num),
        _check("jacobian_bound", np.concatenate(bounds), JACOBIAN_BOUND, "max"),
        _check("jacobian_symmetric", joined("jacobian_symmetric"), 1e-12, "max"),
        _check("jacobian_difference_quotient", joined("jacobian_difference_quotient"), 1e-5, "max"),
        _check("m_delta_exact_off_band", joined("m_delta_exact_off_band"), 0.0, "max"),
        _check("m_delta_consistency_constant", [report.consistency_constant], 1.0, "max"),
    ]

    # Jacobian convergence away from the kink, strongest form: sup over all sampled E.
    # Gaps at round-off level count as zero.
    rows = []
    for delta in sorted(set(deltas), reverse=True):
        gap = float(np.concatenate(gaps[delta]).max(initial=0.0))
        rows.append({"delta": delta, "sup_gap": gap if gap > tol_num else 0.0})
    for prev, cur in zip(rows, rows[1:]):
        if cur["sup_gap"] == 0.0:
            reduction = float("inf")
        else:
            reduction = prev["sup_gap"] / cur["sup_gap"]
        cur["reduction"] = reduction
        # normalized to one decade of delta
        cur["reduction_per_decade"] = reduction ** (1.0 / np.log10(prev["delta"] / cur["delta"]))
    report.jacobian_convergence = rows
    report.checks.append(_check(
        "jacobian_convergence_off_kink",
        [r["reduction_per_decade"] for r in rows[1:]],
        JACOBIAN_REDUCTION_PER_DECADE))

    status = "✅ passed" if report.passed else "❌ failed"
    logger.info(f"Property suite {status}: K={report.consistency_constant:.3e}, "
                f"jacobian bound={report.jacobian_bound:.3f}")
    return report
