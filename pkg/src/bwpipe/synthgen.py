"""Synthetic birth-weight cohorts with planted ground truth.

Features come from a rank-``factor_rank`` Gaussian factor model pushed through
per-column marginals (gaussian, lognormal, gamma via a Gaussian copula, or
ordinal discrete). The target is a linear signal in eight planted features,
one gestational-age x placental-weight interaction, a fixed sex gap and
Gaussian noise.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special, stats

from .dataset import ColumnMeta, DataMatrix
from .errors import DataError
from .imputation import mask_known_entries

TARGET = "fl_bw"
SEX = "f1_sex"
PLANTED = (
    ("gestational_age", "f0_m_GA_Del", "gaussian"),
    ("placental_weight", "f0_m_plac_wt", "gaussian"),
    ("fundal_height", "f0_m_fundal_ht_v2", "gaussian"),
    ("abdominal_circumference", "f0_m_abd_cir_v2", "gaussian"),
    ("fasting_glucose", "f0_m_glu_f_v2", "lognormal"),
    ("systolic_bp", "f0_m_sys_bp_r1_v1", "gaussian"),
    ("pulse_rate", "f0_m_pulse_r1_v2", "gaussian"),
    ("maternal_weight", "f0_m_wt_v2", "lognormal"),
)
DEFAULT_COEFFICIENTS = (200.0, 170.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0)
DEFAULT_MIX = {"gaussian": 17, "lognormal": 47, "gamma": 25, "discrete": 20}
CALIBRATION_SEEDS = (0, 1, 2, 3, 4)
PLAUSIBLE_GRAMS = (500.0, 5500.0)


def _scaled_mix(p):
    """Largest-remainder split of ``p`` columns in the default proportions."""
    total = sum(DEFAULT_MIX.values())
    raw = {k: v * p / total for k, v in DEFAULT_MIX.items()}
    mix = {k: int(math.floor(v)) for k, v in raw.items()}
    for k in sorted(raw, key=lambda k: (-(raw[k] - mix[k]), k))[: p - sum(mix.values())]:
        mix[k] += 1
    # small p: top up the classes the planted roles need, taken from the largest others
    for k, floor in _mix_floors().items():
        while mix[k] < floor:
            donor = max((d for d in mix if mix[d] > _mix_floors().get(d, 0)),
                        key=lambda d: (mix[d], d), default=None)
            if donor is None:
                break
            mix[donor] -= 1
            mix[k] += 1
    return mix


def _mix_floors():
    return {
        "gaussian": sum(1 for _, _, d in PLANTED if d == "gaussian") + 1,  # + target
        "lognormal": sum(1 for _, _, d in PLANTED if d == "lognormal"),
        "discrete": 1,
    }


@dataclass(frozen=True)
class CohortSpec:
    n: int = 791
    p: int = 109
    mix: tuple = ()  # ((distribution, count), ...); empty -> default proportions
    coefficients: tuple = DEFAULT_COEFFICIENTS
    interaction: float = 180.0
    sex_gap: float = 130.0
    base_weight: float = 2800.0
    noise_scale: float | None = None  # None -> calibrate to target_r2
    target_r2: float = 0.62
    missing_rate: float = 0.0678
    mechanism: str = "mcar"
    factor_rank: int = 10
    loading_sd: float = 0.4
    planted_loading_sd: float = 0.15
    seed: int = 0

    def __post_init__(self):
        mix = dict(self.mix) if self.mix else _scaled_mix(self.p)
        if set(mix) - set(DEFAULT_MIX):
            raise DataError(f"unknown distributions in mix: {sorted(set(mix) - set(DEFAULT_MIX))}")
        mix = {k: int(mix.get(k, 0)) for k in DEFAULT_MIX}
        object.__setattr__(self, "mix", tuple(mix.items()))
        if sum(mix.values()) != self.p:
            raise DataError(f"distribution counts sum to {sum(mix.values())}, not p={self.p}")
        floors = _mix_floors()
        if any(mix[k] < v for k, v in floors.items()):
            raise DataError(
                f"mix needs >= {floors['gaussian']} gaussian, >= {floors['lognormal']} lognormal "
                f"and >= 1 discrete columns (p >= {sum(floors.values())})")
        if len(self.coefficients) != len(PLANTED):
            raise DataError(f"need {len(PLANTED)} coefficients")
        if not all(math.isfinite(c) for c in (*self.coefficients, self.interaction, self.sex_gap)):
            raise DataError("coefficients must be finite")
        if self.noise_scale is not None and not self.noise_scale > 0:
            raise DataError("noise_scale must be > 0")
        if not 0 < self.target_r2 < 1:
            raise DataError("target_r2 must lie in (0, 1)")
        if not 0 <= self.missing_rate < 0.5:
            raise DataError("missing_rate must lie in [0, 0.5)")
        if self.n < 20:
            raise DataError("n must be >= 20")

    @property
    def mix_dict(self):
        return dict(self.mix)

    def to_dict(self):
        d = asdict(self)
        d["mix"] = self.mix_dict
        d["coefficients"] = list(self.coefficients)
        return d


@dataclass
class GroundTruth:
    relevant: list
    coefficients: dict
    interaction: tuple  # (feature_a, feature_b, coefficient)
    sex_column: str
    sex_gap: float
    noise_scale: float
    noiseless_target: np.ndarray
    distributions: dict
    implausible_rows: int
    factor_strength: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "relevant": self.relevant,
            "coefficients": self.coefficients,
            "interaction": list(self.interaction),
            "sex_column": self.sex_column,
            "sex_gap": self.sex_gap,
            "noise_scale": self.noise_scale,
            "noiseless_target": self.noiseless_target.tolist(),
            "distributions": self.distributions,
            "implausible_rows": self.implausible_rows,
            "factor_strength": self.factor_strength,
        }


def _streams(seed):
    ss = np.random.SeedSequence(int(seed))
    names = ("factors", "loadings", "idio", "params", "sex", "layout", "noise", "mask")
    return {k: np.random.default_rng(s) for k, s in zip(names, ss.spawn(len(names)))}


def _standardize(x):
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 0 else 1.0)


def _marginal(z, dist, rng):
    if dist == "gaussian":
        ratio = rng.uniform(1.5, 3.5)
        sigma = rng.uniform(1.0, 20.0)
        return sigma * (ratio + z)
    if dist == "lognormal":
        s = rng.uniform(0.5, 1.0)
        mu = rng.uniform(0.0, 4.0)
        return np.exp(mu + s * z)
    if dist == "gamma":
        shape = rng.uniform(1.5, 4.0)
        scale = rng.uniform(0.5, 10.0)
        u = np.clip(special.ndtr(z), 1e-12, 1 - 1e-12)
        return stats.gamma.ppf(u, shape) * scale
    # ordinal levels 1..L, every level at least 5% likely
    L = int(rng.integers(2, 6))
    probs = 0.05 + (1 - 0.05 * L) * rng.dirichlet(np.full(L, 2.0))
    cuts = special.ndtri(np.cumsum(probs)[:-1])
    return 1.0 + np.searchsorted(cuts, z).astype(np.float64)


def _features(spec: CohortSpec):
    """Everything except noise and masking: a pure function of (spec shape, seed)."""
    rs = _streams(spec.seed)
    n = spec.n
    mix = spec.mix_dict
    F = rs["factors"].standard_normal((n, spec.factor_rank))

    planted_names = [name for _, name, _ in PLANTED]
    planted_dists = [d for _, _, d in PLANTED]
    left = dict(mix)
    left["gaussian"] -= 1  # target
    for d in planted_dists:
        left[d] -= 1
    left["discrete"] -= 1  # sex
    others = [d for d in DEFAULT_MIX for _ in range(left[d])]
    width = len(str(len(others)))
    other_names = [f"f0_m_var{k:0{width}d}" for k in range(len(others))]

    cols, dists, comm = {}, {}, {}
    for name, dist, lsd in [(nm, d, spec.planted_loading_sd) for nm, d in zip(planted_names, planted_dists)] + \
            [(nm, d, spec.loading_sd) for nm, d in zip(other_names, others)]:
        l = rs["loadings"].normal(0.0, lsd, spec.factor_rank)
        e = rs["idio"].standard_normal(n)
        z = (F @ l + e) / math.sqrt(l @ l + 1.0)
        cols[name] = _marginal(z, dist, rs["params"])
        dists[name] = dist
        comm[name] = float(l @ l / (l @ l + 1.0))
    cols[SEX] = (rs["sex"].random(n) < 0.5).astype(np.float64)
    dists[SEX] = "discrete"

    s = np.column_stack([_standardize(cols[nm]) for nm in planted_names])
    design = np.column_stack([s, s[:, 0] * s[:, 1], cols[SEX]])
    beta = np.array([*spec.coefficients, spec.interaction, spec.sex_gap])
    signal = spec.base_weight + design @ beta

    feature_order = planted_names + [SEX] + other_names
    perm = rs["layout"].permutation(len(feature_order))
    names = [feature_order[k] for k in perm]
    additive = np.delete(design, len(PLANTED), axis=1)  # the interaction is not a column
    return names, cols, dists, comm, additive, signal, rs


def _reference_r2(design, signal, noise):
    y = signal + noise
    A = np.column_stack([np.ones(design.shape[0]), design])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    yc = y - y.mean()
    return 1.0 - (r @ r) / (yc @ yc)


@functools.lru_cache(maxsize=64)
def _calibration_cache(shape_key):
    spec = CohortSpec(**dict(shape_key))
    out = []
    for s in CALIBRATION_SEEDS:
        _, _, _, _, additive, signal, rs = _features(replace(spec, seed=s, noise_scale=1.0))
        out.append((additive, signal, rs["noise"].standard_normal(spec.n)))
    return out


def _shape_key(spec):
    d = spec.to_dict()
    for k in ("seed", "noise_scale", "target_r2", "missing_rate", "mechanism"):
        d.pop(k)
    d["mix"] = tuple(sorted(d["mix"].items()))
    d["coefficients"] = tuple(d["coefficients"])
    return tuple(sorted(d.items()))


def reference_r2(spec: CohortSpec, noise_scale: float) -> float:
    """Mean in-sample R^2 of OLS on the planted columns and sex over the calibration seeds.

    The interaction enters the target but not this reference design, so it is
    signal only a nonlinear learner can pick up.
    """
    draws = _calibration_cache(_shape_key(spec))
    return float(np.mean([_reference_r2(d, s, noise_scale * e) for d, s, e in draws]))


def calibrate_noise(spec: CohortSpec, target_r2: float, tol: float = 0.02) -> float:
    """Binary search for the noise scale whose reference OLS fit reaches ``target_r2``."""
    if not 0 < target_r2 < 1:
        raise DataError("target_r2 must lie in (0, 1)")
    signal_sd = float(np.mean([s.std() for _, s, _ in _calibration_cache(_shape_key(spec))]))
    lo, hi = 0.0, max(signal_sd, 1e-12)
    while reference_r2(spec, hi) > target_r2:
        hi *= 2.0
        if hi > 1e12 * max(signal_sd, 1.0):
            raise DataError(f"target r2 {target_r2} unattainable: noise cannot push r2 low enough")
    if reference_r2(spec, 1e-12 * hi) < target_r2 - tol:
        raise DataError(f"target r2 {target_r2} unattainable: noiseless reference fit is below it")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        r2 = reference_r2(spec, mid)
        if abs(r2 - target_r2) <= 1e-4 * tol:
            return mid
        if r2 > target_r2:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def resolved_noise(spec: CohortSpec) -> float:
    if spec.noise_scale is not None:
        return float(spec.noise_scale)
    return calibrate_noise(spec, spec.target_r2)


def generate_cohort(spec: CohortSpec = CohortSpec()):
    """Return ``(DataMatrix, GroundTruth)``; the target column is ``fl_bw`` (last)."""
    names, cols, dists, comm, _, signal, rs = _features(spec)
    sigma = resolved_noise(spec)
    y = signal + sigma * rs["noise"].standard_normal(spec.n)
    values = np.column_stack([cols[nm] for nm in names] + [y])
    all_names = names + [TARGET]
    dists = {**dists, TARGET: "gaussian"}
    meta = [ColumnMeta.for_kind("discrete" if dists[c] == "discrete" else "continuous")
            for c in all_names]
    data = DataMatrix(values, None, all_names, meta)
    if spec.missing_rate > 0:
        # the target stays observed; features absorb the whole missing budget
        p = len(all_names)
        rate = spec.missing_rate * p / (p - 1)
        seed = int(rs["mask"].integers(0, 2**31 - 1))
        data, _ = mask_known_entries(data, rate, spec.mechanism, seed, columns=names)
    lo, hi = PLAUSIBLE_GRAMS
    truth = GroundTruth(
        relevant=[nm for _, nm, _ in PLANTED],
        coefficients={nm: float(b) for (_, nm, _), b in zip(PLANTED, spec.coefficients)},
        interaction=(PLANTED[0][1], PLANTED[1][1], float(spec.interaction)),
        sex_column=SEX,
        sex_gap=float(spec.sex_gap),
        noise_scale=sigma,
        noiseless_target=signal,
        distributions=dists,
        implausible_rows=int(((y < lo) | (y > hi)).sum()),
        factor_strength={"rank": spec.factor_rank, "loading_sd": spec.loading_sd,
                         "planted_loading_sd": spec.planted_loading_sd,
                         "mean_communality": float(np.mean(list(comm.values())))},
    )
    return data, truth


def true_design(data: DataMatrix, truth: GroundTruth, values=None, interaction=True):
    """``[standardised planted..., GA*PW, sex]`` built from complete values."""
    X = data.to_array() if values is None else values
    s = np.column_stack([_standardize(X[:, data.index(nm)]) for nm in truth.relevant])
    cols = [s, s[:, :1] * s[:, 1:2]] if interaction else [s]
    return np.column_stack(cols + [X[:, data.index(truth.sex_column)]])


__all__ = [
    "CohortSpec",
    "GroundTruth",
    "generate_cohort",
    "calibrate_noise",
    "reference_r2",
    "resolved_noise",
    "true_design",
    "PLANTED",
    "TARGET",
    "SEX",
]
