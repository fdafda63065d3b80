"""Two-patch host-vector Petri net and its covariate-driven daily rates.

Thirteen latent coefficients are estimated:

    lambda_1..3   within-patch mosquito-to-human transmission  (beta_MH_ii)
    gamma_1..3    within-patch human-to-mosquito transmission  (beta_HM_ii)
    delta_1..3    between-patch mosquito-to-human transmission (beta_MH_ij)
    eta_1..3      between-patch human-to-mosquito transmission (beta_HM_ij)
    rho_1         mosquito mortality                           (mu_M)

Each transmission rate is ``c0 + c1*Bb + c2*L + c3*Bb*L`` with the intercept
``c0`` fixed at the family minimum; mortality is ``rho_0 + rho_1*E``.
Coefficients are drawn on ``[0, gain]`` with gain = family max - min and
every emitted rate is clamped to its family range.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .covariates import BasisDaily, BasisParams, MigrationKernelParams, kernel_value, patch_gap_miles
from .errors import ConfigurationError, ValidationError
from .petri import Hazard, PetriNet, TransitionSpec

PARAM_NAMES = (
    "lambda_1", "lambda_2", "lambda_3",
    "gamma_1", "gamma_2", "gamma_3",
    "delta_1", "delta_2", "delta_3",
    "eta_1", "eta_2", "eta_3",
    "rho_1",
)
PARAM_FAMILY = ("MH",) * 3 + ("HM",) * 3 + ("MH",) * 3 + ("HM",) * 3 + ("mu",)
PATCHES = (1, 2)
HUMAN_STATES = ("S_H", "I_H", "R_H", "D_H")
MOSQUITO_STATES = ("S_M", "I_M", "D_M")


@dataclass(frozen=True)
class RateRange:
    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise ConfigurationError(f"rate range [{self.lo}, {self.hi}] is empty")

    @property
    def gain(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class CoefficientBounds:
    MH: RateRange = RateRange(0.01, 0.80)
    HM: RateRange = RateRange(0.072, 0.64)
    mu: RateRange = RateRange(0.05, 0.33)

    def family(self, name: str) -> RateRange:
        return getattr(self, name)

    def gains(self) -> np.ndarray:
        return np.array([self.family(f).gain for f in PARAM_FAMILY])

    def intercepts(self) -> dict[str, float]:
        return {"lambda_0": self.MH.lo, "delta_0": self.MH.lo, "gamma_0": self.HM.lo,
                "eta_0": self.HM.lo, "rho_0": self.mu.lo}


@dataclass(frozen=True)
class CoefficientVector:
    values: np.ndarray
    bounds: CoefficientBounds = CoefficientBounds()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.shape != (len(PARAM_NAMES),):
            raise ValidationError(f"expected {len(PARAM_NAMES)} coefficients, got {v.shape[0]}")
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[PARAM_NAMES.index(name)])

    def triple(self, prefix: str) -> tuple[float, float, float]:
        return tuple(self[f"{prefix}_{k}"] for k in (1, 2, 3))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, map(float, self.values)))


@dataclass(frozen=True)
class FixedParams:
    sigma: float = 0.10
    mu_H: float = 0.01
    phi_S: float = 3.51e-4
    phi_I: float = 3.50e-4
    phi_R: float = 3.49e-4
    S_H: int = 4000
    I_H: int = 20
    R_H: int = 20
    S_M: int = 2000
    I_M: int = 10
    # constant-rate debug mode only; the functional pipeline replaces these every day
    beta_MH_ii: float = 0.30
    beta_HM_ii: float = 0.40
    beta_MH_ij: float = 0.20
    beta_HM_ij: float = 0.25
    mu_M: float = 0.02
    alpha_S: float = 3.40e-4
    alpha_I: float = 3.40e-4

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigurationError(f"FixedParams.{k} must be non-negative")

    @property
    def humans_per_patch(self) -> int:
        return self.S_H + self.I_H + self.R_H

    @property
    def mosquitoes_per_patch(self) -> int:
        return self.S_M + self.I_M


@dataclass(frozen=True)
class ModelConfig:
    fixed: FixedParams = FixedParams()
    bounds: CoefficientBounds = CoefficientBounds()
    basis: BasisParams = BasisParams()
    kernel: MigrationKernelParams = MigrationKernelParams()
    incidence: str = "frequency"

    def __post_init__(self):
        if self.incidence not in ("frequency", "mass_action"):
            raise ConfigurationError(f"incidence must be 'frequency' or 'mass_action', got {self.incidence!r}")

    def to_dict(self) -> dict:
        return {
            "fixed": asdict(self.fixed),
            "bounds": {f: [self.bounds.family(f).lo, self.bounds.family(f).hi] for f in ("MH", "HM", "mu")},
            "basis": asdict(self.basis),
            "kernel": {
                "c_S": self.kernel.c_S, "c_I": self.kernel.c_I, "cutoff_miles": self.kernel.cutoff_miles,
                "patch_points": [[list(p) for p in pts] for pts in self.kernel.patch_points],
            },
            "incidence": self.incidence,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        d = d or {}
        kernel = dict(d.get("kernel", {}))
        if "patch_points" in kernel:
            kernel["patch_points"] = tuple(tuple(tuple(p) for p in pts) for pts in kernel["patch_points"])
        bounds = {f: RateRange(*v) for f, v in d.get("bounds", {}).items()}
        return cls(
            fixed=FixedParams(**d.get("fixed", {})),
            bounds=CoefficientBounds(**bounds),
            basis=BasisParams(**d.get("basis", {})),
            kernel=MigrationKernelParams(**kernel),
            incidence=d.get("incidence", "frequency"),
        )

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- coefficients

def sample_coefficients(bounds: CoefficientBounds, rng: np.random.Generator) -> CoefficientVector:
    return CoefficientVector(rng.uniform(0.0, 1.0, len(PARAM_NAMES)) * bounds.gains(), bounds)


def _linear_rate(c0, c, Bb, L, rng_: RateRange):
    c1, c2, c3 = c
    return np.clip(c0 + c1 * Bb + c2 * L + c3 * (Bb * L), rng_.lo, rng_.hi)


def compute_transmission_rates(theta: CoefficientVector, Bb_i, L_i, Bb_j, L_j) -> dict[str, np.ndarray]:
    """Rates for target patch i; between-patch rates use the other patch j's covariates."""
    b = theta.bounds
    return {
        "beta_MH_ii": _linear_rate(b.MH.lo, theta.triple("lambda"), Bb_i, L_i, b.MH),
        "beta_HM_ii": _linear_rate(b.HM.lo, theta.triple("gamma"), Bb_i, L_i, b.HM),
        "beta_MH_ij": _linear_rate(b.MH.lo, theta.triple("delta"), Bb_j, L_j, b.MH),
        "beta_HM_ij": _linear_rate(b.HM.lo, theta.triple("eta"), Bb_j, L_j, b.HM),
    }


def compute_mortality_rate(theta: CoefficientVector, E):
    b = theta.bounds.mu
    return np.clip(b.lo + theta["rho_1"] * E, b.lo, b.hi)


def compute_migration_rates(kernel: MigrationKernelParams, Bm, L, gap_miles: float = 0.0):
    """Susceptible and infected mosquito migration rates out of the source patch."""
    drive = Bm * L
    return (kernel_value(gap_miles, kernel.c_S, kernel.cutoff_miles) * drive,
            kernel_value(gap_miles, kernel.c_I, kernel.cutoff_miles) * drive)


# ---------------------------------------------------------------- net

def place_names() -> tuple[str, ...]:
    return tuple(f"{s}_{p}" for p in PATCHES for s in HUMAN_STATES + MOSQUITO_STATES)


def human_places(patch: int | None = None) -> tuple[str, ...]:
    pats = PATCHES if patch is None else (patch,)
    return tuple(f"{s}_{p}" for p in pats for s in HUMAN_STATES)


def mosquito_places(patch: int | None = None) -> tuple[str, ...]:
    pats = PATCHES if patch is None else (patch,)
    return tuple(f"{s}_{p}" for p in pats for s in MOSQUITO_STATES)


def build_two_patch_net(fixed: FixedParams = FixedParams(), incidence: str = "frequency") -> PetriNet:
    transitions = []
    for i in PATCHES:
        j = 3 - i
        living_i = (f"S_H_{i}", f"I_H_{i}", f"R_H_{i}")
        living_j = (f"S_H_{j}", f"I_H_{j}", f"R_H_{j}")
        norm_i = living_i if incidence == "frequency" else ()
        norm_j = living_j if incidence == "frequency" else ()

        def tr(tid, src, dst, hz, read=None):
            ins, outs = {src: 1}, {dst: 1}
            if read is not None:
                # double arc: the catalysing place must hold a token and keeps it
                ins[read] = ins.get(read, 0) + 1
                outs[read] = outs.get(read, 0) + 1
            transitions.append(TransitionSpec(tid, ins, outs, hz))

        tr(f"infect_H_within_{i}", f"S_H_{i}", f"I_H_{i}",
           Hazard("bilinear", f"beta_MH_{i}{i}", (f"S_H_{i}", f"I_M_{i}"), norm_i), read=f"I_M_{i}")
        tr(f"infect_H_between_{i}", f"S_H_{i}", f"I_H_{i}",
           Hazard("bilinear", f"beta_MH_{i}{j}", (f"S_H_{i}", f"I_M_{j}"), norm_i), read=f"I_M_{j}")
        tr(f"infect_M_within_{i}", f"S_M_{i}", f"I_M_{i}",
           Hazard("bilinear", f"beta_HM_{i}{i}", (f"S_M_{i}", f"I_H_{i}"), norm_i), read=f"I_H_{i}")
        tr(f"infect_M_between_{i}", f"S_M_{i}", f"I_M_{i}",
           Hazard("bilinear", f"beta_HM_{i}{j}", (f"S_M_{i}", f"I_H_{j}"), norm_j), read=f"I_H_{j}")
        tr(f"recover_{i}", f"I_H_{i}", f"R_H_{i}", Hazard("per_capita", "sigma", (f"I_H_{i}",)))
        for s in ("S", "I", "R"):
            tr(f"death_{s}_H_{i}", f"{s}_H_{i}", f"D_H_{i}", Hazard("per_capita", "mu_H", (f"{s}_H_{i}",)))
        for s in ("S", "I"):
            tr(f"death_{s}_M_{i}", f"{s}_M_{i}", f"D_M_{i}", Hazard("per_capita", f"mu_M_{i}", (f"{s}_M_{i}",)))
        for s in ("S", "I", "R"):
            tr(f"migrate_{s}_H_{i}{j}", f"{s}_H_{i}", f"{s}_H_{j}", Hazard("per_capita", f"phi_{s}", (f"{s}_H_{i}",)))
        for s in ("S", "I"):
            tr(f"migrate_{s}_M_{i}{j}", f"{s}_M_{i}", f"{s}_M_{j}",
               Hazard("per_capita", f"alpha_{s}_{i}{j}", (f"{s}_M_{i}",)))

    initial = {}
    for p in PATCHES:
        initial.update({f"S_H_{p}": fixed.S_H, f"I_H_{p}": fixed.I_H, f"R_H_{p}": fixed.R_H, f"D_H_{p}": 0,
                        f"S_M_{p}": fixed.S_M, f"I_M_{p}": fixed.I_M, f"D_M_{p}": 0})
    return PetriNet(place_names(), tuple(transitions), initial)


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class RateSchedule:
    """Daily rate table: ``values[d, k]`` is rate ``names[k]`` on day ``d + 1``."""

    names: tuple[str, ...]
    values: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: k for k, n in enumerate(self.names)})

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self) -> Iterator[dict[str, float]]:
        return (self.day(d) for d in range(len(self)))

    def __getitem__(self, d: int) -> dict[str, float]:
        return self.day(d)

    def day(self, d: int) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values[d])))

    def series(self, name: str) -> np.ndarray:
        return self.values[:, self._index[name]]

    def for_net(self, net: PetriNet) -> np.ndarray:
        """Per-transition rate array of shape (T, n_transitions) for ``simulate_horizon``."""
        try:
            cols = [self._index[t.hazard.rate] for t in net.transitions]
        except KeyError as exc:
            raise ConfigurationError(f"schedule has no rate {exc.args[0]!r}") from None
        return np.ascontiguousarray(self.values[:, cols])


def make_rate_schedule(theta: CoefficientVector, basis: Sequence[BasisDaily], config: ModelConfig = ModelConfig(),
                       T: int | None = None) -> RateSchedule:
    if len(basis) != 2:
        raise ConfigurationError("two-patch model needs basis series for exactly two patches")
    T = len(basis[0]) if T is None else T
    if any(len(b) < T for b in basis):
        raise ConfigurationError(f"basis series shorter than horizon {T}")
    b = [BasisDaily(x.Bb[:T], x.Bm[:T], x.E[:T], x.L[:T]) for x in basis]
    gap = patch_gap_miles(*config.kernel.patch_points[:2])
    fx = config.fixed
    cols: dict[str, np.ndarray] = {}
    for i in PATCHES:
        j = 3 - i
        bi, bj = b[i - 1], b[j - 1]
        tx = compute_transmission_rates(theta, bi.Bb, bi.L, bj.Bb, bj.L)
        cols[f"beta_MH_{i}{i}"] = tx["beta_MH_ii"]
        cols[f"beta_HM_{i}{i}"] = tx["beta_HM_ii"]
        cols[f"beta_MH_{i}{j}"] = tx["beta_MH_ij"]
        cols[f"beta_HM_{i}{j}"] = tx["beta_HM_ij"]
        cols[f"mu_M_{i}"] = compute_mortality_rate(theta, bi.E)
        a_s, a_i = compute_migration_rates(config.kernel, bi.Bm, bi.L, gap)
        cols[f"alpha_S_{i}{j}"] = a_s
        cols[f"alpha_I_{i}{j}"] = a_i
    for name in ("sigma", "mu_H", "phi_S", "phi_I", "phi_R"):
        cols[name] = np.full(T, getattr(fx, name))
    names = tuple(sorted(cols))
    return RateSchedule(names, np.column_stack([np.broadcast_to(cols[n], (T,)) for n in names]).astype(np.float64))


def constant_rate_schedule(fixed: FixedParams, T: int) -> RateSchedule:
    """Table-value rates held constant every day (debugging without covariates)."""
    day = {"sigma": fixed.sigma, "mu_H": fixed.mu_H, "phi_S": fixed.phi_S, "phi_I": fixed.phi_I,
           "phi_R": fixed.phi_R}
    for i in PATCHES:
        j = 3 - i
        day.update({f"beta_MH_{i}{i}": fixed.beta_MH_ii, f"beta_HM_{i}{i}": fixed.beta_HM_ii,
                    f"beta_MH_{i}{j}": fixed.beta_MH_ij, f"beta_HM_{i}{j}": fixed.beta_HM_ij,
                    f"mu_M_{i}": fixed.mu_M, f"alpha_S_{i}{j}": fixed.alpha_S, f"alpha_I_{i}{j}": fixed.alpha_I})
    names = tuple(sorted(day))
    return RateSchedule(names, np.tile(np.array([day[n] for n in names]), (T, 1)))

