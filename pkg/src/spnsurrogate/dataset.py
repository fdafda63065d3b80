"""Simulated training data: sample coefficients, simulate, corrupt, normalize, persist.

On disk a dataset is a directory holding

    manifest.json        shapes, feature order, normalization, seeds, splits, hashes
    samples.bin          float32 little-endian records in id order; each record is
                         theta_norm (13 values) followed by X (T x d_in, row-major)
    samples_preview.csv  first three records, human readable
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .covariates import BasisDaily
from .errors import ConfigurationError, GenerationError, LoadError, NumericError, ValidationError
from .model import (PARAM_NAMES, CoefficientBounds, CoefficientVector, FixedParams, ModelConfig,
                    build_two_patch_net, human_places, make_rate_schedule, sample_coefficients)
from .petri import PetriNet, Trajectory, simulate_horizon

log = logging.getLogger(__name__)

FORMAT = "spnsurrogate-dataset/1"
DROPOUT_MODES = ("event-drop", "cell-mask")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DropoutSpec:
    p_drop: float = 0.2
    mode: str = "event-drop"

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValidationError(f"p_drop must lie in [0, 1], got {self.p_drop}")
        if self.mode not in DROPOUT_MODES:
            raise ValidationError(f"dropout mode must be one of {DROPOUT_MODES}, got {self.mode!r}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def record_rng(master_seed: int, sample_id: int, *stream: int) -> np.random.Generator:
    """Counter-based stream for one sample, independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(sample_id, *stream)))


# ---------------------------------------------------------------- corruption

def apply_event_dropout(traj: Trajectory, spec: DropoutSpec, rng: np.random.Generator,
                        net: PetriNet | None = None) -> np.ndarray:
    """Return corrupted daily states (T x n_places, int64).

    event-drop deletes each logged firing with probability ``p_drop`` and
    rebuilds the snapshots from the survivors (floored at zero); cell-mask
    carries the previous day's value forward in each (day, place) cell with
    probability ``p_drop``.
    """
    states = traj.states
    if spec.p_drop == 0.0:
        return states.copy()
    if spec.mode == "cell-mask":
        out = states.copy()
        mask = rng.random(states.shape) < spec.p_drop
        for d in range(1, out.shape[0]):
            out[d] = np.where(mask[d], out[d - 1], out[d])
        return out
    if traj.event_ids is None:
        raise ConfigurationError("event-drop needs a trajectory simulated with record_events=True")
    if net is None:
        raise ConfigurationError("event-drop needs the net to rebuild markings")
    keep = rng.random(traj.event_ids.shape[0]) >= spec.p_drop
    n_days, n_t = states.shape[0], len(net.transitions)
    day = np.minimum(np.floor(traj.event_times[keep]).astype(np.int64), n_days - 1)
    counts = np.bincount(day * n_t + traj.event_ids[keep], minlength=n_days * n_t).reshape(n_days, n_t)
    rebuilt = traj.initial[None, :] + np.cumsum(counts @ net.delta, axis=0)
    return np.maximum(rebuilt, 0)


# ---------------------------------------------------------------- normalization

def feature_scale(places: Sequence[str], fixed: FixedParams) -> np.ndarray:
    humans = set(human_places())
    return np.array([fixed.humans_per_patch if p in humans else fixed.mosquitoes_per_patch for p in places],
                    dtype=np.float64)


def normalize_features(states: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.asarray(states, dtype=np.float64) / scale


def denormalize_features(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * scale


def normalize_targets(theta_raw, bounds: CoefficientBounds = CoefficientBounds(), atol: float = 1e-12) -> np.ndarray:
    raw = np.asarray(theta_raw.values if isinstance(theta_raw, CoefficientVector) else theta_raw, dtype=np.float64)
    gains = bounds.gains()
    if np.any(raw < -atol) or np.any(raw > gains + atol):
        bad = [PARAM_NAMES[k] for k in np.flatnonzero((raw < -atol) | (raw > gains + atol))]
        raise ValidationError(f"coefficients outside [0, gain]: {bad}")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(gains > 0, raw / np.where(gains > 0, gains, 1.0), 0.0)
    return out


def denormalize_targets(theta_norm, bounds: CoefficientBounds = CoefficientBounds()) -> np.ndarray:
    return np.asarray(theta_norm, dtype=np.float64) * bounds.gains()


# ---------------------------------------------------------------- splits

def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3:
        raise ValidationError("fractions must be (train, val, test)")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValidationError(f"split fractions must lie in [0, 1], got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {sum(fractions)}")
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_dataset(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 42) -> dict[str, list[int]]:
    """Seeded shuffle of ``range(n)``, then contiguous train/val/test blocks."""
    n_train, n_val, _ = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    return {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val:]),
    }


# ---------------------------------------------------------------- generation

@dataclass
class Dataset:
    manifest: dict
    theta_norm: np.ndarray  # (N, 13) float32
    X: np.ndarray           # (N, T, d_in) float32

    def __len__(self) -> int:
        return self.X.shape[0]

    def indices(self, split: str) -> np.ndarray:
        ids = self.manifest["record_ids"]
        pos = {r: k for k, r in enumerate(ids)}
        return np.array([pos[r] for r in self.manifest["splits"][split] if r in pos], dtype=np.int64)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(name)
        return self.X[idx], self.theta_norm[idx]

    def bounds(self) -> CoefficientBounds:
        return ModelConfig.from_dict(self.manifest["config"]["model"]).bounds


def basis_digest(basis: Sequence[BasisDaily]) -> str:
    h = hashlib.sha256()
    for b in basis:
        for arr in (b.Bb, b.Bm, b.E, b.L):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


_WORKER: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER.clear()
    _WORKER.update(state)
    _WORKER["net"] = build_two_patch_net(state["config"].fixed, state["config"].incidence)


def simulate_sample(sample_id: int, config: ModelConfig, basis: Sequence[BasisDaily], dropout: DropoutSpec,
                    master_seed: int, T: int, runs: int = 1, net: PetriNet | None = None):
    """Simulate one coefficient draw; returns (theta_norm, [X per run]) as float32."""
    net = net or build_two_patch_net(config.fixed, config.incidence)
    theta = sample_coefficients(config.bounds, record_rng(master_seed, sample_id, 0))
    schedule = make_rate_schedule(theta, basis, config, T).for_net(net)
    scale = feature_scale(net.places, config.fixed)
    need_log = dropout.mode == "event-drop" and dropout.p_drop > 0
    xs = []
    for r in range(runs):
        traj = simulate_horizon(net, schedule, record_rng(master_seed, sample_id, 1, r), record_events=need_log)
        states = apply_event_dropout(traj, dropout, record_rng(master_seed, sample_id, 2, r), net)
        xs.append(normalize_features(states, scale).astype(np.float32))
    return normalize_targets(theta, config.bounds).astype(np.float32), xs


def _worker_sample(sample_id: int):
    w = _WORKER
    try:
        return sample_id, simulate_sample(sample_id, w["config"], w["basis"], w["dropout"], w["master_seed"],
                                          w["T"], w["runs"], w["net"]), None
    except NumericError as exc:
        return sample_id, None, str(exc)


def generate_dataset(n: int, config: ModelConfig, basis: Sequence[BasisDaily], dropout: DropoutSpec = DropoutSpec(),
                     master_seed: int = 42, T: int = 365, runs_per_sample: int = 1,
                     fractions: Sequence[float] = (0.8, 0.1, 0.1), workers: int = 1,
                     max_failure_rate: float = 0.01) -> Dataset:
    if runs_per_sample < 1:
        raise ValidationError("runs_per_sample must be at least 1")
    if any(len(b) < T for b in basis):
        raise ConfigurationError(f"covariates cover fewer than {T} days")
    basis = [BasisDaily(b.Bb[:T], b.Bm[:T], b.E[:T], b.L[:T]) for b in basis]
    state = {"config": config, "basis": basis, "dropout": dropout, "master_seed": master_seed, "T": T,
             "runs": runs_per_sample}
    if workers > 1 and n > 1:
        with multiprocessing.get_context("fork").Pool(workers, _init_worker, (state,)) as pool:
            results = list(pool.imap(_worker_sample, range(n), chunksize=max(1, n // (4 * workers))))
    else:
        _init_worker(state)
        results = [_worker_sample(i) for i in range(n)]

    failures = []
    thetas, xs, record_ids = [], [], []
    for sample_id, res, err in results:
        if res is None:
            log.error("sample %d failed: %s", sample_id, err)
            failures.append({"sample": sample_id, "error": err})
            continue
        th, runs = res
        for r, x in enumerate(runs):
            record_ids.append(sample_id * runs_per_sample + r)
            thetas.append(th)
            xs.append(x)
    if n and len(failures) > max_failure_rate * n:
        raise GenerationError(f"{len(failures)} of {n} samples failed (limit {max_failure_rate:.0%})")

    net = _WORKER.get("net") or build_two_patch_net(config.fixed, config.incidence)
    d_in = len(net.places)
    sample_split = split_dataset(n, fractions, master_seed)
    splits = {k: [s * runs_per_sample + r for s in v for r in range(runs_per_sample)] for k, v in sample_split.items()}
    gen_config = {
        "model": config.to_dict(),
        "T": T,
        "n": n,
        "runs_per_sample": runs_per_sample,
        "dropout": asdict(dropout),
        "master_seed": master_seed,
        "fractions": list(fractions),
        "covariates_sha256": basis_digest(basis),
    }
    manifest = {
        "format": FORMAT,
        "n_samples": n,
        "n_records": len(record_ids),
        "runs_per_sample": runs_per_sample,
        "T": T,
        "d_in": d_in,
        "d_out": len(PARAM_NAMES),
        "places": list(net.places),
        "param_names": list(PARAM_NAMES),
        "param_gains": config.bounds.gains().tolist(),
        "feature_scale": feature_scale(net.places, config.fixed).tolist(),
        "dropout": asdict(dropout),
        "master_seed": master_seed,
        "seed_derivation": "SeedSequence(master_seed, spawn_key=(sample, stream[, run]))",
        "record_ids": record_ids,
        "splits": splits,
        "failures": failures,
        "config": gen_config,
        "config_hash": sha256_text(canonical_json(gen_config)),
    }
    theta_arr = np.array(thetas, dtype=np.float32).reshape(len(record_ids), len(PARAM_NAMES))
    x_arr = np.array(xs, dtype=np.float32).reshape(len(record_ids), T, d_in)
    return Dataset(manifest, theta_arr, x_arr)


# ---------------------------------------------------------------- persistence

def _record_floats(manifest: dict) -> int:
    return manifest["d_out"] + manifest["T"] * manifest["d_in"]


def _pack(ds: Dataset) -> bytes:
    n = len(ds)
    flat = np.concatenate([ds.theta_norm.reshape(n, ds.theta_norm.shape[1]),
                           ds.X.reshape(n, ds.X.shape[1] * ds.X.shape[2])], axis=1)
    return np.ascontiguousarray(flat, dtype="<f4").tobytes()


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = _pack(ds)
    manifest = dict(ds.manifest)
    manifest.pop("manifest_sha256", None)
    manifest["record_floats"] = _record_floats(manifest)
    manifest["samples_sha256"] = hashlib.sha256(blob).hexdigest()
    manifest["manifest_sha256"] = sha256_text(canonical_json(manifest))
    (path / "samples.bin").write_bytes(blob)
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_preview(ds, path / "samples_preview.csv")
    ds.manifest = manifest
    return path


def _write_preview(ds: Dataset, path: Path, count: int = 3) -> None:
    places = ds.manifest["places"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "day", *places, *(f"{p}_norm" for p in PARAM_NAMES)])
        for k in range(min(count, len(ds))):
            theta = [repr(float(v)) for v in ds.theta_norm[k]]
            for d in range(ds.X.shape[1]):
                w.writerow([ds.manifest["record_ids"][k], d + 1, *(repr(float(v)) for v in ds.X[k, d]), *theta])


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        text = (path / "manifest.json").read_text()
        manifest = json.loads(text)
    except FileNotFoundError:
        raise LoadError(f"{path} has no manifest.json") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"manifest.json is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise LoadError("manifest.json has an unknown format tag")
    body = {k: v for k, v in manifest.items() if k != "manifest_sha256"}
    if sha256_text(canonical_json(body)) != manifest.get("manifest_sha256"):
        raise LoadError("manifest checksum mismatch")
    if sha256_text(canonical_json(manifest["config"])) != manifest.get("config_hash"):
        raise LoadError("config hash mismatch")
    blob = (path / "samples.bin").read_bytes()
    n = manifest["n_records"]
    rec = manifest["record_floats"]
    if len(blob) != n * rec * 4:
        raise LoadError(f"samples.bin has {len(blob)} bytes, expected {n * rec * 4}")
    if hashlib.sha256(blob).hexdigest() != manifest["samples_sha256"]:
        raise LoadError("samples.bin checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f4").reshape(n, rec).astype(np.float32)
    d_out = manifest["d_out"]
    theta = flat[:, :d_out].copy()
    X = flat[:, d_out:].reshape(n, manifest["T"], manifest["d_in"]).copy()
    return Dataset(manifest, theta, X)
