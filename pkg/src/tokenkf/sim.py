"""Synthetic latent streams with known ground truth.

The latent follows a Gaussian random walk, candidates add i.i.d. Gaussian
measurement noise, and optional scene transitions make every token jump by
a fixed Euclidean distance in a random direction. Frames are numbered
from 1; array index ``t - 1`` holds frame ``t``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .config import FilterConfig
from .errors import InvalidConfig, InvalidInput, ShapeError
from .filter import FilterState, StepDiagnostics, init_state, initial_diagnostics
from .noise import AttentionSummary
from .policies import UpdatePolicy

GENERATOR_VERSION = "numpy-PCG64/standard_normal/v1"
TRACE_MAGIC = "TOKENKF-TRACE 1"

# attention rows at transition frames: one token gets 1, the rest this much
_TRANSITION_ATTENTION_BACKGROUND = 1e-3


@dataclass(frozen=True)
class Transition:
    frame: int
    magnitude: float


@dataclass(frozen=True)
class StreamScenario:
    n_tokens: int = 16
    dim: int = 4
    length: int = 200
    base_process_std: float = 0.0
    measurement_std: float = 1.0
    transitions: tuple[Transition, ...] = ()
    seed: int = 0
    n_image_tokens: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "transitions",
            tuple(t if isinstance(t, Transition) else Transition(**t) for t in self.transitions),
        )
        for name in ("n_tokens", "dim", "length"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidConfig(name, f"must be a positive integer, got {v!r}")
        if isinstance(self.n_image_tokens, bool) or not isinstance(self.n_image_tokens, int) or self.n_image_tokens < 0:
            raise InvalidConfig("n_image_tokens", "must be a nonnegative integer")
        if not self.base_process_std >= 0:
            raise InvalidConfig("base_process_std", "must be nonnegative")
        if not self.measurement_std >= 0:
            raise InvalidConfig("measurement_std", "must be nonnegative")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed", "must be an unsigned 64-bit integer")
        prev = 1
        for tr in self.transitions:
            if not isinstance(tr.frame, int) or not prev < tr.frame <= self.length:
                raise InvalidConfig("transitions", f"frame {tr.frame!r} must be increasing and within [2, {self.length}]")
            if not tr.magnitude > 0:
                raise InvalidConfig("transitions", f"magnitude at frame {tr.frame} must be positive")
            prev = tr.frame


@dataclass
class StreamTrace:
    true_latents: np.ndarray
    candidates: np.ndarray
    transition_frames: list[int]
    attention: np.ndarray | None = None
    seed: int = 0
    generator: str = GENERATOR_VERSION

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.candidates.shape

    def attention_at(self, frame: int) -> AttentionSummary | None:
        if self.attention is None:
            return None
        return AttentionSummary(self.attention[frame - 1])


def generate(scenario: StreamScenario) -> StreamTrace:
    rng = np.random.Generator(np.random.PCG64(scenario.seed))
    T, N, D = scenario.length, scenario.n_tokens, scenario.dim

    start = rng.standard_normal((N, D))
    steps = np.zeros((T, N, D))
    steps[1:] = scenario.base_process_std * rng.standard_normal((T - 1, N, D))
    for tr in scenario.transitions:
        direction = rng.standard_normal((N, D))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        # a zero draw has probability zero; fall back to the first axis anyway
        direction = np.where(norms > 0, direction / np.where(norms > 0, norms, 1.0), np.eye(1, D))
        steps[tr.frame - 1] += tr.magnitude * direction
    latents = start + np.cumsum(steps, axis=0)
    candidates = latents + scenario.measurement_std * rng.standard_normal((T, N, D))

    attention = None
    if scenario.n_image_tokens:
        K = scenario.n_image_tokens
        attention = np.ones((T, N, K))
        for tr in scenario.transitions:
            focus = rng.integers(0, K, size=N)
            row = np.full((N, K), _TRANSITION_ATTENTION_BACKGROUND)
            row[np.arange(N), focus] = 1.0
            attention[tr.frame - 1] = row

    return StreamTrace(
        true_latents=latents,
        candidates=candidates,
        transition_frames=[tr.frame for tr in scenario.transitions],
        attention=attention,
        seed=scenario.seed,
    )


@dataclass
class EvaluationReport:
    rmse: np.ndarray
    cumulative_rmse: np.ndarray
    diagnostics: list[StepDiagnostics] = field(repr=False)

    def prefix_rmse(self, length: int) -> float:
        return float(self.cumulative_rmse[length - 1])


def _check_trace(trace: StreamTrace):
    if trace.true_latents.shape != trace.candidates.shape or trace.candidates.ndim != 3:
        raise ShapeError(f"latents {trace.true_latents.shape} vs candidates {trace.candidates.shape}")
    if trace.attention is not None and trace.attention.shape[:2] != trace.candidates.shape[:2]:
        raise ShapeError(f"attention {trace.attention.shape} does not match {trace.candidates.shape}")


def iter_evaluate(
    trace: StreamTrace, policy: UpdatePolicy, config: FilterConfig
) -> Iterator[tuple[FilterState, StepDiagnostics, float]]:
    """Run a policy over the trace, yielding ``(state, diagnostics, rmse)`` per frame."""
    _check_trace(trace)
    state = init_state(trace.candidates[0], config)
    yield state, initial_diagnostics(state), _rmse(state.fused, trace.true_latents[0])
    for t in range(1, trace.candidates.shape[0]):
        state, diag = policy.step(state, trace.candidates[t], trace.attention_at(t + 1))
        yield state, diag, _rmse(state.fused, trace.true_latents[t])


def _rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def cumulative_rmse(rmse: np.ndarray) -> np.ndarray:
    """Root of the running mean of per-frame MSE: entry L - 1 covers frames 1..L."""
    mse = np.asarray(rmse) ** 2
    return np.sqrt(np.cumsum(mse) / np.arange(1, len(mse) + 1))


def evaluate(trace: StreamTrace, policy: UpdatePolicy, config: FilterConfig) -> EvaluationReport:
    diags, errs = [], []
    for _, diag, err in iter_evaluate(trace, policy, config):
        diags.append(diag)
        errs.append(err)
    rmse = np.asarray(errs)
    return EvaluationReport(rmse=rmse, cumulative_rmse=cumulative_rmse(rmse), diagnostics=diags)


# -- serialization ---------------------------------------------------------


def save_trace(trace: StreamTrace, path) -> None:
    """Binary layout: magic line, one JSON header line, then little-endian
    float64 row-major arrays in header order."""
    arrays = {"true_latents": trace.true_latents, "candidates": trace.candidates}
    if trace.attention is not None:
        arrays["attention"] = trace.attention
    header = {
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "dtype": "<f8",
        "order": "C",
        "seed": trace.seed,
        "generator": trace.generator,
        "transition_frames": list(trace.transition_frames),
    }
    with open(path, "wb") as fh:
        fh.write((TRACE_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_trace(path) -> StreamTrace:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != TRACE_MAGIC:
            raise InvalidInput(f"{path}: not a trace file (magic {magic!r})")
        header = json.loads(fh.readline().decode("ascii"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise InvalidInput(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = data.reshape(shape).astype(np.float64)
    return StreamTrace(
        true_latents=arrays["true_latents"],
        candidates=arrays["candidates"],
        transition_frames=list(header["transition_frames"]),
        attention=arrays.get("attention"),
        seed=header["seed"],
        generator=header["generator"],
    )


TRACE_CSV_HEADER = ["frame", "token", "dim", "true_latent", "candidate"]


def save_trace_csv(trace: StreamTrace, path) -> None:
    """Long-format CSV, one row per (frame, token, dim); meant for small traces."""
    T, N, D = trace.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={trace.seed} generator={trace.generator} "
                 f"transitions={','.join(map(str, trace.transition_frames))}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_CSV_HEADER)
        for t in range(T):
            for i in range(N):
                for d in range(D):
                    w.writerow([t + 1, i, d, repr(float(trace.true_latents[t, i, d])),
                                repr(float(trace.candidates[t, i, d]))])


def load_trace_csv(path) -> StreamTrace:
    with open(path, newline="") as fh:
        meta_line = fh.readline()
        meta = dict(item.split("=", 1) for item in meta_line.lstrip("# ").split())
        rows = list(csv.DictReader(fh))
    T = max(int(r["frame"]) for r in rows)
    N = max(int(r["token"]) for r in rows) + 1
    D = max(int(r["dim"]) for r in rows) + 1
    latents = np.empty((T, N, D))
    cands = np.empty((T, N, D))
    for r in rows:
        idx = (int(r["frame"]) - 1, int(r["token"]), int(r["dim"]))
        latents[idx] = float(r["true_latent"])
        cands[idx] = float(r["candidate"])
    frames = [int(x) for x in meta.get("transitions", "").split(",") if x]
    return StreamTrace(latents, cands, frames, seed=int(meta["seed"]), generator=meta["generator"])


def scenario_dict(scenario: StreamScenario) -> dict:
    return asdict(scenario)
