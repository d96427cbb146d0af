"""Flow-matching training and Euler-integration inference.

Training regresses the velocity field onto the constant displacement of the
straight interpolant between each centered input cloud and its aligned
circle target, all expressed in the canonical frame of the input. Inference
transports a fresh instance with K Euler steps: the frame is computed once
from the input and reused for every step, so the integrated field is rigid-
motion and permutation equivariant.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .canon import apply_frame, canonical_frame, restore_velocity
from .coupling import CoupledPair, build_coupled_pair
from .decode import angular_sort
from .errors import MissingLabelsError, NumericalError
from .instances import Dataset, Instance, Tour, make_tour
from .model import (
    ModelConfig,
    VelocityField,
    direct_loss,
    flow_loss,
    init_params,
)

DEFAULT_EULER_STEPS = 20
TELEMETRY_HEADER = ("epoch", "loss", "lr", "wallclock_s")


def sample_interpolant(pair: CoupledPair, t: float) -> np.ndarray:
    """Point on the straight path between the pair's endpoints."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation time must be in [0, 1], got {t}")
    return (1.0 - t) * pair.x0 + t * pair.x1


def target_velocity(pair: CoupledPair) -> np.ndarray:
    """The constant-in-t displacement field x1 - x0."""
    return pair.x1 - pair.x0


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    seed: int = 0
    objective: str = "flow"  # "flow" or "direct"
    deterministic: bool = False
    float32: bool = False
    telemetry_path: str | None = None


def _prepare(dataset: Dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    """Coupled pairs in canonical coordinates, one (x0_can, x1_can) per record."""
    if not dataset.labeled:
        raise MissingLabelsError("training requires a dataset with tours on every record")
    prepared = []
    for rec in dataset.records:
        pair = build_coupled_pair(rec.instance, rec.tour)
        frame = canonical_frame(pair.x0)
        prepared.append((apply_frame(frame, pair.x0), apply_frame(frame, pair.x1)))
    return prepared


def train(config: TrainConfig, dataset: Dataset) -> tuple[VelocityField, dict]:
    """Minimize the flow-matching (or direct-regression) objective with Adam.

    Deterministic for a fixed seed when ``config.deterministic`` is set
    (single-threaded torch, all randomness from one seeded PCG64 stream).
    Returns the trained model and a summary with the telemetry history.
    """
    if config.objective not in ("flow", "direct"):
        raise ValueError(f"unknown objective {config.objective!r}")
    if config.deterministic:
        torch.set_num_threads(1)
    prepared = _prepare(dataset)
    rng = np.random.default_rng(config.seed)
    model = init_params(config.model)
    if config.float32:
        model = model.to(torch.float32)
    dtype = model.dtype

    # bucket by node count; batches never mix sizes
    by_n: dict[int, list[int]] = {}
    for i, (x0_can, _) in enumerate(prepared):
        by_n.setdefault(x0_can.shape[0], []).append(i)
    stacks = {
        n: (
            torch.as_tensor(np.stack([prepared[i][0] for i in idx]), dtype=dtype),
            torch.as_tensor(np.stack([prepared[i][1] for i in idx]), dtype=dtype),
        )
        for n, idx in sorted(by_n.items())
    }
    positions = {n: {rec: j for j, rec in enumerate(idx)} for n, idx in by_n.items()}

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs)
    history: list[tuple[int, float, float, float]] = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        batches: list[list[int]] = []
        grouped: dict[int, list[int]] = {}
        for i in order:
            n = prepared[i][0].shape[0]
            group = grouped.setdefault(n, [])
            group.append(i)
            if len(group) == config.batch_size:
                batches.append(group)
                grouped[n] = []
        batches.extend(g for _, g in sorted(grouped.items()) if g)
        epoch_se = 0.0
        epoch_samples = 0
        for batch in batches:
            n = prepared[batch[0]][0].shape[0]
            rows = torch.as_tensor([positions[n][i] for i in batch])
            x0_b, x1_b = stacks[n][0][rows], stacks[n][1][rows]
            if config.objective == "flow":
                t = torch.as_tensor(rng.random(len(batch)), dtype=dtype)
                loss = flow_loss(model, x0_b, x1_b, t)
            else:
                loss = direct_loss(model, x0_b, x1_b)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_se += float(loss.detach()) * len(batch)
            epoch_samples += len(batch)
        sched.step()
        wallclock = 0.0 if config.deterministic else time.perf_counter() - started
        history.append((epoch, epoch_se / epoch_samples, sched.get_last_lr()[0], wallclock))
    if config.telemetry_path:
        write_telemetry(config.telemetry_path, history)
    return model, {
        "epochs": config.epochs,
        "objective": config.objective,
        "initial_loss": history[0][1] if history else float("nan"),
        "final_loss": history[-1][1] if history else float("nan"),
        "history": history,
    }


def write_telemetry(path: str, history: list[tuple[int, float, float, float]]) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TELEMETRY_HEADER)
        for epoch, loss, lr, wallclock in history:
            writer.writerow([epoch, repr(loss), repr(lr), repr(wallclock)])


def integrate_field(velocity, inst: Instance, steps: int, trajectory: list | None = None) -> np.ndarray:
    """Euler-integrate an arbitrary velocity field ``velocity(t, cloud, x0)``.

    The instance is centered first; ``velocity`` works in (and returns
    velocities in) these centered input coordinates.
    """
    if steps < 1:
        raise ValueError(f"need at least one Euler step, got {steps}")
    x0 = inst.points - inst.points.mean(axis=0)
    cloud = x0.copy()
    if trajectory is not None:
        trajectory.append(cloud.copy())
    for k in range(steps):
        v = velocity(k / steps, cloud, x0)
        if not np.isfinite(v).all():
            raise NumericalError(f"non-finite velocity at Euler step {k}")
        cloud = cloud + v / steps
        if trajectory is not None:
            trajectory.append(cloud.copy())
    return cloud


def integrate(
    model: VelocityField, inst: Instance, steps: int = DEFAULT_EULER_STEPS,
    trajectory: list | None = None,
) -> np.ndarray:
    """Transport an instance with the learned field (K Euler steps).

    The canonical frame is computed once from the centered input and reused
    at every step; per step the cloud is canonicalized, the model evaluated,
    and the velocity transported back.
    """
    x0 = inst.points - inst.points.mean(axis=0)
    frame = canonical_frame(x0)
    x0_can = torch.as_tensor(apply_frame(frame, x0), dtype=model.dtype)[None]

    def field(t: float, cloud: np.ndarray, _x0: np.ndarray) -> np.ndarray:
        x_can = torch.as_tensor(apply_frame(frame, cloud), dtype=model.dtype)[None]
        with torch.no_grad():
            v_can = model(t, x_can, x0_can)[0].numpy().astype(np.float64)
        if not np.isfinite(v_can).all():
            return v_can  # integrate_field reports the offending step
        return restore_velocity(frame, v_can)

    return integrate_field(field, inst, steps, trajectory)


def predict_directions(model: VelocityField, inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Single-shot baseline outputs: per-node 2-vectors plus the frame perm."""
    x0 = inst.points - inst.points.mean(axis=0)
    frame = canonical_frame(x0)
    x0_can = torch.as_tensor(apply_frame(frame, x0), dtype=model.dtype)[None]
    with torch.no_grad():
        out = model(0.0, x0_can, x0_can)[0].numpy().astype(np.float64)
    return out, frame.perm


def direct_tour(model: VelocityField, inst: Instance) -> Tour:
    """Decode the single-shot baseline: sort nodes by predicted angle.

    Degenerate all-equal predictions (e.g. a fresh zero-initialized model)
    fall back to node-index order, which is still a valid tour.
    """
    out, perm = predict_directions(model, inst)
    angles = np.arctan2(out[:, 1], out[:, 0])
    order = perm[np.lexsort((perm, angles))]
    return make_tour(inst, order, "decoded")


def angular_baseline_tour(inst: Instance) -> Tour:
    """The zero-model ablation row: sort the raw input by polar angle."""
    return make_tour(inst, angular_sort(inst.points).order, "decoded")
