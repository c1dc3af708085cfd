"""Residual training of the radiance model and the adaptive per-face LOD controller.

For a surface point x and outgoing direction omega_o the residual is

    r = L(x, omega_o) - L_e(x) - albedo(x) * mean_k L(x'_k, -omega_k)

with omega_k cosine-distributed about the face normal and x'_k the nearest
hit along omega_k (rays that escape see the environment radiance). Points
are drawn face by face from a mix of area and feature-site probabilities,
omega_o uniformly over the hemisphere; the batch loss averages
``|r|^2 / (pdf_area * pdf_omega)``, an unbiased estimate of the squared
residual integrated over surface and directions.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from typing import Any

import numpy as np

from .config import TrainConfig
from .encoders.vertex import VertexFeatureEncoder, sites
from .errors import ValidationError
from .geometry import (
    UNIFORM_HEMISPHERE_PDF,
    HitBatch,
    TriangleMesh,
    cosine_sample_hemisphere,
    intersect_batch,
    offset_origins,
    sample_points_in_triangle,
    uniform_sample_hemisphere,
)
from .log import get_logger
from .model import RadianceField, RadianceModel, factored_radiance
from .optim import Adam, lod_update_steps, schedule_M
from .scene import Scene

_log = get_logger("trainer")

LOD_GATE_SIGMAS = 2.0


@dataclasses.dataclass
class FaceDistribution:
    alpha: float
    probabilities: np.ndarray
    cdf: np.ndarray

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        draws = rng.random(n) * self.cdf[-1]
        faces = np.searchsorted(self.cdf, draws, side="right")
        return np.minimum(faces, len(self.cdf) - 1)


def build_face_distribution(mesh: TriangleMesh, store: Any = None,
                            alpha: float = 0.5) -> FaceDistribution:
    """p(i) = alpha * A(i)/A_total + (1 - alpha) * N(i)/N_total.

    N(i) counts the feature sites of face i at its current LOD; encoders
    without LOD count every face as 3.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    area = mesh.face_area
    if not mesh.total_area > 0.0:
        raise ValidationError("mesh has zero total area")
    face_lod = getattr(store, "face_lod", None)
    if face_lod is None:
        face_lod = np.ones(mesh.n_faces, dtype=np.int64)
    n_sites = sites(np.asarray(face_lod, dtype=np.int64)).astype(np.float64)
    p = alpha * area / area.sum() + (1.0 - alpha) * n_sites / n_sites.sum()
    return FaceDistribution(alpha=alpha, probabilities=p, cdf=np.cumsum(p))


@dataclasses.dataclass
class SurfaceSample:
    """A batch of surface points with their area-measure pdf."""

    faces: np.ndarray
    u: np.ndarray
    v: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    emission: np.ndarray
    pdf: np.ndarray

    def __len__(self) -> int:
        return len(self.faces)


def sample_surface(dist: FaceDistribution, scene: Scene, rng: np.random.Generator,
                   n: int = 1) -> SurfaceSample:
    mesh = scene.mesh
    faces = dist.sample(rng, n)
    u, v = sample_points_in_triangle(rng, n)
    return SurfaceSample(
        faces=faces,
        u=u,
        v=v,
        positions=mesh.point_at(faces, u, v),
        normals=np.array(mesh.face_normal[faces]),
        albedo=scene.face_albedo[faces],
        emission=scene.face_emission[faces],
        pdf=dist.probabilities[faces] / mesh.face_area[faces],
    )


@dataclasses.dataclass
class TrainingBatch:
    samples: SurfaceSample
    omega_o: np.ndarray
    M: int
    rhs_directions: np.ndarray  # (n * M, 3), rows b*M .. b*M + M - 1 belong to sample b
    rhs_hits: HitBatch


def intersect_rays(scene: Scene, origins: np.ndarray, directions: np.ndarray,
                   workers: int = 1) -> HitBatch:
    """Nearest hits, traced in ``workers`` contiguous chunks on a thread pool.

    A ray's hit does not depend on its chunk, so the result is identical for
    any worker count.
    """
    bvh = scene.bvh
    if workers <= 1 or len(origins) < 2 * workers:
        return intersect_batch(bvh, origins, directions)
    chunks = np.array_split(np.arange(len(origins)), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda idx: intersect_batch(bvh, origins[idx], directions[idx]),
                              chunks))
    return HitBatch(
        face=np.concatenate([p.face for p in parts]),
        t=np.concatenate([p.t for p in parts]),
        u=np.concatenate([p.u for p in parts]),
        v=np.concatenate([p.v for p in parts]),
        normal=np.concatenate([p.normal for p in parts]),
    )


def trace_rhs(scene: Scene, samples: SurfaceSample, M: int, rng: np.random.Generator,
              workers: int = 1) -> tuple[np.ndarray, HitBatch]:
    """Cosine-sample M reflected directions per sample and find what they hit."""
    normals = np.repeat(samples.normals, M, axis=0)
    directions = cosine_sample_hemisphere(rng, normals)
    origins = offset_origins(np.repeat(samples.positions, M, axis=0), normals, directions)
    return directions, intersect_rays(scene, origins, directions, workers)


def draw_batch(scene: Scene, dist: FaceDistribution, rng: np.random.Generator,
               batch_size: int, M: int, workers: int = 1) -> TrainingBatch:
    samples = sample_surface(dist, scene, rng, batch_size)
    omega_o = uniform_sample_hemisphere(rng, samples.normals)
    directions, hits = trace_rhs(scene, samples, M, rng, workers)
    return TrainingBatch(samples=samples, omega_o=omega_o, M=M, rhs_directions=directions,
                         rhs_hits=hits)


def incoming_radiance(scene: Scene, field: RadianceField, directions: np.ndarray,
                      hits: HitBatch) -> np.ndarray:
    """Radiance arriving back along each RHS ray."""
    out = np.tile(np.asarray(scene.environment, dtype=np.float64), (len(hits), 1))
    hit = hits.valid
    if np.any(hit):
        out[hit] = field.radiance(hits.face[hit], hits.u[hit], hits.v[hit], -directions[hit])
    return out


def estimate_residual(scene: Scene, field: RadianceField, samples: SurfaceSample,
                      omega_o: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo rendering-equation residual per sample, shape (n, 3)."""
    if M < 1:
        raise ValidationError(f"M must be >= 1, got {M}")
    omega_o = np.atleast_2d(omega_o)
    directions, hits = trace_rhs(scene, samples, M, rng)
    incoming = incoming_radiance(scene, field, directions, hits)
    lhs = field.radiance(samples.faces, samples.u, samples.v, omega_o)
    rhs = samples.emission + samples.albedo * incoming.reshape(len(samples), M, 3).mean(axis=1)
    return lhs - rhs


def weighted_residual_loss(scene: Scene, field: RadianceField, dist: FaceDistribution,
                           rng: np.random.Generator, n: int, M: int) -> np.ndarray:
    """Per-sample loss terms |r|^2 / (pdf_area * pdf_omega) for a frozen field."""
    samples = sample_surface(dist, scene, rng, n)
    omega_o = uniform_sample_hemisphere(rng, samples.normals)
    r = estimate_residual(scene, field, samples, omega_o, M, rng)
    return (r * r).sum(axis=1) / (samples.pdf * UNIFORM_HEMISPHERE_PDF)


class FaceLossStats:
    """Per-face sum of |r|^2 and sample count since the last reset."""

    def __init__(self, n_faces: int) -> None:
        self.loss_sum = np.zeros(n_faces)
        self.count = np.zeros(n_faces, dtype=np.int64)

    def record(self, faces: np.ndarray, squared_residual: np.ndarray) -> None:
        n = len(self.count)
        self.loss_sum += np.bincount(faces, weights=squared_residual, minlength=n)
        self.count += np.bincount(faces, minlength=n)

    def mean(self) -> np.ndarray:
        """L(i) per face; NaN where the face has no samples."""
        out = np.full(len(self.count), np.nan)
        seen = self.count > 0
        out[seen] = self.loss_sum[seen] / self.count[seen]
        return out

    def population(self) -> tuple[float, float, int]:
        """(mean, population std, faces) of L(i) over sampled faces."""
        seen = self.count > 0
        if not np.any(seen):
            return math.nan, math.nan, 0
        values = self.mean()[seen]
        return float(values.mean()), float(values.std()), int(seen.sum())

    def reset(self) -> None:
        self.loss_sum.fill(0.0)
        self.count.fill(0)


@dataclasses.dataclass
class LodReport:
    step: int
    refined: dict[int, tuple[int, int]]
    loss_mean: float
    loss_std: float
    virtual_vertices: int
    cap: float
    cap_reached: bool = False
    skipped: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "refined": {str(f): list(ks) for f, ks in self.refined.items()},
            "loss_mean": self.loss_mean,
            "loss_std": self.loss_std,
            "virtual_vertices": self.virtual_vertices,
            "cap": self.cap,
            "cap_reached": self.cap_reached,
            "skipped": self.skipped,
        }


def update_lod(stats: FaceLossStats, store: VertexFeatureEncoder, cap: float,
               step: int = 0) -> LodReport:
    """Raise the LOD of faces whose mean loss is far above the population.

    A face with L(i) > mean + 2 std gets k += floor((L(i) - mean) / std).
    Faces are handled in descending L(i) until the next refinement would
    push the virtual vertex total over cap * (vertex count). Stats are
    reset after a successful pass.
    """
    budget = cap * store.mesh.n_vertices
    mean, std, n_seen = stats.population()
    report = LodReport(step=step, refined={}, loss_mean=mean, loss_std=std,
                       virtual_vertices=store.virtual_vertex_count(), cap=budget)
    if n_seen < 2:
        report.skipped = "fewer than two faces have samples"
        return report
    if not std > 0.0:
        report.skipped = "loss spread is zero"
        return report

    losses = stats.mean()
    candidates = np.flatnonzero((stats.count > 0) & (losses > mean + LOD_GATE_SIGMAS * std))
    order = candidates[np.argsort(-losses[candidates], kind="stable")]
    used = store.virtual_vertex_count()
    for face in order:
        old_k = int(store.face_lod[face])
        new_k = old_k + math.floor((losses[face] - mean) / std)
        added = sites(new_k) - (sites(old_k) if old_k > 1 else 0)
        if used + added > budget:
            report.cap_reached = True
            _log.warning("virtual vertex cap %.0f reached, %d faces left unrefined", budget,
                         len(order) - len(report.refined))
            break
        store.refine_face(int(face), new_k)
        used += added
        report.refined[int(face)] = (old_k, new_k)

    report.virtual_vertices = used
    stats.reset()
    return report


@dataclasses.dataclass
class BatchResult:
    loss: float
    squared_residual: np.ndarray
    finite: bool


@dataclasses.dataclass
class StepReport:
    step: int
    loss: float
    M: int
    lr: float
    params: int
    skipped: bool = False


class Trainer:
    """Owns the model, optimizer, face statistics and sampling state of one run."""

    def __init__(self, scene: Scene, config: TrainConfig,
                 model: RadianceModel | None = None) -> None:
        self.scene = scene
        self.config = config
        self.model = model if model is not None else RadianceModel.from_config(scene, config)
        self.optimizer = Adam(config.total_steps, config.learning_rate, config.lr_decay)
        # training draws use their own stream, independent of parameter init
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        self.stats = FaceLossStats(scene.mesh.n_faces)
        self.distribution = build_face_distribution(scene.mesh, self.model.encoder, config.alpha)
        # deterministic runs trace on one thread
        self.workers = 1 if config.deterministic else config.workers
        self.step = 0
        self.lod_reports: list[LodReport] = []
        has_lod = isinstance(self.model.encoder, VertexFeatureEncoder)
        self.lod_steps = (
            lod_update_steps(config.total_steps, config.lod_updates)
            if config.adaptive_lod and has_lod
            else []
        )

    def batch_loss(self, batch: TrainingBatch, backward: bool = True) -> BatchResult:
        """Loss of a drawn batch; with ``backward`` the gradients are accumulated."""
        cfg = self.config
        scene = self.scene
        s = batch.samples
        n, M = len(s), batch.M
        hits = batch.rhs_hits
        hit = hits.valid

        hit_faces = hits.face[hit]
        query = self.model.query(s.faces, s.u, s.v).concat(
            self.model.query(hit_faces, hits.u[hit], hits.v[hit])
        )
        directions = np.concatenate([batch.omega_o, -batch.rhs_directions[hit]])
        net, cache = self.model.evaluate(query, directions)

        lhs = s.emission + s.albedo * net[:n]
        incoming = np.tile(np.asarray(scene.environment, dtype=np.float64), (n * M, 1))
        incoming[hit] = factored_radiance(scene, hit_faces, net[n:])
        rhs = s.emission + s.albedo * incoming.reshape(n, M, 3).mean(axis=1)
        r = lhs - rhs
        squared = (r * r).sum(axis=1)

        weight = 1.0 / (s.pdf * UNIFORM_HEMISPHERE_PDF)
        if cfg.relative_loss:
            weight = weight / ((lhs * lhs).sum(axis=1) + cfg.relative_loss_eps)
        loss = float(np.mean(squared * weight))
        finite = math.isfinite(loss)

        if backward and finite:
            dr = 2.0 * r * (weight / n)[:, None]
            upstream = np.zeros_like(net)
            upstream[:n] = s.albedo * dr
            if not cfg.detach_rhs:
                per_ray = np.repeat(-s.albedo * dr / M, M, axis=0)[hit]
                upstream[n:] = per_ray * scene.face_albedo[hit_faces]
            self.model.backward(cache, upstream)
        return BatchResult(loss=loss, squared_residual=squared, finite=finite)

    def train_step(self) -> StepReport:
        cfg = self.config
        M = schedule_M(min(self.step, cfg.total_steps - 1), cfg.total_steps, cfg.m0)
        lr = self.optimizer.lr
        batch = draw_batch(self.scene, self.distribution, self.rng, cfg.batch_size, M,
                           self.workers)

        self.model.zero_grad()
        result = self.batch_loss(batch)
        skipped = not result.finite
        if skipped:
            self.optimizer.skip()
            _log.warning("non-finite loss at step %d, step skipped", self.step)
        else:
            self.stats.record(batch.samples.faces, result.squared_residual)
            skipped = not self.optimizer.step(self.model.params(), self.model.grads())
        self.step += 1

        if self.step in self.lod_steps:
            self.update_lod()
        return StepReport(step=self.step, loss=result.loss, M=M, lr=lr,
                          params=self.model.param_count(), skipped=skipped)

    def update_lod(self) -> LodReport:
        encoder = self.model.encoder
        if not isinstance(encoder, VertexFeatureEncoder):
            raise ValidationError(f"encoder {encoder.name!r} has no level of detail")
        report = update_lod(self.stats, encoder, self.config.lod_cap_ratio, step=self.step)
        self.distribution = build_face_distribution(self.scene.mesh, encoder, self.config.alpha)
        self.lod_reports.append(report)
        _log.info(
            "step %d: LOD update refined %d faces, %d virtual vertices (cap %.0f)",
            self.step, len(report.refined), report.virtual_vertices, report.cap,
        )
        return report

    def run(self, on_step: Callable[[StepReport], None] | None = None) -> list[StepReport]:
        reports = []
        interval = self.config.log_interval
        while self.step < self.config.total_steps:
            report = self.train_step()
            reports.append(report)
            if on_step is not None:
                on_step(report)
            if report.step % interval == 0 or report.step == self.config.total_steps:
                _log.info("step %d/%d loss %.6g M %d lr %.3g params %d", report.step,
                          self.config.total_steps, report.loss, report.M, report.lr, report.params)
        return reports
