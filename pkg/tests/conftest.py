"""Shared fixtures.

The expensive one is ``trained_toy``: the bundled training recipe (resolved
from config defaults) run once per session, roughly half a minute of CPU.
Tests that only need a checkpoint file use ``toy_checkpoint``, which saves
the same model rather than retraining.
"""

import time
from typing import NamedTuple

import numpy as np
import pytest

from autv import fixtures
from autv.backends import ToyDenoiser, TrainingLog, save_toy_denoiser, train_toy_denoiser
from autv.conditioning import HashEmbedder
from autv.config import PipelineConfig, load_config
from autv.diffusion import DiffusionSchedule, build_schedule


@pytest.fixture(scope="session")
def default_cfg() -> PipelineConfig:
    # env={} keeps stray AUTV_* variables in the caller's shell out of tests
    return load_config(env={})


@pytest.fixture(scope="session")
def schedule(default_cfg) -> DiffusionSchedule:
    s = default_cfg.schedule
    return build_schedule(s.num_steps, s.beta_start, s.beta_end, kind=s.kind)


@pytest.fixture(scope="session")
def toy_schedule() -> DiffusionSchedule:
    # betas [0.1, 0.2] -> alpha_bars [0.9, 0.72]; small enough to hand-check
    return build_schedule(2, 0.1, 0.2)


class TrainedToy(NamedTuple):
    model: ToyDenoiser
    log: TrainingLog
    train_seconds: float


def run_bundled_recipe(cfg: PipelineConfig, schedule: DiffusionSchedule) -> TrainedToy:
    """Train exactly what ``autv train-toy`` trains with this config."""
    be = cfg.backend
    model = ToyDenoiser(
        latent_channels=3,
        hidden_channels=be.hidden_channels,
        max_instances=be.max_instances,
        prompt_dim=be.prompt_dim,
        num_train_steps=cfg.schedule.num_steps,
        seed=cfg.seed,
    )
    batch_fn = fixtures.default_training_batch(
        frame_shape=(be.train_frame_size, be.train_frame_size),
        max_instances=be.max_instances,
        embedder=HashEmbedder(dim=be.prompt_dim),
    )
    start = time.perf_counter()
    log = train_toy_denoiser(
        model,
        schedule,
        batch_fn,
        num_steps=be.train_steps,
        batch_size=be.batch_size,
        learning_rate=be.learning_rate,
        seed=cfg.seed,
        latent_gain_budget=be.latent_gain_budget,
    )
    return TrainedToy(model=model, log=log, train_seconds=time.perf_counter() - start)


@pytest.fixture(scope="session")
def trained_toy(default_cfg, schedule) -> TrainedToy:
    return run_bundled_recipe(default_cfg, schedule)


@pytest.fixture(scope="session")
def toy_checkpoint(trained_toy, tmp_path_factory):
    path = tmp_path_factory.mktemp("checkpoint") / "toy.npz"
    save_toy_denoiser(trained_toy.model, path)
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


@pytest.fixture()
def criterion_report():
    """One pass/fail line per acceptance criterion, echoed in the summary."""

    def report(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
