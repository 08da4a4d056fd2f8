import math

import numpy as np
import pytest

from autv.backends import ConstantDenoiser, ScalarLinearDenoiser, ZeroDenoiser
from autv.diffusion import (
    CenteringCodec,
    DiffusionSchedule,
    IdentityCodec,
    LatentGrid,
    build_schedule,
    ddim_invert,
    ddim_invert_step,
    ddim_sample,
    ddim_step,
    inference_timesteps,
    load_latent,
    load_schedule,
    q_sample,
    save_latent,
    save_schedule,
)
from autv.errors import (
    BackendError,
    ConfigError,
    GenerationError,
    ScheduleError,
    ShapeError,
    TimestepError,
)


def grid(value, t=0, shape=(1, 2, 2)):
    return LatentGrid(data=np.full(shape, float(value)), timestep=t)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_linear_schedule_hand_values(toy_schedule):
    assert toy_schedule.betas.tolist() == [0.1, 0.2]
    assert toy_schedule.alphas.tolist() == [0.9, 0.8]
    assert toy_schedule.alpha_bars == pytest.approx([0.9, 0.72], rel=1e-12)
    assert toy_schedule.alpha_bar(0) == 1.0
    assert toy_schedule.alpha_bar(1) == pytest.approx(0.9, rel=1e-12)
    assert toy_schedule.alpha_bar(2) == pytest.approx(0.72, rel=1e-12)


def test_default_schedule_terminal_value(schedule):
    # prod(1 - linspace(1e-4, 0.02, 1000)), frozen from an independent run
    assert schedule.alpha_bar(1000) == pytest.approx(4.035829765375676e-05, rel=1e-12)
    assert schedule.num_steps == 1000
    assert np.all(np.diff(schedule.alpha_bars) < 0)


def test_alpha_bar_range_checks(toy_schedule):
    with pytest.raises(TimestepError):
        toy_schedule.alpha_bar(-1)
    with pytest.raises(TimestepError):
        toy_schedule.alpha_bar(3)


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        build_schedule(0, 0.1, 0.2)
    with pytest.raises(ScheduleError):
        build_schedule(10, 0.0, 0.2)
    with pytest.raises(ScheduleError):
        build_schedule(10, 0.3, 0.2)
    with pytest.raises(ScheduleError):
        build_schedule(10, 0.1, 1.0)
    with pytest.raises(ScheduleError):
        build_schedule(10, 0.1, 0.2, kind="exotic")
    with pytest.raises(ScheduleError):
        DiffusionSchedule(num_steps=3, betas=np.array([0.1, 0.2]))


def test_cosine_schedule_monotone_and_bounded():
    s = build_schedule(100, 1e-4, 0.9, kind="cosine")
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all(s.betas >= 1e-4) and np.all(s.betas <= 0.9)


def test_schedule_save_load_round_trip(tmp_path, toy_schedule):
    path = tmp_path / "schedule.json"
    save_schedule(toy_schedule, path)
    back = load_schedule(path)
    assert back.kind == toy_schedule.kind
    assert np.array_equal(back.betas, toy_schedule.betas)


# ---------------------------------------------------------------------------
# Forward marginal
# ---------------------------------------------------------------------------


def test_q_sample_hand_values(toy_schedule):
    z0 = np.array([1.5])
    noise = np.array([-0.25])
    # sqrt(0.9)*1.5 + sqrt(0.1)*(-0.25) and sqrt(0.72)*1.5 + sqrt(0.28)*(-0.25)
    assert q_sample(z0, 1, noise, toy_schedule)[0] == pytest.approx(
        1.343968005571561, rel=1e-12
    )
    assert q_sample(z0, 2, noise, toy_schedule)[0] == pytest.approx(
        1.1405046405825563, rel=1e-12
    )
    assert q_sample(z0, 0, noise, toy_schedule)[0] == pytest.approx(1.5, rel=1e-12)


def test_q_sample_shape_check(toy_schedule):
    with pytest.raises(ShapeError):
        q_sample(np.zeros(3), 1, np.zeros(4), toy_schedule)


def test_q_sample_marginal_statistics(toy_schedule, rng):
    n = 200_000
    z0 = np.full(n, 0.7)
    noise = rng.standard_normal(n)
    zt = q_sample(z0, 2, noise, toy_schedule)
    want_mean = math.sqrt(0.72) * 0.7
    se_mean = math.sqrt(0.28 / n)
    assert abs(zt.mean() - want_mean) < 4 * se_mean
    # variance of a chi^2-ish estimator: se ~ var * sqrt(2/(n-1))
    assert abs(zt.var() - 0.28) < 4 * 0.28 * math.sqrt(2.0 / (n - 1))


# ---------------------------------------------------------------------------
# Single DDIM steps
# ---------------------------------------------------------------------------


def test_ddim_step_zero_denoiser_hand_value(toy_schedule):
    z = grid(0.5, t=2)
    out = ddim_step(z, 2, 0, ZeroDenoiser(), None, toy_schedule)
    # x0_hat = z / sqrt(0.72); frozen: 0.5 / sqrt(0.72)
    assert out.data == pytest.approx(0.5892556509887896, rel=1e-12)
    assert out.timestep == 0


def test_ddim_step_needs_decreasing_t(toy_schedule):
    with pytest.raises(TimestepError):
        ddim_step(grid(0.5, t=1), 1, 1, ZeroDenoiser(), None, toy_schedule)
    with pytest.raises(TimestepError):
        ddim_invert_step(grid(0.5, t=1), 1, 1, ZeroDenoiser(), None, toy_schedule)


def test_single_rung_round_trip_is_algebraically_exact(toy_schedule):
    # constant eps-hat makes invert_step the exact inverse of ddim_step
    backend = ConstantDenoiser(value=0.3)
    z0 = grid(0.8, t=0)
    up = ddim_invert_step(z0, 0, 2, backend, None, toy_schedule)
    down = ddim_step(up, 2, 0, backend, None, toy_schedule)
    np.testing.assert_allclose(down.data, z0.data, rtol=0, atol=1e-15)


def test_backend_contract_is_enforced(toy_schedule):
    class WrongShape(ZeroDenoiser):
        def predict_noise(self, latent, t, cond=None):
            return np.zeros((2, 1, 1))

    class NonFinite(ZeroDenoiser):
        def predict_noise(self, latent, t, cond=None):
            return np.full(latent.data.shape, np.nan)

    with pytest.raises(BackendError):
        ddim_step(grid(0.5, t=2), 2, 0, WrongShape(), None, toy_schedule)
    with pytest.raises(BackendError):
        ddim_step(grid(0.5, t=2), 2, 0, NonFinite(), None, toy_schedule)


# ---------------------------------------------------------------------------
# The shared timestep ladder
# ---------------------------------------------------------------------------


def test_inference_timesteps_default_ladder():
    ladder = inference_timesteps(1000, 50)
    assert len(ladder) == 51
    assert ladder[0] == 0 and ladder[-1] == 1000
    assert np.all(np.diff(ladder) == 20)


def test_inference_timesteps_rounding_stays_strict():
    ladder = inference_timesteps(10, 7)
    assert ladder[0] == 0 and ladder[-1] == 10
    assert np.all(np.diff(ladder) > 0)


def test_inference_timesteps_validation():
    with pytest.raises(ConfigError):
        inference_timesteps(10, 0)
    with pytest.raises(TimestepError):
        inference_timesteps(0, 1)
    with pytest.raises(ConfigError):
        inference_timesteps(10, 11)


# ---------------------------------------------------------------------------
# Full trajectories
# ---------------------------------------------------------------------------


def test_zero_denoiser_trajectories_telescope(schedule):
    z0 = LatentGrid(data=np.full((1, 2, 2), 0.5), timestep=0)
    up = ddim_invert(z0, ZeroDenoiser(), None, schedule, num_inference_steps=50)
    assert up.timestep == 1000
    want = math.sqrt(schedule.alpha_bar(1000)) * 0.5
    np.testing.assert_allclose(up.data, want, rtol=1e-12)
    down = ddim_sample(up, ZeroDenoiser(), None, schedule, num_inference_steps=50)
    assert down.timestep == 0
    np.testing.assert_allclose(down.data, z0.data, rtol=1e-9)


def test_partial_inversion_depth(schedule):
    z0 = LatentGrid(data=np.zeros((1, 2, 2)), timestep=0)
    half = ddim_invert(z0, ZeroDenoiser(), None, schedule, num_inference_steps=50, strength=0.5)
    assert half.timestep == 500
    shallow = ddim_invert(z0, ZeroDenoiser(), None, schedule, num_inference_steps=50, strength=1e-6)
    assert shallow.timestep == 20  # never fewer than one rung


def test_trajectory_validation(schedule):
    z0 = LatentGrid(data=np.zeros((1, 2, 2)), timestep=0)
    zT = LatentGrid(data=np.zeros((1, 2, 2)), timestep=1000)
    with pytest.raises(ConfigError):
        ddim_invert(z0, ZeroDenoiser(), None, schedule, strength=0.0)
    with pytest.raises(TimestepError):
        ddim_invert(zT, ZeroDenoiser(), None, schedule)
    with pytest.raises(TimestepError):
        ddim_sample(z0, ZeroDenoiser(), None, schedule)
    deep = LatentGrid(data=np.zeros((1, 2, 2)), timestep=2000)
    with pytest.raises(TimestepError):
        ddim_sample(deep, ZeroDenoiser(), None, schedule)


def test_scalar_linear_round_trip_small_slope(schedule):
    # eps_hat = c * z with small c: the ladder discretization error should be
    # well under the relative tolerance used for the trained model
    backend = ScalarLinearDenoiser(slope=1e-4)
    z0 = LatentGrid(data=np.full((1, 2, 2), 0.9), timestep=0)
    up = ddim_invert(z0, backend, None, schedule, num_inference_steps=50)
    down = ddim_sample(up, backend, None, schedule, num_inference_steps=50)
    rel = np.linalg.norm(down.data - z0.data) / np.linalg.norm(z0.data)
    assert rel < 1e-3


# ---------------------------------------------------------------------------
# Latents and codecs
# ---------------------------------------------------------------------------


def test_latent_grid_validation():
    with pytest.raises(ShapeError):
        LatentGrid(data=np.zeros((2, 2)), timestep=0)
    with pytest.raises(GenerationError):
        LatentGrid(data=np.full((1, 2, 2), np.inf), timestep=0)
    with pytest.raises(TimestepError):
        LatentGrid(data=np.zeros((1, 2, 2)), timestep=-1)


def test_centering_codec_round_trip(rng):
    pixels = rng.uniform(0.0, 1.0, size=(3, 4, 4))
    codec = CenteringCodec()
    latent = codec.encode(pixels)
    assert latent.timestep == 0
    assert latent.data.min() >= -1.0 and latent.data.max() <= 1.0
    np.testing.assert_allclose(codec.decode(latent), pixels, atol=1e-12)


def test_identity_codec_passthrough(rng):
    pixels = rng.uniform(0.0, 1.0, size=(3, 4, 4))
    codec = IdentityCodec()
    np.testing.assert_array_equal(codec.decode(codec.encode(pixels)), pixels)


def test_latent_save_load_round_trip(tmp_path, rng):
    # wire format is float32, so a float32 latent round-trips bit-exactly
    data = rng.standard_normal((3, 4, 4)).astype(np.float32)
    latent = LatentGrid(data=data, timestep=17)
    path = tmp_path / "latent.bin"
    save_latent(latent, path)
    back = load_latent(path)
    assert back.timestep == 17
    assert back.data.dtype == np.float32
    np.testing.assert_array_equal(back.data, data)
