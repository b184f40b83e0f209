import numpy as np
import pytest

from privkit import (
    BackendRegistry,
    ContractViolation,
    Hyperparameters,
    IdentityEmbedding,
    ImageRecord,
    LinearGenerator,
    MeanSquaredDistance,
    Method,
    NumericError,
    ProtectionJob,
    Role,
    SumSquaredDistance,
    compose_protect,
    pixel_cloak_protect,
    privacygan_protect,
    protect,
)
from privkit.optimize import save_loss_trace

PAIR_SHAPE = (1, 2, 1)  # the 2-pixel convex toy
PIXEL_SHAPE = (1, 1, 1)


def build_registry(shape):
    reg = BackendRegistry()
    reg.register(IdentityEmbedding(shape, name="ident"))
    reg.register(LinearGenerator.identity(shape, name="gen"))
    reg.register(MeanSquaredDistance(name="mse"))
    reg.register(SumSquaredDistance(name="sq"))
    return reg


def record(image_id, identity, values, shape, role=Role.ORIGINAL):
    return ImageRecord(id=image_id, identity=identity,
                       pixels=np.asarray(values, float).reshape(shape), role=role)


def convex_toy_job(num_iterations=500, seed=13, lr=0.01):
    """Identity generator over two pixels, identity embedding, quadratic
    perceptual term, K=1, and originals/target exactly distance 1 apart."""
    reg = build_registry(PAIR_SHAPE)
    original = record("orig", "alice", [0.1, 0.1], PAIR_SHAPE)
    target = record("far", "bob", [0.7, 0.9], PAIR_SHAPE, role=Role.TARGET_CANDIDATE)
    hyper = Hyperparameters(K=1.0, num_iterations=num_iterations,
                            learning_rate=lr, seed=seed)
    job = ProtectionJob(original=original, target=target, embeddings=("ident",),
                        perceptual="sq", hyper=hyper, method=Method.PRIVACYGAN,
                        registry=reg, generator="gen")
    return job, original, target


def convex_toy_minimum(original, target, grid=20001):
    """Independent oracle: dense search along the original-target segment.

    The loss restricted to the segment is a quadratic in the arc length, so
    its closed form is d - 1/4; the grid search confirms it numerically.
    """
    a = original.pixels.reshape(-1)
    b = target.pixels.reshape(-1)
    d = float(np.sqrt(((a - b) ** 2).sum()))
    closed_form = d - 0.25
    ts = np.linspace(0.0, 1.0, grid)
    points = a[None, :] + ts[:, None] * (b - a)[None, :]
    losses = ((points - a) ** 2).sum(axis=1) + np.sqrt(((points - b) ** 2).sum(axis=1))
    assert abs(losses.min() - closed_form) < 1e-8
    midpoint_loss = ((a + b) / 2 - a) @ ((a + b) / 2 - a) + float(
        np.sqrt((((a + b) / 2 - b) ** 2).sum()))
    assert midpoint_loss == pytest.approx(closed_form)  # argmin is the midpoint
    return closed_form


class TestPrivacyGAN:
    def test_zero_iterations_returns_initial_generation(self):
        job, _, _ = convex_toy_job(num_iterations=0, seed=21)
        result = privacygan_protect(job)
        gen = job.registry.generator("gen")
        expected = gen.generate(gen.sample_latent(21))
        assert np.array_equal(result.output.pixels, expected)
        assert len(result.loss_trace) == 1
        assert result.loss_trace[0].iteration == 0

    def test_convex_toy_reaches_closed_form_minimum(self):
        job, original, target = convex_toy_job(num_iterations=500)
        expected = convex_toy_minimum(original, target)
        result = privacygan_protect(job)
        assert result.final_loss == pytest.approx(expected, abs=1e-4)
        midpoint = (original.pixels + target.pixels) / 2
        assert np.abs(result.output.pixels - midpoint).max() < 1e-3

    def test_descent_achieved(self):
        job, _, _ = convex_toy_job(num_iterations=50)
        result = privacygan_protect(job)
        assert result.final_loss <= result.loss_trace[0].total

    def test_trace_length_and_metadata(self):
        job, original, _ = convex_toy_job(num_iterations=7)
        result = privacygan_protect(job)
        assert len(result.loss_trace) == 8
        assert [pt.iteration for pt in result.loss_trace] == list(range(8))
        assert result.output.identity == original.identity
        assert result.output.role is Role.MODIFIED
        assert result.output.pixels.shape == original.pixels.shape
        assert result.method_chain == ("privacygan",)
        assert result.final_latent is not None

    def test_same_seed_bitwise_identical(self):
        job, _, _ = convex_toy_job(num_iterations=40, seed=5)
        first = privacygan_protect(job)
        second = privacygan_protect(job)
        assert first.loss_trace == second.loss_trace
        assert np.array_equal(first.output.pixels, second.output.pixels)

    def test_gradient_free_embedding_rejected_before_start(self):
        reg = build_registry(PAIR_SHAPE)

        class ForwardOnly(IdentityEmbedding):
            supports_gradient = False

        reg.register(ForwardOnly(PAIR_SHAPE, name="fwd"))
        original = record("orig", "alice", [0.1, 0.1], PAIR_SHAPE)
        target = record("far", "bob", [0.7, 0.9], PAIR_SHAPE)
        from privkit import ConfigError
        with pytest.raises(ConfigError):
            ProtectionJob(original=original, target=target, embeddings=("fwd",),
                          perceptual="sq", hyper=Hyperparameters(),
                          method=Method.PRIVACYGAN, registry=reg, generator="gen")

    def test_gradient_free_generator_rejected_before_start(self):
        from privkit import ConfigError
        from privkit.backends import GeneratorBackend

        class ForwardOnlyGen(GeneratorBackend):
            name = "fwdgen"
            latent_dim = 2

            def generate(self, z):
                return np.clip(np.asarray(z, float), 0, 1).reshape(PAIR_SHAPE)

            def sample_latent(self, seed):
                return np.zeros(2)

        reg = build_registry(PAIR_SHAPE)
        reg.register(ForwardOnlyGen())
        original = record("orig", "alice", [0.1, 0.1], PAIR_SHAPE)
        target = record("far", "bob", [0.7, 0.9], PAIR_SHAPE)
        with pytest.raises(ConfigError):
            ProtectionJob(original=original, target=target, embeddings=("ident",),
                          perceptual="sq", hyper=Hyperparameters(),
                          method=Method.PRIVACYGAN, registry=reg, generator="fwdgen")

    def test_nan_loss_aborts_with_partial_trace(self):
        reg = build_registry(PAIR_SHAPE)

        class ExplodingEmbedding(IdentityEmbedding):
            def __init__(self, shape, name):
                super().__init__(shape, name=name)
                self.calls = 0

            def embed_pixels(self, pixels):
                self.calls += 1
                out = super().embed_pixels(pixels).copy()
                if self.calls > 6:
                    out[0] = np.nan
                return out

        reg.register(ExplodingEmbedding(PAIR_SHAPE, name="boom"))
        original = record("orig", "alice", [0.1, 0.1], PAIR_SHAPE)
        target = record("far", "bob", [0.7, 0.9], PAIR_SHAPE)
        job = ProtectionJob(original=original, target=target, embeddings=("boom",),
                            perceptual="sq",
                            hyper=Hyperparameters(K=1.0, num_iterations=50),
                            method=Method.PRIVACYGAN, registry=reg, generator="gen")
        with pytest.raises(NumericError) as exc_info:
            privacygan_protect(job)
        assert 0 < len(exc_info.value.trace) < 51


class TestPixelCloak:
    def make_job(self, original_value, target_value, rho, num_iterations=200, lr=0.01):
        reg = build_registry(PIXEL_SHAPE)
        original = record("orig", "alice", [original_value], PIXEL_SHAPE)
        target = record("far", "bob", [target_value], PIXEL_SHAPE, role=Role.TARGET_CANDIDATE)
        hyper = Hyperparameters(K=1.0, num_iterations=num_iterations,
                                learning_rate=lr, rho=rho, seed=0)
        return ProtectionJob(original=original, target=target, embeddings=("ident",),
                             perceptual="mse", hyper=hyper,
                             method=Method.PIXEL_CLOAK, registry=reg)

    def test_rho_zero_output_is_bitwise_original(self):
        job = self.make_job(0.2, 0.9, rho=0.0)
        result = pixel_cloak_protect(job)
        assert np.array_equal(result.output.pixels, job.original.pixels)
        assert result.final_cloak_linf == 0.0

    def test_target_equals_original_stays_put(self):
        reg = build_registry(PIXEL_SHAPE)
        original = record("orig", "alice", [0.4], PIXEL_SHAPE)
        target = record("far", "bob", [0.4], PIXEL_SHAPE)
        job = ProtectionJob(original=original, target=target, embeddings=("ident",),
                            perceptual="mse",
                            hyper=Hyperparameters(K=1.0, num_iterations=100, rho=0.3),
                            method=Method.PIXEL_CLOAK, registry=reg)
        result = pixel_cloak_protect(job)
        assert result.loss_trace[0].total == 0.0
        assert np.array_equal(result.output.pixels, original.pixels)

    def test_capped_optimum(self):
        # Cap active: best reachable pixel is 0.2 + 0.3.
        job = self.make_job(0.2, 0.9, rho=0.3, num_iterations=500)
        result = pixel_cloak_protect(job)
        assert float(result.output.pixels.reshape(-1)[0]) == pytest.approx(0.5, abs=1e-3)

    def test_cap_invariant_random_jobs(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            rho = float(rng.uniform(0, 0.2))
            job = self.make_job(float(rng.uniform()), float(rng.uniform()),
                                rho=rho, num_iterations=30, lr=0.05)
            result = pixel_cloak_protect(job)
            assert np.abs(result.output.pixels - job.original.pixels).max() <= rho + 1e-6
            assert result.final_cloak_linf <= rho + 1e-6

    def test_trace_has_zero_perceptual_term(self):
        job = self.make_job(0.2, 0.9, rho=0.1, num_iterations=3)
        result = pixel_cloak_protect(job)
        assert all(pt.perceptual == 0.0 for pt in result.loss_trace)
        assert all(pt.total == pt.embedding for pt in result.loss_trace)

    def test_cloak_gradient_matches_finite_differences(self):
        from privkit.optimize import _cloak_loss_grad

        shape = (2, 2, 1)
        reg = build_registry(shape)
        embeddings = [reg.embedding("ident")]
        rng = np.random.default_rng(31)
        original = rng.uniform(0.3, 0.7, size=shape)
        target = record("t", "bob", rng.uniform(0.3, 0.7, size=4), shape)
        rho = 0.25
        # Interior point: clamp and clip masks fully open, loss is smooth.
        cloak = rng.uniform(-0.2, 0.2, size=shape)
        _, _, grad = _cloak_loss_grad(cloak, original, target, embeddings, rho)
        eps = 1e-6
        flat = cloak.reshape(-1).copy()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi, _, _ = _cloak_loss_grad(flat.reshape(shape), original, target,
                                        embeddings, rho, want_grad=False)
            flat[i] = saved - eps
            lo, _, _ = _cloak_loss_grad(flat.reshape(shape), original, target,
                                        embeddings, rho, want_grad=False)
            flat[i] = saved
            assert grad.reshape(-1)[i] == pytest.approx((hi - lo) / (2 * eps),
                                                        abs=1e-5)


class TestCompose:
    def _cloak_template(self, reg, original, target, rho=0.2, num_iterations=60):
        return ProtectionJob(original=original, target=target, embeddings=("ident",),
                             perceptual="mse",
                             hyper=Hyperparameters(K=1.0, num_iterations=num_iterations,
                                                   rho=rho, seed=3),
                             method=Method.PIXEL_CLOAK, registry=reg)

    def test_noop_first_stage_equals_cloak_alone(self):
        reg = build_registry(PAIR_SHAPE)
        original = record("orig", "alice", [0.2, 0.4], PAIR_SHAPE)
        target = record("far", "bob", [0.9, 0.8], PAIR_SHAPE)
        cloak_job = self._cloak_template(reg, original, target)
        alone = pixel_cloak_protect(cloak_job)

        noop_job = ProtectionJob(original=original, target=target, embeddings=("ident",),
                                 perceptual="mse",
                                 hyper=Hyperparameters(K=1.0, num_iterations=0, rho=0.0),
                                 method=Method.PIXEL_CLOAK, registry=reg)
        noop = pixel_cloak_protect(noop_job)  # rho=0 leaves the image untouched
        composed = compose_protect(noop, cloak_job)
        assert np.array_equal(composed.output.pixels, alone.output.pixels)

    def test_order_matters(self):
        reg = build_registry(PAIR_SHAPE)
        original = record("orig", "alice", [0.2, 0.4], PAIR_SHAPE)
        target = record("far", "bob", [0.9, 0.8], PAIR_SHAPE)
        gan_job = ProtectionJob(original=original, target=target, embeddings=("ident",),
                                perceptual="sq",
                                hyper=Hyperparameters(K=0.5, num_iterations=80, seed=7),
                                method=Method.PRIVACYGAN, registry=reg, generator="gen")
        cloak_job = self._cloak_template(reg, original, target)

        gan_then_cloak = compose_protect(protect(gan_job), cloak_job)
        cloak_then_gan = compose_protect(protect(cloak_job), gan_job)
        assert not np.array_equal(gan_then_cloak.output.pixels,
                                  cloak_then_gan.output.pixels)

    def test_chain_metadata_in_execution_order(self):
        reg = build_registry(PAIR_SHAPE)
        original = record("orig", "alice", [0.2, 0.4], PAIR_SHAPE)
        target = record("far", "bob", [0.9, 0.8], PAIR_SHAPE)
        gan_job = ProtectionJob(original=original, target=target, embeddings=("ident",),
                                perceptual="sq",
                                hyper=Hyperparameters(K=0.5, num_iterations=10, seed=7),
                                method=Method.PRIVACYGAN, registry=reg, generator="gen")
        cloak_job = self._cloak_template(reg, original, target, num_iterations=10)
        composed = compose_protect(protect(gan_job), cloak_job)
        assert composed.method_chain == ("privacygan", "pixel_cloak")

    def test_shape_mismatch_rejected(self):
        reg_small = build_registry(PAIR_SHAPE)
        reg_big = build_registry((2, 2, 1))
        original = record("orig", "alice", [0.2, 0.4], PAIR_SHAPE)
        target = record("far", "bob", [0.9, 0.8], PAIR_SHAPE)
        first = pixel_cloak_protect(self._cloak_template(reg_small, original, target,
                                                         num_iterations=5))
        big_original = record("oi2", "alice", [0.2, 0.4, 0.5, 0.5], (2, 2, 1))
        big_target = record("ti2", "bob", [0.9, 0.8, 0.5, 0.5], (2, 2, 1))
        template = ProtectionJob(original=big_original, target=big_target,
                                 embeddings=("ident",), perceptual="mse",
                                 hyper=Hyperparameters(num_iterations=5),
                                 method=Method.PIXEL_CLOAK, registry=reg_big)
        with pytest.raises(ContractViolation):
            compose_protect(first, template)


class TestTracePersistence:
    def test_csv_round_trip_shape(self, tmp_path):
        job, _, _ = convex_toy_job(num_iterations=4)
        result = privacygan_protect(job)
        path = save_loss_trace(tmp_path / "trace.csv", result, header_comment="meta")
        lines = path.read_text().splitlines()
        assert lines[0] == "# meta"
        assert lines[1] == "iteration,total,perceptual,embedding"
        assert len(lines) == 2 + 5
