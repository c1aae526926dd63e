import numpy as np
import pytest

from stainkit import ConfigError, DimensionError, deconvolve, reconstruct, rgb_to_od
from stainkit.augmentation import (
    AffineDraw,
    AugmentationConfig,
    ElasticParams,
    Sample,
    apply_affine,
    apply_stain_variation,
    augment_batch,
    augment_sample,
    draw_plan,
    elastic_deform,
    pixel_augment,
    stain_variation,
    standardize,
)
from stainkit.rng import derive_rng
from stainkit.stain_estimation import StainProfile
from stainkit.synthetic import synth_patch
from stainkit.transforms import luma


def make_sample(rng, size=48, channels=3):
    shape = (size, size, 3) if channels == 3 else (size, size)
    image = rng.integers(0, 256, size=shape).astype(np.uint8)
    mask = (rng.random((size, size)) < 0.3).astype(np.uint8) * 255
    return Sample(image, mask, "tissue")


IDENTITY = AffineDraw(angle_deg=0.0, shift_x=0.0, shift_y=0.0, zoom=1.0, flip_h=False, flip_v=False)


def disabled_config(**overrides):
    kwargs = dict(
        probabilities=dict.fromkeys(
            ("affine", "noise", "blur", "brightness", "colour", "contrast", "stain_variation"), 0.0
        ),
        elastic_probability=0.0,
        strategy="rgb",
    )
    kwargs.update(overrides)
    return AugmentationConfig(**kwargs)


class TestSample:
    def test_mask_shape_must_match(self, rng):
        with pytest.raises(DimensionError):
            Sample(np.zeros((4, 4, 3), np.uint8), np.zeros((5, 4), np.uint8))

    def test_mask_must_be_binary(self):
        mask = np.full((4, 4), 7, np.uint8)
        with pytest.raises(ConfigError):
            Sample(np.zeros((4, 4, 3), np.uint8), mask)

    def test_label_checked(self):
        with pytest.raises(ConfigError):
            Sample(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8), "nucleus")


class TestAffine:
    def test_identity_is_bit_exact(self, rng):
        s = make_sample(rng)
        out = apply_affine(s, IDENTITY)
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.mask, s.mask)

    def test_180_degrees_equals_index_reversal(self, rng):
        s = make_sample(rng)
        out = apply_affine(s, AffineDraw(180.0, 0.0, 0.0, 1.0, False, False))
        assert np.array_equal(out.image, s.image[::-1, ::-1])
        assert np.array_equal(out.mask, s.mask[::-1, ::-1])

    def test_flips_are_exact(self, rng):
        s = make_sample(rng)
        out = apply_affine(s, AffineDraw(0.0, 0.0, 0.0, 1.0, True, False))
        assert np.array_equal(out.image, s.image[:, ::-1])
        out = apply_affine(s, AffineDraw(0.0, 0.0, 0.0, 1.0, False, True))
        assert np.array_equal(out.image, s.image[::-1, :])

    def test_constant_image_fixed_point(self):
        image = np.full((32, 32, 3), 111, np.uint8)
        s = Sample(image, np.zeros((32, 32), np.uint8))
        rng = derive_rng(0)
        for _ in range(10):
            draw = AffineDraw(
                float(rng.uniform(0, 180)),
                float(rng.uniform(-20, 20)),
                float(rng.uniform(-20, 20)),
                float(rng.uniform(0.8, 1.2)),
                bool(rng.random() < 0.5),
                bool(rng.random() < 0.5),
            )
            assert np.all(apply_affine(s, draw).image == 111)

    def test_mask_follows_image_on_integer_shifts(self, rng):
        image = rng.integers(0, 256, size=(40, 40, 3)).astype(np.uint8)
        grey = luma(image)
        mask = (grey > 128).astype(np.uint8) * 255
        s = Sample(image, mask)
        for dx, dy, fh, fv in [(3, -7, False, False), (0, 0, True, True), (11, 5, True, False)]:
            out = apply_affine(s, AffineDraw(0.0, float(dx), float(dy), 1.0, fh, fv))
            expected = (luma(out.image) > 128).astype(np.uint8) * 255
            assert np.array_equal(out.mask, expected)

    def test_bounded_by_input_range(self, rng):
        s = make_sample(rng)
        lo, hi = int(s.image.min()), int(s.image.max())
        out = apply_affine(s, AffineDraw(37.0, 5.5, -3.25, 1.1, True, False))
        assert out.image.min() >= lo and out.image.max() <= hi


class TestElastic:
    def test_alpha_zero_is_identity(self, rng):
        s = make_sample(rng)
        out = elastic_deform(s, ElasticParams(sigma=10.0, alpha=0.0), derive_rng(5))
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.mask, s.mask)

    def test_constant_image_fixed_point(self):
        image = np.full((40, 40, 3), 77, np.uint8)
        s = Sample(image, np.zeros((40, 40), np.uint8))
        out = elastic_deform(s, ElasticParams(), derive_rng(8))
        assert np.all(out.image == 77)

    def test_bounded_on_checkerboards(self):
        for seed in range(30):
            rng = derive_rng(seed)
            tile = rng.integers(0, 256, size=(8, 8)).astype(np.uint8)
            board = np.tile(tile, (6, 6))
            s = Sample(np.stack([board] * 3, axis=-1), np.zeros_like(board))
            out = elastic_deform(s, ElasticParams(sigma=4.0, alpha=12.0), derive_rng(100 + seed))
            assert out.image.min() >= board.min()
            assert out.image.max() <= board.max()

    def test_deterministic(self, rng):
        s = make_sample(rng)
        a = elastic_deform(s, ElasticParams(), derive_rng(3))
        b = elastic_deform(s, ElasticParams(), derive_rng(3))
        assert np.array_equal(a.image, b.image)

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            ElasticParams(sigma=0.0)
        with pytest.raises(ConfigError):
            ElasticParams(alpha=-1.0)


class TestPixelAugment:
    def test_noise_sigma_zero_identity(self, rng):
        img = make_sample(rng).image
        assert np.array_equal(pixel_augment(img, "noise", 0.0, derive_rng(1)), img)

    @pytest.mark.parametrize("kind", ["brightness", "colour", "contrast"])
    def test_neutral_factor_identity(self, kind, rng):
        img = make_sample(rng).image
        assert np.array_equal(pixel_augment(img, kind, 1.0), img)

    def test_blur_sigma_zero_identity(self, rng):
        img = make_sample(rng).image
        assert np.array_equal(pixel_augment(img, "blur", 0.0), img)

    def test_contrast_zero_collapses_to_mean_grey(self, rng):
        img = make_sample(rng).image
        out = pixel_augment(img, "contrast", 0.0)
        expected = np.uint8(np.rint(luma(img).mean()))
        assert np.all(out == expected)

    def test_noise_statistics(self):
        img = np.full((200, 200, 3), 128, np.uint8)
        out = pixel_augment(img, "noise", 2.0, derive_rng(77))
        residual = out.astype(float) - 128.0
        assert abs(residual.std() - 2.0) < 0.15
        assert abs(residual.mean()) < 0.1

    def test_clamps_instead_of_wrapping(self):
        img = np.full((64, 64, 3), 254, np.uint8)
        out = pixel_augment(img, "noise", 30.0, derive_rng(2))
        assert out.max() == 255 and out.min() > 100

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            pixel_augment(np.zeros((4, 4, 3), np.uint8), "posterise", 1.0)


class TestStainVariation:
    def test_neutral_equals_roundtrip(self, he_matrix, rng):
        img, _ = synth_patch(he_matrix, 48, rng)
        out = apply_stain_variation(img, he_matrix, (0.0, 0.0), (0.0, 0.0))
        roundtrip = reconstruct(deconvolve(rgb_to_od(img), he_matrix), he_matrix)
        assert np.array_equal(out, roundtrip)

    def test_alpha_scales_concentrations(self, he_matrix, rng):
        # concentrations kept low enough that the 1.25x scale-up stays
        # clear of the 8-bit optical-density ceiling
        from stainkit.synthetic import synth_concentrations

        img = reconstruct(synth_concentrations(48, rng, peak=(0.9, 0.6)), he_matrix)
        out = apply_stain_variation(img, he_matrix, (0.25, 0.25), (0.0, 0.0))
        c_in = deconvolve(rgb_to_od(img), he_matrix)
        c_out = deconvolve(rgb_to_od(out), he_matrix)
        err = np.abs(c_out - 1.25 * c_in)
        # two uint8 round trips: half-step OD quantisation bounds the error
        assert err.mean() < 0.01 and err.max() < 0.05

    def test_beta_tints_white(self, he_matrix):
        white = np.full((16, 16, 3), 255, np.uint8)
        out = apply_stain_variation(white, he_matrix, (0.0, 0.0), (0.05, 0.05))
        expected = reconstruct(np.full((16, 16, 2), 0.05), he_matrix)
        assert np.array_equal(out, expected)

    def test_random_draws_within_ranges(self, he_matrix, rng):
        img, _ = synth_patch(he_matrix, 32, rng)
        out = stain_variation(img, he_matrix, (-0.25, 0.25), (-0.05, 0.05), derive_rng(4))
        assert out.shape == img.shape and out.dtype == np.uint8


class TestConfig:
    def test_roundtrip_through_json(self, tmp_path, he_matrix):
        cfg = AugmentationConfig(
            probabilities={"noise": 0.2},
            strategy="colour_transfer",
            source_profile=StainProfile(he_matrix, np.array([1.0, 0.8])),
            target_pools=(
                (StainProfile(he_matrix, np.array([1.2, 0.7])),),
                (StainProfile(he_matrix, np.array([0.9, 1.1])),),
            ),
        )
        path = tmp_path / "cfg.json"
        cfg.save(path)
        loaded = AugmentationConfig.load(path)
        assert loaded.probabilities["noise"] == 0.2
        assert loaded.probabilities["blur"] == 0.5
        assert loaded.strategy == "colour_transfer"
        assert len(loaded.target_pools) == 2
        np.testing.assert_allclose(
            loaded.target_pools[0][0].robust_max, cfg.target_pools[0][0].robust_max
        )

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            AugmentationConfig(probabilities={"noise": 1.5})

    def test_unknown_step(self):
        with pytest.raises(ConfigError):
            AugmentationConfig(probabilities={"sharpen": 0.5})

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            AugmentationConfig(strategy="sepia")

    def test_colour_transfer_requires_pools(self):
        with pytest.raises(ConfigError):
            AugmentationConfig(strategy="colour_transfer")

    def test_unordered_range(self):
        with pytest.raises(ConfigError):
            AugmentationConfig(zoom_range=(1.2, 0.8))


class TestAugmentSample:
    def test_disabled_pipeline_is_identity(self, rng):
        s = make_sample(rng)
        out = augment_sample(s, disabled_config(), derive_rng(123))
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.mask, s.mask)

    def test_deterministic_per_substream(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 64, rng)
        s = Sample(img, mask, "glomerulus")
        cfg = AugmentationConfig()
        a = augment_sample(s, cfg, derive_rng(7, 3))
        b = augment_sample(s, cfg, derive_rng(7, 3))
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_batch_split_invariant(self, he_matrix, rng):
        samples = []
        for _ in range(6):
            img, mask = synth_patch(he_matrix, 48, rng)
            samples.append(Sample(img, mask))
        cfg = AugmentationConfig()
        whole = augment_batch(samples, cfg, seed=11)
        parts = augment_batch(samples[:3], cfg, seed=11) + augment_batch(
            samples[3:], cfg, seed=11, start_index=3
        )
        for a, b in zip(whole, parts):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.mask, b.mask)

    def test_photometric_steps_leave_mask_untouched(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 48, rng)
        s = Sample(img, mask)
        cfg = AugmentationConfig(
            probabilities={
                "affine": 0.0, "noise": 1.0, "blur": 1.0, "brightness": 1.0,
                "colour": 1.0, "contrast": 1.0, "stain_variation": 1.0,
            },
            elastic_probability=0.0,
        )
        out = augment_sample(s, cfg, derive_rng(5))
        assert np.array_equal(out.mask, s.mask)
        assert not np.array_equal(out.image, s.image)

    def test_greyscale_strategy_yields_single_channel(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 48, rng)
        out = augment_sample(Sample(img, mask), disabled_config(strategy="greyscale"), derive_rng(1))
        assert out.image.ndim == 2

    def test_haematoxylin_strategy_yields_single_channel(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 48, rng)
        out = augment_sample(
            Sample(img, mask), disabled_config(strategy="haematoxylin"), derive_rng(1)
        )
        assert out.image.ndim == 2

    def test_channel_swap_strategy_permutes(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 32, rng)
        s = Sample(img, mask)
        cfg = disabled_config(strategy="channel_swap")
        outs = {augment_sample(s, cfg, derive_rng(2, i)).image.tobytes() for i in range(40)}
        assert len(outs) == 6

    def test_colour_transfer_identity_when_source_drawn(self, he_matrix, rng):
        img, mask = synth_patch(he_matrix, 32, rng)
        profile = StainProfile(he_matrix, np.array([1.0, 1.0]))
        cfg = disabled_config(
            strategy="colour_transfer",
            source_profile=profile,
            target_pools=((profile,),),
            source_pool_index=0,
        )
        out = augment_sample(Sample(img, mask), cfg, derive_rng(3))
        assert np.array_equal(out.image, img)

    def test_gate_frequencies(self):
        cfg = AugmentationConfig()
        fired = dict.fromkeys(("affine", "noise", "blur"), 0)
        n = 2000
        for i in range(n):
            plan = draw_plan(cfg, derive_rng(99, i))
            fired["affine"] += plan.affine is not None
            fired["noise"] += plan.noise_sigma is not None
            fired["blur"] += plan.blur_sigma is not None
        for count in fired.values():
            assert 900 < count < 1100  # ~3 sigma around 1000


class TestStandardize:
    def test_plain_scaling(self, rng):
        img = make_sample(rng).image
        out = standardize(img, 0.0, 1.0)
        assert np.array_equal(out, img.astype(np.float64) / 255.0)

    def test_centring(self):
        img = np.full((4, 4, 3), 102, np.uint8)  # 102/255 = 0.4
        out = standardize(img, (0.4, 0.4, 0.4), (0.1, 0.2, 0.3))
        assert np.allclose(out, 0.0)

    def test_constant_128_example(self):
        img = np.full((2, 2, 3), 128, np.uint8)
        out = standardize(img, 0.5, 0.25)
        assert out == pytest.approx((128 / 255 - 0.5) / 0.25)
        assert np.allclose(out, 0.00784, atol=5e-5)

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ConfigError):
            standardize(np.zeros((2, 2, 3), np.uint8), 0.0, 0.0)
