"""Tests for blur defenses, blur-evading attacks, and GAN training."""

import pytest
import torch

from disruptkit.attacks import AttackConfig, TargetSpec
from disruptkit.core import l1_distance, linf_norm
from disruptkit.data import DatasetConfig, generate_sample
from disruptkit.defenses import (
    AdvTrainConfig,
    BlurSpec,
    TrainConfig,
    _pgd_ascent,
    attack_through_blur,
    blur,
    blurred_generator,
    default_blur_bank,
    eot_blur_disrupt,
    spread_spectrum_disrupt,
    train_gan,
    train_gan_gd_adv,
    train_gan_generator_adv,
)
from disruptkit.model import (
    ClassCode,
    DiscriminatorConfig,
    GeneratorConfig,
    init_discriminator,
    init_generator,
)


def rand_image(seed=0, size=8):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand((3, size, size), generator=gen, dtype=torch.float64) * 2 - 1


class CountingGen:
    def __init__(self, inner):
        self.inner = inner
        self.count = 0

    def __call__(self, x, c):
        self.count += 1
        return self.inner(x, c)


class TestBlurKernel:
    @pytest.mark.parametrize("spec", [BlurSpec("gaussian", 0.5),
                                      BlurSpec("gaussian", 1.5),
                                      BlurSpec("box", 3),
                                      BlurSpec("box", 7)])
    def test_kernel_normalized_and_symmetric(self, spec):
        k = spec.kernel(torch.float64)
        assert k.sum().item() == pytest.approx(1.0, abs=1e-12)
        assert torch.allclose(k, k.flip(0).flip(1))
        assert torch.allclose(k, k.T)

    def test_gaussian_support(self):
        k = BlurSpec("gaussian", 1.0).kernel()
        assert k.shape == (7, 7)  # radius = ceil(3 sigma)

    def test_validation(self):
        with pytest.raises(ValueError):
            BlurSpec("gaussian", 0.0)
        with pytest.raises(ValueError):
            BlurSpec("box", 4)
        with pytest.raises(ValueError):
            BlurSpec("box", 2.5)
        with pytest.raises(ValueError):
            BlurSpec("median", 3)

    def test_default_bank(self):
        bank = default_blur_bank()
        assert len(bank) == 7
        assert sum(b.kind == "gaussian" for b in bank) == 4
        assert sum(b.kind == "box" for b in bank) == 3


class TestBlurOperator:
    def test_constant_image_fixed_point(self):
        x = torch.full((3, 8, 8), 0.37, dtype=torch.float64)
        y = blur(x, BlurSpec("gaussian", 1.5))
        assert torch.allclose(y, x, atol=1e-12)

    def test_impulse_response_equals_kernel(self):
        spec = BlurSpec("box", 3)
        x = torch.zeros(1, 16, 16, dtype=torch.float64)
        x[0, 8, 8] = 1.0
        y = blur(x, spec)
        assert torch.allclose(y[0, 7:10, 7:10], spec.kernel(torch.float64),
                              atol=1e-12)
        assert y[0].sum().item() == pytest.approx(1.0, abs=1e-12)

    def test_commutes_with_constant_shift(self):
        x = rand_image(seed=1)
        spec = BlurSpec("gaussian", 1.0)
        a = blur(x + 0.1, spec)
        b = blur(x, spec) + 0.1
        assert torch.allclose(a, b, atol=1e-10)

    def test_batched_matches_unbatched(self):
        x = rand_image(seed=2)
        spec = BlurSpec("box", 5)
        single = blur(x, spec)
        batched = blur(torch.stack([x, x]), spec)
        assert torch.allclose(single, batched[0], atol=1e-12)

    def test_differentiable(self):
        x = rand_image(seed=3).requires_grad_(True)
        y = blur(x, BlurSpec("gaussian", 1.0)).square().mean()
        (grad,) = torch.autograd.grad(y, x)
        assert torch.isfinite(grad).all()
        assert grad.abs().sum() > 0

    def test_gradient_vs_finite_difference(self):
        spec = BlurSpec("gaussian", 0.5)
        x = rand_image(seed=4)

        def loss_of(xx):
            return blur(xx, spec).square().mean()

        xg = x.detach().clone().requires_grad_(True)
        (analytic,) = torch.autograd.grad(loss_of(xg), xg)
        numeric = torch.zeros_like(x)
        flat, nflat = x.flatten(), numeric.flatten()
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + 1e-6
            up = loss_of(x).item()
            flat[i] = orig - 1e-6
            down = loss_of(x).item()
            flat[i] = orig
            nflat[i] = (up - down) / 2e-6
        mask = analytic.abs() > 1e-4
        rel = ((analytic - numeric).abs() / analytic.abs().clamp_min(1e-12))[mask]
        assert (rel <= 1e-3).double().mean().item() >= 0.99


class TestBlurEvasions:
    def setup_method(self):
        self.g = init_generator(GeneratorConfig(width=4), 0)
        self.x = rand_image(seed=5)
        self.c = ClassCode(0, 3)
        self.cfg = AttackConfig(method="ifgsm", epsilon=0.05, step=0.01,
                                iters=6, direction="away",
                                target=TargetSpec("output"), seed=1)

    def test_unit_box_blur_matches_plain_attack(self):
        from disruptkit.attacks import disrupt

        a = attack_through_blur(self.g, self.x, self.c, BlurSpec("box", 1),
                                self.cfg)
        b = disrupt(self.g, self.x, self.c, self.cfg)
        assert torch.equal(a.x_adv, b.x_adv)

    def test_spread_single_blur_matches_whitebox(self):
        spec = BlurSpec("gaussian", 1.0)
        a = spread_spectrum_disrupt(self.g, self.x, self.c, [spec], self.cfg)
        b = attack_through_blur(self.g, self.x, self.c, spec, self.cfg)
        assert torch.equal(a.x_adv, b.x_adv)

    def test_eot_single_blur_matches_whitebox(self):
        spec = BlurSpec("gaussian", 1.0)
        a = eot_blur_disrupt(self.g, self.x, self.c, [spec], self.cfg)
        b = attack_through_blur(self.g, self.x, self.c, spec, self.cfg)
        assert torch.equal(a.x_adv, b.x_adv)

    def test_spread_cycles_one_blur_per_iteration(self):
        counting = CountingGen(self.g)
        blurs = [BlurSpec("box", 1), BlurSpec("box", 3), BlurSpec("box", 5)]
        spread_spectrum_disrupt(counting, self.x, self.c, blurs, self.cfg)
        # 3 resolve-time forwards (one reference per blur) + 1 per iteration
        assert counting.count == len(blurs) + self.cfg.iters

    def test_eot_costs_k_forwards_per_iteration(self):
        counting = CountingGen(self.g)
        blurs = [BlurSpec("box", 1), BlurSpec("box", 3), BlurSpec("box", 5)]
        eot_blur_disrupt(counting, self.x, self.c, blurs, self.cfg)
        assert counting.count == len(blurs) + self.cfg.iters * len(blurs)

    def test_empty_bank_rejected(self):
        with pytest.raises(ValueError):
            spread_spectrum_disrupt(self.g, self.x, self.c, [], self.cfg)
        with pytest.raises(ValueError):
            eot_blur_disrupt(self.g, self.x, self.c, [], self.cfg)

    def test_ball_constraint_held(self):
        blurs = default_blur_bank()
        for fn in (spread_spectrum_disrupt, eot_blur_disrupt):
            res = fn(self.g, self.x, self.c, blurs[:3], self.cfg)
            assert linf_norm(res.perturbation) <= self.cfg.epsilon + 1e-9
            assert res.x_adv.min() >= -1.0 and res.x_adv.max() <= 1.0


class TestPgdAscentHelper:
    def test_ball_respected(self):
        x = rand_image(seed=6)
        gen = torch.Generator().manual_seed(0)

        def objective(xp):
            return xp.square().mean()

        out = _pgd_ascent(objective, x, 0.1, 0.025, 5, gen)
        assert linf_norm(out - x) <= 0.1 + 1e-9

    def test_ascends(self):
        x = torch.zeros(3, 4, 4, dtype=torch.float64)
        gen = torch.Generator().manual_seed(0)

        def objective(xp):
            return xp.sum()

        out = _pgd_ascent(objective, x, 0.1, 0.05, 5, gen)
        assert torch.allclose(out, torch.full_like(x, 0.1), atol=1e-12)


def tiny_samples(n=12, size=8):
    cfg = DatasetConfig(n_samples=n, image_size=size, seed=0)
    return [generate_sample(cfg, i) for i in range(n)]


class TestTraining:
    def make_models(self):
        g = init_generator(GeneratorConfig(width=4), 0)
        d = init_discriminator(DiscriminatorConfig(width=4), 1)
        return g, d

    def test_vanilla_smoke_and_history(self):
        g, d = self.make_models()
        samples = tiny_samples()
        cfg = TrainConfig(iters=20, batch_size=4, lr=1e-3, seed=0)
        history = train_gan(g, d, samples, cfg)
        assert len(history) == 20
        assert history[0]["iteration"] == 0
        for h in history:
            assert all(
                isinstance(h[k], float)
                for k in ("loss_d", "loss_g_adv", "loss_g_rec")
            )

    def test_training_reduces_reconstruction(self):
        g, d = self.make_models()
        samples = tiny_samples()
        c = ClassCode(0, 3)
        with torch.no_grad():
            before = sum(
                l1_distance(g(s.x, c), s.targets[0]) for s in samples
            )
        train_gan(g, d, samples, TrainConfig(iters=150, batch_size=8,
                                             lr=2e-3, seed=0))
        with torch.no_grad():
            after = sum(
                l1_distance(g(s.x, c), s.targets[0]) for s in samples
            )
        assert after < before

    def test_deterministic_weights(self):
        samples = tiny_samples()
        states = []
        for _ in range(2):
            g, d = self.make_models()
            train_gan(g, d, samples, TrainConfig(iters=15, batch_size=4,
                                                 lr=1e-3, seed=3))
            states.append({k: v.clone() for k, v in g.state_dict().items()})
        assert all(torch.equal(states[0][k], states[1][k]) for k in states[0])

    def test_adv_variants_run(self):
        samples = tiny_samples()
        inner = AttackConfig(method="pgd", epsilon=0.05, step=0.0125, iters=2,
                             direction="away", seed=0)
        for fn, variant in ((train_gan_generator_adv, "generator_only"),
                            (train_gan_gd_adv, "g_plus_d")):
            g, d = self.make_models()
            history = fn(g, d, samples, TrainConfig(iters=5, batch_size=4,
                                                    lr=1e-3, seed=0),
                         adv=AdvTrainConfig(variant=variant, inner=inner))
            assert len(history) == 5

    def test_adv_wrapper_variant_mismatch(self):
        g, d = self.make_models()
        with pytest.raises(ValueError):
            train_gan_generator_adv(
                g, d, [], TrainConfig(),
                adv=AdvTrainConfig(variant="g_plus_d"))
        with pytest.raises(ValueError):
            train_gan_gd_adv(
                g, d, [], TrainConfig(),
                adv=AdvTrainConfig(variant="generator_only"))

    def test_bad_optimizer_rejected(self):
        g, d = self.make_models()
        with pytest.raises(ValueError):
            train_gan(g, d, tiny_samples(4), TrainConfig(iters=1,
                                                         optimizer="rmsprop"))

    def test_bad_adv_variant_rejected(self):
        with pytest.raises(ValueError):
            AdvTrainConfig(variant="d_only")
