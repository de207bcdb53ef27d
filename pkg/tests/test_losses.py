import math

import numpy as np
import pytest

from cganseg.autodiff import Tensor
from cganseg.losses import LossConfig, cross_entropy, discriminator_loss, generator_loss

from conftest import FD_RTOL, grad_errors


def _masks(fake_value: float, n: int = 2, res: int = 4):
    fake = Tensor(np.full((n, 1, res, res), fake_value), requires_grad=True)
    true = Tensor(np.zeros((n, 1, res, res)))
    return fake, true


class TestHandValues:
    def test_generator_half_score_l1_tenth(self):
        fake, true = _masks(0.1)
        loss = generator_loss(Tensor(np.array([0.5, 0.5])), fake, true, LossConfig(100.0))
        assert loss.item() == pytest.approx(math.log(2) + 10.0, abs=1e-9)
        assert loss.item() == pytest.approx(10.69314718056, abs=1e-9)

    def test_discriminator_both_half(self):
        loss = discriminator_loss(Tensor(np.array([0.5])), Tensor(np.array([0.5])))
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-9)
        assert loss.item() == pytest.approx(1.38629436112, abs=1e-9)

    def test_discriminator_mixed_batch(self):
        real = Tensor(np.array([0.9, 0.5]))
        fake = Tensor(np.array([0.2, 0.5]))
        expected = ((-math.log(0.9) - math.log(0.8)) + 2 * math.log(2)) / 2
        assert discriminator_loss(real, fake).item() == pytest.approx(expected, abs=1e-12)
        assert -math.log(0.9) - math.log(0.8) == pytest.approx(0.32850406697, abs=1e-9)

    def test_lambda_zero_is_pure_adversarial(self):
        fake, true = _masks(0.7)
        loss = generator_loss(Tensor(np.array([0.25, 0.25])), fake, true, LossConfig(0.0))
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_perfect_scores_clamped_finite(self):
        loss = discriminator_loss(Tensor(np.array([0.0])), Tensor(np.array([1.0])),
                                  LossConfig(epsilon_log=1e-12))
        assert loss.item() == pytest.approx(-2 * math.log(1e-12), rel=1e-12)


class TestMonotonicity:
    @pytest.mark.parametrize("lo,hi", [(0.1, 0.2), (0.5, 0.9), (0.01, 0.99)])
    def test_generator_loss_falls_as_d_is_fooled(self, lo, hi):
        fake, true = _masks(0.3)
        a = generator_loss(Tensor(np.array([lo, lo])), fake, true).item()
        b = generator_loss(Tensor(np.array([hi, hi])), fake, true).item()
        assert b < a

    def test_generator_loss_grows_with_l1(self):
        scores = Tensor(np.array([0.5, 0.5]))
        values = [generator_loss(scores, *_masks(v)).item() for v in (0.0, 0.2, 0.4, 0.8)]
        assert values == sorted(values)

    def test_discriminator_prefers_correct_scores(self):
        good = discriminator_loss(Tensor(np.array([0.9])), Tensor(np.array([0.1]))).item()
        bad = discriminator_loss(Tensor(np.array([0.1])), Tensor(np.array([0.9]))).item()
        assert good < bad


class TestGradients:
    def test_generator_loss_fd(self, rng):
        scores = Tensor(rng.uniform(0.2, 0.8, 3), requires_grad=True)
        fake = Tensor(rng.uniform(0.05, 0.95, (3, 1, 4, 4)), requires_grad=True)
        true = Tensor((rng.random((3, 1, 4, 4)) > 0.5).astype(float))
        errs = grad_errors(lambda: generator_loss(scores, fake, true, LossConfig(100.0)),
                           [scores, fake])
        assert max(errs) < FD_RTOL

    def test_discriminator_loss_fd(self, rng):
        real = Tensor(rng.uniform(0.1, 0.9, 4), requires_grad=True)
        fake = Tensor(rng.uniform(0.1, 0.9, 4), requires_grad=True)
        assert max(grad_errors(lambda: discriminator_loss(real, fake), [real, fake])) < FD_RTOL

    def test_cross_entropy_fd_and_value(self, rng):
        logits = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        labels = np.array([0, 3, 1, 2, 3])
        z = logits.data
        lse = np.log(np.exp(z).sum(axis=1))
        expected = float(np.mean(lse - z[np.arange(5), labels]))
        assert cross_entropy(logits, labels).item() == pytest.approx(expected, abs=1e-12)
        assert grad_errors(lambda: cross_entropy(logits, labels), [logits])[0] < FD_RTOL


class TestValidation:
    @pytest.mark.parametrize("kwargs", [{"lambda_l1": -1.0}, {"epsilon_log": 0.0},
                                        {"epsilon_log": 1e-3}])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)

    def test_score_out_of_range(self):
        with pytest.raises(ValueError, match="lie in"):
            discriminator_loss(Tensor(np.array([1.2])), Tensor(np.array([0.5])))

    def test_mask_shape_mismatch(self):
        fake, _ = _masks(0.1)
        with pytest.raises(ValueError, match="shapes differ"):
            generator_loss(Tensor(np.array([0.5, 0.5])), fake, Tensor(np.zeros((2, 1, 8, 8))))

    def test_scores_must_be_vector(self):
        with pytest.raises(ValueError, match="1-d"):
            discriminator_loss(Tensor(np.full((1, 1), 0.5)), Tensor(np.full((1, 1), 0.5)))
