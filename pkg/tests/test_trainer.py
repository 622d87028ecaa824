import numpy as np
import pytest
import torch

from mftts.errors import ConfigError, NumericalError
from mftts.model import ModelConfig, Tacotron, Variant
from mftts.trainer import (
    TrainConfig, build_optimizer, collate, compute_loss, latest_checkpoint, load_checkpoint, save_checkpoint, train,
)

from test_batching import EOS_ID, fake_utterance
from test_model import tiny_config


def fake_data(cfg, n=5, seed=0):
    rng = np.random.default_rng(seed)
    return [fake_utterance(f"u{i}", 3 + i, 6 + 2 * i, cfg, rng) for i in range(n)]


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(50000) == pytest.approx(1e-5)
    assert cfg.lr_at(10**6) == pytest.approx(1e-5)
    assert cfg.lr_at(25000) == pytest.approx(1e-4)


def test_resume_matches_uninterrupted(tmp_path):
    mcfg = tiny_config(Variant.PHONE_WORD_PARSER, prenet_dropout=0.5, conv_dropout=0.2)
    data = fake_data(mcfg)
    tcfg = dict(batch_size=2, seed=3, checkpoint_every=4)

    torch.manual_seed(0)
    full = train(Tacotron(mcfg), data, TrainConfig(max_steps=8, **tcfg), eos_id=EOS_ID)

    torch.manual_seed(0)
    first = train(Tacotron(mcfg), data, TrainConfig(max_steps=4, **tcfg), tmp_path, eos_id=EOS_ID)
    assert latest_checkpoint(tmp_path).name == "step_000004.pt"
    torch.manual_seed(123)  # a fresh process would start from an unrelated RNG state
    resumed = train(Tacotron(mcfg), data, TrainConfig(max_steps=8, **tcfg), tmp_path, eos_id=EOS_ID,
                    resume_from=latest_checkpoint(tmp_path))
    assert resumed.step == 8
    np.testing.assert_allclose(first.losses + resumed.losses, full.losses, rtol=0, atol=1e-5)


def test_same_seed_same_losses():
    mcfg = tiny_config(prenet_dropout=0.5)
    data = fake_data(mcfg)
    runs = []
    for _ in range(2):
        torch.manual_seed(0)
        runs.append(train(Tacotron(mcfg), data, TrainConfig(max_steps=5, batch_size=2, seed=1), eos_id=EOS_ID).losses)
    np.testing.assert_allclose(runs[0], runs[1], rtol=0, atol=1e-3)


def test_gradient_clipping_bounds_update():
    torch.manual_seed(0)
    mcfg = tiny_config()
    data = fake_data(mcfg, n=2)
    for u in data:
        u.mel *= 1e3  # large loss so clipping is active
    tcfg = TrainConfig(optimizer="sgd", learning_rate=0.01, grad_clip=1.0, max_steps=1, batch_size=2)
    model = Tacotron(mcfg)
    before = torch.cat([p.detach().flatten().clone() for p in model.parameters()])
    train(model, data, tcfg, eos_id=EOS_ID)
    after = torch.cat([p.detach().flatten() for p in model.parameters()])
    assert float((after - before).norm()) <= tcfg.learning_rate * tcfg.grad_clip * (1 + 1e-5)
    assert float((after - before).norm()) > 0.5 * tcfg.learning_rate * tcfg.grad_clip


def test_nan_loss_aborts_and_keeps_last_checkpoint(tmp_path):
    torch.manual_seed(0)
    mcfg = tiny_config()
    model = Tacotron(mcfg)

    def poison(step, loss):
        if step == 2:
            with torch.no_grad():
                model.decoder.mel_proj.bias.fill_(float("nan"))
        return False

    with pytest.raises(NumericalError) as exc:
        train(model, fake_data(mcfg), TrainConfig(max_steps=10, batch_size=2, checkpoint_every=1), tmp_path,
              eos_id=EOS_ID, callback=poison)
    assert "step_000002.pt" in str(exc.value)
    assert latest_checkpoint(tmp_path).name == "step_000002.pt"
    restored, ckpt = load_checkpoint(latest_checkpoint(tmp_path))
    assert ckpt["step"] == 2
    assert all(torch.isfinite(p).all() for p in restored.parameters())


def test_checkpoint_roundtrip_and_variant_check(tmp_path):
    torch.manual_seed(0)
    mcfg = tiny_config(Variant.PHONE_WORD)
    model = Tacotron(mcfg)
    path = save_checkpoint(tmp_path / "step_000007.pt", model, build_optimizer(model, TrainConfig()), 7,
                           extra={"inventory": ["SIL", "EOS"]})
    restored, ckpt = load_checkpoint(path, Variant.PHONE_WORD)
    assert restored.cfg == mcfg
    assert ckpt["extra"]["inventory"] == ["SIL", "EOS"]
    for a, b in zip(model.state_dict().values(), restored.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ConfigError):
        load_checkpoint(path, Variant.PHONE)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.pt")


def test_resume_into_wrong_variant(tmp_path):
    torch.manual_seed(0)
    path = save_checkpoint(tmp_path / "step_000001.pt", Tacotron(tiny_config(Variant.PHONE)), step=1)
    mcfg = tiny_config(Variant.PHONE_PARSER)
    with pytest.raises(ConfigError):
        train(Tacotron(mcfg), fake_data(mcfg), TrainConfig(max_steps=2), eos_id=EOS_ID, resume_from=path)


def test_data_variant_mismatch():
    data = fake_data(tiny_config(Variant.PHONE))
    with pytest.raises(ConfigError):
        train(Tacotron(tiny_config(Variant.PHONE_WORD)), data, TrainConfig(max_steps=1), eos_id=EOS_ID)


def test_invalid_train_config():
    for kw in (dict(batch_size=0), dict(grad_clip=0), dict(optimizer="lbfgs")):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def test_overfit_single_batch(corpus):
    """Loss on one repeated batch halves within 200 steps at width 0.25."""
    torch.manual_seed(0)
    utts = corpus.utterances(Variant.PHONE)[:2]
    cfg = ModelConfig(n_phones=len(corpus.lexicon.inventory), width_multiplier=0.25)
    res = train(Tacotron(cfg), utts, TrainConfig(max_steps=200, batch_size=2, seed=0), eos_id=corpus.eos_id)
    assert min(res.losses) <= 0.5 * res.losses[0]


def test_compute_loss_finite_on_corpus(corpus):
    torch.manual_seed(0)
    utts = corpus.utterances(Variant.PHONE_WORD_PARSER)
    cfg = ModelConfig(Variant.PHONE_WORD_PARSER, n_phones=len(corpus.lexicon.inventory),
                      word_dim=corpus.table.dim, width_multiplier=0.25)
    loss = compute_loss(Tacotron(cfg), collate(utts, corpus.eos_id, cfg.variant))
    assert torch.isfinite(loss) and loss.item() > 0
