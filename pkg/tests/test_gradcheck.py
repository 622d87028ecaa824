import pytest
import torch

from mftts.model import Tacotron, Variant

from gradcheck_util import fd_check
from test_model import make_input, tiny_config


@pytest.mark.parametrize("variant", list(Variant))
def test_finite_difference_gradients(variant):
    torch.manual_seed(0)
    cfg = tiny_config(variant)
    model = Tacotron(cfg)
    inp = make_input(cfg, T=5, dtype=torch.float64)
    target = torch.randn(1, 6, cfg.mel_dim, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    worst = fd_check(model, inp, target)
    assert {"encoder_conv", "attention", "decoder", "postnet"} <= set(worst)
    if variant in (Variant.PHONE_PARSER, Variant.PHONE_WORD_PARSER):
        assert "side_dense" in worst
    for group, err in worst.items():
        assert err < 1e-3, (group, err)
