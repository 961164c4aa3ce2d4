import json

import numpy as np
import pytest

from gvqlab import tensor as T
from gvqlab.checkpoint import load_codebook, load_encoder, save_codebook, save_encoder
from gvqlab.config import ConfigError, TrainConfig, coerce_overrides, preset, read_config, write_config
from gvqlab.encoder import init_decoder, init_params
from gvqlab.vq import Codebook


def test_config_roundtrip(tmp_path):
    cfg = TrainConfig(K=16, tau=0.3, method="rgvq", sets_dir=None, dense_link=True)
    write_config(cfg, tmp_path / "c.ini")
    assert read_config(tmp_path / "c.ini") == cfg


def test_config_overrides_and_errors(tmp_path):
    (tmp_path / "c.ini").write_text("[meta]\nversion = 1\n[quantizer]\nK = 8\n")
    assert read_config(tmp_path / "c.ini", K=4).K == 4
    (tmp_path / "bad.ini").write_text("[quantizer]\nKK = 8\n")
    with pytest.raises(ConfigError):
        read_config(tmp_path / "bad.ini")
    (tmp_path / "v.ini").write_text("[meta]\nversion = 2\n")
    with pytest.raises(ConfigError):
        read_config(tmp_path / "v.ini")
    with pytest.raises(ConfigError):
        read_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        coerce_overrides({"K": "many"})
    with pytest.raises(ConfigError):
        coerce_overrides({"nope": "1"})


@pytest.mark.parametrize("bad", [dict(K=0), dict(tau=0.0), dict(method="pq"), dict(lr=-1.0), dict(epochs=0),
                                 dict(mitigation="dropout"), dict(w_feat=-1.0), dict(edges="e.txt")])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_presets():
    assert preset("desk") == TrainConfig()
    full = preset("full")
    assert (full.hidden_dim, full.K, full.lr) == (256, 512, 1e-4)
    with pytest.raises(ConfigError):
        preset("huge")


def test_encoder_checkpoint_roundtrip(tmp_path, rng):
    enc = init_params([3, 5, 4], 0, aggregator="max", activation="relu")
    dec = init_decoder(4, 3, 1)
    save_encoder(tmp_path / "e.json", enc, dec)
    enc2, dec2 = load_encoder(tmp_path / "e.json")
    assert (enc2.aggregator, enc2.activation, enc2.depth) == ("max", "relu", 2)
    for a, b in zip(enc.tensors() + dec.tensors(), enc2.tensors() + dec2.tensors()):
        assert np.array_equal(a.data, b.data)
    save_encoder(tmp_path / "e2.json", enc)
    assert load_encoder(tmp_path / "e2.json")[1] is None


def test_codebook_checkpoint_roundtrip_and_version(tmp_path, rng):
    cb = Codebook(T.Tensor(rng.standard_normal((4, 3)), requires_grad=True), similarity="cosine")
    save_codebook(tmp_path / "c.json", cb)
    back = load_codebook(tmp_path / "c.json")
    assert np.array_equal(back.entries.data, cb.entries.data) and back.similarity == "cosine"
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["format"] == "gvqlab-params" and doc["version"] == 1
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_codebook(tmp_path / "v.json")
    doc["version"] = 1
    doc["meta"]["K"] = 5
    (tmp_path / "k.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_codebook(tmp_path / "k.json")
