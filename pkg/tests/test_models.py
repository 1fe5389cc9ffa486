import numpy as np
import pytest

from acc_audio.models import (
    STRUCTURE,
    ModelSpec,
    SpecError,
    build,
    default_config,
    layer_census,
    load_config,
    specs_to_ini,
)
from acc_audio.nn import Conv2D, Dense, Dropout, MaxPool2D, ReLU, Softmax, count_params

# pinned once from count_params on the shipped defaults
DEFAULT_COUNTS = {"action": 9_535_715, "pouring": 5_038_950, "shaking": 9_503_460}
DEFAULT_TOTAL = 24_078_125

SMALL = {
    "action": ModelSpec("action", (2, 2, 3, 3), (8, 5, 3)),
    "pouring": ModelSpec("pouring", (2, 2, 3, 3, 4, 4), (8, 5, 6), dropout=0.75),
    "shaking": ModelSpec("shaking", (2, 2, 3, 3), (8, 4)),
}


def formula_count(spec: ModelSpec, n: int = 96) -> int:
    """Parameter count by hand: 9*in*out + out per conv, in*out + out per dense."""
    total, ch, side = 0, 1, n
    for i, out in enumerate(spec.conv_channels):
        total += 9 * ch * out + out
        ch = out
        if i % 2 == 1:
            side = -(-side // 2)
    feats = ch * side * side
    for width in spec.fc_sizes:
        total += feats * width + width
        feats = width
    return total


@pytest.mark.parametrize("mid", ["action", "pouring", "shaking"])
def test_default_param_counts(mid):
    spec = default_config()[mid]
    net = build(spec)
    assert count_params(net) == formula_count(spec) == DEFAULT_COUNTS[mid]


def test_default_total():
    assert sum(count_params(build(s)) for s in default_config().values()) == DEFAULT_TOTAL


def test_default_widths():
    d = default_config()
    assert d["action"].conv_channels == (32, 32, 64, 64) and d["action"].fc_sizes == (256, 128, 3)
    assert d["pouring"].conv_channels == (32, 32, 64, 64, 128, 128) and d["pouring"].dropout == 0.75
    assert d["shaking"].fc_sizes == (256, 4)


@pytest.mark.parametrize("mid", ["action", "pouring", "shaking"])
def test_structural_audit(mid):
    net = build(SMALL[mid])
    census = layer_census(net)
    n_conv, n_pool, n_fc, n_out = STRUCTURE[mid]
    assert census["conv2d"] == n_conv and census["maxpool2d"] == n_pool and census["dense"] == n_fc
    assert census["softmax"] == 1 and isinstance(net.layers[-1], Softmax)
    assert net.output_dim == n_out
    layers = net.layers
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv2D):
            assert isinstance(layers[i + 1], ReLU)
        if isinstance(layer, Dense) and i + 1 < len(layers) - 1:
            assert isinstance(layers[i + 1], ReLU)
    # a pool after every second conv, preceded by dropout for the pouring model
    convs_seen = 0
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv2D):
            convs_seen += 1
        if isinstance(layer, MaxPool2D):
            assert convs_seen % 2 == 0
            assert isinstance(layers[i - 1], Dropout) == (mid == "pouring")
    assert census.get("dropout", 0) == (n_pool if mid == "pouring" else 0)


def test_action_forward_on_96():
    net = build(SMALL["action"])
    out = net.predict(np.random.default_rng(0).uniform(0, 1, (2, 96, 96, 1)).astype(np.float32))
    assert out.shape == (2, 3) and np.allclose(out.sum(axis=1), 1, atol=1e-6)


def test_output_dims():
    assert build(SMALL["shaking"]).output_dim == 4
    assert build(SMALL["pouring"]).output_dim == 6


def test_spec_errors_name_count():
    with pytest.raises(SpecError, match="4 conv"):
        build(ModelSpec("action", (1, 2, 3, 4, 5), (8, 5, 3)))
    with pytest.raises(SpecError, match="output"):
        build(ModelSpec("shaking", (2, 2, 2, 2), (8, 5)))
    with pytest.raises(SpecError, match="dropout"):
        build(ModelSpec("pouring", (2,) * 6, (4, 4, 6)))
    with pytest.raises(SpecError):
        build(SMALL["action"], n=11)


def test_build_seeded():
    a = build(SMALL["action"], seed=5)
    b = build(SMALL["action"], seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))


def test_config_file_overrides(tmp_path):
    path = tmp_path / "m.ini"
    path.write_text("[action]\nconv_channels = 4, 4, 8, 8\nfc_sizes = 16, 8, 3\n\n[pouring]\ndropout_keep = 0.5\n")
    specs = load_config(path)
    assert specs["action"].conv_channels == (4, 4, 8, 8)
    assert specs["pouring"].dropout == 0.5
    assert specs["shaking"] == default_config()["shaking"]
    with pytest.raises(SpecError):
        load_config(text="[action]\nconv_channels = 1,2,3,4,5\n")


def test_ini_roundtrip():
    text = "\n".join(f"[{k}]\n" + "\n".join(f"{a} = {b}" for a, b in v.items()) for k, v in specs_to_ini(SMALL).items())
    assert load_config(text=text) == SMALL
