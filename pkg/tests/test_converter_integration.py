"""Cross-language wire contract: the TypeScript converter's output must load,
validate, and re-serialize byte-identically through the Python package.

Skipped when node or the built converter is unavailable. This is the slow
full-size (ViT-Base) check; the converter's own unit tests run in its
package (converter/, `npm test`).
"""

import shutil
import subprocess
import zipfile
from pathlib import Path

import numpy as np
import pytest

from vitforge.checkpoint import load_checkpoint, serialize
from vitforge.model import count_parameters

CONVERTER_MAIN = Path(__file__).resolve().parent.parent / "converter" / "dist" / "src" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not CONVERTER_MAIN.is_file(),
    reason="node or the built converter (converter/dist) is unavailable",
)


def release_layout_shapes(head_classes=10):
    d, mlp, heads, head_dim = 768, 3072, 12, 64
    shapes = {
        "embedding/kernel": (16, 16, 3, d),
        "embedding/bias": (d,),
        "cls": (1, 1, d),
        "Transformer/posembed_input/pos_embedding": (1, 197, d),
        "Transformer/encoder_norm/scale": (d,),
        "Transformer/encoder_norm/bias": (d,),
        "head/kernel": (d, head_classes),
        "head/bias": (head_classes,),
    }
    for layer in range(12):
        p = f"Transformer/encoderblock_{layer}"
        attn = f"{p}/MultiHeadDotProductAttention_1"
        shapes[f"{p}/LayerNorm_0/scale"] = (d,)
        shapes[f"{p}/LayerNorm_0/bias"] = (d,)
        shapes[f"{p}/LayerNorm_2/scale"] = (d,)
        shapes[f"{p}/LayerNorm_2/bias"] = (d,)
        for proj in ("query", "key", "value"):
            shapes[f"{attn}/{proj}/kernel"] = (d, heads, head_dim)
            shapes[f"{attn}/{proj}/bias"] = (heads, head_dim)
        shapes[f"{attn}/out/kernel"] = (heads, head_dim, d)
        shapes[f"{attn}/out/bias"] = (d,)
        shapes[f"{p}/MlpBlock_3/Dense_0/kernel"] = (d, mlp)
        shapes[f"{p}/MlpBlock_3/Dense_0/bias"] = (mlp,)
        shapes[f"{p}/MlpBlock_3/Dense_1/kernel"] = (mlp, d)
        shapes[f"{p}/MlpBlock_3/Dense_1/bias"] = (d,)
    return shapes


def write_release_archive(path):
    arrays = {}
    salt = 0
    for name, shape in release_layout_shapes().items():
        count = int(np.prod(shape))
        values = (((np.arange(count) + salt) % 2001 - 1000) / 1000).astype(np.float32)
        arrays[name] = values.reshape(shape)
        salt += 101
    np.savez(path, **arrays)
    with zipfile.ZipFile(path) as zf:  # sanity: names survived as-is
        assert "embedding/kernel.npy" in zf.namelist()
    return arrays


def test_converted_checkpoint_satisfies_the_python_contract(tmp_path):
    source = tmp_path / "vit_base.npz"
    out = tmp_path / "converted.vitc"
    arrays = write_release_archive(source)

    proc = subprocess.run(
        ["node", str(CONVERTER_MAIN), "--source", str(source), "--out", str(out),
         "--classes", "2", "--seed", "5"],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout

    loaded = load_checkpoint(out)  # checksum + config/shape validation inside
    assert loaded.config.num_classes == 2
    assert loaded.config.hidden_dim == 768
    assert count_parameters(loaded.params) == 85_798_656 + 768 * 2 + 2

    # Spot-check the value mapping: an untransformed tensor carries over.
    w1 = loaded.params["encoder.0.mlp.w1"]
    np.testing.assert_array_equal(
        w1, arrays["Transformer/encoderblock_0/MlpBlock_3/Dense_0/kernel"]
    )
    # And the patch projection obeys the (c, py, px) flattening.
    kernel = arrays["embedding/kernel"]
    converted = loaded.params["embed.patch.weight"]
    for py, px, c, col in ((0, 0, 0, 0), (3, 7, 1, 5), (15, 15, 2, 767)):
        row = c * 256 + py * 16 + px
        assert converted[row, col] == kernel[py, px, c, col]

    # Fresh head: truncated-normal weights within two std, zero bias.
    head = loaded.params["head.weight"]
    assert head.shape == (768, 2)
    assert 0 < np.abs(head).max() <= 0.04 + 1e-9
    assert np.all(loaded.params["head.bias"] == 0)

    # Byte-identical re-serialization through the Python writer.
    assert serialize(loaded.params, loaded.config) == out.read_bytes()
