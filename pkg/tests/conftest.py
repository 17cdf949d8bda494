import pytest

from mpoxvlm.config import load_config
from mpoxvlm.data.manifest import save_manifest
from mpoxvlm.data.synth import GeneratorConfig, generate_dataset

TINY_DATA = GeneratorConfig(n_total=70, image_size=16)

# small enough that every stage of every row trains in seconds
TINY_OVERRIDES = [
    "data.n_total=70",
    "data.image_size=16",
    "encoder.image_size=16",
    "encoder.patch=8",
    "encoder.dim=16",
    "encoder.depth=1",
    "encoder.heads=2",
    "encoder.dec_dim=8",
    "encoder.dec_depth=1",
    "encoder.dec_heads=2",
    "encoder.contrastive_dim=8",
    "lm.dim=16",
    "lm.depth=1",
    "lm.heads=2",
    "lm.adapter_hidden=16",
    "lm.lora_rank=2",
    "lm.lora_alpha=4.0",
] + [
    f"stages.{s}.{k}={v}"
    for s in ("mae", "classify", "vl", "lm_pretrain", "align", "finetune")
    for k, v in (("steps", 6), ("batch_size", 8), ("eval_every", 3), ("lr", 1e-2))
]


def tiny_config(data_dir, *extra, seeds="1"):
    return load_config(None, TINY_OVERRIDES + [f"data.dir={data_dir}", f"seeds={seeds}", *extra], env={})


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    save_manifest(generate_dataset(TINY_DATA, 1), out)
    return out


# ---- one summary line per acceptance criterion

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
