import pytest

from holojpeg.pipeline import ExperimentConfig

TINY = dict(
    hologram_size=64,
    object_size=32,
    distances=(0.05,),
    train_objects=("coins", "moon"),
    test_objects=("camera",),
    stride=16,
    iterations=2,
    batch_size=4,
    eval_every=0,
    validation_size=8,
)


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig(**TINY, out=str(tmp_path / "run"))


def write_tiny_config(path, **extra):
    values = {**TINY, **extra}
    lines = []
    for k, v in values.items():
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    path.write_text("# tiny test run\n" + "\n".join(lines) + "\n")
    return path
