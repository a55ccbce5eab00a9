import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from songlight import dsp, models, training

settings.register_profile(
    "suite", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def make_tone(freq_hz: float, seconds: float = 3.5, amp: float = 0.5,
              sr: int = dsp.SAMPLE_RATE) -> dsp.AudioClip:
    t = np.arange(int(seconds * sr)) / sr
    return dsp.AudioClip(samples=amp * np.sin(2 * np.pi * freq_hz * t), sample_rate=sr)


@pytest.fixture(scope="session")
def tiny_config():
    return models.ModelConfig(variant="NAM_LF", n_classes=3, loss_kind="cce")


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return models.init_params(tiny_config, seed=0)


@pytest.fixture(scope="session")
def small_synth_dataset():
    # 2 classes x 8 clips: enough for a 16-song batch, cheap to build once
    spec = training.SyntheticSpec(n_classes=2, clips_per_class=8, seed=3)
    return training.generate_synthetic(spec)


@pytest.fixture(scope="session")
def toy_model_path():
    from pathlib import Path
    path = Path(__file__).parent / "fixtures" / "toy_model.pmhl"
    if not path.exists():
        pytest.skip("toy model fixture missing; run scripts/make_toy_model.py")
    return path
