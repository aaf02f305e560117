import subprocess
import sys

import regiongrad


def test_every_advertised_name_resolves():
    for name in regiongrad.__all__:
        assert getattr(regiongrad, name, None) is not None, name


def test_tensor_submodule_not_shadowed():
    import regiongrad.tensor as mod

    assert mod.__name__ == "regiongrad.tensor"
    assert callable(mod.tensor)


def test_module_entrypoint_prints_usage():
    proc = subprocess.run(
        [sys.executable, "-m", "regiongrad", "--help"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert "generate-data" in proc.stdout
