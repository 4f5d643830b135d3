import copy

import pytest

SMALL_BARS = {
    "seed": 5,
    "dataset": {"source": "bars", "n_per_class": 60, "classes": 3, "side": 10,
                "noise_sigma": 0.3, "angle_jitter": 1.0, "arc": 300},
    "ood": {"source": "noise", "n": 40},
    "methods": [
        {"name": "vanilla", "kind": "vanilla", "model": {"layer_widths": [16], "epochs": 3}},
        {"name": "temp_scaling", "kind": "temp_scaling"},
        {"name": "dropout", "kind": "dropout",
         "model": {"layer_widths": [16], "epochs": 3, "mc_samples": 3},
         "tune": {"budget": 2, "space": {"dropout_rate": [0.1, 0.3]}}},
        {"name": "ensemble", "kind": "ensemble", "ensemble_size": 2, "model": {"layer_widths": [16], "epochs": 3}},
        {"name": "svi", "kind": "svi", "model": {"layer_widths": [16], "epochs": 3, "mc_samples": 3}},
    ],
    "shifts": [{"kind": "rotate", "levels": [0, 45, 90]}, {"kind": "blur", "levels": [0, 1, 2]}],
    "metrics": ["accuracy", "brier", "ece", "nll", "mean_entropy"],
    "size_study": {"members": 3, "sizes": [1, 2, 3], "metric": "brier",
                   "shift": {"kind": "rotate", "level": 45}, "resamples": 4},
}


@pytest.fixture
def small_config():
    return copy.deepcopy(SMALL_BARS)


# criterion number -> list of (label, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{label}: {'pass' if p else 'FAIL'} ({d})" for label, p, d in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
