import pytest

from perturbed_cycles.benchmarks import hopf_diffusion, hopf_normal_form
from perturbed_cycles.cycle_geometry import build_frame, compute_coefficients, find_limit_cycle


@pytest.fixture(scope="session")
def hopf():
    field = hopf_normal_form()
    cycle = find_limit_cycle(field, [2.0, 0.0])
    frame = build_frame(cycle)
    coeffs = compute_coefficients(cycle, frame, hopf_diffusion())
    return field, cycle, frame, coeffs
