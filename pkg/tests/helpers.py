"""Small scenario builders shared by the tests."""
import numpy as np

from mixedflow.ped_dynamics import PedScenario


def single_junction(initial, arrivals=None, alpha=0.5, gamma=0.0, steps=3, history=-1, delta=15.0):
    """Hand-built one-junction scenario with constant ratios."""
    arrivals = np.zeros((steps, 4), dtype=int) if arrivals is None else np.asarray(arrivals)
    return PedScenario(
        initial_volume=np.asarray([initial]),
        arrivals=arrivals[None],
        alpha=np.full((1, steps, 4), alpha),
        gamma=np.full((1, steps, 4), gamma),
        delta=delta,
        history=np.array([history]),
    )
