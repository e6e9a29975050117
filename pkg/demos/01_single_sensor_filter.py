"""One linear sensor tracking one target with a GM-PHD filter.

Run:  python3 demos/01_single_sensor_filter.py

Prints the estimated target count and the position error every ten steps,
then the run averages.
"""
import numpy as np

from gmconsensus import GaussianMixture, GMPHDFilter, ReductionConfig, estimate, linear_sensor, ospa
from gmconsensus.phd import POS_IDX, cv_motion, default_birth_model
from gmconsensus.scenario import constant_velocity_truth, generate_measurements

truth = constant_velocity_truth([-500.0, 8.0, -500.0, 6.0], steps=100)
sensor = linear_sensor(detect_prob=0.98, clutter_rate=1.0)
filt = GMPHDFilter(cv_motion(), default_birth_model(), sensor, ReductionConfig())
scans = generate_measurements(truth, sensor, seed=1).scans

gm = GaussianMixture.empty(4)
errors = []
for k, Z in enumerate(scans):
    gm = filt.step(gm, Z)
    est = estimate(gm)
    errors.append(ospa(est.states[:, POS_IDX], truth.positions(k)))
    if k % 10 == 0:
        print(f"step {k:3d}: {len(Z):2d} measurements, {len(gm):2d} components, "
              f"cardinality {est.cardinality:.2f}, OSPA {errors[-1]:7.1f} m")

print(f"\nmean OSPA {np.mean(errors):.1f} m; the first steps pay the 1000 m cutoff until the birth is confirmed")
