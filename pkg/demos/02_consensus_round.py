"""What one consensus round does on a four-node ring.

Run:  python3 demos/02_consensus_round.py

Every node filters a few scans on its own; then each protocol runs two
rounds and we compare the cardinality spread, the network OSPA and what
was sent.
"""
import numpy as np

from gmconsensus import GaussianMixture, GMPHDFilter, Protocol, ReductionConfig, ring_network, run_consensus
from gmconsensus.phd import cv_motion, default_birth_model
from gmconsensus.scenario import generate_measurements, network_sensors, scripted_truth

graph = ring_network(4)
truth = scripted_truth("single", 20)
sensors = network_sensors(graph, "single")
filters = [GMPHDFilter(cv_motion(), default_birth_model(), s, ReductionConfig()) for s in sensors]
scans = [generate_measurements(truth, s, [3, a]).scans for a, s in enumerate(sensors)]

state = [GaussianMixture.empty(4) for _ in sensors]
for k in range(20):
    state = [f.step(g, scans[a][k]) for a, (f, g) in enumerate(zip(filters, state))]

print("before fusion: cardinality per node", np.round([g.weight_sum for g in state], 3))
for proto in (Protocol.CCA, Protocol.CCF, Protocol.CGMM, Protocol.CGMA, Protocol.GCI):
    _, reports = run_consensus(graph, state, proto, 2, truth_positions=truth.positions(19))
    last = reports[-1]
    sent = sum(r.total_tuples for r in reports)
    print(f"{proto.value:>4}: cardinality {np.round(last.cardinality, 3)}, "
          f"network OSPA {last.network_ospa:6.1f} m, {sent} tuples sent")
