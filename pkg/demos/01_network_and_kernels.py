"""Walk through the stream-network covariance construction.

Builds the three-segment network, inspects connectivity and stream
distances, and evaluates the separable space-time covariances between
latent-function values, including the flow-unconnected zero and the
branch-weighted cross-site terms.
"""

import numpy as np
from scipy.special import ndtr

from streamgp.kernels import (
    KernelConfig,
    LatentInputs,
    MovingAverageParams,
    build_gram,
    st_cov_ff,
    temporal_cov,
)
from streamgp.network import StreamNetwork

# The stream: segment 1 runs from the outlet to the junction; segments 2
# and 3 branch upstream.  Site s1 sits 15 units below the junction, s2 and
# s3 sit 5 and 10 units above it.
net = StreamNetwork.from_edge_distances(15.0, 5.0, 10.0)
print("flow connected (s1, s2):", net.flow_connected("s1", "s2"))
print("flow connected (s2, s3):", net.flow_connected("s2", "s3"))
print("stream distance s1-s2:", net.hydro_distance("s1", "s2"))
print("stream distance s2-s3:", net.hydro_distance("s2", "s3"))

# Branch weights keep variances stationary across the junction; their
# squares sum to one.
gamma = np.array([0.9808, 0.1199])
w = ndtr(gamma) ** 2
print("branch weights:", w.round(4), "sum:", w.sum().round(4))

# Kernel parameters of the two latent functions used by the simulation
# studies (exponential in space, exponentiated-quadratic in time).
p1 = MovingAverageParams(nu_s=15.625, l_s=15.0, nu_t=0.495, l_t=0.5)
p2 = MovingAverageParams(nu_s=18.75, l_s=20.0, nu_t=1.32, l_t=1.7)
cfg = KernelConfig(latent=(p1, p2), inducing=(p1, p2))
inputs = LatentInputs(tau=np.array([3.8730, 2.2361, 3.1623]), gamma=gamma,
                      hprime=np.array([10.0, 3.0, 7.0]), alpha=gamma)

print("\ntemporal covariance f1 x f2 at lag 0:",
      float(temporal_cov("f", 1, "f", 2, 0.0, 0.0, cfg)).__round__(5))
print("variance of f1 at s1:", float(st_cov_ff(1, 1, "s1", "s1", 0.0, 0.0, cfg, inputs)).__round__(5))
print("cross-site f1(s1) x f1(s2):",
      float(st_cov_ff(1, 1, "s1", "s2", 0.0, 0.0, cfg, inputs)).__round__(5))
print("unconnected f1(s2) x f1(s3):",
      float(st_cov_ff(1, 1, "s2", "s3", 0.0, 0.0, cfg, inputs)))

# A small joint covariance matrix over both functions, all sites, two times.
rows = [(a, s, t) for a in (1, 2) for s in ("s1", "s2", "s3") for t in (0.0, 2.0)]
K = build_gram("ff", rows, cfg, inputs)
print("\njoint covariance over", len(rows), "rows; smallest eigenvalue:",
      float(np.linalg.eigvalsh(K).min()).__round__(8))
