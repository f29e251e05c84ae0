#!/usr/bin/env python3
"""Closed-form audit values for Klein-Gordon u_tt = u_xx - u + ... at k0 = sqrt(3).

Branches are omega = +-sqrt(1 + k^2) (the inert transport mode is ignored). The carrier
sits on the lower branch, omega_{n0}(k0) = -2, so the carrier frequency is 2.

    python3 kg_audit.py > ../golden/kg_audit_sqrt3.json
"""
import json
import math

K0 = math.sqrt(3.0)
W0 = 2.0


def w(sign, k):
    return sign * math.sqrt(1.0 + k * k)


def v(sign, k):
    return sign * k / math.sqrt(1.0 + k * k)


# harmonic divisors |omega_n(m k0) + m W0|, (n0, m = 1) excluded
harmonics = {}
for m in range(0, 4):
    vals = [abs(w(s, m * K0) + m * W0) for s in (-1, 1) if not (s == -1 and m == 1)]
    harmonics["m=%d" % m] = min(vals)

# three-wave gap |omega_a(k) - omega_b(k - k0) - omega_{n0}(k0)| on a fine grid and far out
def gap(a, b, k):
    return abs(w(a, k) - w(b, k - K0) + W0)

pairs = [(a, b) for a in (-1, 1) for b in (-1, 1)]
ks = [i * 1e-3 for i in range(-200000, 200001)]
grid_min = min(gap(a, b, k) for a, b in pairs for k in ks)
# matched slopes: the (-,-) pair decreases monotonically to W0 - k0 as k -> +inf
tail_limit = min(abs(W0 - K0), abs(W0 + K0))
print(json.dumps({
    "system": "klein-gordon",
    "k0": K0,
    "carrier_frequency": W0,
    "nr1": {"value": min(harmonics.values()), "entries": harmonics},
    "nr1d": abs(v(1, K0) - v(-1, K0)),
    "nr2": {
        "grid_min_abs_k_le_200": grid_min,
        "infimum": tail_limit,
        "attained": False,
        "witness": "branches (lower, lower), k -> +inf",
    },
    "nr3_pass": True,
}, indent=2, sort_keys=True))
