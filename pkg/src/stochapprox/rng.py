"""Counter-based random streams.

The draw for (seed, lane, step) comes from the Philox-4x64 block cipher keyed
by ``(seed, lane)`` at counter ``(step - 1) // 4``, so it depends on nothing
but those three integers: adapted transforms that consume an auxiliary lane
cannot shift the noise lane, and any step can be regenerated on its own.
Gaussian variates use Wichura's AS241 rational approximation of the normal
quantile, which involves only arithmetic, ``log`` and ``sqrt``.
"""

from __future__ import annotations

import numpy as np

NOISE_LANE = 0
AUX_LANE = 1
SECOND_NOISE_LANE = 2

_MASK64 = (1 << 64) - 1


def _key(seed: int, lane: int) -> np.ndarray:
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.array([seed, int(lane)], dtype=np.uint64)


def _to_open_unit(raw: np.ndarray) -> np.ndarray:
    # 53 high bits, centred in their cell: strictly inside (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_stream(seed: int, steps: int, lane: int = NOISE_LANE) -> np.ndarray:
    """Uniforms ``u_1..u_steps`` in (0, 1) for the given seed and lane."""
    bg = np.random.Philox(key=_key(seed, lane))
    return _to_open_unit(bg.random_raw(int(steps)))


def uniform_at(seed: int, step: int, lane: int = NOISE_LANE) -> float:
    """Single draw at ``step`` (1-based) without generating the prefix."""
    block, offset = divmod(int(step) - 1, 4)
    counter = np.array([block, 0, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=_key(seed, lane), counter=counter)
    return float(_to_open_unit(bg.random_raw(4))[offset])


_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _horner(coef, x):
    acc = np.full_like(x, coef[-1])
    for c in coef[-2::-1]:
        acc = acc * x + c
    return acc


def normal_quantile(u) -> np.ndarray:
    """Inverse standard normal CDF on (0, 1) (AS241, relative error ~1e-16)."""
    u = np.asarray(u, dtype=np.float64)
    q = u - 0.5
    out = np.empty_like(u)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.where(qt < 0, u[tail], 1.0 - u[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.where(
            near,
            _horner(_C, r - 1.6) / _horner(_D, r - 1.6),
            _horner(_E, r - 5.0) / _horner(_F, r - 5.0),
        )
        out[tail] = np.where(qt < 0, -val, val)
    return out
