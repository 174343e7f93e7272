"""Counter-based randomness keyed by tree address.

Every vertex of a lazily grown tree owns a 64-bit key derived from its
parent's key and its child slot, so the draws attached to a vertex depend
only on ``(seed, address)`` and never on the order in which vertices are
realized.  The mixer is the splitmix64 finalizer; scalar (Python int) and
vectorized (numpy uint64) versions are bit-identical.
"""

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_CHILD = 0xD1B54A32D192ED03
_SALT_U = 0x5851F42D4C957F2D
_SALT_DEG = 0x2545F4914F6CDD1D
_TWO52 = 1.0 / 4503599627370496.0


def mix(z):
    """splitmix64 step on a Python int."""
    z = (z + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def root_key(seed, salt=0):
    return mix(mix(seed & MASK) ^ (salt & MASK))


def child_key(key, slot):
    return mix((key + (slot + 1) * _CHILD) & MASK)


def to_unit(bits):
    """Map 64 random bits to a float strictly inside (0, 1)."""
    # 52 bits plus one half: the largest value 1 - 2**-53 is still below 1
    return ((bits >> 12) + 0.5) * _TWO52


def weight_of(key):
    return to_unit(mix(key ^ _SALT_U))


def degree_uniform(key):
    return to_unit(mix(key ^ _SALT_DEG))


# vectorized twins ---------------------------------------------------------

_U64 = np.uint64


def mix_array(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _U64(GOLDEN)
        z = (z ^ (z >> _U64(30))) * _U64(_M1)
        z = (z ^ (z >> _U64(27))) * _U64(_M2)
    return z ^ (z >> _U64(31))


def child_keys_array(keys, slots):
    keys = np.asarray(keys, dtype=np.uint64)
    slots = np.asarray(slots, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = keys + (slots + _U64(1)) * _U64(_CHILD)
    return mix_array(z)


def to_unit_array(bits):
    return ((bits >> _U64(12)).astype(np.float64) + 0.5) * _TWO52


def weights_array(keys):
    return to_unit_array(mix_array(np.asarray(keys, dtype=np.uint64) ^ _U64(_SALT_U)))


def degree_uniforms_array(keys):
    return to_unit_array(mix_array(np.asarray(keys, dtype=np.uint64) ^ _U64(_SALT_DEG)))


def derive_seed(master, index):
    """Collision-free child seed for replicate ``index`` of a master seed."""
    ss = np.random.SeedSequence([master & MASK, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed):
    """Counter-based numpy generator (Philox) for analytic simulations."""
    return np.random.Generator(np.random.Philox(key=seed & MASK))
