"""Private keys, their cosine sensitivity, and Laplace noise for training."""

import json
from dataclasses import dataclass

import numpy as np

KEY_BITS = 32
DEFAULT_EPSILON = 30.0


@dataclass(frozen=True, eq=False)
class PrivateKey:
    user_id: str
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape != (KEY_BITS,):
            raise ValueError(f"key must have exactly {KEY_BITS} bits, got shape {bits.shape}")
        if np.any(bits > 1):
            raise ValueError("key bits must be 0 or 1")
        if not bits.any():
            raise ValueError("key must have at least one nonzero bit")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        return (isinstance(other, PrivateKey) and self.user_id == other.user_id
                and np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.user_id, self.bits.tobytes()))

    def as_floats(self):
        return self.bits.astype(np.float64)

    @property
    def value(self):
        """Bits packed as an unsigned int, bit 0 most significant."""
        return int("".join(map(str, self.bits)), 2)

    @classmethod
    def from_int(cls, user_id, value):
        if not 0 < value < 2 ** KEY_BITS:
            raise ValueError(f"key value {value} out of range")
        return cls(user_id, np.array([int(c) for c in f"{value:032b}"], dtype=np.uint8))

    def to_hex(self):
        return f"{self.value:08x}"

    @classmethod
    def from_hex(cls, user_id, text):
        if len(text) != 8:
            raise ValueError(f"bits_hex must be 8 hex characters, got {text!r}")
        return cls.from_int(user_id, int(text, 16))


class KeySet:
    """Ordered, immutable set of enrolled keys with lookup by user id."""

    def __init__(self, keys):
        self.keys = tuple(keys)
        self._by_id = {k.user_id: i for i, k in enumerate(self.keys)}
        if len(self._by_id) != len(self.keys):
            raise ValueError("duplicate user_id in key set")

    def __len__(self):
        return len(self.keys)

    def __iter__(self):
        return iter(self.keys)

    def __getitem__(self, i):
        return self.keys[i]

    def index(self, user_id):
        return self._by_id[user_id]

    def get(self, user_id):
        try:
            return self.keys[self._by_id[user_id]]
        except KeyError:
            raise KeyError(f"no key enrolled for user {user_id!r}") from None

    def matrix(self):
        return np.stack([k.as_floats() for k in self.keys])

    def to_json(self):
        doc = {"version": 1, "keys": [{"user_id": k.user_id, "bits_hex": k.to_hex()} for k in self.keys]}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported key file version {doc.get('version')!r}")
        return cls(PrivateKey.from_hex(e["user_id"], e["bits_hex"]) for e in doc["keys"])

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def generate_keys(n, rng, prefix="user"):
    """``n`` distinct nonzero 32-bit keys, uniform with rejection of repeats."""
    if not 1 <= n <= 2 ** KEY_BITS - 1:
        raise ValueError(f"cannot generate {n} distinct nonzero {KEY_BITS}-bit keys")
    seen = set()
    values = []
    while len(values) < n:
        v = int(rng.integers(1, 2 ** KEY_BITS))
        if v not in seen:
            seen.add(v)
            values.append(v)
    width = max(3, len(str(n - 1)))
    return KeySet(PrivateKey.from_int(f"{prefix}{i:0{width}d}", v) for i, v in enumerate(values))


def cosine_distance(k1, k2):
    a = k1.as_floats() if isinstance(k1, PrivateKey) else np.asarray(k1, dtype=np.float64)
    b = k2.as_floats() if isinstance(k2, PrivateKey) else np.asarray(k2, dtype=np.float64)
    sa, sb = a @ a, b @ b
    if sa == 0 or sb == 0:
        raise ValueError("cosine distance is undefined for a zero vector")
    # one sqrt of the product: identical binary keys give exactly 0
    return float(np.clip(1 - a @ b / np.sqrt(sa * sb), 0.0, 2.0))


def global_sensitivity(keys):
    """Largest pairwise cosine distance in the set."""
    m = keys.matrix() if isinstance(keys, KeySet) else np.asarray([k.as_floats() for k in keys])
    if len(m) < 2:
        raise ValueError("global sensitivity needs at least two keys")
    unit = m / np.linalg.norm(m, axis=1, keepdims=True)
    dist = 1 - unit @ unit.T
    return float(np.clip(dist.max(), 0.0, 2.0))


@dataclass(frozen=True)
class DPConfig:
    epsilon: float = DEFAULT_EPSILON
    delta_k: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta_k <= 1:
            raise ValueError(f"delta_k must lie in [0, 1], got {self.delta_k}")

    @property
    def b(self):
        return 0.0 if np.isinf(self.epsilon) else self.delta_k / self.epsilon

    @classmethod
    def for_keys(cls, keys, epsilon=DEFAULT_EPSILON):
        return cls(epsilon=epsilon, delta_k=global_sensitivity(keys))


@dataclass(frozen=True)
class NoisedKey:
    reals: np.ndarray


def sample_laplace(b, count, rng):
    """i.i.d. Laplace(0, b) by inverse CDF, u uniform on the open interval (-1/2, 1/2)."""
    if b < 0:
        raise ValueError(f"Laplace scale must be >= 0, got {b}")
    u = rng.integers(1, 2 ** 53, size=count) / 2.0 ** 53 - 0.5
    if b == 0:
        return np.zeros(count)
    return -b * np.sign(u) * np.log1p(-2 * np.abs(u))


def noised_key(key: PrivateKey, cfg: DPConfig, rng) -> NoisedKey:
    """Key bits plus fresh Laplace noise; the key itself is untouched."""
    return NoisedKey(key.as_floats() + sample_laplace(cfg.b, KEY_BITS, rng))
