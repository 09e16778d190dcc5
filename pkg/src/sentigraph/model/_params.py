"""Named parameter arrays shared by parameters, gradients and optimizer state."""

from collections.abc import Iterator, Mapping

import numpy as np


class ParamSet:
    """An ordered mapping of parameter names to float64 arrays."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self[name] = array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        self._arrays[name] = np.asarray(array, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def names(self) -> list[str]:
        return list(self._arrays)

    @property
    def size(self) -> int:
        """Total number of scalar parameters."""
        return sum(array.size for array in self._arrays.values())

    def zeros_like(self) -> "ParamSet":
        return ParamSet({name: np.zeros_like(array) for name, array in self._arrays.items()})

    def copy(self) -> "ParamSet":
        return ParamSet({name: array.copy() for name, array in self._arrays.items()})

    def add_(self, other: "ParamSet", scale: float = 1.0) -> "ParamSet":
        """Accumulate ``scale * other`` in place; names missing here are added."""
        for name, array in other.items():
            if name in self._arrays:
                self._arrays[name] += scale * array
            else:
                self._arrays[name] = scale * array
        return self

    def update(self, other: "ParamSet") -> None:
        for name, array in other.items():
            self[name] = array

    def subset(self, prefix: str) -> "ParamSet":
        return ParamSet({name: array for name, array in self._arrays.items() if name.startswith(prefix)})

    def is_finite(self) -> bool:
        return all(np.isfinite(array).all() for array in self._arrays.values())

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([array.ravel() for array in self._arrays.values()])

    def load_flat(self, vector: np.ndarray) -> None:
        """Overwrite every array from a vector laid out like `flat()`."""
        if vector.size != self.size:
            raise ValueError(f"Expected {self.size} values, got {vector.size}")
        offset = 0
        for name, array in self._arrays.items():
            self._arrays[name] = vector[offset : offset + array.size].reshape(array.shape).astype(np.float64)
            offset += array.size

    def allclose(self, other: "ParamSet", atol: float = 1e-8) -> bool:
        return self.names == other.names and all(np.allclose(self[n], other[n], rtol=0, atol=atol) for n in self)
