from typing import Any

import numpy as np
import numpy.typing as npt

try:
    from typing import Protocol
except ImportError:
    from typing_extensions import Protocol


FloatArray = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.intp]


class ReadMatrixBuffer(Protocol):
    def seek(self, position: int):
        pass

    def read(self, number: int = -1):
        pass

    def close(self) -> Any:
        pass


class WriteMatrixBuffer(Protocol):
    def seek(self, position: int):
        pass

    def tell(self) -> int:
        pass

    def write(self, __b: bytes) -> Any:
        pass

    def close(self) -> Any:
        pass
