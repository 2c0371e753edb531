"""Dense and block-banded square matrices over real or complex scalars."""

from __future__ import annotations

import numpy as np


class DenseMatrix:
    """Row-major dense square matrix.

    ``block_size`` only matters to the Gauss-Seidel sweeps, which treat the
    matrix as ``n // block_size`` coupled blocks.
    """

    def __init__(self, data, block_size: int = 1):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError(f"expected a square 2-d array, got shape {data.shape}")
        if data.shape[0] % block_size:
            raise ValueError(f"size {data.shape[0]} is not a multiple of block size {block_size}")
        self.data = data
        self.block_size = block_size

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def to_dense(self) -> np.ndarray:
        return self.data

    def matvec(self, x):
        return self.data @ x

    def rmatvec(self, x):
        return self.data.T @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def transpose(self) -> DenseMatrix:
        return DenseMatrix(self.data.T.copy(), self.block_size)

    @property
    def T(self):
        return self.transpose()

    def add_block_diagonal(self, shift) -> DenseMatrix:
        """Return ``A + diag(shift)`` with one shift value per block."""
        shift = np.asarray(shift)
        out = self.data.astype(np.result_type(self.data, shift), copy=True)
        out[np.diag_indices(self.n)] += np.repeat(shift, self.block_size)
        return DenseMatrix(out, self.block_size)


class BlockBandedMatrix:
    """Square block matrix with ``bandwidth`` block diagonals on each side.

    ``blocks[bandwidth + off, i]`` holds the block in block-row ``i`` and
    block-column ``i + off``; blocks falling outside the matrix are zero.
    Bandwidth 1 is block-tridiagonal.
    """

    def __init__(self, blocks, bandwidth: int):
        blocks = np.asarray(blocks)
        if blocks.ndim != 4 or blocks.shape[0] != 2 * bandwidth + 1 or blocks.shape[2] != blocks.shape[3]:
            raise ValueError(f"blocks of shape {blocks.shape} do not match bandwidth {bandwidth}")
        self.blocks = blocks
        self.bandwidth = bandwidth
        self._dense = None

    @property
    def nblocks(self) -> int:
        return self.blocks.shape[1]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[2]

    @property
    def n(self) -> int:
        return self.nblocks * self.block_size

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dtype(self):
        return self.blocks.dtype

    def _offset_rows(self, off: int) -> np.ndarray:
        return np.arange(max(0, -off), min(self.nblocks, self.nblocks - off))

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            nb, bs = self.nblocks, self.block_size
            dense = np.zeros((nb, bs, nb, bs), dtype=self.dtype)
            for k in range(2 * self.bandwidth + 1):
                off = k - self.bandwidth
                rows = self._offset_rows(off)
                dense[rows, :, rows + off, :] = self.blocks[k, rows]
            self._dense = dense.reshape(self.n, self.n)
        return self._dense

    @classmethod
    def from_dense(cls, dense, block_size: int, bandwidth: int) -> BlockBandedMatrix:
        dense = np.asarray(dense)
        nb = dense.shape[0] // block_size
        view = dense.reshape(nb, block_size, nb, block_size)
        blocks = np.zeros((2 * bandwidth + 1, nb, block_size, block_size), dtype=dense.dtype)
        for k in range(2 * bandwidth + 1):
            off = k - bandwidth
            rows = np.arange(max(0, -off), min(nb, nb - off))
            blocks[k, rows] = view[rows, :, rows + off, :]
        return cls(blocks, bandwidth)

    def matvec(self, x):
        return self.to_dense() @ x

    def banded_matvec(self, x):
        """Product computed block by block, without the dense form."""
        x = np.asarray(x)
        nb, bs = self.nblocks, self.block_size
        xb = x.reshape(nb, bs)
        out = np.zeros((nb, bs), dtype=np.result_type(self.dtype, x))
        for k in range(2 * self.bandwidth + 1):
            off = k - self.bandwidth
            rows = self._offset_rows(off)
            out[rows] += np.einsum("iab,ib->ia", self.blocks[k, rows], xb[rows + off])
        return out.reshape(-1)

    def rmatvec(self, x):
        return self.to_dense().T @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def transpose(self) -> BlockBandedMatrix:
        w = self.bandwidth
        out = np.zeros_like(self.blocks)
        for k in range(2 * w + 1):
            off = k - w
            rows = self._offset_rows(off)
            # (A^T)[i, i+off] = A[i+off, i]^T, stored at offset -off in block-row i+off
            out[k, rows] = np.swapaxes(self.blocks[2 * w - k, rows + off], -1, -2)
        return BlockBandedMatrix(out, w)

    @property
    def T(self):
        return self.transpose()

    def add_block_diagonal(self, shift) -> BlockBandedMatrix:
        shift = np.asarray(shift)
        blocks = self.blocks.astype(np.result_type(self.blocks, shift), copy=True)
        idx = np.arange(self.block_size)
        blocks[self.bandwidth][:, idx, idx] += shift[:, None]
        return BlockBandedMatrix(blocks, self.bandwidth)

    def diagonal_blocks(self) -> np.ndarray:
        return self.blocks[self.bandwidth]


Matrix = DenseMatrix | BlockBandedMatrix


def transpose(a):
    """Transpose of either storage; block structure is preserved."""
    return a.transpose()


def as_dense(a) -> np.ndarray:
    if isinstance(a, (DenseMatrix, BlockBandedMatrix)):
        return a.to_dense()
    return np.asarray(a)


def block_size_of(a) -> int:
    return getattr(a, "block_size", 1)
