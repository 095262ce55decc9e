"""Keypoint-based stereo visual servoing, trained end to end on a built-in
2D peg-and-hole simulator."""


def _tune_allocator() -> None:
    # glibc mmaps every >128KB buffer by default; training then spends more
    # time page-faulting fresh conv buffers than in BLAS.  Keep big blocks on
    # the heap free-list instead.  No-op off glibc.
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(1 << 30))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(1 << 30))  # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()

from .autodiff import ShapeError, Tensor, no_grad  # noqa: E402

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "no_grad", "__version__"]
