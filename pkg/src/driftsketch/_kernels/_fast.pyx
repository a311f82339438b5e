# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hashing kernels; bit-identical to the NumPy backend in pure.py."""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef uint64_t MIX_A = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX_B = 0x94D049BB133111EBULL
cdef uint64_t DIM_MULT = 0x9E3779B97F4A7C15ULL
cdef uint64_t BIN_MULT = 0xC2B2AE3D27D4EB4FULL


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MIX_A
    z = (z ^ (z >> 27)) * MIX_B
    return z ^ (z >> 31)


def hash_bins(bins):
    cdef cnp.ndarray[int64_t, ndim=1] b = np.ascontiguousarray(bins, dtype=np.int64)
    cdef Py_ssize_t n = b.shape[0]
    cdef cnp.ndarray[uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = mix64((<uint64_t> i) * DIM_MULT ^ (<uint64_t> b[i]) * BIN_MULT)
    return out


def minhash_signature(tokens, salts):
    cdef cnp.ndarray[uint64_t, ndim=1] t = np.ascontiguousarray(tokens, dtype=np.uint64)
    cdef cnp.ndarray[uint64_t, ndim=1] s = np.ascontiguousarray(salts, dtype=np.uint64)
    cdef Py_ssize_t nt = t.shape[0]
    cdef Py_ssize_t k = s.shape[0]
    cdef cnp.ndarray[uint64_t, ndim=1] out = np.empty(k, dtype=np.uint64)
    cdef Py_ssize_t i, j
    cdef uint64_t h, best, salt
    with nogil:
        for j in range(k):
            salt = s[j]
            best = mix64(t[0] ^ salt)
            for i in range(1, nt):
                h = mix64(t[i] ^ salt)
                if h < best:
                    best = h
            out[j] = best
    return out


def match_counts(minima, query):
    cdef cnp.ndarray[uint64_t, ndim=2] m = np.ascontiguousarray(minima, dtype=np.uint64)
    cdef cnp.ndarray[uint64_t, ndim=1] q = np.ascontiguousarray(query, dtype=np.uint64)
    cdef Py_ssize_t rows = m.shape[0]
    cdef Py_ssize_t k = m.shape[1]
    cdef cnp.ndarray[int64_t, ndim=1] out = np.zeros(rows, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef int64_t c
    with nogil:
        for i in range(rows):
            c = 0
            for j in range(k):
                if m[i, j] == q[j]:
                    c += 1
            out[i] = c
    return out
