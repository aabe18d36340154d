# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the forward/backward Gaussian recursions.

Same contract as ``graphem._pykernels`` (see that module's docstring).
All matrices are C-contiguous float64; BLAS/LAPACK is called through the
Fortran-order view trick (a C-order (r, c) array is the transpose of an
(c, r) Fortran array with lda = c).
"""
import numpy as np

from scipy.linalg.cython_blas cimport dgemm, dgemv
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

BACKEND_NAME = "compiled"

cdef double JITTER_SCALE = 1e-10


cdef inline void _gemm_nn(double* C, double* A, double* B,
                          int m, int n, int p,
                          double alpha, double beta) noexcept nogil:
    # C(m,p) = alpha*A(m,n)@B(n,p) + beta*C, all C-order
    cdef char cn = b'N'
    dgemm(&cn, &cn, &p, &m, &n, &alpha, B, &p, A, &n, &beta, C, &p)


cdef inline void _gemm_nt(double* C, double* A, double* B,
                          int m, int n, int p,
                          double alpha, double beta) noexcept nogil:
    # C(m,p) = alpha*A(m,n)@B(p,n)^T + beta*C, all C-order
    cdef char ct = b'T'
    cdef char cn = b'N'
    dgemm(&ct, &cn, &p, &m, &n, &alpha, B, &n, A, &n, &beta, C, &p)


cdef inline void _gemv(double* y, double* A, double* x,
                       int r, int c, double alpha, double beta) noexcept nogil:
    # y(r) = alpha*A(r,c)@x(c) + beta*y, A C-order
    cdef char ct = b'T'
    cdef int one = 1
    dgemv(&ct, &c, &r, &alpha, A, &c, x, &one, &beta, y, &one)


cdef inline void _symmetrize(double* M, int n) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (M[i * n + j] + M[j * n + i])
            M[i * n + j] = v
            M[j * n + i] = v


cdef inline int _potrf(double* M, int n) noexcept nogil:
    # non-finite entries count as failure (LAPACK behaviour on NaN is undefined)
    cdef char cl = b'L'
    cdef int info = 0
    cdef int i
    for i in range(n * n):
        if not (M[i] == M[i] and -1e308 < M[i] < 1e308):
            return 1
    dpotrf(&cl, &n, M, &n, &info)
    return info


cdef inline void _potrs(double* Mf, double* B, int n, int nrhs) noexcept nogil:
    # Solves M @ Z = B^T in the Fortran view; on exit B (C-order (nrhs, n))
    # holds B_in @ M^{-1}.
    cdef char cl = b'L'
    cdef int info = 0
    dpotrs(&cl, &n, &nrhs, Mf, &n, B, &n, &info)


def filter_loop(double[:, ::1] A, double[:, ::1] Q,
                double[:, :, ::1] H, double[:, :, ::1] R,
                double[::1] x0_mean, double[:, ::1] P0,
                double[:, ::1] Y):
    cdef int K = Y.shape[0]
    cdef int Ny = Y.shape[1]
    cdef int Nx = A.shape[0]
    cdef bint h_const = H.shape[0] == 1
    cdef bint r_const = R.shape[0] == 1

    m_pred_a = np.empty((K, Nx))
    P_pred_a = np.empty((K, Nx, Nx))
    m_filt_a = np.empty((K + 1, Nx))
    P_filt_a = np.empty((K + 1, Nx, Nx))
    innov_a = np.empty((K, Ny))
    S_out_a = np.empty((K, Ny, Ny))
    gain_a = np.empty((K, Nx, Ny))

    cdef double[:, ::1] m_pred = m_pred_a
    cdef double[:, :, ::1] P_pred = P_pred_a
    cdef double[:, ::1] m_filt = m_filt_a
    cdef double[:, :, ::1] P_filt = P_filt_a
    cdef double[:, ::1] innov = innov_a
    cdef double[:, :, ::1] S_out = S_out_a
    cdef double[:, :, ::1] gain = gain_a

    scratch_S = np.empty((Ny, Ny))
    scratch_T = np.empty((Nx, Nx))
    scratch_HP = np.empty((Ny, Nx))
    scratch_KS = np.empty((Nx, Ny))
    cdef double[:, ::1] S = scratch_S
    cdef double[:, ::1] T = scratch_T
    cdef double[:, ::1] HP = scratch_HP
    cdef double[:, ::1] KS = scratch_KS

    cdef int k, i, j, hk, rk, status = -1
    cdef double* Hk
    cdef double* Rk

    m_filt_a[0] = x0_mean
    P_filt_a[0] = 0.5 * (np.asarray(P0) + np.asarray(P0).T)

    with nogil:
        for k in range(K):
            hk = 0 if h_const else k
            rk = 0 if r_const else k
            Hk = &H[hk, 0, 0]
            Rk = &R[rk, 0, 0]

            # m_pred = A @ m_filt[k]; P_pred = A @ P_filt[k] @ A^T + Q
            _gemv(&m_pred[k, 0], &A[0, 0], &m_filt[k, 0], Nx, Nx, 1.0, 0.0)
            _gemm_nn(&T[0, 0], &A[0, 0], &P_filt[k, 0, 0], Nx, Nx, Nx, 1.0, 0.0)
            for i in range(Nx):
                for j in range(Nx):
                    P_pred[k, i, j] = Q[i, j]
            _gemm_nt(&P_pred[k, 0, 0], &T[0, 0], &A[0, 0], Nx, Nx, Nx, 1.0, 1.0)
            _symmetrize(&P_pred[k, 0, 0], Nx)

            # innovation and its covariance
            for i in range(Ny):
                innov[k, i] = Y[k, i]
            _gemv(&innov[k, 0], Hk, &m_pred[k, 0], Ny, Nx, -1.0, 1.0)

            _gemm_nn(&HP[0, 0], Hk, &P_pred[k, 0, 0], Ny, Nx, Nx, 1.0, 0.0)
            for i in range(Ny):
                for j in range(Ny):
                    S[i, j] = Rk[i * Ny + j]
            _gemm_nt(&S[0, 0], &HP[0, 0], Hk, Ny, Nx, Ny, 1.0, 1.0)
            _symmetrize(&S[0, 0], Ny)
            for i in range(Ny):
                for j in range(Ny):
                    S_out[k, i, j] = S[i, j]

            # gain = P_pred @ H^T @ S^{-1}
            _gemm_nt(&gain[k, 0, 0], &P_pred[k, 0, 0], Hk, Nx, Nx, Ny, 1.0, 0.0)
            if _potrf(&S[0, 0], Ny) != 0:
                status = k + 1
                break
            _potrs(&S[0, 0], &gain[k, 0, 0], Ny, Nx)

            # m_filt = m_pred + gain @ innov
            for i in range(Nx):
                m_filt[k + 1, i] = m_pred[k, i]
            _gemv(&m_filt[k + 1, 0], &gain[k, 0, 0], &innov[k, 0], Nx, Ny, 1.0, 1.0)

            # P_filt = P_pred - gain @ S @ gain^T
            _gemm_nn(&KS[0, 0], &gain[k, 0, 0], &S_out[k, 0, 0], Nx, Ny, Ny, 1.0, 0.0)
            for i in range(Nx):
                for j in range(Nx):
                    P_filt[k + 1, i, j] = P_pred[k, i, j]
            _gemm_nt(&P_filt[k + 1, 0, 0], &KS[0, 0], &gain[k, 0, 0], Nx, Ny, Nx, -1.0, 1.0)
            _symmetrize(&P_filt[k + 1, 0, 0], Nx)

    return (status, m_pred_a, P_pred_a, m_filt_a, P_filt_a, innov_a, S_out_a, gain_a)


def smoother_loop(double[:, ::1] A, double[:, ::1] Q,
                  double[:, ::1] m_filt, double[:, :, ::1] P_filt):
    cdef int K = m_filt.shape[0] - 1
    cdef int Nx = m_filt.shape[1]

    m_smooth_a = np.empty((K + 1, Nx))
    P_smooth_a = np.empty((K + 1, Nx, Nx))
    G_a = np.empty((K, Nx, Nx))
    cdef double[:, ::1] m_smooth = m_smooth_a
    cdef double[:, :, ::1] P_smooth = P_smooth_a
    cdef double[:, :, ::1] G = G_a

    scratch = np.empty((4, Nx, Nx))
    dm_a = np.empty(Nx)
    cdef double[:, :, ::1] W = scratch
    cdef double[::1] dm = dm_a
    cdef double* Pp
    cdef double* Pf
    cdef double* T
    cdef double* DP
    cdef double* Gk

    cdef int k, i, j, status = -1, jitter_count = 0
    cdef double jit
    cdef double[::1] mp = np.empty(Nx)

    for i in range(Nx):
        m_smooth[K, i] = m_filt[K, i]
        for j in range(Nx):
            P_smooth[K, i, j] = P_filt[K, i, j]

    Pp = &W[0, 0, 0]
    Pf = &W[1, 0, 0]   # factored copy of Pp
    T = &W[2, 0, 0]
    DP = &W[3, 0, 0]

    with nogil:
        for k in range(K - 1, -1, -1):
            # one-step prediction from the filtered moments at k
            _gemv(&mp[0], &A[0, 0], &m_filt[k, 0], Nx, Nx, 1.0, 0.0)
            _gemm_nn(T, &A[0, 0], &P_filt[k, 0, 0], Nx, Nx, Nx, 1.0, 0.0)
            for i in range(Nx):
                for j in range(Nx):
                    Pp[i * Nx + j] = Q[i, j]
            _gemm_nt(Pp, T, &A[0, 0], Nx, Nx, Nx, 1.0, 1.0)
            _symmetrize(Pp, Nx)

            for i in range(Nx * Nx):
                Pf[i] = Pp[i]
            if _potrf(Pf, Nx) != 0:
                jit = 0.0
                for i in range(Nx):
                    jit += Pp[i * Nx + i]
                jit = JITTER_SCALE * jit / Nx
                for i in range(Nx):
                    Pp[i * Nx + i] += jit
                jitter_count += 1
                for i in range(Nx * Nx):
                    Pf[i] = Pp[i]
                if _potrf(Pf, Nx) != 0:
                    status = k
                    break

            # G_k = P_filt[k] @ A^T @ Pp^{-1}
            Gk = &G[k, 0, 0]
            _gemm_nt(Gk, &P_filt[k, 0, 0], &A[0, 0], Nx, Nx, Nx, 1.0, 0.0)
            _potrs(Pf, Gk, Nx, Nx)

            for i in range(Nx):
                dm[i] = m_smooth[k + 1, i] - mp[i]
                m_smooth[k, i] = m_filt[k, i]
            _gemv(&m_smooth[k, 0], Gk, &dm[0], Nx, Nx, 1.0, 1.0)

            for i in range(Nx):
                for j in range(Nx):
                    DP[i * Nx + j] = P_smooth[k + 1, i, j] - Pp[i * Nx + j]
                    P_smooth[k, i, j] = P_filt[k, i, j]
            _gemm_nn(T, Gk, DP, Nx, Nx, Nx, 1.0, 0.0)
            _gemm_nt(&P_smooth[k, 0, 0], T, Gk, Nx, Nx, Nx, 1.0, 1.0)
            _symmetrize(&P_smooth[k, 0, 0], Nx)

    return (status, jitter_count, m_smooth_a, P_smooth_a, G_a)
