"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with an identical
signature; :mod:`hjbnet.kernels` picks one at import time.
"""

import numpy as np


def softabs(x):
    """log(exp(x) + exp(-x)), evaluated without overflow."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


def value_grad(S, w, K0, K1, b0, b1, A, b, c):
    """Value and space-time gradient of the residual value network.

    Parameters
    ----------
    S : ndarray, shape (B, D)
        Space-time inputs, one row per sample.
    w, K0, K1, b0, b1, A, b, c : ndarray
        Network parameters; ``c`` is a length-1 array.

    Returns
    -------
    phi : ndarray, shape (B,)
    grad : ndarray, shape (B, D)
    cache : tuple
        Intermediates consumed by :func:`value_grad_vjp`.
    """
    u0 = S @ K0.T
    u0 += b0
    t0 = np.tanh(u0)
    a0 = softabs(u0)
    u1 = a0 @ K1.T
    u1 += b1
    t1 = np.tanh(u1)
    N = a0 + softabs(u1)
    z1 = (t1 * w) @ K1
    z1 += w
    AS = S @ A.T
    grad = (t0 * z1) @ K0
    grad += AS @ A
    grad += b
    phi = N @ w + 0.5 * np.einsum("ij,ij->i", AS, AS) + S @ b + c[0]
    return phi, grad, (t0, a0, t1, N, z1, AS)


def value_grad_vjp(S, w, K0, K1, A, b, cache, vval, V,
                   gw, gK0, gK1, gb0, gb1, gA, gb, gc):
    """Reverse pass for ``sum_i vval[i]*phi[i] + V[i].grad[i]``.

    Parameter gradients are accumulated in place into ``g*``; the return
    value is the gradient with respect to ``S``.
    """
    t0, a0, t1, N, z1, AS = cache
    AV = V @ A.T
    dS = AV @ A
    gK0 += (t0 * z1).T @ V
    gA += AS.T @ V
    gA += AV.T @ S
    gb += V.sum(axis=0)
    dg0 = V @ K0.T
    dt0 = dg0 * z1
    dz1 = dg0 * t0
    gw += dz1.sum(axis=0)
    y = t1 * w
    gK1 += y.T @ dz1
    dy = dz1 @ K1.T
    gw += np.einsum("ij,ij->j", dy, t1)
    du1 = dy * w
    du1 *= 1.0 - t1 * t1
    if vval is not None:
        gw += vval @ N
        AS_v = AS * vval[:, None]
        gA += AS_v.T @ S
        gb += vval @ S
        gc[0] += vval.sum()
        dS += AS_v @ A
        dS += vval[:, None] * b
        dN = np.outer(vval, w)
        du1 += dN * t1
        da0 = dN
    else:
        da0 = np.zeros_like(a0)
    gK1 += du1.T @ a0
    gb1 += du1.sum(axis=0)
    da0 += du1 @ K1
    du0 = da0 * t0
    du0 += dt0 * (1.0 - t0 * t0)
    gK0 += du0.T @ S
    gb0 += du0.sum(axis=0)
    dS += du0 @ K0
    return dS


def interaction(Z, n, q, r):
    """Pairwise space-bubble interaction summed over ordered agent pairs.

    Returns ``(W, dW, wmax)`` with ``W`` of shape (B,), its gradient in
    ``Z`` of shape (B, n*q) and the largest single pair value per sample.
    """
    B = Z.shape[0]
    P = Z.reshape(B, n, q)
    W = np.zeros(B)
    dW = np.zeros((B, n, q))
    wmax = np.zeros(B)
    if n < 2:
        return W, dW.reshape(B, n * q), wmax
    cut = 4.0 * r * r
    inv = 1.0 / (2.0 * r * r)
    for i in range(n - 1):
        diff = P[:, i:i + 1, :] - P[:, i + 1:, :]
        d2 = np.einsum("bjk,bjk->bj", diff, diff)
        val = np.where(d2 < cut, np.exp(-d2 * inv), 0.0)
        W += 2.0 * val.sum(axis=1)
        np.maximum(wmax, val.max(axis=1), out=wmax)
        # d/dz_i of 2*w(z_i, z_j) = -2*w*(z_i - z_j)/r^2
        gpair = (-2.0 * inv * 2.0) * val[:, :, None] * diff
        dW[:, i, :] += gpair.sum(axis=1)
        dW[:, i + 1:, :] -= gpair
    return W, dW.reshape(B, n * q), wmax


def gaussian_sum(P, means, var):
    """Sum of isotropic Gaussian densities at points ``P`` (N, q).

    ``means`` is (k, q) and ``var`` holds the k per-bump variances.
    Returns the value (N,) and its gradient (N, q).
    """
    q = P.shape[1]
    val = np.zeros(P.shape[0])
    grad = np.zeros_like(P)
    for mu, s2 in zip(means, var):
        diff = P - mu
        d2 = np.einsum("ij,ij->i", diff, diff)
        eta = np.exp(-0.5 * d2 / s2) / np.sqrt((2.0 * np.pi * s2) ** q)
        val += eta
        grad -= (eta / s2)[:, None] * diff
    return val, grad
