"""Compiled inner loops (numba) for the Bloch train and tensor-product splines."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def fisp_train(
    t1,
    t2,
    dw,
    r2p,
    order,
    group_start,
    group_b1,
    flips,
    tr,
    te,
    ti,
    td,
    inversion,
    flip_scale,
    spoil_cos,
    spoil_sin,
    cauchy,
    out,
):
    """Run one inversion-prepared FISP train per atom.

    Atoms are visited grouped by B1 value so the per-spin rotation table
    is built once per group. ``dw`` is in rad/ms, ``r2p`` is 1/T2' in 1/ms
    (0 disables the Cauchy frequency spread).
    """
    n_spin = flip_scale.shape[0]
    n_echo = flips.shape[0]
    cos_a = np.empty((n_echo, n_spin))
    sin_a = np.empty((n_echo, n_spin))
    mx = np.empty(n_spin)
    my = np.empty(n_spin)
    mz = np.empty(n_spin)
    inv_n = 1.0 / n_spin
    for g in range(group_b1.shape[0]):
        b1 = group_b1[g]
        for m in range(n_echo):
            for k in range(n_spin):
                a = flips[m] * b1 * flip_scale[k]
                cos_a[m, k] = math.cos(a)
                sin_a[m, k] = math.sin(a)
        for gi in range(group_start[g], group_start[g + 1]):
            i = order[gi]
            T1 = t1[i]
            T2 = t2[i]
            w0 = dw[i]
            spread = r2p[i]
            for k in range(n_spin):
                mx[k] = 0.0
                my[k] = 0.0
                mz[k] = 1.0
            if inversion:
                for k in range(n_spin):
                    my[k] = -my[k]
                    mz[k] = -mz[k]
                _free(mx, my, mz, ti, T1, T2, w0, spread, cauchy)
            e1te = math.exp(-te / T1)
            e2te = math.exp(-te / T2)
            for m in range(n_echo):
                # left-handed rotation about +x: z -> +y for a 90 degree pulse
                for k in range(n_spin):
                    c = cos_a[m, k]
                    s = sin_a[m, k]
                    y = my[k]
                    z = mz[k]
                    my[k] = y * c + z * s
                    mz[k] = z * c - y * s
                if w0 == 0.0 and spread == 0.0:
                    for k in range(n_spin):
                        mx[k] *= e2te
                        my[k] *= e2te
                        mz[k] = 1.0 + (mz[k] - 1.0) * e1te
                else:
                    _free(mx, my, mz, te, T1, T2, w0, spread, cauchy)
                sx = 0.0
                sy = 0.0
                for k in range(n_spin):
                    sx += mx[k]
                    sy += my[k]
                out[i, m] = complex(sx * inv_n, sy * inv_n)
                dt = tr[m] - te
                _free(mx, my, mz, dt, T1, T2, w0, spread, cauchy)
                for k in range(n_spin):
                    x = mx[k]
                    y = my[k]
                    c = spoil_cos[k]
                    s = spoil_sin[k]
                    mx[k] = x * c + y * s
                    my[k] = y * c - x * s
            _free(mx, my, mz, td, T1, T2, w0, spread, cauchy)


@njit(cache=True)
def _free(mx, my, mz, dt, T1, T2, w0, spread, cauchy):
    if dt <= 0.0:
        return
    e1 = math.exp(-dt / T1)
    e2 = math.exp(-dt / T2)
    n_spin = mx.shape[0]
    if w0 == 0.0 and spread == 0.0:
        for k in range(n_spin):
            mx[k] *= e2
            my[k] *= e2
            mz[k] = 1.0 + (mz[k] - 1.0) * e1
        return
    for k in range(n_spin):
        phi = (w0 + spread * cauchy[k]) * dt
        c = math.cos(phi) * e2
        s = math.sin(phi) * e2
        x = mx[k]
        y = my[k]
        mx[k] = x * c + y * s
        my[k] = y * c - x * s
        mz[k] = 1.0 + (mz[k] - 1.0) * e1


@njit(cache=True)
def bspline_weights(order, x):
    """Centered B-spline value of degree ``order`` (0..3) at ``x``."""
    ax = abs(x)
    if order == 0:
        if -0.5 < x <= 0.5:
            return 1.0
        return 0.0
    if order == 1:
        if ax < 1.0:
            return 1.0 - ax
        return 0.0
    if order == 2:
        if ax < 0.5:
            return 0.75 - ax * ax
        if ax < 1.5:
            d = 1.5 - ax
            return 0.5 * d * d
        return 0.0
    if ax < 1.0:
        return 2.0 / 3.0 - ax * ax + 0.5 * ax * ax * ax
    if ax < 2.0:
        d = 2.0 - ax
        return d * d * d / 6.0
    return 0.0


@njit(cache=True)
def bspline_deriv(order, x):
    if order < 1:
        return 0.0
    return bspline_weights(order - 1, x + 0.5) - bspline_weights(order - 1, x - 0.5)


@njit(cache=True)
def axis_support(order, v, offset, n_coef):
    """First coefficient index touched by a point and its basis weights.

    ``v`` is a 1-based grid coordinate, ``offset`` the number of extension
    nodes before node 1. Weights outside ``[0, n_coef)`` are zeroed.
    """
    w = np.zeros(order + 1)
    dw = np.zeros(order + 1)
    if order == 0:
        # ties at half-integers go to the lower node
        first = int(math.ceil(v - 0.5)) - 1 + offset
        w[0] = 1.0
    else:
        if order % 2 == 1:
            first_node = int(math.floor(v)) - (order - 1) // 2
        else:
            first_node = int(math.floor(v - 0.5)) - order // 2 + 1
        first = first_node - 1 + offset
        for j in range(order + 1):
            node = first + j - offset + 1
            x = v - node
            w[j] = bspline_weights(order, x)
            dw[j] = bspline_deriv(order, x)
    for j in range(order + 1):
        idx = first + j
        if idx < 0 or idx >= n_coef:
            w[j] = 0.0
            dw[j] = 0.0
    return first, w, dw


@njit(cache=True)
def tensor_eval(coef, shape, order, offset, v, want_grad, value, grad):
    """Tensor-product evaluation at one grid coordinate.

    ``coef`` is (prod(shape), C); ``value`` (C,) and ``grad`` (P, C) are
    written in place.
    """
    P = shape.shape[0]
    C = coef.shape[1]
    nb = order + 1
    firsts = np.empty(P, dtype=np.int64)
    W = np.empty((P, nb))
    D = np.empty((P, nb))
    strides = np.empty(P, dtype=np.int64)
    s = 1
    for p in range(P - 1, -1, -1):
        strides[p] = s
        s *= shape[p]
    for p in range(P):
        f, w, dw = axis_support(order, v[p], offset, shape[p])
        firsts[p] = f
        for j in range(nb):
            W[p, j] = w[j]
            D[p, j] = dw[j]
    for c in range(C):
        value[c] = 0.0
    if want_grad:
        for p in range(P):
            for c in range(C):
                grad[p, c] = 0.0
    idx = np.zeros(P, dtype=np.int64)
    total = nb**P
    wprod = np.empty(P)
    for t in range(total):
        weight = 1.0
        flat = 0
        skip = False
        for p in range(P):
            j = idx[p]
            wj = W[p, j]
            weight *= wj
            k = firsts[p] + j
            if k < 0 or k >= shape[p]:
                skip = True
            flat += k * strides[p]
        if not skip:
            if weight != 0.0:
                for c in range(C):
                    value[c] += weight * coef[flat, c]
            if want_grad:
                for q in range(P):
                    g = 1.0
                    for p in range(P):
                        if p == q:
                            g *= D[p, idx[p]]
                        else:
                            g *= W[p, idx[p]]
                    wprod[q] = g
                for q in range(P):
                    g = wprod[q]
                    if g != 0.0:
                        for c in range(C):
                            grad[q, c] += g * coef[flat, c]
        # odometer, last axis fastest
        p = P - 1
        while p >= 0:
            idx[p] += 1
            if idx[p] < nb:
                break
            idx[p] = 0
            p -= 1


@njit(cache=True)
def reduced_objective(coef, shape, order, offset, v, m):
    """Variable-projection objective ``min_rho ||m - rho s(v)||^2`` and its gradient."""
    P = shape.shape[0]
    C = coef.shape[1]
    s = np.empty(C, dtype=coef.dtype)
    ds = np.empty((P, C), dtype=coef.dtype)
    tensor_eval(coef, shape, order, offset, v, True, s, ds)
    a = 0.0j
    b = 0.0
    for c in range(C):
        a += s[c].conjugate() * m[c]
        b += s[c].real * s[c].real + s[c].imag * s[c].imag
    grad = np.zeros(P)
    if b == 0.0:
        return np.nan, grad, a, b
    f = _residual_gradient(s, ds, m, a / b, grad)
    return f, grad, a, b


@njit(cache=True)
def _residual_gradient(s, ds, m, rho, grad):
    """``||r||^2`` with ``r = m - rho s`` and its gradient ``-2 Re(rho r^H ds_p)``.

    Working from the residual avoids the cancellation in ``||m||^2 - |a|^2 / b``
    once the fit is close.
    """
    P = ds.shape[0]
    C = s.shape[0]
    r = np.empty(C, dtype=s.dtype)
    f = 0.0
    for c in range(C):
        r[c] = m[c] - rho * s[c]
        f += r[c].real * r[c].real + r[c].imag * r[c].imag
    for p in range(P):
        acc = 0.0j
        for c in range(C):
            acc += r[c].conjugate() * ds[p, c]
        g = rho * acc
        grad[p] = -2.0 * g.real
    return f


@njit(cache=True)
def tensor_eval_many(coef, shape, order, offset, V, want_grad, values, grads):
    """Row-wise ``tensor_eval`` over points ``V`` of shape (n, P)."""
    for i in range(V.shape[0]):
        tensor_eval(coef, shape, order, offset, V[i], want_grad, values[i], grads[i])


@njit(cache=True)
def reduced_objective_gn(coef, shape, order, offset, v, m):
    """``reduced_objective`` plus a Gauss-Newton curvature matrix (P, P).

    The residual Jacobian is the derivative of ``m - rho s(v)`` with ``rho``
    held at its optimum and the direction along ``s`` projected out.
    """
    P = shape.shape[0]
    C = coef.shape[1]
    s = np.empty(C, dtype=coef.dtype)
    ds = np.empty((P, C), dtype=coef.dtype)
    tensor_eval(coef, shape, order, offset, v, True, s, ds)
    a = 0.0j
    b = 0.0
    for c in range(C):
        a += s[c].conjugate() * m[c]
        b += s[c].real * s[c].real + s[c].imag * s[c].imag
    grad = np.zeros(P)
    hess = np.zeros((P, P))
    if b == 0.0:
        return np.nan, grad, hess, a, b
    rho = a / b
    f = _residual_gradient(s, ds, m, rho, grad)
    J = np.empty((P, C), dtype=coef.dtype)
    for p in range(P):
        sd = 0.0j
        for c in range(C):
            sd += s[c].conjugate() * ds[p, c]
        for c in range(C):
            J[p, c] = rho * (ds[p, c] - s[c] * sd / b)
    for p in range(P):
        for q in range(p, P):
            acc = 0.0
            for c in range(C):
                acc += J[p, c].real * J[q, c].real + J[p, c].imag * J[q, c].imag
            hess[p, q] = 2.0 * acc
            hess[q, p] = 2.0 * acc
    return f, grad, hess, a, b
