"""Structured interior-point solver for the SQP subproblem.

Solves the stagewise QP arising from multiple shooting with every path
constraint softened by a nonnegative slack carrying an L1 + L2 penalty:

    min  sum_k 1/2 dx_k' Q_k dx_k + q_k' dx_k
       + sum_k 1/2 du_k' R_k du_k + r_k' du_k
       + sum_{k,j} w1_j s_kj + w2_j s_kj^2
    s.t. dx_0 = given,  dx_{k+1} = A_k dx_k + B_k du_k + d_k
         h_kj + Cx_kj dx_k + Cu_kj du_k <= s_kj,   s_kj >= 0

A primal-dual Mehrotra predictor-corrector handles the inequality rows; each
Newton step eliminates the per-row variables analytically and reduces to a
Riccati sweep over the horizon, so the cost per iteration is linear in N.
Deterministic: no randomization, fixed iteration order.
"""

import numpy as np
from numba import njit

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1


@njit(cache=True, fastmath=False)
def _solve_qp_kernel(A, B, d, dx0, Qm, qv, Rm, rv, Cx, Cu, hv, w1, w2, reg, tol, max_iter):
    N = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    nc = Cx.shape[1]
    m_rows = N * nc

    dxs = np.zeros((N + 1, nx))
    dxs[0] = dx0
    dus = np.zeros((N, nu))
    y = np.zeros((N + 1, nx))

    s = np.ones((N, nc))
    z = np.ones((N, nc))
    mu = np.ones((N, nc))
    nv = np.ones((N, nc))
    if nc > 0:
        for k in range(N):
            for j in range(nc):
                base = hv[k, j] + np.dot(Cx[k, j], dxs[k])
                s[k, j] = max(1.0, base + 1.0)
                z[k, j] = s[k, j] - base
                mu[k, j] = 0.5 * w1[j] + w2[j] * s[k, j]
                nv[k, j] = 0.5 * w1[j] + w2[j] * s[k, j]

    # workspaces
    P = np.zeros((N + 1, nx, nx))
    pvec = np.zeros((N + 1, nx))
    K = np.zeros((N, nu, nx))
    kf = np.zeros((N, nu))
    Huu_inv = np.zeros((N, nu, nu))
    Hux = np.zeros((N, nu, nx))
    Qt = np.zeros((N, nx, nx))
    Rt = np.zeros((N, nu, nu))
    St = np.zeros((N, nu, nx))

    rx = np.zeros((N + 1, nx))
    ru = np.zeros((N, nu))
    rd = np.zeros((N, nx))
    rp = np.zeros((N, nc))
    rs = np.zeros((N, nc))
    sigma_rows = np.zeros((N, nc))
    g_rows = np.zeros((N, nc))
    rhs0 = np.zeros((N, nc))
    a_rows = np.zeros((N, nc))
    D_rows = np.zeros((N, nc))

    dxd = np.zeros((N + 1, nx))
    dud = np.zeros((N, nu))
    dyd = np.zeros((N + 1, nx))
    ds = np.zeros((N, nc))
    dz = np.zeros((N, nc))
    dmu = np.zeros((N, nc))
    dnv = np.zeros((N, nc))
    ds_aff = np.zeros((N, nc))
    dz_aff = np.zeros((N, nc))
    dmu_aff = np.zeros((N, nc))
    dnv_aff = np.zeros((N, nc))

    kkt = np.inf
    iters = 0
    status = STATUS_MAX_ITER
    prev_alpha = 1.0
    best_kkt = np.inf
    best_dxs = dxs.copy()
    best_dus = dus.copy()
    best_s = s.copy()
    best_mu = mu.copy()
    # complementarity is meaningful in slack units: the duals live at the
    # penalty scale, so the gap is normalized by it before the tolerance test
    dual_scale = 1.0
    for j in range(nc):
        dual_scale = max(dual_scale, w1[j])

    for it in range(max_iter + 1):
        # residuals at current iterate
        for k in range(N):
            rd[k] = A[k] @ dxs[k] + B[k] @ dus[k] + d[k] - dxs[k + 1]
        for k in range(N + 1):
            rx[k] = Qm[k] @ dxs[k] + qv[k] - y[k]
            if k < N:
                rx[k] += A[k].T @ y[k + 1]
                if nc > 0:
                    rx[k] += Cx[k].T @ mu[k]
        for k in range(N):
            ru[k] = Rm[k] @ dus[k] + rv[k] + B[k].T @ y[k + 1]
            if nc > 0:
                ru[k] += Cu[k].T @ mu[k]
        gap = 0.0
        if nc > 0:
            for k in range(N):
                for j in range(nc):
                    rp[k, j] = hv[k, j] + np.dot(Cx[k, j], dxs[k]) + np.dot(Cu[k, j], dus[k]) - s[k, j] + z[k, j]
                    rs[k, j] = w1[j] + 2.0 * w2[j] * s[k, j] - mu[k, j] - nv[k, j]
                    gap += mu[k, j] * z[k, j] + nv[k, j] * s[k, j]
            gap /= 2.0 * m_rows

        kkt_lin = 0.0
        for k in range(N):
            kkt_lin = max(kkt_lin, np.max(np.abs(rd[k])))
            kkt_lin = max(kkt_lin, np.max(np.abs(ru[k])))
        for k in range(1, N + 1):
            kkt_lin = max(kkt_lin, np.max(np.abs(rx[k])))
        if nc > 0:
            for k in range(N):
                kkt_lin = max(kkt_lin, np.max(np.abs(rp[k])))
                kkt_lin = max(kkt_lin, np.max(np.abs(rs[k])))
        kkt = max(kkt_lin, gap / dual_scale) if nc > 0 else kkt_lin
        if kkt < best_kkt:
            best_kkt = kkt
            best_dxs[:] = dxs
            best_dus[:] = dus
            best_s[:] = s
            best_mu[:] = mu
        if kkt <= tol:
            status = STATUS_OPTIMAL
            break
        if it == max_iter:
            break
        iters = it + 1

        # --- factorization (depends on barrier state only) ---
        if nc > 0:
            for k in range(N):
                for j in range(nc):
                    # clamped barrier ratios keep the Newton matrices finite
                    a = min(mu[k, j] / max(z[k, j], 1e-250), 1e12)
                    bt = min(nv[k, j] / max(s[k, j], 1e-250), 1e12)
                    Dj = 2.0 * w2[j] + bt + a
                    a_rows[k, j] = a
                    D_rows[k, j] = Dj
                    sigma_rows[k, j] = a * (2.0 * w2[j] + bt) / Dj

        for k in range(N):
            if nc > 0:
                Cxs = sigma_rows[k].reshape(nc, 1) * Cx[k]
                Cus = sigma_rows[k].reshape(nc, 1) * Cu[k]
                Qt[k] = Qm[k] + Cx[k].T @ Cxs
                Rt[k] = Rm[k] + Cu[k].T @ Cus
                St[k] = Cu[k].T @ Cxs
            else:
                Qt[k] = Qm[k]
                Rt[k] = Rm[k]
                St[k, :, :] = 0.0
            for i in range(nx):
                Qt[k, i, i] += reg
            for i in range(nu):
                Rt[k, i, i] += reg

        P[N] = Qm[N]
        for i in range(nx):
            P[N, i, i] += reg
        for k in range(N - 1, -1, -1):
            PB = P[k + 1] @ B[k]
            PA = P[k + 1] @ A[k]
            Huu = Rt[k] + B[k].T @ PB
            Hux[k] = St[k] + B[k].T @ PA
            Huu_inv[k] = np.linalg.inv(Huu)
            K[k] = -Huu_inv[k] @ Hux[k]
            Pk = Qt[k] + A[k].T @ PA + Hux[k].T @ K[k]
            P[k] = 0.5 * (Pk + Pk.T)

        # --- two passes: affine predictor (tau = 0), then corrector ---
        tau = 0.0
        stalled = False
        gamma_f = 0.995
        for corrector in range(2):
            if nc > 0:
                if corrector == 0:
                    tau = 0.0
                    for k in range(N):
                        for j in range(nc):
                            zf = max(z[k, j], 1e-250)
                            sf = max(s[k, j], 1e-250)
                            c1 = mu[k, j] * z[k, j] - tau
                            c2 = nv[k, j] * s[k, j] - tau
                            rhs0[k, j] = -rs[k, j] - c1 / zf - c2 / sf + a_rows[k, j] * rp[k, j]
                            g_rows[k, j] = -c1 / zf + a_rows[k, j] * rp[k, j] - a_rows[k, j] * rhs0[k, j] / D_rows[k, j]
                else:
                    for k in range(N):
                        for j in range(nc):
                            zf = max(z[k, j], 1e-250)
                            sf = max(s[k, j], 1e-250)
                            c1 = mu[k, j] * z[k, j] + dmu_aff[k, j] * dz_aff[k, j] - tau
                            c2 = nv[k, j] * s[k, j] + dnv_aff[k, j] * ds_aff[k, j] - tau
                            rhs0[k, j] = -rs[k, j] - c1 / zf - c2 / sf + a_rows[k, j] * rp[k, j]
                            g_rows[k, j] = -c1 / zf + a_rows[k, j] * rp[k, j] - a_rows[k, j] * rhs0[k, j] / D_rows[k, j]

            # vector backward pass
            pvec[N] = rx[N]
            for k in range(N - 1, -1, -1):
                t1 = P[k + 1] @ rd[k] + pvec[k + 1]
                hu = ru[k] + B[k].T @ t1
                qx = rx[k]
                if nc > 0:
                    hu = hu + Cu[k].T @ g_rows[k]
                    qx = qx + Cx[k].T @ g_rows[k]
                kf[k] = -Huu_inv[k] @ hu
                pvec[k] = qx + A[k].T @ t1 + Hux[k].T @ kf[k]

            # forward rollout of the Newton direction
            dxd[0] = np.zeros(nx)
            for k in range(N):
                dud[k] = K[k] @ dxd[k] + kf[k]
                dxd[k + 1] = A[k] @ dxd[k] + B[k] @ dud[k] + rd[k]
                dyd[k + 1] = P[k + 1] @ dxd[k + 1] + pvec[k + 1]

            alpha_p = 1.0
            alpha_d = 1.0
            if nc > 0:
                for k in range(N):
                    for j in range(nc):
                        cdw = np.dot(Cx[k, j], dxd[k]) + np.dot(Cu[k, j], dud[k])
                        dsj = (rhs0[k, j] + a_rows[k, j] * cdw) / D_rows[k, j]
                        dzj = -rp[k, j] - cdw + dsj
                        if corrector == 0:
                            c1 = mu[k, j] * z[k, j]
                            c2 = nv[k, j] * s[k, j]
                        else:
                            c1 = mu[k, j] * z[k, j] + dmu_aff[k, j] * dz_aff[k, j] - tau
                            c2 = nv[k, j] * s[k, j] + dnv_aff[k, j] * ds_aff[k, j] - tau
                        dmuj = -(c1 + mu[k, j] * dzj) / max(z[k, j], 1e-250)
                        dnvj = -(c2 + nv[k, j] * dsj) / max(s[k, j], 1e-250)
                        ds[k, j] = dsj
                        dz[k, j] = dzj
                        dmu[k, j] = dmuj
                        dnv[k, j] = dnvj
                        if dsj < 0.0:
                            alpha_p = min(alpha_p, -gamma_f * s[k, j] / dsj)
                        if dzj < 0.0:
                            alpha_p = min(alpha_p, -gamma_f * z[k, j] / dzj)
                        if dmuj < 0.0:
                            alpha_d = min(alpha_d, -gamma_f * mu[k, j] / dmuj)
                        if dnvj < 0.0:
                            alpha_d = min(alpha_d, -gamma_f * nv[k, j] / dnvj)
                alpha_p = min(alpha_p, alpha_d)
                alpha_d = alpha_p

            if corrector == 0 and nc > 0:
                gap_aff = 0.0
                for k in range(N):
                    for j in range(nc):
                        gap_aff += (mu[k, j] + alpha_d * dmu[k, j]) * (z[k, j] + alpha_p * dz[k, j])
                        gap_aff += (nv[k, j] + alpha_d * dnv[k, j]) * (s[k, j] + alpha_p * ds[k, j])
                gap_aff /= 2.0 * m_rows
                ratio = gap_aff / max(gap, 1e-300)
                tau = (ratio * ratio * ratio) * gap
                for k in range(N):
                    ds_aff[k] = ds[k]
                    dz_aff[k] = dz[k]
                    dmu_aff[k] = dmu[k]
                    dnv_aff[k] = dnv[k]
                continue  # corrector pass


            # primal variables (and the w-coupled row slacks) advance with
            # alpha_p, dual variables with alpha_d; residuals absorb mismatch
            for k in range(N + 1):
                dxs[k] += alpha_p * dxd[k]
                y[k] += alpha_d * dyd[k]
            for k in range(N):
                dus[k] += alpha_p * dud[k]
            if nc > 0:
                for k in range(N):
                    for j in range(nc):
                        s[k, j] += alpha_p * ds[k, j]
                        z[k, j] += alpha_p * dz[k, j]
                        # any KKT point has mu + nu = w1 + 2 w2 s, so capping
                        # the duals there kills corrector-induced blowups
                        cap = 1.2 * (w1[j] + 2.0 * w2[j] * s[k, j]) + 10.0
                        mu[k, j] = min(mu[k, j] + alpha_d * dmu[k, j], cap)
                        nv[k, j] = min(nv[k, j] + alpha_d * dnv[k, j], cap)
            stalled = alpha_p < 1e-11
            prev_alpha = alpha_p
            break

        if stalled:
            break

    return best_dxs, best_dus, best_s, best_mu, best_kkt, iters, status


def solve_stagewise_qp(A, B, d, dx0, Qm, qv, Rm, rv, Cx, Cu, hv, w1, w2,
                       reg=1e-8, tol=1e-8, max_iter=50):
    """Python-facing wrapper; see module docstring for the problem solved.

    Constraint rows are rescaled internally by their L1 weight so the row
    duals are O(1) regardless of how stiff the penalties are; results are
    mapped back to the caller's units.  Returns (dx (N+1, nx), du (N, nu),
    slack (N, nc), duals (N, nc), kkt_residual, iterations, status).
    """
    A, B, d, dx0, Qm, qv, Rm, rv, Cx, Cu, hv = (
        np.ascontiguousarray(np.asarray(a, dtype=float))
        for a in (A, B, d, dx0, Qm, qv, Rm, rv, Cx, Cu, hv)
    )
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    f = np.sqrt(np.maximum(w1, 1.0))
    Cx_s = np.ascontiguousarray(Cx * f[None, :, None])
    Cu_s = np.ascontiguousarray(Cu * f[None, :, None])
    hv_s = np.ascontiguousarray(hv * f[None, :])
    w1_s = np.ascontiguousarray(w1 / f)
    w2_s = np.ascontiguousarray(w2 / f**2)
    dx, du, s, mu, kkt, iters, status = _solve_qp_kernel(
        A, B, d, dx0, Qm, qv, Rm, rv, Cx_s, Cu_s, hv_s, w1_s, w2_s,
        float(reg), float(tol), int(max_iter),
    )
    return dx, du, s / f[None, :], mu * f[None, :], kkt, iters, status
