"""Numba inner loop for the spike-and-slab Gibbs sampler.

All randomness is pre-generated by the caller (uniforms, standard
normals, unit-scale gammas) so draws are bit-reproducible for a fixed
seed and independent of the JIT backend.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gibbs_sweeps(
    design,          # (N, Q)
    y,               # (N,)
    p_incl,          # (Q,) prior inclusion probabilities
    slab_var,        # (Q,) slab variances; inf allowed only where p_incl == 1
    col_norm2,       # (Q,) squared column norms
    sigma2_init,
    update_noise,    # bool
    noise_scale0,    # prior scale b0 of the inverse-gamma noise update
    n_iter,
    burn_in,
    unif,            # (n_iter, Q)
    norm,            # (n_iter, Q)
    gam,             # (n_iter,) Gamma(a0 + N/2, 1) draws
    coef_out,        # (n_iter - burn_in, Q)
    incl_out,        # (n_iter - burn_in, Q)
    sigma2_out,      # (n_iter - burn_in,)
):
    n, q = design.shape
    theta = np.zeros(q)
    resid = y.copy()
    sigma2 = sigma2_init
    for t in range(n_iter):
        for j in range(q):
            if theta[j] != 0.0:
                for i in range(n):
                    resid[i] += design[i, j] * theta[j]
            s = 0.0
            for i in range(n):
                s += design[i, j] * resid[i]
            dj = col_norm2[j]
            tau2 = slab_var[j]
            if p_incl[j] >= 1.0:
                include = True
            else:
                # log Bayes factor for inclusion given the partial residual
                denom = dj * tau2 + sigma2
                log_bf = 0.5 * np.log(sigma2 / denom) + (
                    s * s * tau2 / (2.0 * sigma2 * denom)
                )
                log_odds = np.log(p_incl[j] / (1.0 - p_incl[j])) + log_bf
                prob = 1.0 / (1.0 + np.exp(-log_odds))
                include = unif[t, j] < prob
            if include:
                if np.isinf(tau2):
                    v = sigma2 / dj
                    m = s / dj
                else:
                    v = sigma2 * tau2 / (dj * tau2 + sigma2)
                    m = v * s / sigma2
                theta[j] = m + np.sqrt(v) * norm[t, j]
                for i in range(n):
                    resid[i] -= design[i, j] * theta[j]
            else:
                theta[j] = 0.0
        if update_noise:
            ssr = 0.0
            for i in range(n):
                ssr += resid[i] * resid[i]
            sigma2 = (noise_scale0 + 0.5 * ssr) / gam[t]
        if t >= burn_in:
            k = t - burn_in
            for j in range(q):
                coef_out[k, j] = theta[j]
                incl_out[k, j] = theta[j] != 0.0
            sigma2_out[k] = sigma2
