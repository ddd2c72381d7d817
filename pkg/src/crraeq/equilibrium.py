"""Closed-form level quantities at a market state.

Everything here is an exact function of (t, X_t).  The state price
density comes straight from market clearing,

    zeta_t = delta_t^{-R} ( sum_i (e^{-rho_i t} Lambda_t^i / nu_i)^{1/R} )^R,

consumptions are the softmax split of the dividend across the agents'
per-curvature log terms, and wealths/stock price come from the
multinomial expansion of the clearing sum: sums over compositions beta
of weighted exponentials divided by D(beta).  All accumulation is in
log-space (logsumexp / softmax); naive exponentials overflow for |x| or
t in the hundreds, which are perfectly ordinary states for long-horizon
paths.

Private helpers ending in `_arr` broadcast over array-valued (t, x) and
are reused by the dynamics module, the simulation oracles, and the
finite-difference engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .model import DenominatorTable, EconomyParams, MarketState, log_dividend


@dataclass(frozen=True)
class EquilibriumSnapshot:
    """All closed-form outputs at one state, levels plus dynamics.

    Per-agent tuples are ordered like params.agents.  `rates` and
    `stock` carry the Ito coefficients; `portfolios` the risky-asset
    fractions pi^j.
    """

    state: MarketState
    dividend: float
    zeta: float
    consumptions: tuple[float, ...]
    wealths: tuple[float, ...]
    stock_price: float
    pd_ratio: float
    rates: "object"
    stock: "object"
    alpha_tilde_agents: tuple[float, ...]
    portfolios: tuple[float, ...]


def agent_log_terms_arr(t, x, params: EconomyParams) -> np.ndarray:
    """Per-agent exponent u_i = (-rho_i t - gamma_i + alpha_i x - alpha_i^2 t/2)/R.

    Shapes: t, x broadcastable; returns broadcast(t, x).shape + (J,).
    """
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    alpha = params.alpha_vec
    decay = params.rho_vec + 0.5 * alpha**2
    return (alpha * x - decay * t - params.gamma_vec) / params.R


def log_state_price_density_arr(t, x, params: EconomyParams) -> np.ndarray:
    u = agent_log_terms_arr(t, x, params)
    return params.R * (logsumexp(u, axis=-1) - log_dividend(t, x, params))


def consumption_fractions_arr(t, x, params: EconomyParams) -> np.ndarray:
    """Consumption shares c^j/delta: softmax of the agent log terms."""
    return softmax(agent_log_terms_arr(t, x, params), axis=-1)


def comp_log_terms_arr(t, x, table: DenominatorTable) -> np.ndarray:
    """Log of each |beta|=R term of L_t: logC + a x - g - b t, shape (..., M)."""
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    return (
        table.log_coeffs + table.x_coefs * x - table.gamma_coefs - table.t_coefs * t
    )


def agent_comp_log_terms_arr(t, x, table: DenominatorTable, j: int) -> np.ndarray:
    """Log of each |beta'|=R-1 term of agent j's wealth sum (before 1/D), (..., M')."""
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    return (
        table.log_coeffs_rm1
        + table.x_coefs_for(j) * x
        - table.gamma_coefs_for(j)
        - table.t_coefs_for(j) * t
    )


def log_L_arr(t, x, table: DenominatorTable) -> np.ndarray:
    return logsumexp(comp_log_terms_arr(t, x, table), axis=-1)


def log_Z_arr(t, x, table: DenominatorTable) -> np.ndarray:
    return logsumexp(comp_log_terms_arr(t, x, table) - np.log(table.d_values), axis=-1)


def log_Z_agent_arr(t, x, table: DenominatorTable, j: int) -> np.ndarray:
    terms = agent_comp_log_terms_arr(t, x, table, j)
    return logsumexp(terms - np.log(table.d_values_for(j)), axis=-1)


def log_stock_price_arr(t, x, params: EconomyParams, table: DenominatorTable):
    """log S = (1-R) log delta - log zeta + log Z."""
    ld = log_dividend(t, x, params)
    return (
        (1 - params.R) * ld
        - log_state_price_density_arr(t, x, params)
        + log_Z_arr(t, x, table)
    )


def log_wealth_arr(t, x, params: EconomyParams, table: DenominatorTable, j: int):
    ld = log_dividend(t, x, params)
    return (
        (1 - params.R) * ld
        - log_state_price_density_arr(t, x, params)
        + log_Z_agent_arr(t, x, table, j)
    )


def log_pd_ratio_arr(t, x, params: EconomyParams, table: DenominatorTable):
    """log(S/delta) = log Z - R logsumexp(u): the displayed price-dividend form."""
    u = agent_log_terms_arr(t, x, params)
    return log_Z_arr(t, x, table) - params.R * logsumexp(u, axis=-1)


# --- scalar operations -------------------------------------------------------


def state_price_density(state: MarketState, params: EconomyParams) -> float:
    """zeta_t, evaluated in log-space."""
    return float(np.exp(log_state_price_density_arr(state.t, state.x, params)))


def consumption(state: MarketState, params: EconomyParams, j: int) -> float:
    """Agent j's consumption c_t^j = delta_t * (softmax share of agent j)."""
    return consumptions(state, params)[j]


def consumptions(state: MarketState, params: EconomyParams) -> tuple[float, ...]:
    """All agents' consumptions; they sum to the dividend by construction.

    Each c^j is exponentiated from log delta + log share so that a tiny
    share at an extreme state underflows only if c^j itself is below the
    float range, not because share * delta rounds to zero.
    """
    u = agent_log_terms_arr(state.t, state.x, params)
    log_c = log_dividend(state.t, state.x, params) + u - logsumexp(u, axis=-1)
    return tuple(float(v) for v in np.exp(log_c))


def wealth(
    state: MarketState, params: EconomyParams, table: DenominatorTable, j: int
) -> float:
    """Agent j's wealth: delta^{1-R} zeta^{-1} times the composition sum of R-1."""
    return float(np.exp(log_wealth_arr(state.t, state.x, params, table, j)))


def wealths(
    state: MarketState, params: EconomyParams, table: DenominatorTable
) -> tuple[float, ...]:
    return tuple(
        wealth(state, params, table, j) for j in range(params.n_agents)
    )


def stock_price(
    state: MarketState, params: EconomyParams, table: DenominatorTable
) -> float:
    """S_t = delta^{1-R} zeta^{-1} Z_t; equals the sum of agent wealths."""
    return float(np.exp(log_stock_price_arr(state.t, state.x, params, table)))


def pd_ratio(
    state: MarketState, params: EconomyParams, table: DenominatorTable
) -> float:
    """Price-dividend ratio S_t/delta_t."""
    return float(np.exp(log_pd_ratio_arr(state.t, state.x, params, table)))


def snapshot(
    state: MarketState, params: EconomyParams, table: DenominatorTable
) -> EquilibriumSnapshot:
    """Bundle levels and dynamics at one state into a single record."""
    from . import dynamics  # deferred: dynamics imports this module

    delta = float(np.exp(log_dividend(state.t, state.x, params)))
    zeta = state_price_density(state, params)
    cons = consumptions(state, params)
    w = wealths(state, params, table)
    s = stock_price(state, params, table)
    rates = dynamics.rate_bundle(state, params, table)
    stock = dynamics.stock_dynamics(state, params, table)
    atj = tuple(
        dynamics.agent_dynamics(state, params, table, j)
        for j in range(params.n_agents)
    )
    pis = dynamics.portfolios_from_parts(w, s, atj, rates, stock, params)
    return EquilibriumSnapshot(
        state=state,
        dividend=delta,
        zeta=zeta,
        consumptions=cons,
        wealths=w,
        stock_price=s,
        pd_ratio=pd_ratio(state, params, table),
        rates=rates,
        stock=stock,
        alpha_tilde_agents=atj,
        portfolios=pis,
    )
