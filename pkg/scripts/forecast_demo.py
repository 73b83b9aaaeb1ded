"""Forecast, plan and certify one day ahead.

    python3 scripts/forecast_demo.py --origin 2018-12-12T00 --M 50 --seed 0

Samples M demand trajectories from freshly fitted winter GPs, prints the
per-hour 5/50/95 percentiles next to the realized demand, solves the
scenario program from the nominal initial storage state, and certifies the
plan: support size, epsilon at the chosen beta, and the out-of-sample
thermal-storage violation rate on independent trajectories.
"""

import argparse
import warnings

import numpy as np

from hubmpc.features import nearest_rank_quantiles
from hubmpc.gp_forecast import condition_on_history, fit
from hubmpc.guarantees import GuaranteeConfig, certify, empirical_violation
from hubmpc.hub_model import HubParameters, HubState, Tariffs
from hubmpc.sampler import SamplerConfig, Weather, sample_trajectories
from hubmpc.scenario_mpc import SPConfig, SPProblem, solve_scenarios
from hubmpc.synthetic import SyntheticDataConfig, generate_synthetic_data


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--origin", default="2018-12-12T00")
    ap.add_argument("--M", type=int, default=50)
    ap.add_argument("--T", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--beta", type=float, default=0.05)
    ap.add_argument("--fresh", type=int, default=2000, help="out-of-sample trajectories")
    args = ap.parse_args()

    hist = generate_synthetic_data(SyntheticDataConfig(start="2018-01-01T00",
                                                       end="2019-02-01T00", seed=args.seed))
    stop, k = hist.index_of("2018-12-01T00"), hist.index_of(args.origin)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        models = {kind: fit(hist, kind, "winter", train_range=(0, stop), window_hours=672,
                            n_fit=400, restarts=1, seed=args.seed)
                  for kind in ("electric", "heat")}
    live = {kind: condition_on_history(m, hist, k, 672) for kind, m in models.items()}
    weather = Weather.from_history(hist, k, args.T)
    scen = sample_trajectories(live, hist, k, weather,
                               SamplerConfig(M=args.M, T=args.T, seed=args.seed))

    qe = nearest_rank_quantiles(scen.L_e.T, (5.0, 50.0, 95.0))
    qh = nearest_rank_quantiles(scen.L_h.T, (5.0, 50.0, 95.0))
    print(f"{args.M} trajectories from {args.origin}  (kWh: p5 / p50 / p95 | realized)")
    print(f"{'h':>3}  {'electric':^30}  {'heat':^30}")
    for s in range(args.T):
        print(f"{s:>3}  {qe[s, 0]:6.1f} {qe[s, 1]:6.1f} {qe[s, 2]:6.1f} | "
              f"{hist.L_e[k + s]:6.1f}    {qh[s, 0]:6.1f} {qh[s, 1]:6.1f} {qh[s, 2]:6.1f} | "
              f"{hist.L_h[k + s]:6.1f}")

    params = HubParameters()
    tariffs = Tariffs.constant(len(hist)).window(k, args.T)
    problem = SPProblem(HubState.initial(params, k), params, tariffs, weather.irradiance,
                        SPConfig(T=args.T))
    sol = solve_scenarios(problem, scen)
    print(f"\nplan: {sol.status}, objective {sol.objective:.3f} CHF, "
          f"slack used {float(np.sum(sol.sigma_plus) + np.sum(sol.sigma_minus)):.2f} kWh, "
          f"{sol.stats.get('nodes', 0)} B&B nodes")

    cert = certify(sol, scen, problem, GuaranteeConfig(beta=args.beta))
    fresh = sample_trajectories(live, hist, k, weather,
                                SamplerConfig(M=args.fresh, T=args.T, seed=args.seed + 10_000))
    rate = empirical_violation(sol, fresh, problem.state.ts_level, params)
    print(f"support s* = {cert.s_star} of {cert.M}, epsilon = {cert.epsilon:.4f} "
          f"(beta {args.beta}), log bound {cert.bound:.4f}")
    print(f"out-of-sample violation rate on {args.fresh} trajectories: {rate:.4f}")


if __name__ == "__main__":
    main()
