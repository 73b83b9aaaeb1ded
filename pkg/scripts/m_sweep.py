"""Closed-loop sweep over the number of scenarios M, one row per (seed, arm).

    python3 scripts/m_sweep.py --seeds 0 1 2 --days 20 --M 1 3 10 50 --out sweep.csv

Each seed regenerates the synthetic data, refits the winter GP pair on
everything before the training cut, then runs pd_mpc, mean_mpc and the
scenario controller at each M from the same starting hour.
"""

import argparse
import csv
import time
import warnings

from hubmpc.gp_forecast import fit
from hubmpc.hub_model import HubParameters, Tariffs
from hubmpc.simulator import SimulationConfig, run_closed_loop, summarize
from hubmpc.synthetic import SyntheticDataConfig, generate_synthetic_data

COLUMNS = ("seed", "arm", "mean_cost_chf_per_h", "violation_count", "cumulative_violation_kwh",
           "unserved_heat_kwh", "dumped_heat_kwh", "max_hourly_ledger_residual", "runtime_s")


def sweep_seed(seed, days, Ms, start, train_cut, with_mean=True):
    hist = generate_synthetic_data(SyntheticDataConfig(start="2018-01-01T00",
                                                       end="2019-02-01T00", seed=seed))
    stop = hist.index_of(train_cut)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        models = {kind: fit(hist, kind, "winter", train_range=(0, stop), window_hours=672,
                            n_fit=400, restarts=1, seed=seed)
                  for kind in ("electric", "heat")}
    arms = [("pd_mpc", 1)] + ([("mean_mpc", 1)] if with_mean else [])
    arms += [("scenario", M) for M in Ms]
    params, tar = HubParameters(), Tariffs.constant(len(hist))
    for ctrl, M in arms:
        cfg = SimulationConfig(start=start, hours=24 * days, controller=ctrl, M=M,
                               sampling_seed=seed, data_seed=seed)
        t0 = time.perf_counter()
        s = summarize(run_closed_loop(cfg, hist, params, tar, models))
        row = {k: s.get(k) for k in COLUMNS}
        row.update(seed=seed, arm=cfg.label, runtime_s=round(time.perf_counter() - t0, 1))
        yield row


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--M", type=int, nargs="+", default=[1, 3, 10, 50])
    ap.add_argument("--start", default="2018-12-10T00")
    ap.add_argument("--train-cut", default="2018-12-01T00")
    ap.add_argument("--no-mean", action="store_true", help="skip the mean-forecast arm")
    ap.add_argument("--out", default="m_sweep.csv")
    args = ap.parse_args()

    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        print(f"{'seed':>4} {'arm':<14} {'CHF/h':>8} {'viol':>5} {'kWh':>8} {'sec':>6}")
        for seed in args.seeds:
            for row in sweep_seed(seed, args.days, args.M, args.start, args.train_cut,
                                  not args.no_mean):
                w.writerow(row)
                fh.flush()
                print(f"{row['seed']:>4} {row['arm']:<14} {row['mean_cost_chf_per_h']:>8.3f} "
                      f"{row['violation_count']:>5} {row['cumulative_violation_kwh']:>8.1f} "
                      f"{row['runtime_s']:>6.1f}")


if __name__ == "__main__":
    main()
