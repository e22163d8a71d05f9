"""Small library-level tour: one linear-contract run, its bias audit and a short sweep.

Runs in well under a minute:  python3 demos/quick_tour.py
"""
import json
import os

from priorfree.forecasting import audit_bias
from priorfree.harness import ExperimentConfig, loglog_slope, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))

with open(os.path.join(HERE, "configs", "linear_iid.json"), encoding="utf-8") as fh:
    base = json.load(fh)
base["reps"] = 8

rows = []
for T in (1024, 4096, 16384):
    res = run_experiment(ExperimentConfig.from_dict({**base, "T": T}))
    r = res.report
    rows.append((T, r["policy_regret"]["PR"]))
    print(f"T={T:>5}  PR={r['policy_regret']['PR']:+.4f}  SwapReg/T={r['swap_regret']['mean']:.4f}  "
          f"max alpha={r['bias']['max_alpha']:.4f}  identity err={max(d['identity_error'] for d in r['decomposition']):.1e}")

print("log-log slope of PR:", loglog_slope(*zip(*rows)))

st = res.realized[0].agent_info["stream"]
worst = sorted(audit_bias(st.forecasts, st.states, st.families), key=lambda x: -x["alpha"])[:5]
print("largest event biases at T=16384:")
for w in worst:
    print(f"  {w['event_id']:<24} n_E={w['n_E']:>5} alpha={w['alpha']:.5f}")
