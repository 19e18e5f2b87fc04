"""Watch the promotion gate accept and reject candidate references.

Runs the preference loop twice on a frozen target: once with a lenient
gate (every phase promotes) and once with a strict gate (nothing moves).
The per-phase table shows the two statistics the gate reads: the score
improvement delta_S and the KL distance kl_hat to the current reference.
"""

from dataclasses import replace

from driftpref.config import RunConfig
from driftpref.prefloop import run_preference_loop


def show(title, cfg, seed=3):
    res = run_preference_loop(cfg, seed)
    print(f"\n{title}")
    print(f"{'phase':>6} {'pairs':>6} {'delta_S':>10} {'kl_hat':>10} "
          f"{'decision':>9} {'ref version':>12}")
    for rep in res.phases:
        print(f"{rep.phase_index:>6} {rep.n_pairs:>6} {rep.delta_s:>10.5f} "
              f"{rep.kl_hat:>10.5f} {rep.decision:>9} "
              f"{rep.ref_version_before:>5} -> {rep.ref_version_after}")
    rate = res.accept_rate()
    print(f"  accept rate {rate:.2f}, final reference version {res.ref_version}")


def main():
    base = RunConfig(mode="evodpo", K=5, d=5, H=80, drift_mode="frozen",
                     phase_length=20, gate_size=32)
    show("lenient gate (eps_s=0, delta_H=big): every phase promotes",
         replace(base, eps_s=0.0, delta_H=1e9))
    show("strict gate (eps_s=0.05, delta_H=1e-6): nothing clears the bar",
         replace(base, eps_s=0.05, delta_H=1e-6))
    print("\nthe gate needs BOTH: enough improvement AND a small enough move.")


if __name__ == "__main__":
    main()
