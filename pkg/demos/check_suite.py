"""Run the analytical check suite at demo size and print the scoreboard.

Each check replays one proved inequality against fresh random draws: the
KL perturbation bound, the switching-budget count, the windowed variation
bound, the self-normalized noise tail, and the full estimation-error
envelope.  Probabilistic checks are allowed their stated failure rate
plus binomial slack; deterministic ones must hold everywhere.
"""

from driftpref.config import RunConfig
from driftpref.verify import run_standard_checks


def main():
    cfg = RunConfig(mode="verify", trials=400)
    reports = run_standard_checks(cfg, seed=0)
    print(f"{'check':<20} {'trials':>7} {'viol':>5} {'excl':>5} "
          f"{'max ratio':>10} {'rate':>7} {'allowed':>8} {'passed':>7}")
    for rep in reports:
        print(f"{rep.lemma_id:<20} {rep.trials:>7} {rep.violations:>5} "
              f"{rep.excluded:>5} {rep.max_ratio:>10.4f} "
              f"{rep.violation_rate:>7.4f} {rep.allowed_rate:>8.4f} "
              f"{str(rep.passed):>7}")
    print("\nmax ratio is observed/bound: under 1.0 means the bound held "
          "with room to spare.")


if __name__ == "__main__":
    main()
