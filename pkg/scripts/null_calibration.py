"""Null calibration of the audit and power against a leak mixture.

Runs many honest IPF audits and reports the Kolmogorov-Smirnov distance of
their p-values from uniform, then the median p-value of the mixture
``(1 - lam) * IPF + lam * empirical`` for a grid of leak fractions.
"""

import argparse

import numpy as np
from scipy import stats

from sdgaudit import AuditConfig, GeneratorConfig, Schema, ThetaVector, Workload, audit, build_safespace, make_card, sample_iid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cards", default="4,3,2")
    ap.add_argument("--null-audits", type=int, default=200)
    ap.add_argument("--power-audits", type=int, default=20)
    ap.add_argument("--lambdas", default="0,0.05,0.1,0.25,0.5,1")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--n-sym", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    s = Schema.from_cardinalities([int(c) for c in args.cards.split(",")])
    w = Workload.all_kway(s, 2)
    ss = build_safespace(w)
    rng = np.random.default_rng(args.seed)
    real = sample_iid(ThetaVector(s, rng.dirichlet(np.full(s.total_cells, 3.0))), 20_000, args.seed)
    card = make_card(real, ss, GeneratorConfig("ipf", workload=w))

    def pvals(gen, seeds):
        return np.array([
            audit(card, gen, real, AuditConfig(K1=args.k, K2=args.k, n_sym=args.n_sym, direction_seed=k), ss).p_value
            for k in seeds
        ])

    null = pvals(GeneratorConfig("ipf", workload=w), range(args.null_audits))
    res = stats.kstest(null, "uniform")
    print(f"honest audits: {args.null_audits}, KS distance {res.statistic:.3f}, "
          f"rejection rate at 0.05: {np.mean(null < 0.05):.3f}")
    deciles = np.quantile(null, np.linspace(0.1, 0.9, 9))
    print("p-value deciles:", " ".join(f"{q:.2f}" for q in deciles))
    for lam in (float(x) for x in args.lambdas.split(",")):
        ps = pvals(GeneratorConfig("mixture", workload=w, leak_fraction=lam), range(10_000, 10_000 + args.power_audits))
        print(f"lambda={lam:<5} median p {np.median(ps):.3g}  rejection rate {np.mean(ps < 0.05):.2f}")


if __name__ == "__main__":
    main()
