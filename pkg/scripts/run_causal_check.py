#!/usr/bin/env python3
"""Numeric demonstration that the frontdoor and backdoor adjustments recover
the interventional distribution on random discrete SCMs, including one worked
example printed in full."""

import argparse

import numpy as np

from conceptex.causal import (
    ObservedJointKXS,
    ObservedJointXPS,
    backdoor_estimate,
    frontdoor_estimate,
    interventional_truth,
    observational_joint,
    random_scm,
    verify_identities,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--models", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    scm = random_scm(rng)
    x = 0
    truth = interventional_truth(scm, x)
    fd = frontdoor_estimate(ObservedJointXPS.from_scm(scm), x)
    bd = backdoor_estimate(ObservedJointKXS.from_scm(scm), x)
    joint = observational_joint(scm)
    p_xs = joint.sum(axis=(0, 2))
    conditional = p_xs[x] / p_xs[x].sum()

    print(f"worked example (domains {scm.sizes}), intervention do(X={x}):")
    print(f"  truth P(S|do(X))      : {np.array2string(truth, precision=6)}")
    print(f"  frontdoor (X,P,S only): {np.array2string(fd, precision=6)}")
    print(f"  backdoor (K observed) : {np.array2string(bd, precision=6)}")
    print(f"  naive P(S|X=x)        : {np.array2string(conditional, precision=6)}  <- confounded")

    result = verify_identities(args.models, seed=args.seed)
    print(f"\n{args.models} random SCMs: max frontdoor deviation {result['max_frontdoor_dev']:.3e}, "
          f"max backdoor deviation {result['max_backdoor_dev']:.3e}")


if __name__ == "__main__":
    main()
