"""Adjoint gradient against central differences on the coarse check problem."""
import argparse

from photodesign.pipeline import gradcheck, gradcheck_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--guess", type=float, default=1.5)
    ap.add_argument("--step", type=float, default=1e-4)
    ap.add_argument("--scope", choices=("design", "all"), default="all")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    res = gradcheck(gradcheck_config(), guess=args.guess, s=args.step, seed=args.seed,
                    scope=args.scope)
    worst = res.rel_error[res.checked].argsort()[::-1][:5]
    cells = res.cells[res.checked]
    adj, fd = res.adjoint[res.checked], res.fd[res.checked]
    for i in worst:
        print(f"cell {cells[i]:4d}: adjoint {adj[i]: .6e}  fd {fd[i]: .6e}")
    print(f"{int(res.checked.sum())} cells scored, max relative error {res.max_rel_error:.3e}, "
          f"{'PASS' if res.passed else 'FAIL'} at tol {res.tol:g}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
