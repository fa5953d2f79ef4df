"""Monte Carlo price of an at-the-money Black-Scholes call against the closed form."""

import argparse

from pidenet.model import builtin_model
from pidenet.pricing import black_scholes_call, mc_price, payoff_network


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=1_000_000)
    parser.add_argument("--steps", type=int, default=256)
    parser.add_argument("--seed", type=int, default=16)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    spec, _ = builtin_model("black_scholes", 1, {"vol": 0.2})
    call = payoff_network("basket_call", 1, {"weights": 1.0, "strike": 1.0})
    est = mc_price(spec, call, [1.0], T=1.0, n_steps=args.steps, n_paths=args.paths,
                   seed=args.seed, threads=args.threads)
    closed = black_scholes_call(1.0, 1.0, 0.2, 1.0)
    z = (est.price - closed) / est.std_error
    print(f"mc {est.price:.6f} +- {est.std_error:.6f}  closed form {closed:.7f}  z {z:+.2f}")


if __name__ == "__main__":
    main()
