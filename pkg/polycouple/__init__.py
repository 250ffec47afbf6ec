"""Markovian couplings of Brownian motion with its monomial integrals.

There are three things you can do:
* Decide whether a polynomial-driven diffusion satisfies the rank test and
  reduce it to monomial integral coordinates via polyfield.check_phc() and
  polyfield.reduce_to_monomials().
* Couple two copies of the reduced system via the couplers in
  couplers.HeisenbergCoupler, couplers.MonomialCoupler and
  couplers.FullCoupler.
* Run seeded, replica-parallel experiments and estimate coupling-time tails
  via harness.run_experiment() and harness.estimate_tail().
"""

import typing as t

__version__ = "0.1.0"


def get_logger(name: str, use_structlog: t.Optional[bool] = False) -> t.Any:
    """Return a structlog logger if asked for one, a stdlib logger otherwise.

    Callers log key/value events on the former and f-string messages on the
    latter, so they need to branch on `use_structlog` themselves.
    """
    if use_structlog:
        import structlog

        return structlog.get_logger(name)

    import logging

    return logging.getLogger(name)
