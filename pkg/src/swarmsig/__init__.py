"""Post-quantum multivariate identity-based signature toolkit.

Modules:
    gf         prime-field scalars, vectors, matrices, linear solving
    mq         quadratic maps, affine maps, trapdoor composition/inversion
    hashing    domain-separated digest and XOF derivation suite
    ibs        setup/extract/sign/verify and parameter profiles
    aggsig     multi-signer batching and aggregate verification
    ledger     encrypted transactions, merkle roots, hash-chained blocks
    consensus  leader-driven voting rounds over a simulated cloud cluster
    sim        deterministic device->fog->cloud pipeline simulation
    bench      timing sweeps with CSV output
    report     comparison tables and figures over bench CSVs
    cli        the `swarmsig` command-line entry point
"""

from .ibs import DESK, PAPER128, PROFILES, ParamSet, rounds_for_security

__all__ = ["DESK", "PAPER128", "PROFILES", "ParamSet", "rounds_for_security"]
__version__ = "0.1.0"
