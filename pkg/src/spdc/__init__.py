"""Secure parallel determinant computation: blinding, N-server block LU and
scalar result checks, run over a simulated one-way message network."""

from .client import (
    AuthReport,
    PartitionPlan,
    ProtocolConfig,
    ProtocolOutcome,
    SingularityError,
    TamperError,
    assemble,
    authenticate,
    det_from_lu,
    plan_partition,
    run_protocol,
    threshold,
)
from .matrix_core import (
    BlockGrid,
    DetValue,
    SingularPivotError,
    augment,
    det_oracle,
    lu_plain,
    partition,
    rotate,
    rotation_sign,
)
from .netsim import FaultSpec, Trace, run_simulation, validate_trace
from .obfuscation import (
    BlindingKey,
    CipherEnvelope,
    SeedBundle,
    cipher,
    decipher,
    key_gen,
    rotate_select,
    seed_gen,
)

__version__ = "0.1.0"
