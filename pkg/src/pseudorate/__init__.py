"""Pseudonymous, priced rating tickets backed by an emulated trusted
platform module.

Agents buy single-use pseudonymous tickets (certified identity keys) from a
certification authority, redeem them at a reputation system by submitting a
signed rating with its credential chain, and settle through a charging
provider that splits revenue between the parties.
"""

from .agent import Ticket, TicketDenied, TrustedAgent
from .charging import (
    ChargeReceipt,
    ChargingProvider,
    Declined,
    PricingPolicy,
    RevenueShares,
    price,
    split_revenue,
)
from .clock import SimClock
from .crypto import (
    Credential,
    CredentialChain,
    KeyPair,
    VerifyReport,
    certify,
    generate_keypair,
    verify_chain,
    verify_credential,
)
from .encoding import EncodingError, decode, encode
from .errors import TicketError
from .privacy_ca import Challenge, DeniedRequest, GroupConfig, IdentityRecord, PrivacyCa
from .reputation import Ack, RatingPayload, Reject, ReputationSystem, WeightedScore
from .scenario import ScenarioConfig, ScenarioError, Transcript, run_scenario
from .tpm import TpmInstance, WrappedKey

__version__ = "0.1.0"

__all__ = [
    "Ack",
    "Challenge",
    "ChargeReceipt",
    "ChargingProvider",
    "Credential",
    "CredentialChain",
    "Declined",
    "DeniedRequest",
    "EncodingError",
    "GroupConfig",
    "IdentityRecord",
    "KeyPair",
    "PricingPolicy",
    "PrivacyCa",
    "RatingPayload",
    "Reject",
    "ReputationSystem",
    "RevenueShares",
    "ScenarioConfig",
    "ScenarioError",
    "SimClock",
    "Ticket",
    "TicketDenied",
    "TicketError",
    "TpmInstance",
    "Transcript",
    "TrustedAgent",
    "VerifyReport",
    "WeightedScore",
    "WrappedKey",
    "certify",
    "decode",
    "encode",
    "generate_keypair",
    "price",
    "run_scenario",
    "split_revenue",
    "verify_chain",
    "verify_credential",
]
