"""Embedded persistent object store with live schema evolution."""

from .codec import BACKEND, InstanceRecord, decode_record, decode_value, encode_record, encode_value
from .errors import *  # noqa: F401,F403
from .graph import export_subgraph, graphs_isomorphic, import_subgraph, reachable_closure
from .migration import UpgradeCounter, ensure_current, extent, migrate_eager, upgrade_record
from .objects import (
    Handle,
    create_instance,
    delete_instance,
    deref,
    lookup_instance,
    register_init_hook,
    register_migration_hook,
    slot_read,
    slot_unbind,
    slot_write,
    snapshot,
)
from .schema import (
    UNBOUND,
    ClassDescriptor,
    ClassDiff,
    Registry,
    SlotSpec,
    class_diff,
    parse_schema_text,
)
from .store import Finding, Session, VerifyReport, open_store
from .values import Map, Opaque, Ref, Set, Symbol, is_scalar, value_equal

__version__ = "0.1.0"
