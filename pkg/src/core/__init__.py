# Group key management core: field arithmetic, key codec, key trees, roles
from .exceptions import (AuthFailure, ConfigError, DegreeViolation, DivisionByZero, FieldError,
                         FreshnessViolation, GroupKeyError, InvariantViolation, MembershipError,
                         MergeAttachmentError, OutOfRange, ProtocolError, ScenarioError,
                         SingularSystem, TraceParseError)
from .gf_mds import Codeword, FieldParams, GaloisField, get_field
from .keytree import (KeyNode, KeyTree, NodeKind, build_balanced_tree, check_balance,
                      insert_leaf, merge_trees, partition_leaves, remove_leaf, render_tree)
from .rekey import (RekeyBroadcast, RekeyCodec, SealedKeyMsg, SeedAssignment, SeedKey,
                    SessionKey, decode_message, encode_message)
from .roles import (GroupController, MemberState, SubgroupController, Transmission,
                    handle_join, handle_leave, handle_merge, handle_partition, init_group,
                    member_process)

__all__ = [
    # Errors
    'GroupKeyError',
    'FieldError',
    'DivisionByZero',
    'SingularSystem',
    'OutOfRange',
    'ProtocolError',
    'FreshnessViolation',
    'DegreeViolation',
    'AuthFailure',
    'MembershipError',
    'MergeAttachmentError',
    'InvariantViolation',
    'ConfigError',
    'ScenarioError',
    'TraceParseError',

    # Field and codec
    'GaloisField',
    'FieldParams',
    'Codeword',
    'get_field',
    'RekeyCodec',
    'SeedKey',
    'SessionKey',
    'RekeyBroadcast',
    'SealedKeyMsg',
    'SeedAssignment',
    'encode_message',
    'decode_message',

    # Trees
    'KeyNode',
    'KeyTree',
    'NodeKind',
    'build_balanced_tree',
    'check_balance',
    'insert_leaf',
    'remove_leaf',
    'merge_trees',
    'partition_leaves',
    'render_tree',

    # Protocol roles
    'GroupController',
    'SubgroupController',
    'MemberState',
    'Transmission',
    'init_group',
    'handle_join',
    'handle_leave',
    'handle_merge',
    'handle_partition',
    'member_process',
]
