# -*- coding: utf-8 -*-
# Generated by the protocol buffer compiler.  DO NOT EDIT!
# NO CHECKED-IN PROTOBUF GENCODE
# source: checkpoint.proto
# Protobuf Python Version: 7.35.1
"""Generated protocol buffer code."""
from google.protobuf import descriptor as _descriptor
from google.protobuf import descriptor_pool as _descriptor_pool
from google.protobuf import runtime_version as _runtime_version
from google.protobuf import symbol_database as _symbol_database
from google.protobuf.internal import builder as _builder
_runtime_version.ValidateProtobufRuntimeVersion(
    _runtime_version.Domain.PUBLIC,
    7,
    35,
    1,
    '',
    'checkpoint.proto'
)
# @@protoc_insertion_point(imports)

_sym_db = _symbol_database.Default()




DESCRIPTOR = _descriptor_pool.Default().AddSerializedFile(b'\n\x10\x63heckpoint.proto\x12\x13weblynet.checkpoint\"8\n\x0bTensorEntry\x12\x0c\n\x04name\x18\x01 \x01(\t\x12\r\n\x05shape\x18\x02 \x03(\r\x12\x0c\n\x04\x64\x61ta\x18\x03 \x01(\x0c\"\xb5\x01\n\x0cNetworkState\x12\x0c\n\x04role\x18\x01 \x01(\t\x12\x11\n\tspec_kind\x18\x02 \x01(\t\x12\x11\n\tspec_json\x18\x03 \x01(\t\x12\x0c\n\x04seed\x18\x04 \x01(\x03\x12\x30\n\x06params\x18\x05 \x03(\x0b\x32 .weblynet.checkpoint.TensorEntry\x12\x31\n\x07\x62uffers\x18\x06 \x03(\x0b\x32 .weblynet.checkpoint.TensorEntry\"\x8c\x01\n\nCheckpoint\x12\x16\n\x0e\x66ormat_version\x18\x01 \x01(\r\x12\x13\n\x0bsystem_name\x18\x02 \x01(\t\x12\x0c\n\x04seed\x18\x03 \x01(\x03\x12\x0e\n\x06\x61lphas\x18\x04 \x03(\x01\x12\x33\n\x08networks\x18\x05 \x03(\x0b\x32!.weblynet.checkpoint.NetworkStateb\x06proto3')

_globals = globals()
_builder.BuildMessageAndEnumDescriptors(DESCRIPTOR, _globals)
_builder.BuildTopDescriptorsAndMessages(DESCRIPTOR, 'checkpoint_pb2', _globals)
if not _descriptor._USE_C_DESCRIPTORS:
  DESCRIPTOR._loaded_options = None
  _globals['_TENSORENTRY']._serialized_start=41
  _globals['_TENSORENTRY']._serialized_end=97
  _globals['_NETWORKSTATE']._serialized_start=100
  _globals['_NETWORKSTATE']._serialized_end=281
  _globals['_CHECKPOINT']._serialized_start=284
  _globals['_CHECKPOINT']._serialized_end=424
# @@protoc_insertion_point(module_scope)
