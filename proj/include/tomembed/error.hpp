#pragma once

#include <stdexcept>
#include <string>

namespace tomembed {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unsupported bytes on disk (Parquet, TIFF, WKB, raw blobs).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file is readable but does not carry the columns or types we need.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// One source row could not be turned into a RasterCell.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// MTEB/1 wire protocol violations and sidecar transport failures.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tomembed
