#include "mwpkd/error.hpp"

namespace mwpkd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "SchemaError";
    case ErrorKind::Validation: return "ValidationError";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Param: return "ParamError";
    case ErrorKind::Numerical: return "NumericalError";
    case ErrorKind::Neighbor: return "NeighborError";
    case ErrorKind::Graph: return "GraphError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Unsupported: return "UnsupportedError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::TokenRange: return "TokenRangeError";
    case ErrorKind::Length: return "LengthError";
    case ErrorKind::NonFinite: return "NonFiniteError";
    case ErrorKind::DimMismatch: return "DimMismatchError";
    case ErrorKind::Index: return "IndexError";
    case ErrorKind::EmptyQuantity: return "EmptyQuantityError";
    case ErrorKind::Decode: return "DecodeError";
    case ErrorKind::Label: return "LabelError";
    case ErrorKind::DivZero: return "DivZeroError";
    case ErrorKind::Domain: return "DomainError";
    case ErrorKind::Alignment: return "AlignmentError";
    case ErrorKind::ZeroVector: return "ZeroVectorError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Numerical:
    case ErrorKind::NonFinite:
    case ErrorKind::DivZero:
    case ErrorKind::Domain:
      return true;
    default:
      return false;
  }
}

}  // namespace mwpkd
