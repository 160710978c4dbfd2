#pragma once

#include <stdexcept>
#include <string>

namespace stclip {

/// Failure categories. Each maps onto a CLI exit code.
enum class ErrorKind {
  Usage,     // bad flags, bad config values
  Data,      // schema, parse, integrity, lookup and sampling failures
  Numeric,   // non-finite values, failed gradient checks
  Contract,  // frozen-partition violations
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define STCLIP_DEFINE_ERROR(Name, Kind, prefix)                         \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(Kind, prefix + what) {} \
  };

STCLIP_DEFINE_ERROR(ConfigError, ErrorKind::Usage, std::string("config error: "))
STCLIP_DEFINE_ERROR(SchemaError, ErrorKind::Data, std::string("schema error: "))
STCLIP_DEFINE_ERROR(ParseError, ErrorKind::Data, std::string("parse error: "))
STCLIP_DEFINE_ERROR(IntegrityError, ErrorKind::Data, std::string("integrity error: "))
STCLIP_DEFINE_ERROR(LookupError, ErrorKind::Data, std::string("lookup error: "))
STCLIP_DEFINE_ERROR(MatchError, ErrorKind::Data, std::string("match error: "))
STCLIP_DEFINE_ERROR(DataError, ErrorKind::Data, std::string("data error: "))
STCLIP_DEFINE_ERROR(SamplingError, ErrorKind::Data, std::string("sampling error: "))
STCLIP_DEFINE_ERROR(TemplateError, ErrorKind::Data, std::string("template error: "))
STCLIP_DEFINE_ERROR(EvaluationError, ErrorKind::Data, std::string("evaluation error: "))
STCLIP_DEFINE_ERROR(ShapeError, ErrorKind::Numeric, std::string("shape error: "))
STCLIP_DEFINE_ERROR(NumericError, ErrorKind::Numeric, std::string("numeric error: "))
STCLIP_DEFINE_ERROR(ContractError, ErrorKind::Contract, std::string("contract violation: "))

#undef STCLIP_DEFINE_ERROR

}  // namespace stclip
