#pragma once

#include <stdexcept>
#include <string>

namespace evodt {

// Invalid architecture description (zero dims, heads not dividing width, ...).
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A flat parameter vector does not match the layout of its spec.
class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (shape mismatch, step after done, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A worker failed to deliver its slice twice in one generation.
class WorkerFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecodeError : public std::runtime_error {
 public:
  enum class Kind { kBadTag, kTruncated, kLengthOverflow, kBadMagic, kBadValue };

  DecodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace evodt
