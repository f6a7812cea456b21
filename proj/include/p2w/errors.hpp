// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace p2w {

// Invalid wiring: mismatched dimensions, unknown names, bad parameter values.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite input or an unrepresentable token handed to the codec.
class CodecError : public std::runtime_error {
 public:
  explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

// A policy backend could not produce a response (transport failure, timeout,
// exhausted recording, empty context). `cause` is a short machine-readable tag.
class PolicyUnavailable : public std::runtime_error {
 public:
  PolicyUnavailable(std::string cause_tag, const std::string& what)
      : std::runtime_error(what), cause(std::move(cause_tag)) {}
  std::string cause;
};

}  // namespace p2w
