// SPDX-License-Identifier: Apache-2.0
#include "melbench/error.hpp"

namespace melbench {
namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string text = "invalid configuration:";
  for (const auto& p : problems) text += "\n  - " + p;
  return text;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : InputError(join_problems(problems)), problems_(std::move(problems)) {}

}  // namespace melbench
