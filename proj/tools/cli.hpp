#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "carbonopt/llm.hpp"

namespace carbonopt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct Context {
  std::ostream& out;
  std::ostream& err;
  /// Used by the http LLM backend; never touched in mock mode.
  std::shared_ptr<llm::Transport> transport;
};

/// args excludes the program name.
int run(const std::vector<std::string>& args, Context& ctx);

}  // namespace carbonopt::cli
