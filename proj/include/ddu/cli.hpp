#pragma once

#include <iosfwd>

#include "ddu/data.hpp"
#include "ddu/io.hpp"

namespace ddu {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitUsage = 4,
};

/// Builds the dataset described by a config's "dataset" object.
Dataset dataset_from_config(const Json& j, std::uint64_t seed);

/// Entry point for `ddu train | score | experiment`; returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ddu
