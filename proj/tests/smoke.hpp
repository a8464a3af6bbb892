#pragma once

// A run configuration small enough to push the whole pipeline through in seconds.

#include <string>

namespace normseg::testkit {

inline std::string smoke_config_text() {
  return R"(seed = 7

[corpus]
healthy_cases = 2
pairs = 3

[phantom]
dims = 32

[generator]
small_axes = 1.5 3
medium_axes = 3 6
large_axes = 6 9

[heldout]
medium_axes = 4 7
large_axes = 7 10

[net]
levels = 2
base_channels = 2
convs_per_level = 1
patch = 8
tile = 16
batch_size = 1
iterations = 3
ensemble_size = 2
vote_quorum = 1

[benchmark]
cases = 2
)";
}

}  // namespace normseg::testkit
