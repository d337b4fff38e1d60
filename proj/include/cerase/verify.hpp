#pragma once

// Built-in property suite behind `cerase verify`. Each property runs a small
// randomized instance of a module invariant and reports its worst observed
// metric against a fixed limit.

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "cerase/linalg.hpp"

namespace cerase::verify {

/// Row-wise projection onto span(B); replaceable so the suite can be checked
/// against a deliberately broken projector.
using RowProjector =
    std::function<MatrixX<double>(const MatrixX<double>&, const SubspaceBasis<double>&)>;

struct Options {
  std::uint64_t seed = 42;
  RowProjector projector;  // empty = project_rows
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  double metric = 0;
  double limit = 0;
  double seconds = 0;
  std::string note;
};

std::vector<PropertyResult> run_suite(const Options& opts = {});
bool all_passed(const std::vector<PropertyResult>& results);
void print_table(std::ostream& os, const std::vector<PropertyResult>& results);

}  // namespace cerase::verify
