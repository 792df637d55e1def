// Standalone acceptance runner: one line per criterion, exit 0 only when every
// selected criterion passes. Used by ctest with --criterion N so the slow
// learning runs parallelize.

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <vector>

#include "cml/verify.hpp"

int main(int argc, char** argv) {
  std::vector<int> selection;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      int n = std::atoi(argv[++i]);
      if (n < 1 || n > 9) {
        std::cerr << "criterion must be 1..9\n";
        return 2;
      }
      selection.push_back(n);
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 2;
    }
  }
  std::vector<cml::verify::CriterionResult> results = cml::verify::run_criteria(selection);
  bool all = true;
  for (const auto& r : results) {
    cml::verify::print_result(r, std::cout);
    all = all && r.pass;
  }
  return all ? 0 : 1;
}
