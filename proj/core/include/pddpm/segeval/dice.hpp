#pragma once

#include <cstdint>
#include <string>

#include "pddpm/volume.hpp"

namespace pddpm::segeval {

// Overlap of a predicted and a ground-truth binary mask.
struct DiceResult {
  std::string case_id;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  double dsc = 0.0;
};

// Score used when both masks are empty (2TP + FP + FN == 0): agreement on
// absence counts as a perfect match.
double dice_empty_policy();

// 2TP / (2TP + FP + FN); dice_empty_policy() when the denominator is 0.
double dice_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);

// Throws ShapeError on differing extents, ArgumentError on non-binary input.
DiceResult dice(const Volume& pred, const Volume& gt, std::string case_id = {});

}  // namespace pddpm::segeval
