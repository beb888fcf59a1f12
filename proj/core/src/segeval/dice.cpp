#include "pddpm/segeval/dice.hpp"

#include "pddpm/error.hpp"

namespace pddpm::segeval {

double dice_empty_policy() { return 1.0; }

double dice_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const std::int64_t denom = 2 * tp + fp + fn;
  if (denom == 0) return dice_empty_policy();
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

DiceResult dice(const Volume& pred, const Volume& gt, std::string case_id) {
  if (pred.channels() != gt.channels() || !pred.same_extents(gt)) {
    throw ShapeError("dice: prediction " + std::to_string(pred.channels()) + "x" + shape_str(pred.extents()) +
                     " vs ground truth " + std::to_string(gt.channels()) + "x" + shape_str(gt.extents()));
  }
  DiceResult r;
  r.case_id = std::move(case_id);
  auto p = pred.data();
  auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if ((p[i] != 0.0f && p[i] != 1.0f) || (g[i] != 0.0f && g[i] != 1.0f)) {
      throw ArgumentError("dice: masks must be binary (found " + std::to_string(p[i] != 0.0f && p[i] != 1.0f ? p[i] : g[i]) +
                          ")");
    }
    const bool a = p[i] != 0.0f, b = g[i] != 0.0f;
    r.tp += a && b;
    r.fp += a && !b;
    r.fn += !a && b;
    r.tn += !a && !b;
  }
  r.dsc = dice_from_counts(r.tp, r.fp, r.fn);
  return r;
}

}  // namespace pddpm::segeval
